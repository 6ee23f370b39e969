#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "temprank/tensor.hpp"
#include "temprank/text.hpp"

namespace temprank {

enum class Precision { Single, Double };
const char* precision_name(Precision p);
Precision precision_from_name(const std::string& s);

struct ModelConfig {
    int d_model = 64;
    int n_heads = 2;
    int n_layers_enc = 2;
    int n_layers_dec = 2;
    int d_ffn = 128;
    int max_len = 64;
    double dropout = 0.1;
    int vocab_size = 0;
    Precision precision = Precision::Single;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
    std::string to_json_text() const;
    static ModelConfig from_json_text(const std::string& text);
};

struct TensorDesc {
    std::string name;
    int rows = 0;
    int cols = 0;
    size_t offset = 0;
};

// All trainable weights in one flat arena; descs give named views into it.
// The desc order is the checkpoint manifest order.
template <class T>
struct ParamStore {
    std::vector<TensorDesc> descs;
    std::vector<T> flat;

    int add(const std::string& name, int rows, int cols) {
        TensorDesc d;
        d.name = name;
        d.rows = rows;
        d.cols = cols;
        d.offset = flat.size();
        descs.push_back(d);
        flat.resize(flat.size() + static_cast<size_t>(rows) * static_cast<size_t>(cols), T(0));
        return static_cast<int>(descs.size()) - 1;
    }
    T* data(int idx) { return flat.data() + descs[static_cast<size_t>(idx)].offset; }
    const T* data(int idx) const { return flat.data() + descs[static_cast<size_t>(idx)].offset; }
    const TensorDesc& desc(int idx) const { return descs[static_cast<size_t>(idx)]; }
    size_t count() const { return flat.size(); }
    void zero() { std::fill(flat.begin(), flat.end(), T(0)); }
    ParamStore<T> like_zeros() const {
        ParamStore<T> out;
        out.descs = descs;
        out.flat.assign(flat.size(), T(0));
        return out;
    }
};

struct LnIdx {
    int g = -1, b = -1;
};
struct AttnIdx {
    int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
};
struct FfnIdx {
    int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};
struct EncLayerIdx {
    LnIdx ln1;
    AttnIdx attn;
    LnIdx ln2;
    FfnIdx ffn;
};
struct DecLayerIdx {
    LnIdx ln1;
    AttnIdx self_attn;
    LnIdx ln2;
    AttnIdx cross_attn;
    LnIdx ln3;
    FfnIdx ffn;
};

struct Layout {
    int embed = -1;
    std::vector<EncLayerIdx> enc;
    LnIdx enc_lnf;
    std::vector<DecLayerIdx> dec;
    LnIdx dec_lnf;
    int lm_w = -1, lm_b = -1;
};

using Rng = std::mt19937_64;

template <class T>
struct LnCache {
    std::vector<T> mean, rstd;
    Mat<T> out;
};

template <class T>
struct AttnCache {
    Mat<T> q, k, v;   // merged heads, [len x d]
    Mat<T> probs;     // stacked per head: [(H*qlen) x kvlen]
    Mat<T> ctx;       // merged, [qlen x d]
};

template <class T>
struct FfnCache {
    Mat<T> pre;  // pre-activation, [len x d_ffn]
    Mat<T> act;
};

template <class T>
struct EncLayerCache {
    Mat<T> in;
    LnCache<T> ln1;
    AttnCache<T> att;
    Mat<T> drop_a;  // dropout masks; empty in eval mode
    Mat<T> x1;
    LnCache<T> ln2;
    FfnCache<T> ffn;
    Mat<T> drop_f;
};

template <class T>
struct DecLayerCache {
    Mat<T> in;
    LnCache<T> ln1;
    AttnCache<T> self_att;
    Mat<T> drop1;
    Mat<T> y1;
    LnCache<T> ln2;
    AttnCache<T> cross_att;
    Mat<T> drop2;
    Mat<T> y2;
    LnCache<T> ln3;
    FfnCache<T> ffn;
    Mat<T> drop3;
};

template <class T>
struct EncoderCache {
    TokenSeq ids;
    Mat<T> x0;
    Mat<T> drop_emb;
    std::vector<EncLayerCache<T>> layers;
    Mat<T> lnf_in;
    LnCache<T> lnf;  // lnf.out is h_enc
};

template <class T>
struct DecoderCache {
    TokenSeq ids;  // decoder input ids
    Mat<T> y0;
    Mat<T> drop_emb;
    std::vector<DecLayerCache<T>> layers;
    Mat<T> lnf_in;
    LnCache<T> lnf;  // lnf.out is the decoder hidden state
};

template <class T>
struct PairCaches {
    EncoderCache<T> enc;
    DecoderCache<T> dec;
};

// (source, target) token pair; target includes the trailing EOS.
struct IdPair {
    const TokenSeq* src;
    const TokenSeq* tgt;
};

// Tiny pre-norm encoder-decoder with sinusoidal positions, causal decoder
// self-attention, cross-attention and a linear lm head. Forward exposes
// per-position conditional log-distributions; backward is analytic.
template <class T>
class Seq2SeqModel {
  public:
    ModelConfig cfg;
    Layout layout;
    ParamStore<T> params;

    explicit Seq2SeqModel(const ModelConfig& config);

    void init_params(uint64_t seed);
    void init_zero();

    // Row c (1-based) of the result is log P(. | t_{1:c-1}, X); there are
    // target_prefix.size()+1 rows.
    Mat<T> forward_logprobs(const TokenSeq& source, const TokenSeq& target_prefix) const;

    // Summed conditional log-probability of the full target (with EOS).
    double sequence_logprob(const TokenSeq& source, const TokenSeq& target) const;

    // Teacher-forced cross-entropy summed over the batch; analytic gradients
    // are accumulated into `grads` (same shapes as params). Per-pair work is
    // independent, so the batch loop runs in parallel and reduces in pair
    // order: results do not depend on the thread count.
    T loss_and_grad(const std::vector<IdPair>& batch, ParamStore<T>& grads,
                    bool train_mode = false, uint64_t dropout_seed = 0) const;

    // Building blocks (used by the baselines and the scorer).
    void encode(const TokenSeq& src, EncoderCache<T>& cache, Rng* rng) const;
    void decode(const TokenSeq& tgt_in, const Mat<T>& h_enc, DecoderCache<T>& cache,
                Rng* rng) const;
    Mat<T> lm_logits(const Mat<T>& hidden) const;

    T pair_loss_and_grad(const TokenSeq& src, const TokenSeq& tgt, ParamStore<T>& grads,
                         Rng* rng) const;

    // dLogits -> grads (includes lm head) -> backward through both stacks.
    void backward_logits(const PairCaches<T>& pc, const Mat<T>& dlogits,
                         ParamStore<T>& grads) const;
    void backward_hidden(const PairCaches<T>& pc, const Mat<T>& dhidden,
                         ParamStore<T>& grads) const;

    static void log_softmax_rows(Mat<T>& x);

  private:
    Mat<T> pos_enc_;  // max_len x d, fixed

    void embed_forward(const TokenSeq& ids, Mat<T>& x, Mat<T>& drop_mask, Rng* rng) const;
    void attention_forward(const Mat<T>& q_in, const Mat<T>& kv_in, const AttnIdx& w, bool causal,
                           AttnCache<T>& c, Mat<T>& out) const;
    void attention_backward(const Mat<T>& dout, const Mat<T>& q_in, const Mat<T>& kv_in,
                            const AttnIdx& w, bool causal, const AttnCache<T>& c,
                            ParamStore<T>& g, Mat<T>& dq_in_acc, Mat<T>& dkv_in_acc) const;
    void ffn_forward(const Mat<T>& x, const FfnIdx& w, FfnCache<T>& c, Mat<T>& out) const;
    void ffn_backward(const Mat<T>& dout, const Mat<T>& x, const FfnIdx& w, const FfnCache<T>& c,
                      ParamStore<T>& g, Mat<T>& dx_acc) const;
    void ln_forward(const Mat<T>& x, const LnIdx& w, LnCache<T>& c) const;
    void ln_backward(const Mat<T>& dy, const Mat<T>& x, const LnIdx& w, const LnCache<T>& c,
                     ParamStore<T>& g, Mat<T>& dx_acc) const;
    void make_dropout(Mat<T>& mask, int rows, int cols, Rng* rng) const;
    void check_seq(const TokenSeq& ids, const char* what) const;
};

// Checkpoint container: magic "TPRK", u32 version, length-prefixed JSON
// metadata (config, vocab, tensor manifest), then raw little-endian tensor
// payloads in manifest order.
inline constexpr uint32_t kCheckpointVersion = 1;

template <class T>
struct Checkpoint {
    ModelConfig config;
    Vocab vocab;
    ParamStore<T> params;
    std::map<std::string, ParamStore<T>> extras;  // e.g. classifier head
    std::map<std::string, std::string> meta;      // method, task, template ids, ...
};

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel<T>& model,
                     const Vocab& vocab,
                     const std::map<std::string, const ParamStore<T>*>& extras = {},
                     const std::map<std::string, std::string>& meta = {});

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

size_t checkpoint_param_count(const ModelConfig& cfg);

}  // namespace temprank
