#include "temprank/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "temprank/kernels.hpp"
#include "temprank/util.hpp"

namespace temprank {

using nlohmann::json;

const char* precision_name(Precision p) { return p == Precision::Single ? "single" : "double"; }

Precision precision_from_name(const std::string& s) {
    if (s == "single") return Precision::Single;
    if (s == "double") return Precision::Double;
    throw std::runtime_error("unknown precision: " + s);
}

void ModelConfig::validate() const {
    if (d_model <= 0 || n_heads <= 0 || d_ffn <= 0 || max_len <= 1)
        throw std::runtime_error("model config: non-positive dimension");
    if (n_layers_enc < 1 || n_layers_dec < 1)
        throw std::runtime_error("model config: need at least one layer per stack");
    if (d_model % n_heads != 0)
        throw std::runtime_error("model config: d_model must be divisible by n_heads");
    if (vocab_size < 8) throw std::runtime_error("model config: vocab_size must be >= 8");
    if (dropout < 0.0 || dropout >= 1.0) throw std::runtime_error("model config: bad dropout");
}

std::string ModelConfig::to_json_text() const {
    json j;
    j["d_model"] = d_model;
    j["n_heads"] = n_heads;
    j["n_layers_enc"] = n_layers_enc;
    j["n_layers_dec"] = n_layers_dec;
    j["d_ffn"] = d_ffn;
    j["max_len"] = max_len;
    j["dropout"] = dropout;
    j["vocab_size"] = vocab_size;
    j["precision"] = precision_name(precision);
    return j.dump();
}

ModelConfig ModelConfig::from_json_text(const std::string& text) {
    const json j = json::parse(text);
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers_enc = j.value("n_layers_enc", c.n_layers_enc);
    c.n_layers_dec = j.value("n_layers_dec", c.n_layers_dec);
    c.d_ffn = j.value("d_ffn", c.d_ffn);
    c.max_len = j.value("max_len", c.max_len);
    c.dropout = j.value("dropout", c.dropout);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.precision = precision_from_name(j.value("precision", std::string("single")));
    return c;
}

namespace {

template <class T>
LnIdx add_ln(ParamStore<T>& s, const std::string& prefix, int d) {
    LnIdx idx;
    idx.g = s.add(prefix + ".g", 1, d);
    idx.b = s.add(prefix + ".b", 1, d);
    return idx;
}

template <class T>
AttnIdx add_attn(ParamStore<T>& s, const std::string& prefix, int d) {
    AttnIdx idx;
    idx.wq = s.add(prefix + ".wq", d, d);
    idx.bq = s.add(prefix + ".bq", 1, d);
    idx.wk = s.add(prefix + ".wk", d, d);
    idx.bk = s.add(prefix + ".bk", 1, d);
    idx.wv = s.add(prefix + ".wv", d, d);
    idx.bv = s.add(prefix + ".bv", 1, d);
    idx.wo = s.add(prefix + ".wo", d, d);
    idx.bo = s.add(prefix + ".bo", 1, d);
    return idx;
}

template <class T>
FfnIdx add_ffn(ParamStore<T>& s, const std::string& prefix, int d, int f) {
    FfnIdx idx;
    idx.w1 = s.add(prefix + ".w1", d, f);
    idx.b1 = s.add(prefix + ".b1", 1, f);
    idx.w2 = s.add(prefix + ".w2", f, d);
    idx.b2 = s.add(prefix + ".b2", 1, d);
    return idx;
}

template <class T>
Layout build_layout(const ModelConfig& cfg, ParamStore<T>& s) {
    Layout L;
    L.embed = s.add("embed", cfg.vocab_size, cfg.d_model);
    for (int l = 0; l < cfg.n_layers_enc; ++l) {
        const std::string p = "enc" + std::to_string(l);
        EncLayerIdx e;
        e.ln1 = add_ln(s, p + ".ln1", cfg.d_model);
        e.attn = add_attn(s, p + ".attn", cfg.d_model);
        e.ln2 = add_ln(s, p + ".ln2", cfg.d_model);
        e.ffn = add_ffn(s, p + ".ffn", cfg.d_model, cfg.d_ffn);
        L.enc.push_back(e);
    }
    L.enc_lnf = add_ln(s, "enc.lnf", cfg.d_model);
    for (int l = 0; l < cfg.n_layers_dec; ++l) {
        const std::string p = "dec" + std::to_string(l);
        DecLayerIdx d;
        d.ln1 = add_ln(s, p + ".ln1", cfg.d_model);
        d.self_attn = add_attn(s, p + ".self", cfg.d_model);
        d.ln2 = add_ln(s, p + ".ln2", cfg.d_model);
        d.cross_attn = add_attn(s, p + ".cross", cfg.d_model);
        d.ln3 = add_ln(s, p + ".ln3", cfg.d_model);
        d.ffn = add_ffn(s, p + ".ffn", cfg.d_model, cfg.d_ffn);
        L.dec.push_back(d);
    }
    L.dec_lnf = add_ln(s, "dec.lnf", cfg.d_model);
    L.lm_w = s.add("lm.w", cfg.d_model, cfg.vocab_size);
    L.lm_b = s.add("lm.b", 1, cfg.vocab_size);
    return L;
}

template <class T>
void add_into(Mat<T>& a, const Mat<T>& b) {
    for (size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

template <class T>
void apply_mask(Mat<T>& x, const Mat<T>& mask) {
    if (mask.rows == 0) return;
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] *= mask.v[i];
}

template <class T>
Mat<T> masked_copy(const Mat<T>& x, const Mat<T>& mask) {
    Mat<T> out = x;
    apply_mask(out, mask);
    return out;
}

template <class T>
void copy_head_out(const Mat<T>& merged, Mat<T>& head, int h, int dh) {
    for (int i = 0; i < merged.rows; ++i) {
        const T* src = merged.row(i) + h * dh;
        T* dst = head.row(i);
        for (int j = 0; j < dh; ++j) dst[j] = src[j];
    }
}

template <class T>
void add_head_in(Mat<T>& merged, const Mat<T>& head, int h, int dh) {
    for (int i = 0; i < merged.rows; ++i) {
        T* dst = merged.row(i) + h * dh;
        const T* src = head.row(i);
        for (int j = 0; j < dh; ++j) dst[j] += src[j];
    }
}

constexpr double kLnEps = 1e-5;

}  // namespace

template <class T>
Seq2SeqModel<T>::Seq2SeqModel(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    layout = build_layout(cfg, params);
    pos_enc_ = Mat<T>(cfg.max_len, cfg.d_model);
    for (int pos = 0; pos < cfg.max_len; ++pos) {
        for (int i = 0; i < cfg.d_model; i += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(i) / cfg.d_model);
            pos_enc_(pos, i) = static_cast<T>(std::sin(pos * freq));
            if (i + 1 < cfg.d_model) pos_enc_(pos, i + 1) = static_cast<T>(std::cos(pos * freq));
        }
    }
}

template <class T>
void Seq2SeqModel<T>::init_params(uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> emb_dist(0.0, 0.02);
    for (size_t di = 0; di < params.descs.size(); ++di) {
        const TensorDesc& d = params.descs[di];
        T* p = params.data(static_cast<int>(di));
        const size_t n = static_cast<size_t>(d.rows) * d.cols;
        const std::string tail = d.name.substr(d.name.find_last_of('.') + 1);
        if (d.name == "embed") {
            for (size_t i = 0; i < n; ++i) p[i] = static_cast<T>(emb_dist(rng));
        } else if (tail[0] == 'g') {
            for (size_t i = 0; i < n; ++i) p[i] = T(1);
        } else if (tail[0] == 'b') {
            for (size_t i = 0; i < n; ++i) p[i] = T(0);
        } else {
            const double bound = std::sqrt(6.0 / (d.rows + d.cols));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (size_t i = 0; i < n; ++i) p[i] = static_cast<T>(dist(rng));
        }
    }
}

template <class T>
void Seq2SeqModel<T>::init_zero() {
    params.zero();
}

template <class T>
void Seq2SeqModel<T>::check_seq(const TokenSeq& ids, const char* what) const {
    if (static_cast<int>(ids.size()) > cfg.max_len)
        throw std::runtime_error(std::string(what) + " longer than max_len=" +
                                 std::to_string(cfg.max_len));
    for (TokenId id : ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw std::runtime_error(std::string(what) + ": token id out of range: " +
                                     std::to_string(id));
}

template <class T>
void Seq2SeqModel<T>::make_dropout(Mat<T>& mask, int rows, int cols, Rng* rng) const {
    if (rng == nullptr || cfg.dropout <= 0.0) {
        mask = Mat<T>();
        return;
    }
    mask = Mat<T>(rows, cols);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const T scale = static_cast<T>(1.0 / (1.0 - cfg.dropout));
    for (auto& m : mask.v) m = u(*rng) < cfg.dropout ? T(0) : scale;
}

template <class T>
void Seq2SeqModel<T>::embed_forward(const TokenSeq& ids, Mat<T>& x, Mat<T>& drop_mask,
                                    Rng* rng) const {
    const int n = static_cast<int>(ids.size());
    const int d = cfg.d_model;
    const T* emb = params.data(layout.embed);
    x = Mat<T>(n, d);
    for (int i = 0; i < n; ++i) {
        const T* e = emb + static_cast<size_t>(ids[static_cast<size_t>(i)]) * d;
        const T* pe = pos_enc_.row(i);
        T* out = x.row(i);
        for (int j = 0; j < d; ++j) out[j] = e[j] + pe[j];
    }
    make_dropout(drop_mask, n, d, rng);
    apply_mask(x, drop_mask);
}

template <class T>
void Seq2SeqModel<T>::ln_forward(const Mat<T>& x, const LnIdx& w, LnCache<T>& c) const {
    c.mean.assign(static_cast<size_t>(x.rows), T(0));
    c.rstd.assign(static_cast<size_t>(x.rows), T(0));
    c.out = Mat<T>(x.rows, x.cols);
    kernels::layernorm(c.out.data(), c.mean.data(), c.rstd.data(), x.data(), params.data(w.g),
                       params.data(w.b), x.rows, x.cols, static_cast<T>(kLnEps));
}

template <class T>
void Seq2SeqModel<T>::ln_backward(const Mat<T>& dy, const Mat<T>& x, const LnIdx& w,
                                  const LnCache<T>& c, ParamStore<T>& g, Mat<T>& dx_acc) const {
    kernels::layernorm_grad(dx_acc.data(), g.data(w.g), g.data(w.b), dy.data(), x.data(),
                            params.data(w.g), c.mean.data(), c.rstd.data(), x.rows, x.cols);
}

template <class T>
void Seq2SeqModel<T>::attention_forward(const Mat<T>& q_in, const Mat<T>& kv_in, const AttnIdx& w,
                                        bool causal, AttnCache<T>& c, Mat<T>& out) const {
    const int qlen = q_in.rows;
    const int kvlen = kv_in.rows;
    const int d = cfg.d_model;
    const int H = cfg.n_heads;
    const int dh = cfg.head_dim();
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    c.q = Mat<T>(qlen, d);
    c.k = Mat<T>(kvlen, d);
    c.v = Mat<T>(kvlen, d);
    kernels::matmul(c.q.data(), q_in.data(), params.data(w.wq), qlen, d, d);
    kernels::add_bias_rows(c.q.data(), params.data(w.bq), qlen, d);
    kernels::matmul(c.k.data(), kv_in.data(), params.data(w.wk), kvlen, d, d);
    kernels::add_bias_rows(c.k.data(), params.data(w.bk), kvlen, d);
    kernels::matmul(c.v.data(), kv_in.data(), params.data(w.wv), kvlen, d, d);
    kernels::add_bias_rows(c.v.data(), params.data(w.bv), kvlen, d);

    c.probs = Mat<T>(H * qlen, kvlen);
    c.ctx = Mat<T>(qlen, d);
    Mat<T> qh(qlen, dh), kh(kvlen, dh), vh(kvlen, dh), ctx_h(qlen, dh);
    for (int h = 0; h < H; ++h) {
        copy_head_out(c.q, qh, h, dh);
        copy_head_out(c.k, kh, h, dh);
        copy_head_out(c.v, vh, h, dh);
        T* scores = c.probs.row(h * qlen);
        kernels::matmul_nt(scores, qh.data(), kh.data(), qlen, dh, kvlen);
        for (int i = 0; i < qlen * kvlen; ++i) scores[i] *= inv_sqrt;
        if (causal) {
            for (int i = 0; i < qlen; ++i) {
                T* row = scores + static_cast<size_t>(i) * kvlen;
                const int visible = std::min(i + 1, kvlen);
                kernels::detail::softmax_row(row, visible);
                for (int j = visible; j < kvlen; ++j) row[j] = T(0);
            }
        } else {
            kernels::softmax_rows(scores, qlen, kvlen);
        }
        kernels::matmul(ctx_h.data(), scores, vh.data(), qlen, kvlen, dh);
        for (int i = 0; i < qlen; ++i) {
            T* dst = c.ctx.row(i) + h * dh;
            const T* src = ctx_h.row(i);
            for (int j = 0; j < dh; ++j) dst[j] = src[j];
        }
    }
    out = Mat<T>(qlen, d);
    kernels::matmul(out.data(), c.ctx.data(), params.data(w.wo), qlen, d, d);
    kernels::add_bias_rows(out.data(), params.data(w.bo), qlen, d);
}

template <class T>
void Seq2SeqModel<T>::attention_backward(const Mat<T>& dout, const Mat<T>& q_in,
                                         const Mat<T>& kv_in, const AttnIdx& w, bool causal,
                                         const AttnCache<T>& c, ParamStore<T>& g,
                                         Mat<T>& dq_in_acc, Mat<T>& dkv_in_acc) const {
    (void)causal;  // masked probs are zero, which already kills those paths
    const int qlen = q_in.rows;
    const int kvlen = kv_in.rows;
    const int d = cfg.d_model;
    const int H = cfg.n_heads;
    const int dh = cfg.head_dim();
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

    kernels::matmul_tn_acc(g.data(w.wo), c.ctx.data(), dout.data(), qlen, d, d);
    kernels::bias_grad_acc(g.data(w.bo), dout.data(), qlen, d);
    Mat<T> dctx(qlen, d);
    kernels::matmul_nt(dctx.data(), dout.data(), params.data(w.wo), qlen, d, d);

    Mat<T> dq(qlen, d), dk(kvlen, d), dv(kvlen, d);
    Mat<T> qh(qlen, dh), kh(kvlen, dh), vh(kvlen, dh), dctx_h(qlen, dh);
    Mat<T> dp(qlen, kvlen), ds(qlen, kvlen), dqh(qlen, dh), dkh(kvlen, dh), dvh(kvlen, dh);
    for (int h = 0; h < H; ++h) {
        copy_head_out(c.q, qh, h, dh);
        copy_head_out(c.k, kh, h, dh);
        copy_head_out(c.v, vh, h, dh);
        copy_head_out(dctx, dctx_h, h, dh);
        const T* probs = c.probs.row(h * qlen);

        kernels::matmul_nt(dp.data(), dctx_h.data(), vh.data(), qlen, dh, kvlen);
        dvh.zero();
        kernels::matmul_tn_acc(dvh.data(), probs, dctx_h.data(), qlen, kvlen, dh);
        for (int i = 0; i < qlen; ++i)
            kernels::detail::softmax_grad_row(ds.row(i), probs + static_cast<size_t>(i) * kvlen,
                                              dp.row(i), kvlen);
        for (auto& x : ds.v) x *= inv_sqrt;
        kernels::matmul(dqh.data(), ds.data(), kh.data(), qlen, kvlen, dh);
        dkh.zero();
        kernels::matmul_tn_acc(dkh.data(), ds.data(), qh.data(), qlen, kvlen, dh);

        add_head_in(dq, dqh, h, dh);
        add_head_in(dk, dkh, h, dh);
        add_head_in(dv, dvh, h, dh);
    }

    kernels::matmul_tn_acc(g.data(w.wq), q_in.data(), dq.data(), qlen, d, d);
    kernels::bias_grad_acc(g.data(w.bq), dq.data(), qlen, d);
    kernels::matmul_nt(dq_in_acc.data(), dq.data(), params.data(w.wq), qlen, d, d, true);

    kernels::matmul_tn_acc(g.data(w.wk), kv_in.data(), dk.data(), kvlen, d, d);
    kernels::bias_grad_acc(g.data(w.bk), dk.data(), kvlen, d);
    kernels::matmul_nt(dkv_in_acc.data(), dk.data(), params.data(w.wk), kvlen, d, d, true);

    kernels::matmul_tn_acc(g.data(w.wv), kv_in.data(), dv.data(), kvlen, d, d);
    kernels::bias_grad_acc(g.data(w.bv), dv.data(), kvlen, d);
    kernels::matmul_nt(dkv_in_acc.data(), dv.data(), params.data(w.wv), kvlen, d, d, true);
}

template <class T>
void Seq2SeqModel<T>::ffn_forward(const Mat<T>& x, const FfnIdx& w, FfnCache<T>& c,
                                  Mat<T>& out) const {
    const int len = x.rows;
    c.pre = Mat<T>(len, cfg.d_ffn);
    kernels::matmul(c.pre.data(), x.data(), params.data(w.w1), len, cfg.d_model, cfg.d_ffn);
    kernels::add_bias_rows(c.pre.data(), params.data(w.b1), len, cfg.d_ffn);
    c.act = Mat<T>(len, cfg.d_ffn);
    kernels::gelu(c.act.data(), c.pre.data(), c.pre.size());
    out = Mat<T>(len, cfg.d_model);
    kernels::matmul(out.data(), c.act.data(), params.data(w.w2), len, cfg.d_ffn, cfg.d_model);
    kernels::add_bias_rows(out.data(), params.data(w.b2), len, cfg.d_model);
}

template <class T>
void Seq2SeqModel<T>::ffn_backward(const Mat<T>& dout, const Mat<T>& x, const FfnIdx& w,
                                   const FfnCache<T>& c, ParamStore<T>& g, Mat<T>& dx_acc) const {
    const int len = x.rows;
    kernels::matmul_tn_acc(g.data(w.w2), c.act.data(), dout.data(), len, cfg.d_ffn, cfg.d_model);
    kernels::bias_grad_acc(g.data(w.b2), dout.data(), len, cfg.d_model);
    Mat<T> dact(len, cfg.d_ffn);
    kernels::matmul_nt(dact.data(), dout.data(), params.data(w.w2), len, cfg.d_model, cfg.d_ffn);
    Mat<T> dpre(len, cfg.d_ffn);
    kernels::gelu_grad(dpre.data(), c.pre.data(), dact.data(), dact.size());
    kernels::matmul_tn_acc(g.data(w.w1), x.data(), dpre.data(), len, cfg.d_model, cfg.d_ffn);
    kernels::bias_grad_acc(g.data(w.b1), dpre.data(), len, cfg.d_ffn);
    kernels::matmul_nt(dx_acc.data(), dpre.data(), params.data(w.w1), len, cfg.d_ffn, cfg.d_model,
                       true);
}

template <class T>
void Seq2SeqModel<T>::encode(const TokenSeq& src, EncoderCache<T>& c, Rng* rng) const {
    check_seq(src, "source");
    if (src.empty()) throw std::runtime_error("source must be non-empty");
    c.ids = src;
    embed_forward(src, c.x0, c.drop_emb, rng);
    Mat<T> stream = c.x0;
    c.layers.assign(static_cast<size_t>(cfg.n_layers_enc), EncLayerCache<T>{});
    for (int l = 0; l < cfg.n_layers_enc; ++l) {
        EncLayerCache<T>& lc = c.layers[static_cast<size_t>(l)];
        const EncLayerIdx& idx = layout.enc[static_cast<size_t>(l)];
        lc.in = std::move(stream);
        ln_forward(lc.in, idx.ln1, lc.ln1);
        Mat<T> a;
        attention_forward(lc.ln1.out, lc.ln1.out, idx.attn, false, lc.att, a);
        make_dropout(lc.drop_a, a.rows, a.cols, rng);
        apply_mask(a, lc.drop_a);
        lc.x1 = lc.in;
        add_into(lc.x1, a);
        ln_forward(lc.x1, idx.ln2, lc.ln2);
        Mat<T> f;
        ffn_forward(lc.ln2.out, idx.ffn, lc.ffn, f);
        make_dropout(lc.drop_f, f.rows, f.cols, rng);
        apply_mask(f, lc.drop_f);
        stream = lc.x1;
        add_into(stream, f);
    }
    c.lnf_in = std::move(stream);
    ln_forward(c.lnf_in, layout.enc_lnf, c.lnf);
}

template <class T>
void Seq2SeqModel<T>::decode(const TokenSeq& tgt_in, const Mat<T>& h_enc, DecoderCache<T>& c,
                             Rng* rng) const {
    check_seq(tgt_in, "target");
    if (tgt_in.empty()) throw std::runtime_error("target must be non-empty");
    c.ids = tgt_in;
    embed_forward(tgt_in, c.y0, c.drop_emb, rng);
    Mat<T> stream = c.y0;
    c.layers.assign(static_cast<size_t>(cfg.n_layers_dec), DecLayerCache<T>{});
    for (int l = 0; l < cfg.n_layers_dec; ++l) {
        DecLayerCache<T>& lc = c.layers[static_cast<size_t>(l)];
        const DecLayerIdx& idx = layout.dec[static_cast<size_t>(l)];
        lc.in = std::move(stream);
        ln_forward(lc.in, idx.ln1, lc.ln1);
        Mat<T> a1;
        attention_forward(lc.ln1.out, lc.ln1.out, idx.self_attn, true, lc.self_att, a1);
        make_dropout(lc.drop1, a1.rows, a1.cols, rng);
        apply_mask(a1, lc.drop1);
        lc.y1 = lc.in;
        add_into(lc.y1, a1);

        ln_forward(lc.y1, idx.ln2, lc.ln2);
        Mat<T> a2;
        attention_forward(lc.ln2.out, h_enc, idx.cross_attn, false, lc.cross_att, a2);
        make_dropout(lc.drop2, a2.rows, a2.cols, rng);
        apply_mask(a2, lc.drop2);
        lc.y2 = lc.y1;
        add_into(lc.y2, a2);

        ln_forward(lc.y2, idx.ln3, lc.ln3);
        Mat<T> f;
        ffn_forward(lc.ln3.out, idx.ffn, lc.ffn, f);
        make_dropout(lc.drop3, f.rows, f.cols, rng);
        apply_mask(f, lc.drop3);
        stream = lc.y2;
        add_into(stream, f);
    }
    c.lnf_in = std::move(stream);
    ln_forward(c.lnf_in, layout.dec_lnf, c.lnf);
}

template <class T>
Mat<T> Seq2SeqModel<T>::lm_logits(const Mat<T>& hidden) const {
    Mat<T> logits(hidden.rows, cfg.vocab_size);
    kernels::matmul(logits.data(), hidden.data(), params.data(layout.lm_w), hidden.rows,
                    cfg.d_model, cfg.vocab_size);
    kernels::add_bias_rows(logits.data(), params.data(layout.lm_b), hidden.rows, cfg.vocab_size);
    return logits;
}

template <class T>
void Seq2SeqModel<T>::log_softmax_rows(Mat<T>& x) {
    for (int i = 0; i < x.rows; ++i) {
        T* row = x.row(i);
        T mx = row[0];
        for (int j = 1; j < x.cols; ++j) mx = row[j] > mx ? row[j] : mx;
        T sum = T(0);
        for (int j = 0; j < x.cols; ++j) sum += std::exp(row[j] - mx);
        const T lse = mx + std::log(sum);
        for (int j = 0; j < x.cols; ++j) row[j] -= lse;
    }
}

template <class T>
Mat<T> Seq2SeqModel<T>::forward_logprobs(const TokenSeq& source,
                                         const TokenSeq& target_prefix) const {
    TokenSeq tgt_in;
    tgt_in.reserve(target_prefix.size() + 1);
    tgt_in.push_back(Vocab::kBos);
    tgt_in.insert(tgt_in.end(), target_prefix.begin(), target_prefix.end());
    EncoderCache<T> enc;
    encode(source, enc, nullptr);
    DecoderCache<T> dec;
    decode(tgt_in, enc.lnf.out, dec, nullptr);
    Mat<T> logp = lm_logits(dec.lnf.out);
    log_softmax_rows(logp);
    return logp;
}

template <class T>
double Seq2SeqModel<T>::sequence_logprob(const TokenSeq& source, const TokenSeq& target) const {
    if (target.empty()) throw std::runtime_error("cannot score an empty target");
    TokenSeq tgt_in;
    tgt_in.reserve(target.size());
    tgt_in.push_back(Vocab::kBos);
    tgt_in.insert(tgt_in.end(), target.begin(), target.end() - 1);
    EncoderCache<T> enc;
    encode(source, enc, nullptr);
    DecoderCache<T> dec;
    decode(tgt_in, enc.lnf.out, dec, nullptr);
    Mat<T> logp = lm_logits(dec.lnf.out);
    log_softmax_rows(logp);
    double total = 0.0;
    for (size_t c = 0; c < target.size(); ++c)
        total += static_cast<double>(logp(static_cast<int>(c), target[c]));
    return total;
}

template <class T>
T Seq2SeqModel<T>::pair_loss_and_grad(const TokenSeq& src, const TokenSeq& tgt,
                                      ParamStore<T>& grads, Rng* rng) const {
    if (tgt.empty()) throw std::runtime_error("empty target in training pair");
    TokenSeq tgt_in;
    tgt_in.reserve(tgt.size());
    tgt_in.push_back(Vocab::kBos);
    tgt_in.insert(tgt_in.end(), tgt.begin(), tgt.end() - 1);

    PairCaches<T> pc;
    encode(src, pc.enc, rng);
    decode(tgt_in, pc.enc.lnf.out, pc.dec, rng);
    Mat<T> logits = lm_logits(pc.dec.lnf.out);
    Mat<T> logp = logits;
    log_softmax_rows(logp);

    T loss = T(0);
    Mat<T> dlogits(logp.rows, logp.cols);
    for (int c = 0; c < logp.rows; ++c) {
        const TokenId gold = tgt[static_cast<size_t>(c)];
        loss -= logp(c, gold);
        T* drow = dlogits.row(c);
        const T* lrow = logp.row(c);
        for (int j = 0; j < logp.cols; ++j) drow[j] = std::exp(lrow[j]);
        drow[gold] -= T(1);
    }
    backward_logits(pc, dlogits, grads);
    return loss;
}

template <class T>
void Seq2SeqModel<T>::backward_logits(const PairCaches<T>& pc, const Mat<T>& dlogits,
                                      ParamStore<T>& grads) const {
    const Mat<T>& hidden = pc.dec.lnf.out;
    const int m = hidden.rows;
    kernels::matmul_tn_acc(grads.data(layout.lm_w), hidden.data(), dlogits.data(), m, cfg.d_model,
                           cfg.vocab_size);
    kernels::bias_grad_acc(grads.data(layout.lm_b), dlogits.data(), m, cfg.vocab_size);
    Mat<T> dhidden(m, cfg.d_model);
    kernels::matmul_nt(dhidden.data(), dlogits.data(), params.data(layout.lm_w), m, cfg.vocab_size,
                       cfg.d_model);
    backward_hidden(pc, dhidden, grads);
}

template <class T>
void Seq2SeqModel<T>::backward_hidden(const PairCaches<T>& pc, const Mat<T>& dhidden,
                                      ParamStore<T>& grads) const {
    const int m = dhidden.rows;
    const int n = pc.enc.lnf.out.rows;
    const int d = cfg.d_model;

    Mat<T> dy(m, d);
    ln_backward(dhidden, pc.dec.lnf_in, layout.dec_lnf, pc.dec.lnf, grads, dy);

    Mat<T> dh_enc(n, d);
    for (int l = cfg.n_layers_dec - 1; l >= 0; --l) {
        const DecLayerCache<T>& lc = pc.dec.layers[static_cast<size_t>(l)];
        const DecLayerIdx& idx = layout.dec[static_cast<size_t>(l)];

        Mat<T> df = masked_copy(dy, lc.drop3);
        Mat<T> dln3(m, d);
        ffn_backward(df, lc.ln3.out, idx.ffn, lc.ffn, grads, dln3);
        Mat<T> dy2 = dy;
        ln_backward(dln3, lc.y2, idx.ln3, lc.ln3, grads, dy2);

        Mat<T> da2 = masked_copy(dy2, lc.drop2);
        Mat<T> dln2(m, d);
        attention_backward(da2, lc.ln2.out, pc.enc.lnf.out, idx.cross_attn, false, lc.cross_att,
                           grads, dln2, dh_enc);
        Mat<T> dy1 = dy2;
        ln_backward(dln2, lc.y1, idx.ln2, lc.ln2, grads, dy1);

        Mat<T> da1 = masked_copy(dy1, lc.drop1);
        Mat<T> dln1(m, d);
        attention_backward(da1, lc.ln1.out, lc.ln1.out, idx.self_attn, true, lc.self_att, grads,
                           dln1, dln1);
        Mat<T> din = dy1;
        ln_backward(dln1, lc.in, idx.ln1, lc.ln1, grads, din);
        dy = std::move(din);
    }
    apply_mask(dy, pc.dec.drop_emb);
    T* demb = grads.data(layout.embed);
    for (int i = 0; i < m; ++i) {
        T* row = demb + static_cast<size_t>(pc.dec.ids[static_cast<size_t>(i)]) * d;
        const T* src = dy.row(i);
        for (int j = 0; j < d; ++j) row[j] += src[j];
    }

    Mat<T> dx(n, d);
    ln_backward(dh_enc, pc.enc.lnf_in, layout.enc_lnf, pc.enc.lnf, grads, dx);
    for (int l = cfg.n_layers_enc - 1; l >= 0; --l) {
        const EncLayerCache<T>& lc = pc.enc.layers[static_cast<size_t>(l)];
        const EncLayerIdx& idx = layout.enc[static_cast<size_t>(l)];

        Mat<T> df = masked_copy(dx, lc.drop_f);
        Mat<T> dln2(n, d);
        ffn_backward(df, lc.ln2.out, idx.ffn, lc.ffn, grads, dln2);
        Mat<T> dx1 = dx;
        ln_backward(dln2, lc.x1, idx.ln2, lc.ln2, grads, dx1);

        Mat<T> da = masked_copy(dx1, lc.drop_a);
        Mat<T> dln1(n, d);
        attention_backward(da, lc.ln1.out, lc.ln1.out, idx.attn, false, lc.att, grads, dln1, dln1);
        Mat<T> din = dx1;
        ln_backward(dln1, lc.in, idx.ln1, lc.ln1, grads, din);
        dx = std::move(din);
    }
    apply_mask(dx, pc.enc.drop_emb);
    for (int i = 0; i < n; ++i) {
        T* row = demb + static_cast<size_t>(pc.enc.ids[static_cast<size_t>(i)]) * d;
        const T* src = dx.row(i);
        for (int j = 0; j < d; ++j) row[j] += src[j];
    }
}

template <class T>
T Seq2SeqModel<T>::loss_and_grad(const std::vector<IdPair>& batch, ParamStore<T>& grads,
                                 bool train_mode, uint64_t dropout_seed) const {
    if (batch.empty()) throw std::runtime_error("loss_and_grad: empty batch");
    const int B = static_cast<int>(batch.size());
    std::vector<T> losses(static_cast<size_t>(B), T(0));
    std::vector<ParamStore<T>> pgrads(static_cast<size_t>(B), grads.like_zeros());
    std::string error;
#pragma omp parallel for schedule(dynamic) if (B > 1)
    for (int i = 0; i < B; ++i) {
        try {
            Rng rng(mix64(dropout_seed, static_cast<uint64_t>(i)));
            Rng* rp = (train_mode && cfg.dropout > 0.0) ? &rng : nullptr;
            losses[static_cast<size_t>(i)] = pair_loss_and_grad(
                *batch[static_cast<size_t>(i)].src, *batch[static_cast<size_t>(i)].tgt,
                pgrads[static_cast<size_t>(i)], rp);
        } catch (const std::exception& e) {
#pragma omp critical
            if (error.empty()) error = e.what();
        }
    }
    if (!error.empty()) throw std::runtime_error("loss_and_grad: " + error);
    // fixed pair-order reduction keeps results independent of thread count
    T loss = T(0);
    for (int i = 0; i < B; ++i) {
        loss += losses[static_cast<size_t>(i)];
        const auto& pg = pgrads[static_cast<size_t>(i)].flat;
        for (size_t j = 0; j < grads.flat.size(); ++j) grads.flat[j] += pg[j];
    }
    if (!std::isfinite(static_cast<double>(loss)))
        throw std::runtime_error("loss_and_grad: non-finite loss (divergence)");
    return loss;
}

// ------------------------------------------------------------- checkpoints

namespace {

template <class T>
const char* dtype_name() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error(std::string("truncated checkpoint: ") + what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

template <class T>
json manifest_of(const ParamStore<T>& s) {
    json arr = json::array();
    for (const auto& d : s.descs)
        arr.push_back(
            {{"name", d.name}, {"rows", d.rows}, {"cols", d.cols}, {"dtype", dtype_name<T>()}});
    return arr;
}

template <class T>
void write_payload(std::ostream& out, const ParamStore<T>& s) {
    out.write(reinterpret_cast<const char*>(s.flat.data()),
              static_cast<std::streamsize>(s.flat.size() * sizeof(T)));
}

template <class T>
void read_tensors(std::istream& in, ParamStore<T>& store, const json& manifest) {
    store = ParamStore<T>();
    for (const json& tj : manifest) {
        const std::string dtype = tj.at("dtype").get<std::string>();
        if (dtype != dtype_name<T>())
            throw std::runtime_error("checkpoint precision mismatch: tensor '" +
                                     tj.at("name").get<std::string>() + "' is " + dtype);
        store.add(tj.at("name").get<std::string>(), tj.at("rows").get<int>(),
                  tj.at("cols").get<int>());
    }
    in.read(reinterpret_cast<char*>(store.flat.data()),
            static_cast<std::streamsize>(store.flat.size() * sizeof(T)));
    if (static_cast<size_t>(in.gcount()) != store.flat.size() * sizeof(T))
        throw std::runtime_error("truncated tensor block in checkpoint");
}

}  // namespace

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Seq2SeqModel<T>& model,
                     const Vocab& vocab, const std::map<std::string, const ParamStore<T>*>& extras,
                     const std::map<std::string, std::string>& meta) {
    json j;
    j["config"] = json::parse(model.cfg.to_json_text());
    j["vocab"] = {{"tokens", vocab.id_to_token}};
    j["tensors"] = manifest_of(model.params);
    json ext = json::object();
    for (const auto& [name, store] : extras) ext[name] = manifest_of(*store);
    j["extras"] = ext;
    j["meta"] = meta;
    const std::string meta_text = j.dump();

    std::ostringstream out;
    out.write("TPRK", 4);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<uint32_t>(meta_text.size()));
    out.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    write_payload(out, model.params);
    for (const auto& [name, store] : extras) {
        (void)name;
        write_payload(out, *store);
    }
    write_file_atomic(path, out.str());
}

template <class T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TPRK", 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path.string());
    const uint32_t version = read_u32(in, "version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    const uint32_t meta_len = read_u32(in, "metadata length");
    std::string meta_text(meta_len, '\0');
    in.read(meta_text.data(), meta_len);
    if (!in) throw std::runtime_error("truncated checkpoint metadata");
    const json j = json::parse(meta_text);

    Checkpoint<T> ck;
    ck.config = ModelConfig::from_json_text(j.at("config").dump());
    ck.vocab.id_to_token = j.at("vocab").at("tokens").get<std::vector<std::string>>();
    for (size_t i = 0; i < ck.vocab.id_to_token.size(); ++i)
        ck.vocab.token_to_id.emplace(ck.vocab.id_to_token[i], static_cast<TokenId>(i));

    read_tensors(in, ck.params, j.at("tensors"));
    for (const auto& [name, manifest] : j.at("extras").items())
        read_tensors(in, ck.extras[name], manifest);
    if (j.contains("meta"))
        for (const auto& [k, v] : j.at("meta").items()) ck.meta[k] = v.template get<std::string>();

    // shape check against the layout implied by the config
    ParamStore<T> expected;
    build_layout(ck.config, expected);
    if (expected.descs.size() != ck.params.descs.size())
        throw std::runtime_error("checkpoint shape disagreement: tensor count");
    for (size_t i = 0; i < expected.descs.size(); ++i) {
        const auto& a = expected.descs[i];
        const auto& b = ck.params.descs[i];
        if (a.name != b.name || a.rows != b.rows || a.cols != b.cols)
            throw std::runtime_error("checkpoint shape disagreement at tensor '" + b.name + "'");
    }
    if (static_cast<int>(ck.vocab.id_to_token.size()) != ck.config.vocab_size)
        throw std::runtime_error("checkpoint vocab size disagrees with config");
    return ck;
}

size_t checkpoint_param_count(const ModelConfig& cfg) {
    ParamStore<float> s;
    build_layout(cfg, s);
    return s.count();
}

template class Seq2SeqModel<float>;
template class Seq2SeqModel<double>;
template void save_checkpoint<float>(const std::filesystem::path&, const Seq2SeqModel<float>&,
                                     const Vocab&,
                                     const std::map<std::string, const ParamStore<float>*>&,
                                     const std::map<std::string, std::string>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Seq2SeqModel<double>&,
                                      const Vocab&,
                                      const std::map<std::string, const ParamStore<double>*>&,
                                      const std::map<std::string, std::string>&);
template Checkpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template Checkpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace temprank
