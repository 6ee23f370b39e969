#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "temprank/model.hpp"
#include "temprank/util.hpp"

using namespace temprank;

namespace {

ModelConfig tiny_config(int vocab, Precision prec = Precision::Single) {
    ModelConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_layers_enc = 2;
    c.n_layers_dec = 2;
    c.d_ffn = 32;
    c.max_len = 32;
    c.dropout = 0.0;
    c.vocab_size = vocab;
    c.precision = prec;
    return c;
}

TokenSeq random_seq(std::mt19937_64& rng, int len, int vocab) {
    std::uniform_int_distribution<int> d(Vocab::kNumSpecials, vocab - 1);
    TokenSeq out;
    for (int i = 0; i < len; ++i) out.push_back(d(rng));
    return out;
}

// independent oracle: central finite differences of the summed
// cross-entropy, evaluated through sequence_logprob
template <class T>
double fd_loss(Seq2SeqModel<T>& model, const std::vector<IdPair>& batch) {
    double total = 0.0;
    for (const IdPair& p : batch) total -= model.sequence_logprob(*p.src, *p.tgt);
    return total;
}

}  // namespace

TEST_CASE("zero init gives the uniform distribution") {
    const int V = 23;
    Seq2SeqModel<double> model(tiny_config(V, Precision::Double));
    model.init_zero();
    TokenSeq src = {8, 9, 10};
    TokenSeq prefix = {11, 12};
    Mat<double> logp = model.forward_logprobs(src, prefix);
    CHECK(logp.rows == 3);
    const double expect = -std::log(static_cast<double>(V));
    for (int i = 0; i < logp.rows; ++i)
        for (int j = 0; j < logp.cols; ++j) CHECK(logp(i, j) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("rows are log-distributions over 100 random inputs") {
    const int V = 37;
    Seq2SeqModel<float> model(tiny_config(V));
    model.init_params(3);
    std::mt19937_64 rng(17);
    for (int it = 0; it < 100; ++it) {
        TokenSeq src = random_seq(rng, 1 + static_cast<int>(rng() % 9), V);
        TokenSeq prefix = random_seq(rng, static_cast<int>(rng() % 7), V);
        Mat<float> logp = model.forward_logprobs(src, prefix);
        for (int i = 0; i < logp.rows; ++i) {
            double sum = 0.0;
            for (int j = 0; j < logp.cols; ++j) sum += std::exp(static_cast<double>(logp(i, j)));
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("causality: rows before a perturbed position are bitwise unchanged") {
    const int V = 29;
    Seq2SeqModel<double> model(tiny_config(V, Precision::Double));
    model.init_params(11);
    TokenSeq src = {8, 9, 10, 11};
    TokenSeq prefix = {12, 13, 14, 15, 16, 17, 18};
    Mat<double> a = model.forward_logprobs(src, prefix);
    TokenSeq prefix2 = prefix;
    prefix2[4] = 20;  // t_5
    Mat<double> b = model.forward_logprobs(src, prefix2);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < V; ++j) CHECK(a(i, j) == b(i, j));
    bool later_changed = false;
    for (int i = 5; i < a.rows && !later_changed; ++i)
        for (int j = 0; j < V; ++j)
            if (a(i, j) != b(i, j)) later_changed = true;
    CHECK(later_changed);
}

TEST_CASE("zero init loss is m*ln(V) per pair") {
    const int V = 19;
    Seq2SeqModel<double> model(tiny_config(V, Precision::Double));
    model.init_zero();
    TokenSeq src = {8, 9};
    TokenSeq tgt = {10, 11, 12, 13, Vocab::kEos};
    ParamStore<double> grads = model.params.like_zeros();
    const double loss = model.loss_and_grad({{&src, &tgt}}, grads);
    CHECK(loss == doctest::Approx(5.0 * std::log(static_cast<double>(V))).epsilon(1e-12));
}

TEST_CASE("init determinism and zero mode") {
    Seq2SeqModel<float> a(tiny_config(21));
    Seq2SeqModel<float> b(tiny_config(21));
    a.init_params(5);
    b.init_params(5);
    CHECK(a.params.flat == b.params.flat);
    b.init_params(6);
    CHECK(a.params.flat != b.params.flat);
}

TEST_CASE("parameter count matches the closed-form shape sum") {
    ModelConfig c = tiny_config(21);
    const size_t d = static_cast<size_t>(c.d_model);
    const size_t f = static_cast<size_t>(c.d_ffn);
    const size_t V = static_cast<size_t>(c.vocab_size);
    const size_t ln = 2 * d;
    const size_t attn = 4 * (d * d + d);
    const size_t ffn = d * f + f + f * d + d;
    const size_t enc_layer = 2 * ln + attn + ffn;
    const size_t dec_layer = 3 * ln + 2 * attn + ffn;
    const size_t expect = V * d + static_cast<size_t>(c.n_layers_enc) * enc_layer + ln +
                          static_cast<size_t>(c.n_layers_dec) * dec_layer + ln + d * V + V;
    CHECK(checkpoint_param_count(c) == expect);
}

TEST_CASE("analytic gradients match central finite differences") {
    const int V = 17;
    ModelConfig cfg = tiny_config(V, Precision::Double);
    Seq2SeqModel<double> model(cfg);
    model.init_params(42);

    std::mt19937_64 rng(7);
    TokenSeq src1 = random_seq(rng, 5, V);
    TokenSeq tgt1 = random_seq(rng, 4, V);
    tgt1.push_back(Vocab::kEos);
    TokenSeq src2 = random_seq(rng, 3, V);
    TokenSeq tgt2 = random_seq(rng, 6, V);
    tgt2.push_back(Vocab::kEos);
    std::vector<IdPair> batch = {{&src1, &tgt1}, {&src2, &tgt2}};

    ParamStore<double> grads = model.params.like_zeros();
    const double loss = model.loss_and_grad(batch, grads);
    CHECK(std::abs(loss - fd_loss(model, batch)) < 1e-9);

    const double h = 1e-5;
    std::uniform_int_distribution<size_t> coord(0, model.params.flat.size() - 1);
    double max_rel = 0.0;
    for (int it = 0; it < 150; ++it) {
        const size_t i = coord(rng);
        const double keep = model.params.flat[i];
        model.params.flat[i] = keep + h;
        const double up = fd_loss(model, batch);
        model.params.flat[i] = keep - h;
        const double down = fd_loss(model, batch);
        model.params.flat[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double analytic = grads.flat[i];
        const double rel =
            std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
        max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel <= 1e-5);
}

TEST_CASE("batched loss reduction does not depend on batch composition splits") {
    const int V = 17;
    Seq2SeqModel<double> model(tiny_config(V, Precision::Double));
    model.init_params(13);
    std::mt19937_64 rng(3);
    std::vector<TokenSeq> srcs, tgts;
    for (int i = 0; i < 6; ++i) {
        srcs.push_back(random_seq(rng, 4, V));
        TokenSeq t = random_seq(rng, 3, V);
        t.push_back(Vocab::kEos);
        tgts.push_back(t);
    }
    std::vector<IdPair> batch;
    for (int i = 0; i < 6; ++i) batch.push_back({&srcs[i], &tgts[i]});
    ParamStore<double> g1 = model.params.like_zeros();
    const double all = model.loss_and_grad(batch, g1);
    double sum = 0.0;
    ParamStore<double> g2 = model.params.like_zeros();
    for (int i = 0; i < 6; ++i) sum += model.loss_and_grad({batch[i]}, g2);
    CHECK(all == doctest::Approx(sum).epsilon(1e-12));
    for (size_t j = 0; j < g1.flat.size(); ++j)
        CHECK(g1.flat[j] == doctest::Approx(g2.flat[j]).epsilon(1e-9));
}

TEST_CASE("dropout trains deterministically given a seed") {
    const int V = 17;
    ModelConfig cfg = tiny_config(V);
    cfg.dropout = 0.1;
    Seq2SeqModel<float> model(cfg);
    model.init_params(1);
    TokenSeq src = {8, 9, 10};
    TokenSeq tgt = {11, 12, Vocab::kEos};
    ParamStore<float> g1 = model.params.like_zeros();
    ParamStore<float> g2 = model.params.like_zeros();
    const float a = model.loss_and_grad({{&src, &tgt}}, g1, true, 99);
    const float b = model.loss_and_grad({{&src, &tgt}}, g2, true, 99);
    CHECK(a == b);
    CHECK(g1.flat == g2.flat);
    const float c = model.loss_and_grad({{&src, &tgt}}, g2, true, 100);
    CHECK(a != c);
}

TEST_CASE("checkpoint round-trip is bitwise identical") {
    const int V = 16;
    Seq2SeqModel<float> model(tiny_config(V));
    model.init_params(8);
    Vocab vocab = Vocab::with_specials();
    for (int i = Vocab::kNumSpecials; i < V; ++i) vocab.id_to_token.push_back("w" + std::to_string(i));
    for (int i = Vocab::kNumSpecials; i < V; ++i) vocab.token_to_id.emplace(vocab.id_to_token[i], i);

    const auto dir = std::filesystem::temp_directory_path() / "temprank_test_model";
    std::filesystem::create_directories(dir);
    const auto path = dir / "ck.tprk";
    save_checkpoint(path, model, vocab, {}, {{"method", "generation"}});

    auto ck = load_checkpoint<float>(path);
    CHECK(ck.params.flat == model.params.flat);
    CHECK(ck.vocab.id_to_token == vocab.id_to_token);
    CHECK(ck.meta.at("method") == "generation");

    Seq2SeqModel<float> loaded(ck.config);
    loaded.params = ck.params;
    std::mt19937_64 rng(10);
    for (int it = 0; it < 20; ++it) {
        TokenSeq src = random_seq(rng, 4, V);
        TokenSeq tgt = random_seq(rng, 3, V);
        tgt.push_back(Vocab::kEos);
        CHECK(model.sequence_logprob(src, tgt) == loaded.sequence_logprob(src, tgt));
    }

    SUBCASE("file size is header plus 4 bytes per parameter") {
        std::ifstream in(path, std::ios::binary);
        in.seekg(8);
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        const size_t meta_len = b[0] | (b[1] << 8) | (b[2] << 16) | (size_t(b[3]) << 24);
        const size_t expect = 4 + 4 + 4 + meta_len + 4 * model.params.count();
        CHECK(std::filesystem::file_size(path) == expect);
    }

    SUBCASE("corrupted magic is rejected") {
        std::string blob = read_file(path);
        blob[0] = 'X';
        const auto bad = dir / "bad_magic.tprk";
        write_file_atomic(bad, blob);
        CHECK_THROWS_WITH_AS(load_checkpoint<float>(bad),
                             doctest::Contains("bad checkpoint magic"), std::runtime_error);
    }

    SUBCASE("truncated payload is rejected") {
        std::string blob = read_file(path);
        blob.resize(blob.size() - 64);
        const auto bad = dir / "trunc.tprk";
        write_file_atomic(bad, blob);
        CHECK_THROWS_WITH_AS(load_checkpoint<float>(bad), doctest::Contains("truncated"),
                             std::runtime_error);
    }

    SUBCASE("precision mismatch is rejected") {
        CHECK_THROWS_WITH_AS(load_checkpoint<double>(path), doctest::Contains("precision mismatch"),
                             std::runtime_error);
    }
}

TEST_CASE("overlong and out-of-range inputs are rejected") {
    const int V = 16;
    Seq2SeqModel<float> model(tiny_config(V));
    model.init_params(1);
    TokenSeq long_src(40, 8);
    TokenSeq tgt = {9, Vocab::kEos};
    CHECK_THROWS_AS(model.sequence_logprob(long_src, tgt), std::runtime_error);
    TokenSeq src = {8, 9};
    TokenSeq bad_tgt = {100, Vocab::kEos};
    CHECK_THROWS_AS(model.sequence_logprob(src, bad_tgt), std::runtime_error);
}
