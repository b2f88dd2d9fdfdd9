#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "claimcast/autodiff.hpp"
#include "claimcast/distributions.hpp"
#include "claimcast/errors.hpp"
#include "claimcast/io_util.hpp"
#include "claimcast/network.hpp"
#include "claimcast/rng.hpp"
#include "claimcast/scalarfn.hpp"

using claimcast::DataError;
using claimcast::Rng;
using claimcast::Tensor;
namespace ad = claimcast::ad;
namespace data = claimcast::data;
namespace dist = claimcast::dist;
namespace net = claimcast::net;
namespace io = claimcast::io;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    return fs::temp_directory_path() / ("claimcast_net_" + name);
}

bool same_tensor(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data().data(), b.data().data(),
                       a.size() * sizeof(double)) == 0;
}

bool same_model(net::Model& a, net::Model& b) {
    const auto pa = a.parameters();
    const auto pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].name != pb[i].name) return false;
        if (!same_tensor(*pa[i].tensor, *pb[i].tensor)) return false;
    }
    return true;
}

net::ModelDims small_dims() {
    net::ModelDims d;
    d.lob_vocab = 4;
    d.claim_code_vocab = 3;
    d.injured_part_vocab = 5;
    return d;
}

// History of `len` real steps right-aligned into the 11-slot window.
data::ModelInput sample_input(int len, std::size_t lob, std::size_t code,
                              std::size_t part, double seed_val) {
    data::ModelInput in;
    const int offset = data::kSeqLen - len;
    for (int t = offset; t < data::kSeqLen; ++t) {
        in.paid_hist[t] = 0.3 * seed_val + 0.1 * t;
        in.recovery_hist[t] = 0.05 * seed_val;
        in.status_open[t] = (t % 2 == 0) ? 1.0 : 0.0;
        in.status_closed[t] = 1.0 - in.status_open[t];
        in.hist_mask[t] = 1.0;
    }
    in.age_scaled = 0.25 * seed_val;
    in.dev_year_scaled = double(len - 1) / 11.0;
    in.lob_index = lob;
    in.claim_code_index = code;
    in.injured_part_index = part;
    return in;
}

// Scalar reimplementation of the full forward pass for one sample, using
// the value-level step as the recurrence and plain loops for everything
// else. Padded steps are skipped outright, which for binary masks is the
// same state path the graph's blend produces.
struct OracleRaw {
    std::array<std::array<double, 4>, data::kSeqLen> paid{};
    std::array<std::array<double, 4>, data::kSeqLen> recovery{};
};

OracleRaw oracle_forward(net::Model& m, const data::ModelInput& in,
                         const net::WeightDraws& d) {
    Tensor h(1, 3, 0.0), c(1, 3, 0.0);
    for (int t = 0; t < data::kSeqLen; ++t) {
        if (in.hist_mask[t] == 0.0) continue;
        Tensor x(1, 5);
        x.at(0, 0) = in.paid_hist[t];
        x.at(0, 1) = in.recovery_hist[t];
        x.at(0, 2) = in.status_open[t];
        x.at(0, 3) = in.status_closed[t];
        x.at(0, 4) = in.hist_mask[t];
        net::lstm_step(m.encoder, x, h, c);
    }

    std::array<double, 4> hs{};
    const double statics[2] = {in.age_scaled, in.dev_year_scaled};
    for (std::size_t j = 0; j < 4; ++j) {
        double acc = m.static_b[j];
        for (std::size_t p = 0; p < 2; ++p) acc += statics[p] * m.static_w.at(p, j);
        hs[j] = std::tanh(acc);
    }

    std::vector<double> enc;
    for (std::size_t j = 0; j < 3; ++j) enc.push_back(h.at(0, j));
    for (std::size_t j = 0; j < 4; ++j) enc.push_back(hs[j]);
    for (std::size_t j = 0; j < 2; ++j) enc.push_back(m.lob_embed.at(in.lob_index, j));
    for (std::size_t j = 0; j < 2; ++j)
        enc.push_back(m.claim_code_embed.at(in.claim_code_index, j));
    for (std::size_t j = 0; j < 2; ++j)
        enc.push_back(m.injured_part_embed.at(in.injured_part_index, j));
    REQUIRE(enc.size() == m.dims.encoding_dim());

    auto head_weight = [](const net::VariationalDense& head, const Tensor& eps_w,
                          const Tensor& eps_b, Tensor& w, Tensor& b) {
        w = head.mean_w;
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] += claimcast::stable_softplus(head.raw_scale_w[i]) * eps_w[i];
        b = head.mean_b;
        for (std::size_t i = 0; i < b.size(); ++i)
            b[i] += claimcast::stable_softplus(head.raw_scale_b[i]) * eps_b[i];
    };
    Tensor pw, pb, rw, rb;
    head_weight(m.paid_head, d.paid_w, d.paid_b, pw, pb);
    head_weight(m.recovery_head, d.recovery_w, d.recovery_b, rw, rb);

    Tensor enc_x(1, enc.size());
    for (std::size_t j = 0; j < enc.size(); ++j) enc_x.at(0, j) = enc[j];

    OracleRaw out;
    Tensor dh(1, 3, 0.0), dc(1, 3, 0.0);
    for (int t = 0; t < data::kSeqLen; ++t) {
        net::lstm_step(m.decoder, enc_x, dh, dc);
        for (std::size_t q = 0; q < 4; ++q) {
            double pacc = pb[q];
            double racc = rb[q];
            for (std::size_t p = 0; p < 3; ++p) {
                pacc += dh.at(0, p) * pw.at(p, q);
                racc += dh.at(0, p) * rw.at(p, q);
            }
            out.paid[t][q] = pacc;
            out.recovery[t][q] = racc;
        }
    }
    return out;
}

} // namespace

TEST_SUITE("network") {

TEST_CASE("initialization is deterministic and structured") {
    const net::ModelDims dims = small_dims();
    net::Model a = net::init_model(dims, 7);
    net::Model b = net::init_model(dims, 7);
    CHECK(same_model(a, b));

    net::Model c = net::init_model(dims, 8);
    CHECK_FALSE(same_model(a, c));

    const auto params = a.parameters();
    REQUIRE(params.size() == 19);
    const char* expected[] = {
        "lob_embed", "claim_code_embed", "injured_part_embed",
        "static_w", "static_b",
        "encoder.w_x", "encoder.w_h", "encoder.b",
        "decoder.w_x", "decoder.w_h", "decoder.b",
        "paid_head.mean_w", "paid_head.raw_scale_w",
        "paid_head.mean_b", "paid_head.raw_scale_b",
        "recovery_head.mean_w", "recovery_head.raw_scale_w",
        "recovery_head.mean_b", "recovery_head.raw_scale_b",
    };
    for (std::size_t i = 0; i < params.size(); ++i)
        CHECK(params[i].name == expected[i]);

    CHECK(a.lob_embed.rows() == 4);
    CHECK(a.lob_embed.cols() == 2);
    CHECK(a.encoder.w_x.rows() == 5);
    CHECK(a.encoder.w_x.cols() == 12);
    CHECK(a.encoder.w_h.rows() == 3);
    CHECK(a.decoder.w_x.rows() == 13);
    CHECK(a.paid_head.mean_w.rows() == 3);
    CHECK(a.paid_head.mean_w.cols() == 4);

    // Forget-gate bias block starts at one, the rest at zero.
    for (std::size_t j = 0; j < 12; ++j) {
        const double want = (j >= 3 && j < 6) ? 1.0 : 0.0;
        CHECK(a.encoder.b[j] == want);
        CHECK(a.decoder.b[j] == want);
    }

    // Posterior scales start at softplus^-1(0.01).
    const double raw0 = std::log(std::expm1(0.01));
    for (std::size_t i = 0; i < a.paid_head.raw_scale_w.size(); ++i)
        CHECK(a.paid_head.raw_scale_w[i] == raw0);
    CHECK(claimcast::stable_softplus(raw0) == doctest::Approx(0.01).epsilon(1e-12));

    CHECK_THROWS_AS(net::init_model(net::ModelDims{0, 1, 1}, 1), DataError);
}

TEST_CASE("single step matches hand-computed gate arithmetic") {
    // Hidden size 1 keeps every gate a scalar: columns of the 4H axis are
    // input, forget, candidate, output in that order.
    net::LstmLayer layer;
    layer.w_x = Tensor::row({0.5, -0.3, 0.8, 0.2});
    layer.w_h = Tensor::row({0.1, 0.4, -0.2, 0.6});
    layer.b = Tensor::row({0.05, 1.0, -0.1, 0.3});

    Tensor h(1, 1);
    Tensor c(1, 1);
    h.at(0, 0) = 0.2;
    c.at(0, 0) = -0.5;
    Tensor x(1, 1);
    x.at(0, 0) = 0.7;

    const double gi = 1.0 / (1.0 + std::exp(-(0.7 * 0.5 + 0.2 * 0.1 + 0.05)));
    const double gf = 1.0 / (1.0 + std::exp(-(0.7 * -0.3 + 0.2 * 0.4 + 1.0)));
    const double gg = std::tanh(0.7 * 0.8 + 0.2 * -0.2 + -0.1);
    const double go = 1.0 / (1.0 + std::exp(-(0.7 * 0.2 + 0.2 * 0.6 + 0.3)));
    const double c1 = gf * -0.5 + gi * gg;
    const double h1 = go * std::tanh(c1);

    net::lstm_step(layer, x, h, c);
    CHECK(c.at(0, 0) == doctest::Approx(c1).epsilon(1e-14));
    CHECK(h.at(0, 0) == doctest::Approx(h1).epsilon(1e-14));
}

TEST_CASE("zero step and masked step") {
    net::LstmLayer zero;
    zero.w_x = Tensor(5, 12, 0.0);
    zero.w_h = Tensor(3, 12, 0.0);
    zero.b = Tensor(1, 12, 0.0);
    Tensor h(2, 3, 0.0), c(2, 3, 0.0);
    Tensor x(2, 5, 1.5);
    net::lstm_step(zero, x, h, c);
    for (std::size_t i = 0; i < h.size(); ++i) {
        CHECK(h[i] == 0.0);
        CHECK(c[i] == 0.0);
    }

    Rng rng(11);
    net::LstmLayer rand_layer;
    rand_layer.w_x = Tensor(5, 12);
    rand_layer.w_h = Tensor(3, 12);
    rand_layer.b = Tensor(1, 12);
    for (auto* t : {&rand_layer.w_x, &rand_layer.w_h, &rand_layer.b})
        for (std::size_t i = 0; i < t->size(); ++i) (*t)[i] = rng.gaussian();
    Tensor h2(1, 3, 0.4), c2(1, 3, -0.7);
    const Tensor h2_before = h2;
    const Tensor c2_before = c2;
    Tensor x2(1, 5, 2.0);
    net::lstm_step(rand_layer, x2, h2, c2, 0.0);
    CHECK(same_tensor(h2, h2_before));
    CHECK(same_tensor(c2, c2_before));

    Tensor bad_x(1, 4, 0.0);
    CHECK_THROWS_AS(net::lstm_step(rand_layer, bad_x, h2, c2), DataError);
}

TEST_CASE("differentiable forward matches the scalar reimplementation") {
    const net::ModelDims dims = small_dims();
    net::Model model = net::init_model(dims, 31);
    // Spread the posterior scales so the reparameterized part matters.
    Rng spread(77);
    for (auto* t : {&model.paid_head.raw_scale_w, &model.paid_head.raw_scale_b,
                    &model.recovery_head.raw_scale_w,
                    &model.recovery_head.raw_scale_b})
        for (std::size_t i = 0; i < t->size(); ++i)
            (*t)[i] = spread.uniform(-3.0, 0.5);

    Rng rng(101);
    const net::WeightDraws draws = net::draw_weights(dims, rng);

    std::vector<data::ModelInput> batch = {
        sample_input(11, 1, 2, 3, 1.0),
        sample_input(4, 0, 0, 0, -0.8),
        sample_input(1, 3, 1, 4, 0.3),
    };

    ad::Tape tape;
    const net::ForwardGraph g =
        net::build_forward(tape, model, batch, draws, false);

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const OracleRaw want = oracle_forward(model, batch[b], draws);
        for (int t = 0; t < data::kSeqLen; ++t) {
            const Tensor& paid = tape.value(g.paid_raw[t]);
            const Tensor& rec = tape.value(g.recovery_raw[t]);
            REQUIRE(paid.rows() == batch.size());
            REQUIRE(paid.cols() == 4);
            for (std::size_t q = 0; q < 4; ++q) {
                CHECK(paid.at(b, q) ==
                      doctest::Approx(want.paid[t][q]).epsilon(1e-12));
                CHECK(rec.at(b, q) ==
                      doctest::Approx(want.recovery[t][q]).epsilon(1e-12));
            }
        }
    }

    const double kl_graph = tape.value(g.kl)[0];
    const double kl_direct =
        dist::gaussian_kl_std_normal(
            {model.paid_head.mean_w, model.paid_head.raw_scale_w}) +
        dist::gaussian_kl_std_normal(
            {model.paid_head.mean_b, model.paid_head.raw_scale_b}) +
        dist::gaussian_kl_std_normal(
            {model.recovery_head.mean_w, model.recovery_head.raw_scale_w}) +
        dist::gaussian_kl_std_normal(
            {model.recovery_head.mean_b, model.recovery_head.raw_scale_b});
    CHECK(kl_graph == doctest::Approx(kl_direct).epsilon(1e-12));
    CHECK(kl_graph > 0.0);
}

TEST_CASE("forward yields valid mixture parameters and a positive KL") {
    const net::ModelDims dims = small_dims();
    net::Model model = net::init_model(dims, 5);
    std::vector<data::ModelInput> batch = {
        sample_input(6, 2, 1, 2, 0.5),
        sample_input(2, 1, 2, 1, -1.2),
    };
    Rng rng(9);
    const net::ForwardResult res =
        net::forward(model, batch, rng, net::WeightMode::sample);

    REQUIRE(res.outputs.size() == batch.size());
    CHECK(res.kl_total > 0.0);
    for (const auto& steps : res.outputs) {
        for (int t = 0; t < data::kSeqLen; ++t) {
            for (int head = 0; head < 2; ++head) {
                const dist::MixtureParams& p = steps[t][head];
                CHECK(p.w1 + p.w2 == doctest::Approx(1.0).epsilon(1e-12));
                CHECK(p.w1 >= 0.0);
                CHECK(p.w2 >= 0.0);
                CHECK(p.sigma_ln > dist::kAlpha);
                CHECK(p.sigma_ln < dist::kAlpha + dist::kLambda);
                CHECK(std::isfinite(p.mu));
            }
        }
    }

    CHECK_THROWS_AS(
        net::forward(model, std::span<const data::ModelInput>{}, rng,
                     net::WeightMode::sample),
        DataError);

    std::vector<data::ModelInput> bad = {sample_input(3, dims.lob_vocab, 0, 0, 0.1)};
    CHECK_THROWS_AS(
        net::forward(model, bad, rng, net::WeightMode::sample), DataError);
}

TEST_CASE("weight sampling is seed-reproducible and adds spread") {
    const net::ModelDims dims = small_dims();
    net::Model model = net::init_model(dims, 13);
    std::vector<data::ModelInput> batch = {sample_input(5, 1, 1, 1, 0.9)};

    auto run = [&](std::uint64_t seed, net::WeightMode mode) {
        Rng rng(seed);
        return net::forward(model, batch, rng, mode);
    };

    const net::ForwardResult a = run(42, net::WeightMode::sample);
    const net::ForwardResult b = run(42, net::WeightMode::sample);
    const net::ForwardResult c = run(43, net::WeightMode::sample);

    bool identical_ab = true;
    bool identical_ac = true;
    for (int t = 0; t < data::kSeqLen; ++t) {
        for (int head = 0; head < 2; ++head) {
            for (int j = 0; j < 4; ++j) {
                identical_ab &=
                    a.outputs[0][t][head].v[j] == b.outputs[0][t][head].v[j];
                identical_ac &=
                    a.outputs[0][t][head].v[j] == c.outputs[0][t][head].v[j];
            }
        }
    }
    CHECK(identical_ab);
    CHECK_FALSE(identical_ac);

    // Posterior-mean forwards ignore the rng draw entirely.
    const net::ForwardResult m1 = run(1, net::WeightMode::posterior_mean);
    const net::ForwardResult m2 = run(2, net::WeightMode::posterior_mean);
    bool identical_means = true;
    for (int t = 0; t < data::kSeqLen; ++t)
        for (int head = 0; head < 2; ++head)
            for (int j = 0; j < 4; ++j)
                identical_means &=
                    m1.outputs[0][t][head].v[j] == m2.outputs[0][t][head].v[j];
    CHECK(identical_means);

    // Repeated sampled forwards spread the predicted mean: the weight
    // uncertainty is visible in the output distribution.
    Rng rng(500);
    std::vector<double> means;
    for (int i = 0; i < 100; ++i) {
        const net::ForwardResult r =
            net::forward(model, batch, rng, net::WeightMode::sample);
        means.push_back(dist::mixture_mean(r.outputs[0][0][0]));
    }
    double mean = 0.0;
    for (double v : means) mean += v;
    mean /= double(means.size());
    double var = 0.0;
    for (double v : means) var += (v - mean) * (v - mean);
    var /= double(means.size());
    CHECK(var > 0.0);
}

TEST_CASE("padded history positions cannot influence the outputs") {
    const net::ModelDims dims = small_dims();
    net::Model model = net::init_model(dims, 21);

    data::ModelInput clean = sample_input(4, 2, 1, 3, 0.7);
    data::ModelInput noisy = clean;
    for (int t = 0; t < data::kSeqLen - 4; ++t) {
        REQUIRE(noisy.hist_mask[t] == 0.0);
        noisy.paid_hist[t] = 1e6 + t;
        noisy.recovery_hist[t] = -44.0;
        noisy.status_open[t] = 9.0;
        noisy.status_closed[t] = -9.0;
    }

    std::vector<data::ModelInput> b1 = {clean};
    std::vector<data::ModelInput> b2 = {noisy};
    Rng r1(3), r2(3);
    const net::ForwardResult a = net::forward(model, b1, r1, net::WeightMode::sample);
    const net::ForwardResult b = net::forward(model, b2, r2, net::WeightMode::sample);

    for (int t = 0; t < data::kSeqLen; ++t)
        for (int head = 0; head < 2; ++head)
            for (int j = 0; j < 4; ++j)
                CHECK(a.outputs[0][t][head].v[j] == b.outputs[0][t][head].v[j]);
    CHECK(a.kl_total == b.kl_total);
}

TEST_CASE("whole-network gradients agree with finite differences") {
    const net::ModelDims dims = small_dims();
    net::Model model = net::init_model(dims, 17);
    Rng rng(55);
    const net::WeightDraws draws = net::draw_weights(dims, rng);

    std::vector<data::ModelInput> batch = {
        sample_input(11, 1, 2, 4, 0.6),
        sample_input(3, 2, 0, 1, -0.4),
    };

    // Scalar objective touching every output head, every step, and the KL.
    auto objective = [&](ad::Tape& tape) {
        const net::ForwardGraph g =
            net::build_forward(tape, model, batch, draws, true);
        ad::Var total = g.kl;
        for (int t = 0; t < data::kSeqLen; ++t) {
            total = tape.add(total, tape.sum(g.paid_raw[t]));
            total = tape.add(total, tape.sum(g.recovery_raw[t]));
        }
        return std::pair<ad::Var, const net::ForwardGraph>(total, g);
    };

    const auto params = model.parameters();
    auto value_fn = [&]() {
        ad::Tape tape;
        return tape.value(objective(tape).first)[0];
    };
    auto grad_fn = [&]() {
        ad::Tape tape;
        const auto [total, g] = objective(tape);
        tape.backward(total);
        std::vector<Tensor> grads;
        for (const ad::Var v : g.param_vars) grads.push_back(tape.adjoint(v));
        return grads;
    };

    const ad::GradCheckReport report =
        ad::grad_check(value_fn, grad_fn, params, 1e-5, 1e-3);
    std::size_t total_elems = 0;
    for (const auto& p : params) total_elems += p.tensor->size();
    CHECK(report.rows.size() == total_elems);
    INFO("worst row: " << report.rows[report.worst_row].name << "["
                       << report.rows[report.worst_row].index
                       << "] rel err " << report.max_rel_err);
    CHECK(report.passed());
}

TEST_CASE("checkpoints round-trip exactly") {
    const net::ModelDims dims = small_dims();
    net::Model model = net::init_model(dims, 99);
    const fs::path path = temp_path("ckpt.txt");
    net::save_checkpoint(path, model, 0xDEADBEEFCAFEF00DULL);

    net::Checkpoint loaded = net::load_checkpoint(path);
    CHECK(loaded.stats_digest == 0xDEADBEEFCAFEF00DULL);
    CHECK(loaded.model.dims.lob_vocab == dims.lob_vocab);
    CHECK(loaded.model.dims.claim_code_vocab == dims.claim_code_vocab);
    CHECK(loaded.model.dims.injured_part_vocab == dims.injured_part_vocab);
    CHECK(same_model(model, loaded.model));

    // Saving the loaded model reproduces the file byte for byte.
    const fs::path path2 = temp_path("ckpt2.txt");
    net::save_checkpoint(path2, loaded.model, loaded.stats_digest);
    CHECK(io::read_text_file(path) == io::read_text_file(path2));
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("corrupted checkpoints are rejected") {
    const net::ModelDims dims = small_dims();
    net::Model model = net::init_model(dims, 3);
    const fs::path path = temp_path("ckpt_src.txt");
    net::save_checkpoint(path, model, 12345);
    const std::string good = io::read_text_file(path);
    fs::remove(path);

    auto expect_reject = [&](const std::string& text, const std::string& label) {
        const fs::path bad = temp_path("ckpt_bad.txt");
        io::atomic_write_text(bad, text);
        INFO(label);
        CHECK_THROWS_AS(net::load_checkpoint(bad), DataError);
        fs::remove(bad);
    };

    std::string wrong_format = good;
    wrong_format.replace(wrong_format.find("checkpoint-v1"), 13, "checkpoint-v9");
    expect_reject(wrong_format, "format version");

    expect_reject(good + "extra=1\n", "unknown key");
    expect_reject(good + "tensor.bogus=1 1 0\n", "unexpected tensor");

    std::string missing = good;
    const std::size_t line_at = missing.find("tensor.static_w=");
    missing.erase(line_at, missing.find('\n', line_at) - line_at + 1);
    expect_reject(missing, "missing tensor");

    std::string bad_shape = good;
    bad_shape.replace(bad_shape.find("tensor.static_b=1 4"), 19,
                      "tensor.static_b=1 5");
    expect_reject(bad_shape, "wrong shape");

    std::string truncated = good;
    const std::size_t b_at = truncated.find("tensor.static_b=");
    const std::size_t b_end = truncated.find('\n', b_at);
    std::string line = truncated.substr(b_at, b_end - b_at);
    line = line.substr(0, line.rfind(' '));
    truncated.replace(b_at, b_end - b_at, line);
    expect_reject(truncated, "truncated tensor");

    std::string bad_vocab = good;
    bad_vocab.replace(bad_vocab.find("lob_vocab=4"), 11, "lob_vocab=-4");
    expect_reject(bad_vocab, "negative vocabulary");

    expect_reject("stats_digest=1\n", "missing format");
}

} // TEST_SUITE
