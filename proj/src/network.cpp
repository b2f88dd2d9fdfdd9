#include "claimcast/network.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <sstream>
#include <string>

#include "claimcast/errors.hpp"
#include "claimcast/io_util.hpp"
#include "claimcast/scalarfn.hpp"

namespace claimcast::net {

std::vector<ad::ParamRef> Model::parameters() {
    return {
        {"lob_embed", &lob_embed},
        {"claim_code_embed", &claim_code_embed},
        {"injured_part_embed", &injured_part_embed},
        {"static_w", &static_w},
        {"static_b", &static_b},
        {"encoder.w_x", &encoder.w_x},
        {"encoder.w_h", &encoder.w_h},
        {"encoder.b", &encoder.b},
        {"decoder.w_x", &decoder.w_x},
        {"decoder.w_h", &decoder.w_h},
        {"decoder.b", &decoder.b},
        {"paid_head.mean_w", &paid_head.mean_w},
        {"paid_head.raw_scale_w", &paid_head.raw_scale_w},
        {"paid_head.mean_b", &paid_head.mean_b},
        {"paid_head.raw_scale_b", &paid_head.raw_scale_b},
        {"recovery_head.mean_w", &recovery_head.mean_w},
        {"recovery_head.raw_scale_w", &recovery_head.raw_scale_w},
        {"recovery_head.mean_b", &recovery_head.mean_b},
        {"recovery_head.raw_scale_b", &recovery_head.raw_scale_b},
    };
}

namespace {

constexpr std::size_t kEnc = ModelDims::kEncHidden;
constexpr std::size_t kDec = ModelDims::kDecHidden;
constexpr std::size_t kOut = ModelDims::kHeadOutputs;

Tensor gaussian_tensor(Rng& rng, std::size_t r, std::size_t c, double sd) {
    Tensor t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.gaussian(0.0, sd);
    return t;
}

// Zero bias except the forget gate block, which starts at 1.
Tensor lstm_bias(std::size_t hidden) {
    Tensor b(1, 4 * hidden, 0.0);
    for (std::size_t j = hidden; j < 2 * hidden; ++j) b[j] = 1.0;
    return b;
}

Model shaped_model(const ModelDims& dims) {
    Model m;
    m.dims = dims;
    m.lob_embed = Tensor(dims.lob_vocab, ModelDims::kEmbedDim);
    m.claim_code_embed = Tensor(dims.claim_code_vocab, ModelDims::kEmbedDim);
    m.injured_part_embed = Tensor(dims.injured_part_vocab, ModelDims::kEmbedDim);
    m.static_w = Tensor(2, ModelDims::kStaticHidden);
    m.static_b = Tensor(1, ModelDims::kStaticHidden);
    m.encoder.w_x = Tensor(ModelDims::kSeqChannels, 4 * kEnc);
    m.encoder.w_h = Tensor(kEnc, 4 * kEnc);
    m.encoder.b = Tensor(1, 4 * kEnc);
    m.decoder.w_x = Tensor(dims.encoding_dim(), 4 * kDec);
    m.decoder.w_h = Tensor(kDec, 4 * kDec);
    m.decoder.b = Tensor(1, 4 * kDec);
    for (VariationalDense* head : {&m.paid_head, &m.recovery_head}) {
        head->mean_w = Tensor(kDec, kOut);
        head->raw_scale_w = Tensor(kDec, kOut);
        head->mean_b = Tensor(1, kOut);
        head->raw_scale_b = Tensor(1, kOut);
    }
    return m;
}

} // namespace

Model init_model(const ModelDims& dims, std::uint64_t seed) {
    if (dims.lob_vocab == 0 || dims.claim_code_vocab == 0 || dims.injured_part_vocab == 0)
        throw DataError("init_model: vocabulary sizes must be at least 1");

    Rng rng(seed);
    Model m = shaped_model(dims);

    m.lob_embed = gaussian_tensor(rng, dims.lob_vocab, ModelDims::kEmbedDim, 0.05);
    m.claim_code_embed =
        gaussian_tensor(rng, dims.claim_code_vocab, ModelDims::kEmbedDim, 0.05);
    m.injured_part_embed =
        gaussian_tensor(rng, dims.injured_part_vocab, ModelDims::kEmbedDim, 0.05);

    m.static_w = gaussian_tensor(rng, 2, ModelDims::kStaticHidden, 1.0 / std::sqrt(2.0));
    m.static_b = Tensor(1, ModelDims::kStaticHidden, 0.0);

    m.encoder.w_x = gaussian_tensor(rng, ModelDims::kSeqChannels, 4 * kEnc,
                                    1.0 / std::sqrt(double(ModelDims::kSeqChannels)));
    m.encoder.w_h = gaussian_tensor(rng, kEnc, 4 * kEnc, 1.0 / std::sqrt(double(kEnc)));
    m.encoder.b = lstm_bias(kEnc);

    const std::size_t enc_dim = dims.encoding_dim();
    m.decoder.w_x =
        gaussian_tensor(rng, enc_dim, 4 * kDec, 1.0 / std::sqrt(double(enc_dim)));
    m.decoder.w_h = gaussian_tensor(rng, kDec, 4 * kDec, 1.0 / std::sqrt(double(kDec)));
    m.decoder.b = lstm_bias(kDec);

    const double raw_scale_init = std::log(std::expm1(0.01)); // softplus^-1(0.01)
    for (VariationalDense* head : {&m.paid_head, &m.recovery_head}) {
        head->mean_w = gaussian_tensor(rng, kDec, kOut, 0.05);
        head->raw_scale_w = Tensor(kDec, kOut, raw_scale_init);
        head->mean_b = gaussian_tensor(rng, 1, kOut, 0.05);
        head->raw_scale_b = Tensor(1, kOut, raw_scale_init);
    }
    return m;
}

WeightDraws draw_weights(const ModelDims&, Rng& rng) {
    WeightDraws d;
    d.paid_w = gaussian_tensor(rng, kDec, kOut, 1.0);
    d.paid_b = gaussian_tensor(rng, 1, kOut, 1.0);
    d.recovery_w = gaussian_tensor(rng, kDec, kOut, 1.0);
    d.recovery_b = gaussian_tensor(rng, 1, kOut, 1.0);
    return d;
}

WeightDraws mean_weights(const ModelDims&) {
    WeightDraws d;
    d.paid_w = Tensor(kDec, kOut, 0.0);
    d.paid_b = Tensor(1, kOut, 0.0);
    d.recovery_w = Tensor(kDec, kOut, 0.0);
    d.recovery_b = Tensor(1, kOut, 0.0);
    return d;
}

void lstm_step(const LstmLayer& layer, const Tensor& x, Tensor& h, Tensor& c,
               double mask) {
    const std::size_t hidden = layer.w_h.rows();
    if (x.cols() != layer.w_x.rows() || h.cols() != hidden || c.cols() != hidden ||
        x.rows() != h.rows() || h.rows() != c.rows())
        throw DataError("lstm_step: dimension mismatch");
    if (mask == 0.0) return;

    const std::size_t batch = x.rows();
    for (std::size_t r = 0; r < batch; ++r) {
        std::vector<double> gates(4 * hidden, 0.0);
        for (std::size_t j = 0; j < 4 * hidden; ++j) gates[j] = layer.b[j];
        for (std::size_t p = 0; p < x.cols(); ++p) {
            const double xv = x.at(r, p);
            if (xv == 0.0) continue;
            for (std::size_t j = 0; j < 4 * hidden; ++j)
                gates[j] += xv * layer.w_x.at(p, j);
        }
        for (std::size_t p = 0; p < hidden; ++p) {
            const double hv = h.at(r, p);
            if (hv == 0.0) continue;
            for (std::size_t j = 0; j < 4 * hidden; ++j)
                gates[j] += hv * layer.w_h.at(p, j);
        }
        for (std::size_t j = 0; j < hidden; ++j) {
            const double gi = stable_sigmoid(gates[j]);
            const double gf = stable_sigmoid(gates[hidden + j]);
            const double gg = std::tanh(gates[2 * hidden + j]);
            const double go = stable_sigmoid(gates[3 * hidden + j]);
            const double cn = gf * c.at(r, j) + gi * gg;
            c.at(r, j) = cn;
            h.at(r, j) = go * std::tanh(cn);
        }
    }
}

namespace {

struct ParamVars {
    std::vector<ad::Var> in_order;
    ad::Var lob_embed, claim_code_embed, injured_part_embed;
    ad::Var static_w, static_b;
    ad::Var enc_wx, enc_wh, enc_b;
    ad::Var dec_wx, dec_wh, dec_b;
    ad::Var paid_mw, paid_rw, paid_mb, paid_rb;
    ad::Var rec_mw, rec_rw, rec_mb, rec_rb;
};

ParamVars push_params(ad::Tape& tape, Model& model, bool trainable) {
    ParamVars pv;
    std::vector<ad::Var*> slots = {
        &pv.lob_embed, &pv.claim_code_embed, &pv.injured_part_embed,
        &pv.static_w,  &pv.static_b,
        &pv.enc_wx,    &pv.enc_wh,          &pv.enc_b,
        &pv.dec_wx,    &pv.dec_wh,          &pv.dec_b,
        &pv.paid_mw,   &pv.paid_rw,         &pv.paid_mb,  &pv.paid_rb,
        &pv.rec_mw,    &pv.rec_rw,          &pv.rec_mb,   &pv.rec_rb,
    };
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const ad::Var v =
            trainable ? tape.leaf(*params[i].tensor) : tape.constant(*params[i].tensor);
        *slots[i] = v;
        pv.in_order.push_back(v);
    }
    return pv;
}

} // namespace

ForwardGraph build_forward(ad::Tape& tape, Model& model,
                           std::span<const data::ModelInput> batch,
                           const WeightDraws& draws, bool params_trainable) {
    const std::size_t n = batch.size();
    if (n == 0) throw DataError("build_forward: empty batch");

    const ParamVars pv = push_params(tape, model, params_trainable);
    const ad::Var ones = tape.constant(Tensor(n, 1, 1.0));
    auto bias_row = [&](ad::Var b) { return tape.matmul(ones, b); };

    auto lstm_tick = [&](ad::Var wx, ad::Var wh, ad::Var b, ad::Var x, ad::Var h,
                         ad::Var c, std::size_t hidden) {
        const ad::Var g = tape.add(
            tape.add(tape.matmul(x, wx), tape.matmul(h, wh)), bias_row(b));
        const ad::Var gi = tape.sigmoid(tape.slice_cols(g, 0, hidden));
        const ad::Var gf = tape.sigmoid(tape.slice_cols(g, hidden, hidden));
        const ad::Var gg = tape.tanh(tape.slice_cols(g, 2 * hidden, hidden));
        const ad::Var go = tape.sigmoid(tape.slice_cols(g, 3 * hidden, hidden));
        const ad::Var c_new = tape.add(tape.mul(gf, c), tape.mul(gi, gg));
        const ad::Var h_new = tape.mul(go, tape.tanh(c_new));
        return std::pair<ad::Var, ad::Var>{h_new, c_new};
    };

    // Encoder over the padded history; masked steps pass state through.
    ad::Var h = tape.constant(Tensor(n, kEnc, 0.0));
    ad::Var c = tape.constant(Tensor(n, kEnc, 0.0));
    for (int t = 0; t < data::kSeqLen; ++t) {
        Tensor x(n, ModelDims::kSeqChannels);
        Tensor mask(n, kEnc);
        Tensor inv_mask(n, kEnc);
        for (std::size_t b = 0; b < n; ++b) {
            const auto& in = batch[b];
            x.at(b, 0) = in.paid_hist[t];
            x.at(b, 1) = in.recovery_hist[t];
            x.at(b, 2) = in.status_open[t];
            x.at(b, 3) = in.status_closed[t];
            x.at(b, 4) = in.hist_mask[t];
            for (std::size_t j = 0; j < kEnc; ++j) {
                mask.at(b, j) = in.hist_mask[t];
                inv_mask.at(b, j) = 1.0 - in.hist_mask[t];
            }
        }
        const ad::Var xv = tape.constant(std::move(x));
        const ad::Var mv = tape.constant(std::move(mask));
        const ad::Var iv = tape.constant(std::move(inv_mask));
        const auto [hn, cn] = lstm_tick(pv.enc_wx, pv.enc_wh, pv.enc_b, xv, h, c, kEnc);
        h = tape.add(tape.mul(mv, hn), tape.mul(iv, h));
        c = tape.add(tape.mul(mv, cn), tape.mul(iv, c));
    }

    // Embeddings and statics.
    auto indices_of = [&](std::size_t data::ModelInput::* member, std::size_t vocab,
                          const char* what) {
        std::vector<std::size_t> idx(n);
        for (std::size_t b = 0; b < n; ++b) {
            idx[b] = batch[b].*member;
            if (idx[b] >= vocab)
                throw DataError(std::string("build_forward: ") + what +
                                " index out of vocabulary range");
        }
        return idx;
    };
    const ad::Var e_lob = tape.take_rows(
        pv.lob_embed,
        indices_of(&data::ModelInput::lob_index, model.dims.lob_vocab, "lob"));
    const ad::Var e_code = tape.take_rows(
        pv.claim_code_embed,
        indices_of(&data::ModelInput::claim_code_index, model.dims.claim_code_vocab,
                   "claim_code"));
    const ad::Var e_part = tape.take_rows(
        pv.injured_part_embed,
        indices_of(&data::ModelInput::injured_part_index,
                   model.dims.injured_part_vocab, "injured_part"));

    Tensor statics(n, 2);
    for (std::size_t b = 0; b < n; ++b) {
        statics.at(b, 0) = batch[b].age_scaled;
        statics.at(b, 1) = batch[b].dev_year_scaled;
    }
    const ad::Var h_static = tape.tanh(tape.add(
        tape.matmul(tape.constant(std::move(statics)), pv.static_w),
        bias_row(pv.static_b)));

    const std::array<ad::Var, 5> parts = {h, h_static, e_lob, e_code, e_part};
    const ad::Var encoding = tape.concat_cols(parts);

    // One reparameterized weight draw per head, shared by every time step.
    auto sampled = [&](ad::Var mean, ad::Var raw, const Tensor& eps) {
        return tape.add(mean, tape.mul(tape.softplus(raw), tape.constant(eps)));
    };
    const ad::Var paid_w = sampled(pv.paid_mw, pv.paid_rw, draws.paid_w);
    const ad::Var paid_b = sampled(pv.paid_mb, pv.paid_rb, draws.paid_b);
    const ad::Var rec_w = sampled(pv.rec_mw, pv.rec_rw, draws.recovery_w);
    const ad::Var rec_b = sampled(pv.rec_mb, pv.rec_rb, draws.recovery_b);

    ForwardGraph out;
    out.param_vars = pv.in_order;

    // Decoder: the encoding repeated for each of the 11 future steps.
    ad::Var dh = tape.constant(Tensor(n, kDec, 0.0));
    ad::Var dc = tape.constant(Tensor(n, kDec, 0.0));
    for (int t = 0; t < data::kSeqLen; ++t) {
        const auto [hn, cn] =
            lstm_tick(pv.dec_wx, pv.dec_wh, pv.dec_b, encoding, dh, dc, kDec);
        dh = hn;
        dc = cn;
        out.paid_raw[t] = tape.add(tape.matmul(dh, paid_w), bias_row(paid_b));
        out.recovery_raw[t] = tape.add(tape.matmul(dh, rec_w), bias_row(rec_b));
    }

    // KL of both heads against the standard-normal prior.
    auto kl_of = [&](ad::Var mean, ad::Var raw) {
        const ad::Var s = tape.softplus(raw);
        const ad::Var s2 = tape.mul(s, s);
        const ad::Var m2 = tape.mul(mean, mean);
        const ad::Var log_s2 = tape.scale(tape.log(s), 2.0);
        const ad::Var term =
            tape.sub(tape.add(s2, m2), tape.add_scalar(log_s2, 1.0));
        return tape.scale(tape.sum(term), 0.5);
    };
    out.kl = tape.add(
        tape.add(kl_of(pv.paid_mw, pv.paid_rw), kl_of(pv.paid_mb, pv.paid_rb)),
        tape.add(kl_of(pv.rec_mw, pv.rec_rw), kl_of(pv.rec_mb, pv.rec_rb)));
    return out;
}

ForwardResult forward(Model& model, std::span<const data::ModelInput> batch, Rng& rng,
                      WeightMode mode) {
    const WeightDraws draws = mode == WeightMode::sample ? draw_weights(model.dims, rng)
                                                         : mean_weights(model.dims);
    return forward(model, batch, draws);
}

ForwardResult forward(Model& model, std::span<const data::ModelInput> batch,
                      const WeightDraws& draws) {
    ad::Tape tape;
    const ForwardGraph g = build_forward(tape, model, batch, draws, false);

    ForwardResult result;
    result.kl_total = tape.value(g.kl)[0];
    result.outputs.resize(batch.size());
    for (int t = 0; t < data::kSeqLen; ++t) {
        const Tensor& paid = tape.value(g.paid_raw[t]);
        const Tensor& rec = tape.value(g.recovery_raw[t]);
        if (!paid.all_finite() || !rec.all_finite())
            throw NumericError("forward: non-finite activation at step " +
                               std::to_string(t));
        for (std::size_t b = 0; b < batch.size(); ++b) {
            result.outputs[b][t][0] = dist::MixtureParams::from_raw(
                paid.at(b, 0), paid.at(b, 1), paid.at(b, 2), paid.at(b, 3));
            result.outputs[b][t][1] = dist::MixtureParams::from_raw(
                rec.at(b, 0), rec.at(b, 1), rec.at(b, 2), rec.at(b, 3));
        }
    }
    if (!std::isfinite(result.kl_total))
        throw NumericError("forward: non-finite KL");
    return result;
}

void save_checkpoint(const std::filesystem::path& path, Model& model,
                     std::uint64_t stats_digest) {
    io::KvPairs kv;
    kv.emplace_back("format", "checkpoint-v1");
    kv.emplace_back("stats_digest", std::to_string(stats_digest));
    kv.emplace_back("lob_vocab", std::to_string(model.dims.lob_vocab));
    kv.emplace_back("claim_code_vocab", std::to_string(model.dims.claim_code_vocab));
    kv.emplace_back("injured_part_vocab",
                    std::to_string(model.dims.injured_part_vocab));
    for (const ad::ParamRef& p : model.parameters()) {
        const Tensor& t = *p.tensor;
        std::string v = std::to_string(t.rows()) + " " + std::to_string(t.cols());
        for (std::size_t i = 0; i < t.size(); ++i) {
            v += ' ';
            v += io::format_exact(t[i]);
        }
        kv.emplace_back("tensor." + p.name, std::move(v));
    }
    io::atomic_write_text(path, io::serialize_kv(kv));
}

namespace {

std::uint64_t parse_u64(const std::string& s, const std::string& context) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw DataError(context + ": invalid unsigned integer '" + s + "'");
    return out;
}

} // namespace

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto kv = io::parse_kv(io::read_text_file(path), path.string());

    ModelDims dims;
    std::uint64_t digest = 0;
    bool saw_format = false;
    std::map<std::string, std::string> tensors;
    auto parse_vocab = [&](const std::string& v, const std::string& key) {
        const long n = io::parse_long(v, path.string() + ": " + key);
        if (n < 1 || n > 1000000)
            throw DataError(path.string() + ": " + key + " out of range");
        return static_cast<std::size_t>(n);
    };
    for (const auto& [key, value] : kv) {
        if (key == "format") {
            if (value != "checkpoint-v1")
                throw DataError(path.string() + ": unsupported format '" + value + "'");
            saw_format = true;
        } else if (key == "stats_digest") {
            digest = parse_u64(value, path.string() + ": stats_digest");
        } else if (key == "lob_vocab") {
            dims.lob_vocab = parse_vocab(value, key);
        } else if (key == "claim_code_vocab") {
            dims.claim_code_vocab = parse_vocab(value, key);
        } else if (key == "injured_part_vocab") {
            dims.injured_part_vocab = parse_vocab(value, key);
        } else if (key.rfind("tensor.", 0) == 0) {
            if (!tensors.emplace(key.substr(7), value).second)
                throw DataError(path.string() + ": duplicate " + key);
        } else {
            throw DataError(path.string() + ": unknown key '" + key + "'");
        }
    }
    if (!saw_format) throw DataError(path.string() + ": missing format line");

    Checkpoint ckpt;
    ckpt.model = shaped_model(dims);
    ckpt.stats_digest = digest;
    for (const ad::ParamRef& p : ckpt.model.parameters()) {
        const auto it = tensors.find(p.name);
        if (it == tensors.end())
            throw DataError(path.string() + ": missing tensor '" + p.name + "'");
        std::istringstream in(it->second);
        std::size_t rows = 0, cols = 0;
        if (!(in >> rows >> cols) || rows != p.tensor->rows() || cols != p.tensor->cols())
            throw DataError(path.string() + ": bad shape for tensor '" + p.name + "'");
        std::string tok;
        for (std::size_t i = 0; i < p.tensor->size(); ++i) {
            if (!(in >> tok))
                throw DataError(path.string() + ": truncated tensor '" + p.name + "'");
            (*p.tensor)[i] = io::parse_double(tok, p.name);
        }
        if (in >> tok)
            throw DataError(path.string() + ": trailing data in tensor '" + p.name + "'");
        tensors.erase(it);
    }
    if (!tensors.empty())
        throw DataError(path.string() + ": unexpected tensor '" +
                        tensors.begin()->first + "'");
    return ckpt;
}

} // namespace claimcast::net
