#include "claimcast/training.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "claimcast/distributions.hpp"
#include "claimcast/errors.hpp"
#include "claimcast/io_util.hpp"
#include "claimcast/scalarfn.hpp"

namespace claimcast::train {

void TrainConfig::validate() const {
    if (!(lr0 > 0.0)) throw DataError("config: lr0 must be positive");
    if (minibatch == 0) throw DataError("config: minibatch must be at least 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw DataError("config: val_fraction must lie in (0, 1)");
    if (plateau_patience < 1) throw DataError("config: plateau_patience must be positive");
    if (!(lr_halving_factor > 0.0 && lr_halving_factor < 1.0))
        throw DataError("config: lr_halving_factor must lie in (0, 1)");
    if (early_stop_patience < 1)
        throw DataError("config: early_stop_patience must be positive");
    if (max_epochs < 1) throw DataError("config: max_epochs must be positive");
    if (!(min_improvement >= 0.0))
        throw DataError("config: min_improvement must be non-negative");
    if (!(grad_clip > 0.0)) throw DataError("config: grad_clip must be positive");
    if (!(kl_weight >= 0.0)) throw DataError("config: kl_weight must be non-negative");
}

PlateauScheduler::PlateauScheduler(double lr0, int patience, double factor,
                                   double min_improvement)
    : lr_(lr0), patience_(patience), factor_(factor),
      min_improvement_(min_improvement),
      best_(std::numeric_limits<double>::infinity()) {}

bool PlateauScheduler::observe(double val_loss) {
    if (val_loss < best_ - min_improvement_) {
        best_ = val_loss;
        stale_ = 0;
        return false;
    }
    if (++stale_ >= patience_) {
        lr_ *= factor_;
        stale_ = 0;
        return true;
    }
    return false;
}

EarlyStopper::EarlyStopper(int patience, double min_improvement)
    : patience_(patience), min_improvement_(min_improvement),
      best_(std::numeric_limits<double>::infinity()) {}

bool EarlyStopper::observe(double val_loss) {
    last_improved_ = val_loss < best_ - min_improvement_;
    if (last_improved_) {
        best_ = val_loss;
        stale_ = 0;
        return false;
    }
    return ++stale_ >= patience_;
}

namespace {

bool is_masked(double y) { return y == data::kMaskValue; }

void check_target(double y, const char* head) {
    if (!(std::isfinite(y) && y >= 0.0))
        throw DataError(std::string("masked_nll: ") + head +
                        " target must be finite and non-negative");
}

} // namespace

double masked_nll(std::span<const double> target_paid,
                  std::span<const double> target_recovery,
                  std::span<const net::StepParams> params) {
    if (target_paid.size() != target_recovery.size())
        throw DataError("masked_nll: paid and recovery targets differ in length");
    if (target_paid.size() > params.size())
        throw DataError("masked_nll: more targets than parameter steps");

    double nll = 0.0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < target_paid.size(); ++i) {
        if (is_masked(target_paid[i]) != is_masked(target_recovery[i]))
            throw DataError("masked_nll: heads disagree on masking at one step");
        if (is_masked(target_paid[i])) continue;
        check_target(target_paid[i], "paid");
        check_target(target_recovery[i], "recovery");
        nll -= dist::mixture_logprob(target_paid[i], params[i][0]);
        nll -= dist::mixture_logprob(target_recovery[i], params[i][1]);
        ++used;
    }
    if (used == 0) throw DataError("masked_nll: every target position is masked");
    return nll;
}

namespace {

// Per-step, per-head graph of the mixture log likelihood, mirroring the
// scalar formulas so single-sample values agree to well under 1e-12.
// Masked rows are steered onto sanitized constants and then multiplied by a
// zero mask, contributing exactly +0.0 to the sum.
ad::Var head_step_logprob(ad::Tape& tape, ad::Var raw,
                          std::span<const data::TrainingSample> batch,
                          int step, bool paid_head) {
    const std::size_t n = batch.size();
    Tensor logz(n, 1);
    Tensor m_pos(n, 1, 0.0);
    Tensor m_atom(n, 1, 0.0);
    for (std::size_t b = 0; b < n; ++b) {
        const auto& s = batch[b];
        const double y = paid_head ? s.target_paid[step] : s.target_recovery[step];
        double y_eff = 1.0;
        if (!is_masked(y)) {
            check_target(y, paid_head ? "paid" : "recovery");
            y_eff = y;
            if (std::abs(y) <= dist::kAtomTolerance)
                m_atom.at(b, 0) = 1.0;
            else
                m_pos.at(b, 0) = 1.0;
        }
        logz.at(b, 0) = std::log(y_eff + dist::kShift);
    }

    const ad::Var v1 = tape.slice_cols(raw, 0, 1);
    const ad::Var v2 = tape.slice_cols(raw, 1, 1);
    const ad::Var v3 = tape.slice_cols(raw, 2, 1);
    const ad::Var v4 = tape.slice_cols(raw, 3, 1);

    const ad::Var lse = tape.logaddexp(v1, v2);
    const ad::Var log_w1 = tape.sub(v1, lse);
    const ad::Var log_w2 = tape.sub(v2, lse);

    const ad::Var sigma = tape.add_scalar(
        tape.scale(tape.sigmoid(tape.scale(v4, dist::kBeta)), dist::kLambda),
        dist::kAlpha);

    const ad::Var logz_c = tape.constant(std::move(logz));
    const ad::Var t = tape.sub(logz_c, v3);
    const ad::Var quad =
        tape.div(tape.mul(t, t), tape.mul(tape.scale(sigma, 2.0), sigma));
    const ad::Var logpdf = tape.sub(
        tape.add_scalar(tape.sub(tape.neg(logz_c), tape.log(sigma)),
                        -kHalfLog2Pi),
        quad);

    const ad::Var log_cont = tape.add(log_w1, logpdf);
    const ad::Var log_atom = tape.logaddexp(log_cont, log_w2);
    return tape.add(tape.mul(tape.constant(std::move(m_pos)), log_cont),
                    tape.mul(tape.constant(std::move(m_atom)), log_atom));
}

} // namespace

LossGraph batch_loss(ad::Tape& tape, net::Model& model,
                     std::span<const data::TrainingSample> batch,
                     std::size_t dataset_size, const net::WeightDraws& draws,
                     double kl_weight, bool params_trainable) {
    if (batch.empty()) throw DataError("batch_loss: empty batch");
    if (dataset_size < batch.size())
        throw DataError("batch_loss: dataset smaller than the batch");
    for (const auto& s : batch) {
        bool any = false;
        for (int t = 0; t < data::kSeqLen; ++t) {
            if (is_masked(s.target_paid[t]) != is_masked(s.target_recovery[t]))
                throw DataError("batch_loss: sample '" + s.claim_id +
                                "' heads disagree on masking");
            any |= !is_masked(s.target_paid[t]);
        }
        if (!any)
            throw DataError("batch_loss: sample '" + s.claim_id +
                            "' has every target masked");
    }

    std::vector<data::ModelInput> inputs;
    inputs.reserve(batch.size());
    for (const auto& s : batch) inputs.push_back(s.input);

    LossGraph out;
    out.forward = net::build_forward(tape, model, inputs, draws, params_trainable);

    ad::Var nll = tape.constant_scalar(0.0);
    for (int t = 0; t < data::kSeqLen; ++t) {
        nll = tape.add(nll, tape.neg(tape.sum(head_step_logprob(
                                tape, out.forward.paid_raw[t], batch, t, true))));
        nll = tape.add(nll,
                       tape.neg(tape.sum(head_step_logprob(
                           tape, out.forward.recovery_raw[t], batch, t, false))));
    }
    out.nll = nll;

    const double kl_coeff =
        kl_weight * (double(batch.size()) / double(dataset_size));
    out.loss = tape.add(nll, tape.scale(out.forward.kl, kl_coeff));
    return out;
}

namespace {

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.below(i)]);
}

double validation_loss(net::Model& model,
                       const std::vector<data::TrainingSample>& val,
                       const net::WeightDraws& draw, std::size_t chunk_size) {
    double total = 0.0;
    for (std::size_t start = 0; start < val.size(); start += chunk_size) {
        const std::size_t n = std::min(chunk_size, val.size() - start);
        std::vector<data::ModelInput> inputs;
        inputs.reserve(n);
        for (std::size_t b = 0; b < n; ++b) inputs.push_back(val[start + b].input);

        ad::Tape tape;
        const net::ForwardGraph g =
            net::build_forward(tape, model, inputs, draw, false);
        for (std::size_t b = 0; b < n; ++b) {
            std::array<net::StepParams, data::kSeqLen> params;
            for (int t = 0; t < data::kSeqLen; ++t) {
                const Tensor& paid = tape.value(g.paid_raw[t]);
                const Tensor& rec = tape.value(g.recovery_raw[t]);
                params[t][0] = dist::MixtureParams::from_raw(
                    paid.at(b, 0), paid.at(b, 1), paid.at(b, 2), paid.at(b, 3));
                params[t][1] = dist::MixtureParams::from_raw(
                    rec.at(b, 0), rec.at(b, 1), rec.at(b, 2), rec.at(b, 3));
            }
            const auto& s = val[start + b];
            total += masked_nll(s.target_paid, s.target_recovery, params);
        }
    }
    return total / double(val.size());
}

} // namespace

TrainResult train(net::Model model, const std::vector<data::TrainingSample>& samples,
                  const TrainConfig& config) {
    config.validate();
    if (samples.size() < 2)
        throw DataError("train: need at least 2 samples to hold out validation");

    // Deterministic streams, independent of each other.
    Rng split_rng = Rng::child(config.seed, 0x56414CULL);
    Rng shuffle_rng = Rng::child(config.seed, 0x534846ULL);
    Rng draw_rng = Rng::child(config.seed, 0x445257ULL);
    Rng val_draw_rng = Rng::child(config.seed, 0x564452ULL);

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle_indices(order, split_rng);

    const std::size_t want_val =
        static_cast<std::size_t>(std::llround(config.val_fraction * double(samples.size())));
    const std::size_t n_val = std::clamp<std::size_t>(want_val, 1, samples.size() - 1);

    std::vector<data::TrainingSample> val_set, train_set;
    val_set.reserve(n_val);
    train_set.reserve(samples.size() - n_val);
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_val ? val_set : train_set).push_back(samples[order[i]]);
    const std::size_t dataset = train_set.size();

    // One weight draw reused by every epoch's validation, so the validation
    // losses are comparable over time.
    const net::WeightDraws val_draw = net::draw_weights(model.dims, val_draw_rng);

    // A numeric blow-up inside the forward pass is a divergence, not a
    // caller error; surface it as a NaN loss so the run stops with a log.
    auto guarded_validation = [&]() {
        try {
            return validation_loss(model, val_set, val_draw, config.minibatch);
        } catch (const NumericError&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };

    PlateauScheduler scheduler(config.lr0, config.plateau_patience,
                               config.lr_halving_factor, config.min_improvement);
    EarlyStopper stopper(config.early_stop_patience, config.min_improvement);

    TrainLog log;
    const double nan = std::numeric_limits<double>::quiet_NaN();

    const double val0 = guarded_validation();
    log.epochs.push_back({0, nan, val0, config.lr0, true});
    if (!std::isfinite(val0)) {
        log.diverged = true;
        log.stop_reason = "diverged";
        log.best_epoch = 0;
        log.best_val_loss = val0;
        return {std::move(model), std::move(log)};
    }
    scheduler.observe(val0);
    stopper.observe(val0);

    net::Model best_model = model;
    double best_val = val0;
    int best_epoch = 0;

    std::vector<std::size_t> train_order(dataset);
    for (std::size_t i = 0; i < dataset; ++i) train_order[i] = i;

    const auto params = model.parameters();
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const double lr = scheduler.lr();
        shuffle_indices(train_order, shuffle_rng);

        double loss_sum = 0.0;
        bool bad = false;
        for (std::size_t start = 0; start < dataset && !bad;
             start += config.minibatch) {
            const std::size_t n = std::min(config.minibatch, dataset - start);
            std::vector<data::TrainingSample> chunk;
            chunk.reserve(n);
            for (std::size_t b = 0; b < n; ++b)
                chunk.push_back(train_set[train_order[start + b]]);

            const net::WeightDraws draws = net::draw_weights(model.dims, draw_rng);
            try {
                ad::Tape tape;
                const LossGraph lg = batch_loss(tape, model, chunk, dataset, draws,
                                                config.kl_weight, true);
                const double loss_value = tape.value(lg.loss)[0];
                if (!std::isfinite(loss_value)) {
                    bad = true;
                    break;
                }
                loss_sum += loss_value;
                tape.backward(lg.loss);

                double norm_sq = 0.0;
                for (std::size_t i = 0; i < params.size(); ++i) {
                    const Tensor& g = tape.adjoint(lg.forward.param_vars[i]);
                    for (std::size_t e = 0; e < g.size(); ++e)
                        norm_sq += g[e] * g[e];
                }
                const double norm = std::sqrt(norm_sq);
                const double clip_scale =
                    norm > config.grad_clip ? config.grad_clip / norm : 1.0;
                if (!std::isfinite(clip_scale)) {
                    bad = true;
                    break;
                }
                for (std::size_t i = 0; i < params.size(); ++i) {
                    const Tensor& g = tape.adjoint(lg.forward.param_vars[i]);
                    Tensor& p = *params[i].tensor;
                    for (std::size_t e = 0; e < p.size(); ++e)
                        p[e] -= lr * clip_scale * g[e];
                }
            } catch (const NumericError&) {
                bad = true;
                break;
            }
        }

        if (bad) {
            log.epochs.push_back({epoch, nan, nan, lr, false});
            log.diverged = true;
            log.stop_reason = "diverged";
            break;
        }

        const double train_loss = loss_sum / double(dataset);
        const double val = guarded_validation();
        if (!std::isfinite(val)) {
            log.epochs.push_back({epoch, train_loss, val, lr, false});
            log.diverged = true;
            log.stop_reason = "diverged";
            break;
        }

        const bool improved = val < best_val - config.min_improvement;
        if (improved) {
            best_val = val;
            best_epoch = epoch;
            best_model = model;
        }
        log.epochs.push_back({epoch, train_loss, val, lr, improved});

        const bool stop = stopper.observe(val);
        scheduler.observe(val);
        if (stop) {
            log.stop_reason = "early_stop";
            break;
        }
    }

    if (log.stop_reason.empty()) log.stop_reason = "max_epochs";
    log.best_epoch = best_epoch;
    log.best_val_loss = best_val;
    return {std::move(best_model), std::move(log)};
}

std::vector<TrainResult> train_ensemble(const net::ModelDims& dims,
                                        const std::vector<data::TrainingSample>& samples,
                                        const TrainConfig& config, int n_models,
                                        int threads) {
    if (n_models < 1) throw DataError("train_ensemble: need at least one member");
    if (threads < 1) throw DataError("train_ensemble: need at least one thread");

    auto run_member = [&](int i) {
        const std::uint64_t member_seed =
            splitmix64(config.seed ^ splitmix64(0x454E53ULL + std::uint64_t(i)));
        const std::uint64_t init_seed =
            splitmix64(member_seed ^ splitmix64(0x494E49ULL));
        TrainConfig member_config = config;
        member_config.seed = member_seed;
        return train(net::init_model(dims, init_seed), samples, member_config);
    };

    std::vector<TrainResult> results(static_cast<std::size_t>(n_models));
    if (threads == 1 || n_models == 1) {
        for (int i = 0; i < n_models; ++i) results[i] = run_member(i);
        return results;
    }

    std::atomic<int> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n_models) return;
            try {
                results[i] = run_member(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int n_threads = std::min(threads, n_models);
    pool.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
    return results;
}

void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
    std::string text = "epoch,train_loss,val_loss,lr,improved\n";
    for (const EpochRecord& r : log.epochs) {
        text += std::to_string(r.epoch);
        text += ',';
        text += io::format_exact(r.train_loss);
        text += ',';
        text += io::format_exact(r.val_loss);
        text += ',';
        text += io::format_exact(r.lr);
        text += ',';
        text += r.improved ? '1' : '0';
        text += '\n';
    }
    io::atomic_write_text(path, text);
}

} // namespace claimcast::train
