#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "claimcast/autodiff.hpp"
#include "claimcast/features.hpp"
#include "claimcast/network.hpp"

namespace claimcast::train {

struct TrainConfig {
    double lr0 = 0.01;
    std::size_t minibatch = 1024;
    double val_fraction = 0.05;
    int plateau_patience = 5;        // epochs without improvement before halving
    double lr_halving_factor = 0.5;
    int early_stop_patience = 10;    // epochs without improvement before stopping
    int max_epochs = 100;
    double min_improvement = 1e-4;   // validation loss must drop by more than this
    double grad_clip = 5.0;          // global-norm clip
    double kl_weight = 1.0;          // 0 turns the objective into plain NLL
    std::uint64_t seed = 0;

    void validate() const; // throws DataError
};

struct EpochRecord {
    int epoch = 0;           // 0 is the pre-training baseline (no update step)
    double train_loss = 0.0; // mean per-sample batch loss; NaN for epoch 0
    double val_loss = 0.0;   // mean per-sample masked NLL on the validation split
    double lr = 0.0;         // learning rate used during this epoch
    bool improved = false;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    std::string stop_reason; // "early_stop", "max_epochs", or "diverged"
    bool diverged = false;
};

/// Halves the learning rate after `patience` consecutive epochs without the
/// validation loss improving by more than min_improvement; the stale counter
/// resets both on improvement and after each halving.
class PlateauScheduler {
public:
    PlateauScheduler(double lr0, int patience, double factor, double min_improvement);
    double lr() const { return lr_; }
    /// Returns true when this observation halved the rate.
    bool observe(double val_loss);

private:
    double lr_;
    int patience_;
    double factor_;
    double min_improvement_;
    double best_;
    int stale_ = 0;
};

/// Signals a stop after `patience` consecutive epochs without improvement.
class EarlyStopper {
public:
    EarlyStopper(int patience, double min_improvement);
    /// Returns true when training should stop after this observation.
    bool observe(double val_loss);
    bool last_improved() const { return last_improved_; }

private:
    int patience_;
    double min_improvement_;
    double best_;
    int stale_ = 0;
    bool last_improved_ = false;
};

/// Negative log likelihood over the unmasked target positions of one sample,
/// both heads. Entries equal to the padding sentinel are skipped and
/// contribute exactly zero, so padding a target sequence out to any length
/// leaves the value untouched. Spans may be shorter than the parameter
/// sequence; parameters beyond the span are ignored.
/// Throws DataError when the spans disagree in length, exceed the parameter
/// count, contain a negative or non-finite unmasked value, or mask everything.
double masked_nll(std::span<const double> target_paid,
                  std::span<const double> target_recovery,
                  std::span<const net::StepParams> params);

/// Differentiable minibatch objective assembled on one tape:
/// loss = nll + kl_weight * (|batch| / dataset_size) * kl.
struct LossGraph {
    net::ForwardGraph forward;
    ad::Var nll;  // 1x1: summed masked NLL of the batch, both heads
    ad::Var loss; // 1x1
};

LossGraph batch_loss(ad::Tape& tape, net::Model& model,
                     std::span<const data::TrainingSample> batch,
                     std::size_t dataset_size, const net::WeightDraws& draws,
                     double kl_weight, bool params_trainable = true);

struct TrainResult {
    net::Model model; // best-validation parameters
    TrainLog log;
};

/// SGD with minibatch shuffling, global-norm gradient clipping, plateau
/// halving, and early stopping. Validation uses one fixed weight draw for
/// every epoch so the losses are comparable. A non-finite train or
/// validation loss stops the run with stop_reason "diverged" and returns
/// the best parameters seen so far.
TrainResult train(net::Model model, const std::vector<data::TrainingSample>& samples,
                  const TrainConfig& config);

/// Independent members: member i gets its own derived init and train seeds.
/// threads > 1 trains members concurrently; results are identical either way.
std::vector<TrainResult> train_ensemble(const net::ModelDims& dims,
                                        const std::vector<data::TrainingSample>& samples,
                                        const TrainConfig& config, int n_models,
                                        int threads = 1);

/// CSV: epoch,train_loss,val_loss,lr,improved
void write_train_log(const std::filesystem::path& path, const TrainLog& log);

} // namespace claimcast::train
