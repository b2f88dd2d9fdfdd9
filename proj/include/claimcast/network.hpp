#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "claimcast/autodiff.hpp"
#include "claimcast/distributions.hpp"
#include "claimcast/features.hpp"
#include "claimcast/rng.hpp"
#include "claimcast/tensor.hpp"

namespace claimcast::net {

/// Architecture sizes. The widths are fixed; only vocabulary sizes vary.
struct ModelDims {
    std::size_t lob_vocab = 1;
    std::size_t claim_code_vocab = 1;
    std::size_t injured_part_vocab = 1;

    static constexpr std::size_t kEmbedDim = 2;
    static constexpr std::size_t kEncHidden = 3;
    static constexpr std::size_t kDecHidden = 3;
    static constexpr std::size_t kStaticHidden = 4;
    static constexpr std::size_t kHeadOutputs = 4;
    /// paid, recovery, status open, status closed, mask.
    static constexpr std::size_t kSeqChannels = 5;

    std::size_t encoding_dim() const {
        return kEncHidden + kStaticHidden + 3 * kEmbedDim;
    }
};

/// Gate order along the 4H axis: input, forget, cell candidate, output.
struct LstmLayer {
    Tensor w_x; // (in, 4H)
    Tensor w_h; // (H, 4H)
    Tensor b;   // (1, 4H)
};

/// Diagonal Gaussian posterior over a dense layer's weights and biases.
struct VariationalDense {
    Tensor mean_w;      // (in, out)
    Tensor raw_scale_w; // (in, out); scale = softplus
    Tensor mean_b;      // (1, out)
    Tensor raw_scale_b; // (1, out)
};

struct Model {
    ModelDims dims;
    Tensor lob_embed;          // (vocab, 2), row 0 = unknown
    Tensor claim_code_embed;   // (vocab, 2)
    Tensor injured_part_embed; // (vocab, 2)
    Tensor static_w;           // (2, 4): age, development year
    Tensor static_b;           // (1, 4)
    LstmLayer encoder;         // input 5 channels
    LstmLayer decoder;         // input = encoding_dim()
    VariationalDense paid_head;     // dec hidden -> 4
    VariationalDense recovery_head; // dec hidden -> 4

    /// Stable registry of every trainable tensor; order is the contract
    /// for gradients, checkpoints, and graph leaves.
    std::vector<ad::ParamRef> parameters();
};

/// Deterministic initialization: embeddings and posterior means N(0, 0.05^2),
/// LSTM and static weights N(0, 1/fan_in), forget-gate bias 1, other biases 0,
/// posterior raw scales at softplus^-1(0.01).
Model init_model(const ModelDims& dims, std::uint64_t seed);

/// Epsilon draws for the reparameterized weight sample of both heads.
/// Zeros reproduce the posterior mean.
struct WeightDraws {
    Tensor paid_w;     // (dec hidden, 4)
    Tensor paid_b;     // (1, 4)
    Tensor recovery_w; // (dec hidden, 4)
    Tensor recovery_b; // (1, 4)
};

WeightDraws draw_weights(const ModelDims& dims, Rng& rng);
WeightDraws mean_weights(const ModelDims& dims); // all-zero epsilons

enum class WeightMode { sample, posterior_mean };

/// Value-level single LSTM step (batch rows). mask 0 copies state through.
void lstm_step(const LstmLayer& layer, const Tensor& x, Tensor& h, Tensor& c,
               double mask = 1.0);

/// Differentiable forward pass over a batch, one weight draw shared by all
/// time steps. param_vars aligns with Model::parameters().
struct ForwardGraph {
    std::vector<ad::Var> param_vars;
    std::array<ad::Var, data::kSeqLen> paid_raw;     // each (batch, 4)
    std::array<ad::Var, data::kSeqLen> recovery_raw; // each (batch, 4)
    ad::Var kl;                                      // 1x1, both heads
};

ForwardGraph build_forward(ad::Tape& tape, Model& model,
                           std::span<const data::ModelInput> batch,
                           const WeightDraws& draws, bool params_trainable);

/// Raw head outputs mapped through the mixture transforms; [0] paid, [1] recovery.
using StepParams = std::array<dist::MixtureParams, 2>;

struct ForwardResult {
    std::vector<std::array<StepParams, data::kSeqLen>> outputs; // per sample
    double kl_total = 0.0;
};

/// Throws NumericError if any activation goes non-finite.
ForwardResult forward(Model& model, std::span<const data::ModelInput> batch,
                      Rng& rng, WeightMode mode);

/// Same pass with caller-supplied weight draws. Per-sample outputs do not
/// depend on what else is in the batch.
ForwardResult forward(Model& model, std::span<const data::ModelInput> batch,
                      const WeightDraws& draws);

/// Plain-text checkpoint; round-trip exact. stats_digest ties the model to
/// the normalization stats it was trained with.
void save_checkpoint(const std::filesystem::path& path, Model& model,
                     std::uint64_t stats_digest);

struct Checkpoint {
    Model model;
    std::uint64_t stats_digest = 0;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace claimcast::net
