#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "claimcast/data.hpp"

namespace claimcast::data {

/// Sequence positions fed to the network; development year 0 history can be
/// at most 11 steps (dev 0..10) and targets at most 11 steps (dev 1..11).
inline constexpr int kSeqLen = 11;

/// Claims visible at the evaluation cutoff, with per-claim visibility.
/// Cell (claim, dev) is visible iff accident_year + dev <= cutoff.
struct TrainView {
    std::vector<ClaimRecord> claims; // report_year <= cutoff only
    std::vector<int> visible_len;    // last visible dev year per claim, 0..11
    int cutoff = 0;
};

struct SplitResult {
    TrainView train;                  // censored view
    std::vector<ClaimRecord> holdout; // same claims, full uncensored histories
};

SplitResult split_by_cutoff(const std::vector<ClaimRecord>& claims, int cutoff);

/// One training sample: predictors from development years 0..origin,
/// targets from origin+1..k, flows decomposed into non-negative
/// paid = max(C, 0) and recovery = max(-C, 0).
struct ExpandedSample {
    std::string claim_id;
    std::string lob;
    std::string claim_code;
    std::string injured_part;
    int age = 0;
    int origin = 0; // last predictor development year
    int k = 0;      // last visible development year
    std::vector<double> paid;        // dev 0..origin
    std::vector<double> recovery;    // dev 0..origin
    std::vector<bool> open_status;   // dev 0..origin
    std::vector<double> target_paid;     // dev origin+1..k
    std::vector<double> target_recovery; // dev origin+1..k
};

/// Emits exactly visible_len samples per claim (none when nothing follows
/// development year 0).
std::vector<ExpandedSample> expand_training_samples(const TrainView& view);

/// Centering/scaling constants and categorical vocabularies, fitted on
/// training samples only. Index 0 of every vocabulary is reserved for
/// levels unseen at fit time.
struct NormalizationStats {
    double paid_mean = 0.0;
    double paid_sd = 1.0;
    double recovery_mean = 0.0;
    double recovery_sd = 1.0;
    double age_mean = 0.0;
    double age_sd = 1.0;
    std::map<std::string, std::size_t> lob_vocab;
    std::map<std::string, std::size_t> claim_code_vocab;
    std::map<std::string, std::size_t> injured_part_vocab;

    std::size_t lob_size() const { return lob_vocab.size() + 1; }
    std::size_t claim_code_size() const { return claim_code_vocab.size() + 1; }
    std::size_t injured_part_size() const { return injured_part_vocab.size() + 1; }

    void save(const std::filesystem::path& path) const;
    static NormalizationStats load(const std::filesystem::path& path);
    /// Stable digest of the serialized stats, stamped into checkpoints.
    std::uint64_t digest() const;
};

/// Population mean/sd over every predictor instance in the sample list
/// (a value appearing in several samples counts several times); zero sd
/// degenerates to 1. Vocabularies hold sorted observed levels from index 1.
NormalizationStats fit_normalization(const std::vector<ExpandedSample>& samples);

/// Model-ready predictors: normalized pre-padded sequences (pads are zero
/// in normalized space, flagged by the mask channel), scaled statics, and
/// vocabulary indices.
struct ModelInput {
    std::array<double, kSeqLen> paid_hist{};
    std::array<double, kSeqLen> recovery_hist{};
    std::array<double, kSeqLen> status_open{};
    std::array<double, kSeqLen> status_closed{};
    std::array<double, kSeqLen> hist_mask{}; // 1 = real step, 0 = pad
    double age_scaled = 0.0;
    double dev_year_scaled = 0.0; // origin / 11
    std::size_t lob_index = 0;
    std::size_t claim_code_index = 0;
    std::size_t injured_part_index = 0;
};

/// Model input plus raw-scale targets, post-padded with kMaskValue.
struct TrainingSample {
    ModelInput input;
    std::array<double, kSeqLen> target_paid{};
    std::array<double, kSeqLen> target_recovery{};
    std::string claim_id;
};

ModelInput make_model_input(const ExpandedSample& sample,
                            const NormalizationStats& stats);

std::vector<TrainingSample> transform(const std::vector<ExpandedSample>& samples,
                                      const NormalizationStats& stats);

} // namespace claimcast::data
