#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "claimcast/features.hpp"
#include "claimcast/network.hpp"
#include "claimcast/rng.hpp"

namespace claimcast::fc {

/// One claim scored at the cutoff. The predictor sequence runs through the
/// last visible development year; horizon counts the remaining years to 11.
struct ScoringPoint {
    data::ModelInput input;
    std::string claim_id;
    int horizon = 0; // 11 - last visible development year
};

/// One point per claim still developing at the cutoff (horizon >= 1), in
/// view order. The first forecast step is the year after the cutoff.
std::vector<ScoringPoint> build_scoring_points(const data::TrainView& view,
                                               const data::NormalizationStats& stats);

/// One simulated future path of net cash flows.
struct PathSample {
    std::string claim_id;
    std::size_t draw_id = 0;        // epistemic index * n_aleatoric + path index
    std::vector<double> net;        // per future step, signed
    std::vector<double> cumulative; // running sums of net
};

/// Draws n_epistemic posterior weight samples, cycling over ensemble members
/// in order, and under each samples n_aleatoric outcome paths. Net flow per
/// step is a paid draw minus a recovery draw; recoveries may exceed payments.
std::vector<PathSample> sample_paths(std::span<net::Model> models,
                                     const ScoringPoint& point,
                                     std::size_t n_epistemic,
                                     std::size_t n_aleatoric, Rng& rng);

/// Expected future net total under each posterior weight draw: n_weight_draws
/// entries per ensemble member. Draw streams are derived from a digest of the
/// member's parameters, so the result is a deterministic function of the
/// models alone and is invariant to ensemble order (entries come back in
/// digest order, not input order).
std::vector<double> epistemic_totals(std::span<net::Model> models,
                                     const ScoringPoint& point,
                                     std::size_t n_weight_draws);

/// Mean of epistemic_totals: the headline per-claim unpaid estimate, built
/// from closed-form step means instead of sampled outcomes.
double point_estimate(std::span<net::Model> models, const ScoringPoint& point,
                      std::size_t n_weight_draws);

struct AggregateReport {
    struct Row {
        std::string claim_id;
        int horizon = 0;
        double estimate = 0.0;
    };
    std::vector<Row> rows; // in points order
    double total = 0.0;    // exact sum of rows
};

/// Per-claim point estimates and their sum. Equals point_estimate called per
/// claim; the batch evaluation and thread split do not change any value.
AggregateReport aggregate_unpaid(std::span<net::Model> models,
                                 std::span<const ScoringPoint> points,
                                 std::size_t n_weight_draws = 1,
                                 std::size_t threads = 1);

/// Paid-head posterior parameters per future step across weight draws
/// (cycling over ensemble members): payment probability w1, component mean
/// exp(mu + sigma^2/2), and log of the component variance.
struct PosteriorSummary {
    int horizon = 0;
    std::vector<std::vector<double>> w1;      // [step][draw]
    std::vector<std::vector<double>> mean;    // [step][draw]
    std::vector<std::vector<double>> log_var; // [step][draw]
};

PosteriorSummary posterior_summary(std::span<net::Model> models,
                                   const ScoringPoint& point,
                                   std::size_t n_weight_draws);

/// CSV emitters (column layouts in docs/formats.md). Steps are 1-based years
/// after the last observed development year.
std::string point_csv(const AggregateReport& report);
std::string paths_csv(std::span<const PathSample> paths);
std::string summary_csv(const std::string& claim_id, const PosteriorSummary& s);

} // namespace claimcast::fc
