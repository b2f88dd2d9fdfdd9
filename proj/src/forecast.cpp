#include "claimcast/forecast.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <mutex>
#include <thread>
#include <utility>

#include "claimcast/distributions.hpp"
#include "claimcast/errors.hpp"
#include "claimcast/io_util.hpp"

namespace claimcast::fc {

namespace {

// Draw-stream tags. Point estimates and posterior summaries use disjoint
// tag ranges so their epsilon draws are independent streams.
constexpr std::uint64_t kPointDrawTag = 0x65706973;   // estimates
constexpr std::uint64_t kSummaryDrawTag = 0x73756d6d; // summaries

// Content digest of a member's parameters. Keying draw streams on this
// instead of ensemble position makes every estimate a function of the model
// set alone, whatever order the members arrive in.
std::uint64_t member_digest(net::Model& model) {
    std::string bytes;
    const auto push = [&bytes](std::uint64_t v) {
        char raw[8];
        std::memcpy(raw, &v, 8);
        bytes.append(raw, 8);
    };
    push(model.dims.lob_vocab);
    push(model.dims.claim_code_vocab);
    push(model.dims.injured_part_vocab);
    for (const ad::ParamRef& p : model.parameters())
        for (std::size_t i = 0; i < p.tensor->size(); ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &(*p.tensor)[i], 8);
            push(bits);
        }
    return fnv1a64(bytes);
}

// Members ordered by digest: the canonical evaluation (and summation) order.
std::vector<std::pair<std::uint64_t, std::size_t>>
canonical_members(std::span<net::Model> models) {
    std::vector<std::pair<std::uint64_t, std::size_t>> order;
    order.reserve(models.size());
    for (std::size_t i = 0; i < models.size(); ++i)
        order.emplace_back(member_digest(models[i]), i);
    std::sort(order.begin(), order.end());
    return order;
}

double step_mean_net(const net::StepParams& step) {
    return dist::mixture_mean(step[0]) - dist::mixture_mean(step[1]);
}

} // namespace

std::vector<ScoringPoint> build_scoring_points(const data::TrainView& view,
                                               const data::NormalizationStats& stats) {
    std::vector<ScoringPoint> points;
    for (std::size_t c = 0; c < view.claims.size(); ++c) {
        const data::ClaimRecord& claim = view.claims[c];
        const int k = view.visible_len[c];
        const int horizon = data::kDevYears - 1 - k;
        if (horizon < 1) continue; // fully developed at the cutoff

        data::ExpandedSample s;
        s.claim_id = claim.claim_id;
        s.lob = claim.line_of_business;
        s.claim_code = claim.claim_code;
        s.injured_part = claim.injured_part;
        s.age = claim.age;
        s.origin = k; // predictors end at the last visible year
        s.k = k;
        for (int d = 0; d <= k; ++d) {
            const double flow = claim.cash_flows[d];
            s.paid.push_back(std::max(flow, 0.0));
            s.recovery.push_back(std::max(-flow, 0.0));
            s.open_status.push_back(claim.statuses[d]);
        }

        ScoringPoint point;
        point.input = data::make_model_input(s, stats);
        point.claim_id = claim.claim_id;
        point.horizon = horizon;
        points.push_back(std::move(point));
    }
    return points;
}

std::vector<PathSample> sample_paths(std::span<net::Model> models,
                                     const ScoringPoint& point,
                                     std::size_t n_epistemic,
                                     std::size_t n_aleatoric, Rng& rng) {
    if (models.empty()) throw DataError("sample_paths: no models");
    if (n_epistemic < 1 || n_aleatoric < 1)
        throw DataError("sample_paths: draw counts must be at least 1");

    const std::span<const data::ModelInput> batch(&point.input, 1);
    std::vector<PathSample> paths;
    paths.reserve(n_epistemic * n_aleatoric);
    for (std::size_t e = 0; e < n_epistemic; ++e) {
        net::Model& member = models[e % models.size()];
        const net::ForwardResult fw =
            net::forward(member, batch, rng, net::WeightMode::sample);
        const auto& steps = fw.outputs[0];
        for (std::size_t a = 0; a < n_aleatoric; ++a) {
            PathSample path;
            path.claim_id = point.claim_id;
            path.draw_id = e * n_aleatoric + a;
            double running = 0.0;
            for (int t = 0; t < point.horizon; ++t) {
                const double net_flow = dist::mixture_sample(steps[t][0], rng) -
                                        dist::mixture_sample(steps[t][1], rng);
                running += net_flow;
                path.net.push_back(net_flow);
                path.cumulative.push_back(running);
            }
            paths.push_back(std::move(path));
        }
    }
    return paths;
}

std::vector<double> epistemic_totals(std::span<net::Model> models,
                                     const ScoringPoint& point,
                                     std::size_t n_weight_draws) {
    if (models.empty()) throw DataError("epistemic_totals: no models");
    if (n_weight_draws < 1)
        throw DataError("epistemic_totals: need at least one draw");

    std::vector<double> totals;
    totals.reserve(models.size() * n_weight_draws);
    if (point.horizon < 1) {
        totals.assign(models.size() * n_weight_draws, 0.0);
        return totals;
    }

    const std::span<const data::ModelInput> batch(&point.input, 1);
    for (const auto& [digest, index] : canonical_members(models)) {
        net::Model& member = models[index];
        for (std::size_t j = 0; j < n_weight_draws; ++j) {
            Rng stream = Rng::child(digest, kPointDrawTag + j);
            const net::WeightDraws draws = net::draw_weights(member.dims, stream);
            const net::ForwardResult fw = net::forward(member, batch, draws);
            double total = 0.0;
            for (int t = 0; t < point.horizon; ++t)
                total += step_mean_net(fw.outputs[0][t]);
            totals.push_back(total);
        }
    }
    return totals;
}

double point_estimate(std::span<net::Model> models, const ScoringPoint& point,
                      std::size_t n_weight_draws) {
    const std::vector<double> totals =
        epistemic_totals(models, point, n_weight_draws);
    double sum = 0.0;
    for (double v : totals) sum += v;
    return sum / double(totals.size());
}

AggregateReport aggregate_unpaid(std::span<net::Model> models,
                                 std::span<const ScoringPoint> points,
                                 std::size_t n_weight_draws,
                                 std::size_t threads) {
    if (models.empty()) throw DataError("aggregate_unpaid: no models");
    if (n_weight_draws < 1)
        throw DataError("aggregate_unpaid: need at least one draw");
    if (threads < 1) throw DataError("aggregate_unpaid: need at least one thread");

    AggregateReport report;
    if (points.empty()) return report;

    // Chunked batch evaluation. Per-sample forward outputs are independent
    // of batch composition, and every chunk accumulates draws in the same
    // canonical order, so each row equals point_estimate for that claim and
    // neither chunk size nor thread count changes a single bit.
    constexpr std::size_t kChunk = 512;
    const std::size_t n_chunks = (points.size() + kChunk - 1) / kChunk;
    std::vector<double> contribs(points.size(), 0.0);
    const auto member_order = canonical_members(models);
    const double n_total = double(models.size() * n_weight_draws);

    std::atomic<std::size_t> next_chunk{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const auto worker = [&]() {
        try {
            for (;;) {
                const std::size_t chunk = next_chunk.fetch_add(1);
                if (chunk >= n_chunks) return;
                const std::size_t begin = chunk * kChunk;
                const std::size_t count = std::min(kChunk, points.size() - begin);
                std::vector<data::ModelInput> inputs(count);
                for (std::size_t i = 0; i < count; ++i)
                    inputs[i] = points[begin + i].input;
                for (const auto& [digest, index] : member_order) {
                    net::Model& member = models[index];
                    for (std::size_t j = 0; j < n_weight_draws; ++j) {
                        Rng stream = Rng::child(digest, kPointDrawTag + j);
                        const net::WeightDraws draws =
                            net::draw_weights(member.dims, stream);
                        const net::ForwardResult fw =
                            net::forward(member, inputs, draws);
                        for (std::size_t i = 0; i < count; ++i) {
                            double total = 0.0;
                            for (int t = 0; t < points[begin + i].horizon; ++t)
                                total += step_mean_net(fw.outputs[i][t]);
                            contribs[begin + i] += total;
                        }
                    }
                }
            }
        } catch (...) {
            const std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
        }
    };

    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < std::min(threads, n_chunks); ++t)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    for (std::size_t i = 0; i < points.size(); ++i) {
        AggregateReport::Row row;
        row.claim_id = points[i].claim_id;
        row.horizon = points[i].horizon;
        row.estimate = contribs[i] / n_total;
        report.total += row.estimate;
        report.rows.push_back(std::move(row));
    }
    return report;
}

PosteriorSummary posterior_summary(std::span<net::Model> models,
                                   const ScoringPoint& point,
                                   std::size_t n_weight_draws) {
    if (models.empty()) throw DataError("posterior_summary: no models");
    if (n_weight_draws < 1)
        throw DataError("posterior_summary: need at least one draw");

    PosteriorSummary summary;
    summary.horizon = std::max(point.horizon, 0);
    const std::size_t steps = std::size_t(summary.horizon);
    summary.w1.assign(steps, {});
    summary.mean.assign(steps, {});
    summary.log_var.assign(steps, {});
    if (steps == 0) return summary;

    std::vector<std::uint64_t> digests;
    for (net::Model& m : models) digests.push_back(member_digest(m));

    const std::span<const data::ModelInput> batch(&point.input, 1);
    for (std::size_t j = 0; j < n_weight_draws; ++j) {
        const std::size_t m = j % models.size();
        Rng stream = Rng::child(digests[m], kSummaryDrawTag + j / models.size());
        const net::WeightDraws draws = net::draw_weights(models[m].dims, stream);
        const net::ForwardResult fw = net::forward(models[m], batch, draws);
        for (std::size_t t = 0; t < steps; ++t) {
            const dist::MixtureParams& paid = fw.outputs[0][t][0];
            const double s2 = paid.sigma_ln * paid.sigma_ln;
            summary.w1[t].push_back(paid.w1);
            summary.mean[t].push_back(std::exp(paid.mu + s2 / 2.0));
            summary.log_var[t].push_back(std::log(std::expm1(s2)) +
                                         2.0 * paid.mu + s2);
        }
    }
    return summary;
}

std::string point_csv(const AggregateReport& report) {
    std::string text = "claim_id,horizon,unpaid_estimate\n";
    for (const auto& row : report.rows) {
        text += row.claim_id;
        text += ',' + std::to_string(row.horizon);
        text += ',' + io::format_exact(row.estimate);
        text += '\n';
    }
    return text;
}

std::string paths_csv(std::span<const PathSample> paths) {
    std::string text = "claim_id,draw_id,step,net,cumulative\n";
    for (const PathSample& path : paths) {
        for (std::size_t t = 0; t < path.net.size(); ++t) {
            text += path.claim_id;
            text += ',' + std::to_string(path.draw_id);
            text += ',' + std::to_string(t + 1);
            text += ',' + io::format_exact(path.net[t]);
            text += ',' + io::format_exact(path.cumulative[t]);
            text += '\n';
        }
    }
    return text;
}

std::string summary_csv(const std::string& claim_id, const PosteriorSummary& s) {
    std::string text = "claim_id,step,draw_id,w1,mean,log_var\n";
    for (std::size_t t = 0; t < s.w1.size(); ++t) {
        for (std::size_t j = 0; j < s.w1[t].size(); ++j) {
            text += claim_id;
            text += ',' + std::to_string(t + 1);
            text += ',' + std::to_string(j);
            text += ',' + io::format_exact(s.w1[t][j]);
            text += ',' + io::format_exact(s.mean[t][j]);
            text += ',' + io::format_exact(s.log_var[t][j]);
            text += '\n';
        }
    }
    return text;
}

} // namespace claimcast::fc
