#include "claimcast/features.hpp"

#include <algorithm>
#include <cmath>

#include "claimcast/errors.hpp"
#include "claimcast/io_util.hpp"
#include "claimcast/rng.hpp"

namespace claimcast::data {

SplitResult split_by_cutoff(const std::vector<ClaimRecord>& claims, int cutoff) {
    SplitResult result;
    result.train.cutoff = cutoff;
    for (const ClaimRecord& claim : claims) {
        if (claim.report_year > cutoff) continue;
        const int k = std::clamp(cutoff - claim.accident_year, 0, kDevYears - 1);
        result.train.claims.push_back(claim);
        result.train.visible_len.push_back(k);
        result.holdout.push_back(claim);
    }
    return result;
}

std::vector<ExpandedSample> expand_training_samples(const TrainView& view) {
    std::vector<ExpandedSample> samples;
    for (std::size_t c = 0; c < view.claims.size(); ++c) {
        const ClaimRecord& claim = view.claims[c];
        const int k = view.visible_len[c];
        for (int origin = 0; origin < k; ++origin) {
            ExpandedSample s;
            s.claim_id = claim.claim_id;
            s.lob = claim.line_of_business;
            s.claim_code = claim.claim_code;
            s.injured_part = claim.injured_part;
            s.age = claim.age;
            s.origin = origin;
            s.k = k;
            for (int d = 0; d <= origin; ++d) {
                const double flow = claim.cash_flows[d];
                s.paid.push_back(std::max(flow, 0.0));
                s.recovery.push_back(std::max(-flow, 0.0));
                s.open_status.push_back(claim.statuses[d]);
            }
            for (int d = origin + 1; d <= k; ++d) {
                const double flow = claim.cash_flows[d];
                s.target_paid.push_back(std::max(flow, 0.0));
                s.target_recovery.push_back(std::max(-flow, 0.0));
            }
            samples.push_back(std::move(s));
        }
    }
    return samples;
}

namespace {

struct Moments {
    double mean = 0.0;
    double sd = 1.0;
};

// Population standard deviation; a constant column degenerates to sd 1.
Moments population_moments(const std::vector<double>& values) {
    Moments m;
    if (values.empty()) return m;
    double total = 0.0;
    for (double v : values) total += v;
    m.mean = total / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(values.size()));
    if (m.sd == 0.0) m.sd = 1.0;
    return m;
}

std::map<std::string, std::size_t> build_vocab(std::vector<std::string> levels) {
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    std::map<std::string, std::size_t> vocab;
    std::size_t index = 1; // 0 reserved for unknown
    for (std::string& level : levels) vocab.emplace(std::move(level), index++);
    return vocab;
}

std::size_t lookup(const std::map<std::string, std::size_t>& vocab,
                   const std::string& level) {
    const auto it = vocab.find(level);
    return it == vocab.end() ? 0 : it->second;
}

} // namespace

NormalizationStats fit_normalization(const std::vector<ExpandedSample>& samples) {
    if (samples.empty()) throw DataError("fit_normalization: no training samples");

    std::vector<double> paid, recovery, ages;
    std::vector<std::string> lobs, codes, parts;
    for (const ExpandedSample& s : samples) {
        paid.insert(paid.end(), s.paid.begin(), s.paid.end());
        recovery.insert(recovery.end(), s.recovery.begin(), s.recovery.end());
        ages.push_back(static_cast<double>(s.age));
        lobs.push_back(s.lob);
        codes.push_back(s.claim_code);
        parts.push_back(s.injured_part);
    }

    NormalizationStats stats;
    const Moments mp = population_moments(paid);
    const Moments mr = population_moments(recovery);
    const Moments ma = population_moments(ages);
    stats.paid_mean = mp.mean;
    stats.paid_sd = mp.sd;
    stats.recovery_mean = mr.mean;
    stats.recovery_sd = mr.sd;
    stats.age_mean = ma.mean;
    stats.age_sd = ma.sd;
    stats.lob_vocab = build_vocab(std::move(lobs));
    stats.claim_code_vocab = build_vocab(std::move(codes));
    stats.injured_part_vocab = build_vocab(std::move(parts));
    return stats;
}

namespace {

io::KvPairs stats_to_kv(const NormalizationStats& s) {
    io::KvPairs kv;
    kv.emplace_back("format", "normalization-v1");
    kv.emplace_back("paid_mean", io::format_exact(s.paid_mean));
    kv.emplace_back("paid_sd", io::format_exact(s.paid_sd));
    kv.emplace_back("recovery_mean", io::format_exact(s.recovery_mean));
    kv.emplace_back("recovery_sd", io::format_exact(s.recovery_sd));
    kv.emplace_back("age_mean", io::format_exact(s.age_mean));
    kv.emplace_back("age_sd", io::format_exact(s.age_sd));
    auto emit = [&kv](const char* prefix, const std::map<std::string, std::size_t>& v) {
        for (const auto& [level, index] : v) {
            if (level.find_first_of("=\n\r") != std::string::npos)
                throw DataError("category level contains a reserved character: " + level);
            kv.emplace_back(std::string(prefix) + "." + level, std::to_string(index));
        }
    };
    emit("lob", s.lob_vocab);
    emit("claim_code", s.claim_code_vocab);
    emit("injured_part", s.injured_part_vocab);
    return kv;
}

} // namespace

void NormalizationStats::save(const std::filesystem::path& path) const {
    io::atomic_write_text(path, io::serialize_kv(stats_to_kv(*this)));
}

NormalizationStats NormalizationStats::load(const std::filesystem::path& path) {
    const auto kv = io::parse_kv(io::read_text_file(path), path.string());
    NormalizationStats s;
    bool saw_format = false;
    for (const auto& [key, value] : kv) {
        if (key == "format") {
            if (value != "normalization-v1")
                throw DataError(path.string() + ": unsupported format '" + value + "'");
            saw_format = true;
        } else if (key == "paid_mean") {
            s.paid_mean = io::parse_double(value, key);
        } else if (key == "paid_sd") {
            s.paid_sd = io::parse_double(value, key);
        } else if (key == "recovery_mean") {
            s.recovery_mean = io::parse_double(value, key);
        } else if (key == "recovery_sd") {
            s.recovery_sd = io::parse_double(value, key);
        } else if (key == "age_mean") {
            s.age_mean = io::parse_double(value, key);
        } else if (key == "age_sd") {
            s.age_sd = io::parse_double(value, key);
        } else if (key.rfind("lob.", 0) == 0) {
            s.lob_vocab[key.substr(4)] =
                static_cast<std::size_t>(io::parse_long(value, key));
        } else if (key.rfind("claim_code.", 0) == 0) {
            s.claim_code_vocab[key.substr(11)] =
                static_cast<std::size_t>(io::parse_long(value, key));
        } else if (key.rfind("injured_part.", 0) == 0) {
            s.injured_part_vocab[key.substr(13)] =
                static_cast<std::size_t>(io::parse_long(value, key));
        } else {
            throw DataError(path.string() + ": unknown key '" + key + "'");
        }
    }
    if (!saw_format) throw DataError(path.string() + ": missing format line");
    if (!(s.paid_sd > 0.0) || !(s.recovery_sd > 0.0) || !(s.age_sd > 0.0))
        throw DataError(path.string() + ": standard deviations must be positive");
    return s;
}

std::uint64_t NormalizationStats::digest() const {
    return fnv1a64(io::serialize_kv(stats_to_kv(*this)));
}

ModelInput make_model_input(const ExpandedSample& sample,
                            const NormalizationStats& stats) {
    const std::size_t len = sample.paid.size();
    if (len == 0 || len > static_cast<std::size_t>(kSeqLen))
        throw DataError("make_model_input: history length must be 1..11");

    ModelInput in;
    const std::size_t offset = static_cast<std::size_t>(kSeqLen) - len;
    for (std::size_t t = 0; t < len; ++t) {
        const std::size_t slot = offset + t;
        in.paid_hist[slot] = (sample.paid[t] - stats.paid_mean) / stats.paid_sd;
        in.recovery_hist[slot] =
            (sample.recovery[t] - stats.recovery_mean) / stats.recovery_sd;
        in.status_open[slot] = sample.open_status[t] ? 1.0 : 0.0;
        in.status_closed[slot] = sample.open_status[t] ? 0.0 : 1.0;
        in.hist_mask[slot] = 1.0;
    }
    in.age_scaled = (static_cast<double>(sample.age) - stats.age_mean) / stats.age_sd;
    in.dev_year_scaled = static_cast<double>(sample.origin) / (kDevYears - 1);
    in.lob_index = lookup(stats.lob_vocab, sample.lob);
    in.claim_code_index = lookup(stats.claim_code_vocab, sample.claim_code);
    in.injured_part_index = lookup(stats.injured_part_vocab, sample.injured_part);
    return in;
}

std::vector<TrainingSample> transform(const std::vector<ExpandedSample>& samples,
                                      const NormalizationStats& stats) {
    std::vector<TrainingSample> out;
    out.reserve(samples.size());
    for (const ExpandedSample& s : samples) {
        if (s.target_paid.empty())
            throw DataError("transform: sample with no target steps for claim " +
                            s.claim_id);
        TrainingSample ts;
        ts.claim_id = s.claim_id;
        ts.input = make_model_input(s, stats);
        ts.target_paid.fill(kMaskValue);
        ts.target_recovery.fill(kMaskValue);
        for (std::size_t j = 0; j < s.target_paid.size(); ++j) {
            ts.target_paid[j] = s.target_paid[j];
            ts.target_recovery[j] = s.target_recovery[j];
        }
        out.push_back(std::move(ts));
    }
    return out;
}

} // namespace claimcast::data
