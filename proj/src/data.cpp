#include "claimcast/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "claimcast/errors.hpp"
#include "claimcast/io_util.hpp"

namespace claimcast::data {

void validate_claim(const ClaimRecord& claim) {
    const std::string who = "claim '" + claim.claim_id + "'";
    if (claim.claim_id.empty()) throw DataError("claim with empty claim_id");
    if (claim.report_year < claim.accident_year)
        throw DataError(who + ": report_year before accident_year");
    if (claim.accident_quarter < 1 || claim.accident_quarter > 4)
        throw DataError(who + ": accident_quarter outside 1..4");
    if (claim.age < 0 || claim.age > 130) throw DataError(who + ": implausible age");
    for (double c : claim.cash_flows) {
        if (!std::isfinite(c)) throw DataError(who + ": non-finite cash flow");
        if (std::abs(c) == kMaskValue)
            throw DataError(who + ": cash flow equals the padding sentinel 99999");
    }
}

void SimulatorConfig::validate() const {
    if (first_accident_year > last_accident_year)
        throw DataError("simulator: accident-year range is empty");
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0))
            throw DataError(std::string("simulator: ") + name + " outside [0, 1]");
    };
    prob(zero_claim_prob, "zero_claim_prob");
    prob(settle_prob, "settle_prob");
    prob(recovery_prob, "recovery_prob");
    prob(reopen_prob, "reopen_prob");
    if (!(settle_prob > 0.0)) throw DataError("simulator: settle_prob must be positive");
    if (!(severity_log_sd > 0.0))
        throw DataError("simulator: severity_log_sd must be positive");
    double lag_total = 0.0;
    for (double p : report_lag_probs) {
        prob(p, "report_lag_probs entry");
        lag_total += p;
    }
    if (std::abs(lag_total - 1.0) > 1e-9)
        throw DataError("simulator: report_lag_probs must sum to 1");
}

namespace {

double round_cents(double v) { return std::round(v * 100.0) / 100.0; }

int draw_categorical(Rng& rng, const std::array<double, 4>& probs) {
    const double u = rng.uniform01();
    double acc = 0.0;
    for (int i = 0; i < 3; ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return 3;
}

struct LobSpec {
    const char* name;
    double weight;
    double severity_factor;
};

constexpr LobSpec kLobs[] = {
    {"motor", 0.5, 1.0},
    {"liability", 0.3, 1.6},
    {"property", 0.2, 0.7},
};
constexpr const char* kClaimCodes[] = {"C01", "C02", "C03", "C04", "C05", "C06"};
constexpr const char* kInjuredParts[] = {"head", "arm",  "leg",
                                         "torso", "hand", "foot"};

ClaimRecord simulate_one(std::size_t index, std::uint64_t seed,
                         const SimulatorConfig& cfg) {
    Rng rng = Rng::child(seed, static_cast<std::uint64_t>(index));
    ClaimRecord claim;

    char id[32];
    std::snprintf(id, sizeof(id), "CLM%07zu", index);
    claim.claim_id = id;

    const int years = cfg.last_accident_year - cfg.first_accident_year + 1;
    claim.accident_year =
        cfg.first_accident_year + static_cast<int>(rng.below(static_cast<std::uint64_t>(years)));
    claim.accident_quarter = rng.uniform_int(1, 4);
    claim.age = rng.uniform_int(18, 70);

    {
        const double u = rng.uniform01();
        double acc = 0.0;
        std::size_t pick = 0;
        for (std::size_t i = 0; i < std::size(kLobs); ++i) {
            acc += kLobs[i].weight;
            if (u < acc) {
                pick = i;
                break;
            }
        }
        claim.line_of_business = kLobs[pick].name;
        claim.claim_code = kClaimCodes[rng.below(std::size(kClaimCodes))];
        claim.injured_part = kInjuredParts[rng.below(std::size(kInjuredParts))];

        const int lag = draw_categorical(rng, cfg.report_lag_probs);
        claim.report_year = claim.accident_year + lag;

        if (rng.bernoulli(cfg.zero_claim_prob)) {
            claim.statuses[lag] = true; // reported, then closed with no payment
            claim.statuses[kDevYears - 1] = false;
            return claim;
        }

        const double severity =
            std::exp(rng.gaussian(cfg.severity_log_mean, cfg.severity_log_sd)) *
            kLobs[pick].severity_factor;

        int payment_years = 1 + rng.geometric(cfg.settle_prob);
        payment_years = std::min(payment_years, kDevYears - lag);

        std::vector<double> weights(static_cast<std::size_t>(payment_years));
        double total_weight = 0.0;
        for (int j = 0; j < payment_years; ++j) {
            weights[j] = rng.uniform(0.5, 1.5) * std::exp(-0.5 * j);
            total_weight += weights[j];
        }
        double total_paid = 0.0;
        int last_active = lag;
        for (int j = 0; j < payment_years; ++j) {
            const int dev = lag + j;
            const double amount = round_cents(severity * weights[j] / total_weight);
            claim.cash_flows[dev] = amount;
            claim.statuses[dev] = true;
            total_paid += amount;
            last_active = dev;
        }

        if (rng.bernoulli(cfg.recovery_prob) && last_active + 1 <= kDevYears - 1 &&
            total_paid > 0.0) {
            const int dev = last_active + 1;
            claim.cash_flows[dev] = -round_cents(total_paid * rng.uniform(0.05, 0.25));
            last_active = dev;
        }

        if (rng.bernoulli(cfg.reopen_prob) && last_active + 2 <= kDevYears - 1) {
            const int dev = last_active + 2;
            claim.cash_flows[dev] = round_cents(severity * rng.uniform(0.1, 0.4));
            claim.statuses[dev] = true;
        }

        claim.statuses[kDevYears - 1] = false; // fully developed by year 11
    }
    return claim;
}

} // namespace

std::vector<ClaimRecord> simulate_claims(std::size_t n, std::uint64_t seed,
                                         const SimulatorConfig& config) {
    if (n == 0) throw DataError("simulate_claims: n must be positive");
    config.validate();
    std::vector<ClaimRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(simulate_one(i, seed, config));
        validate_claim(out.back());
    }
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

constexpr const char* kCsvHeader =
    "claim_id,lob,claim_code,accident_year,accident_quarter,age,injured_part,"
    "report_year,dev_year,cash_flow,open_status";

} // namespace

std::vector<ClaimRecord> load_claims_csv(const std::filesystem::path& path) {
    const std::string text = io::read_text_file(path);
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;

    if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader)
        throw DataError(path.string() + ": unexpected header; expected '" +
                        std::string(kCsvHeader) + "'");

    std::vector<ClaimRecord> claims;
    std::map<std::string, std::size_t> index_of;
    std::map<std::pair<std::string, int>, std::size_t> seen_cell;

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path.string() + " line " + std::to_string(lineno);
        const auto f = split_csv_line(line);
        if (f.size() != 11) throw DataError(where + ": expected 11 fields");

        const std::string& id = f[0];
        const int dev = static_cast<int>(io::parse_long(f[8], where));
        if (dev < 0 || dev >= kDevYears)
            throw DataError(where + ": dev_year outside 0..11");
        if (!seen_cell.emplace(std::make_pair(id, dev), lineno).second)
            throw DataError(where + ": duplicate (claim_id, dev_year)");

        ClaimRecord fresh;
        fresh.claim_id = id;
        fresh.line_of_business = f[1];
        fresh.claim_code = f[2];
        fresh.accident_year = static_cast<int>(io::parse_long(f[3], where));
        fresh.accident_quarter = static_cast<int>(io::parse_long(f[4], where));
        fresh.age = static_cast<int>(io::parse_long(f[5], where));
        fresh.injured_part = f[6];
        fresh.report_year = static_cast<int>(io::parse_long(f[7], where));

        auto [it, inserted] = index_of.emplace(id, claims.size());
        if (inserted) {
            claims.push_back(std::move(fresh));
        } else {
            const ClaimRecord& have = claims[it->second];
            if (have.line_of_business != fresh.line_of_business ||
                have.claim_code != fresh.claim_code ||
                have.accident_year != fresh.accident_year ||
                have.accident_quarter != fresh.accident_quarter ||
                have.age != fresh.age || have.injured_part != fresh.injured_part ||
                have.report_year != fresh.report_year)
                throw DataError(where + ": static fields disagree with earlier rows of " +
                                id);
        }
        ClaimRecord& claim = claims[index_of[id]];
        claim.cash_flows[dev] = io::parse_double(f[9], where);
        const long open = io::parse_long(f[10], where);
        if (open != 0 && open != 1) throw DataError(where + ": open_status must be 0 or 1");
        claim.statuses[dev] = open == 1;
    }

    for (const ClaimRecord& c : claims) validate_claim(c);
    return claims;
}

void write_claims_csv(const std::filesystem::path& path,
                      const std::vector<ClaimRecord>& claims) {
    std::string out = kCsvHeader;
    out += '\n';
    for (const ClaimRecord& c : claims) {
        for (const std::string* s : {&c.claim_id, &c.line_of_business, &c.claim_code,
                                     &c.injured_part}) {
            if (s->find_first_of(",\n\r") != std::string::npos)
                throw DataError("write_claims_csv: field contains a delimiter: " + *s);
        }
        for (int dev = 0; dev < kDevYears; ++dev) {
            out += c.claim_id;
            out += ',';
            out += c.line_of_business;
            out += ',';
            out += c.claim_code;
            out += ',';
            out += std::to_string(c.accident_year);
            out += ',';
            out += std::to_string(c.accident_quarter);
            out += ',';
            out += std::to_string(c.age);
            out += ',';
            out += c.injured_part;
            out += ',';
            out += std::to_string(c.report_year);
            out += ',';
            out += std::to_string(dev);
            out += ',';
            out += io::format_exact(c.cash_flows[dev]);
            out += ',';
            out += c.statuses[dev] ? '1' : '0';
            out += '\n';
        }
    }
    io::atomic_write_text(path, out);
}

} // namespace claimcast::data
