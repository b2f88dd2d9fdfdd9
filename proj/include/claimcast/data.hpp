#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "claimcast/rng.hpp"

namespace claimcast::data {

/// Development years 0..11; claims are fully developed at year 11.
inline constexpr int kDevYears = 12;
/// Sentinel for padded target positions. Never a legal cash-flow value.
inline constexpr double kMaskValue = 99999.0;

/// One claim's static features plus its full development history.
struct ClaimRecord {
    std::string claim_id;
    std::string line_of_business;
    std::string claim_code;
    int accident_year = 0;
    int accident_quarter = 1;
    int age = 0;
    std::string injured_part;
    int report_year = 0;
    std::array<double, kDevYears> cash_flows{}; // signed; negative = recovery
    std::array<bool, kDevYears> statuses{};     // open = true
};

/// Throws DataError on violated record invariants.
void validate_claim(const ClaimRecord& claim);

/// Knobs for the synthetic claims generator.
struct SimulatorConfig {
    int first_accident_year = 1994;
    int last_accident_year = 2005;
    double zero_claim_prob = 0.15;  // reported then closed without payment
    double severity_log_mean = 7.0; // log of latent claim severity
    double severity_log_sd = 1.1;
    double settle_prob = 0.45;   // geometric parameter for payment-year count
    double recovery_prob = 0.12; // chance of one negative flow after payments
    double reopen_prob = 0.04;   // chance of a late extra payment after closure
    std::array<double, 4> report_lag_probs = {0.72, 0.18, 0.07, 0.03};

    void validate() const; // throws DataError on out-of-range values
};

/// Deterministic synthetic claims book: latent log-normal severity, geometric
/// payment count with decaying weights, categorical reporting lag, optional
/// recovery and re-opening. Claim c draws from its own child RNG stream, so
/// output is independent of generation order.
std::vector<ClaimRecord> simulate_claims(std::size_t n, std::uint64_t seed,
                                         const SimulatorConfig& config);

/// CSV schema (header required):
/// claim_id,lob,claim_code,accident_year,accident_quarter,age,injured_part,
/// report_year,dev_year,cash_flow,open_status; one row per (claim, dev year).
/// Missing development years load as zero cash flow, closed.
std::vector<ClaimRecord> load_claims_csv(const std::filesystem::path& path);
void write_claims_csv(const std::filesystem::path& path,
                      const std::vector<ClaimRecord>& claims);

} // namespace claimcast::data
