#pragma once

#include <array>
#include <string>
#include <vector>

#include "claimcast/data.hpp"
#include "claimcast/features.hpp"

namespace claimcast::cl {

/// Report-year development triangle of cumulative net cash flows.
/// Row i covers claims reported in origins[i]; rows[i][d] is the cumulative
/// net amount through d years after reporting, defined for
/// origin + d <= cutoff (and d < kDevYears). Net amounts may decrease with
/// development when recoveries land.
struct Triangle {
    int cutoff = 0;
    std::vector<int> origins;              // ascending report years
    std::vector<std::vector<double>> rows; // rows[i].size() = defined cells
};

/// Volume-weighted age-to-age factors: factor[d] develops column d to d+1,
/// using every origin where both cells exist. A zero denominator leaves the
/// step undefined.
struct AtaFactors {
    std::array<double, data::kDevYears - 1> factor{};
    std::array<bool, data::kDevYears - 1> defined{};
};

struct UnpaidReport {
    struct OriginRow {
        int origin = 0;
        double latest = 0.0;   // last observed cumulative
        double ultimate = 0.0; // projected to development year 11
        double unpaid = 0.0;   // ultimate - latest
    };
    std::vector<OriginRow> rows;
    double total = 0.0;
    std::vector<std::string> warnings; // trailing factors defaulted to 1
};

/// Aggregates the censored view into the triangle. Flows dated before the
/// report year (negative report development) are ignored.
Triangle build_triangle(const data::TrainView& view);

/// Throws DataError when the triangle has fewer than two columns overall.
AtaFactors ata_factors(const Triangle& tri);

/// Projects every origin's latest cumulative through the remaining factors.
/// Undefined factors past the last defined step default to 1 with a warning;
/// an undefined factor before that is a data error.
UnpaidReport unpaid_estimate(const Triangle& tri, const AtaFactors& factors);

/// Ground truth: net flows of the view's claims dated after the cutoff,
/// through development year 11, summed from the uncensored records.
double actual_unpaid(const std::vector<data::ClaimRecord>& holdout,
                     const data::TrainView& view);

/// CSV emitters for audit (headers documented in docs/formats.md).
std::string triangle_csv(const Triangle& tri);
std::string factors_csv(const AtaFactors& factors);

} // namespace claimcast::cl
