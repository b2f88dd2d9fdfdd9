#include "claimcast/chainladder.hpp"

#include <algorithm>
#include <map>

#include "claimcast/errors.hpp"
#include "claimcast/io_util.hpp"

namespace claimcast::cl {

Triangle build_triangle(const data::TrainView& view) {
    std::map<int, std::vector<double>> incremental;
    for (const data::ClaimRecord& claim : view.claims) {
        if (claim.report_year > view.cutoff)
            throw DataError("build_triangle: claim '" + claim.claim_id +
                            "' reported after the cutoff");
        const int max_dev =
            std::min(view.cutoff - claim.report_year, data::kDevYears - 1);
        auto& row = incremental[claim.report_year];
        if (row.size() < std::size_t(max_dev) + 1) row.resize(max_dev + 1, 0.0);
        for (int d = 0; d <= max_dev; ++d) {
            // Report development d is accident development (report lag + d).
            const int acc_dev = claim.report_year - claim.accident_year + d;
            if (acc_dev < data::kDevYears) row[d] += claim.cash_flows[acc_dev];
        }
    }

    Triangle tri;
    tri.cutoff = view.cutoff;
    for (auto& [origin, row] : incremental) {
        double running = 0.0;
        for (double& cell : row) {
            running += cell;
            cell = running;
        }
        tri.origins.push_back(origin);
        tri.rows.push_back(std::move(row));
    }
    return tri;
}

AtaFactors ata_factors(const Triangle& tri) {
    std::size_t widest = 0;
    for (const auto& row : tri.rows) widest = std::max(widest, row.size());
    if (widest < 2)
        throw DataError("ata_factors: triangle needs at least two columns");

    AtaFactors out;
    for (std::size_t d = 0; d + 1 < data::kDevYears; ++d) {
        double num = 0.0;
        double den = 0.0;
        for (const auto& row : tri.rows) {
            if (row.size() > d + 1) {
                num += row[d + 1];
                den += row[d];
            }
        }
        if (den != 0.0) {
            out.factor[d] = num / den;
            out.defined[d] = true;
        }
    }
    return out;
}

UnpaidReport unpaid_estimate(const Triangle& tri, const AtaFactors& factors) {
    if (tri.rows.empty()) throw DataError("unpaid_estimate: empty triangle");

    // Steps past the last defined factor are trailing; inside the data they
    // must be defined or the projection is meaningless.
    int last_defined = -1;
    for (int d = 0; d + 1 < data::kDevYears; ++d)
        if (factors.defined[d]) last_defined = d;

    UnpaidReport report;
    std::vector<int> defaulted;
    for (std::size_t i = 0; i < tri.rows.size(); ++i) {
        const auto& row = tri.rows[i];
        if (row.empty()) throw DataError("unpaid_estimate: empty triangle row");
        UnpaidReport::OriginRow out;
        out.origin = tri.origins[i];
        out.latest = row.back();
        double ultimate = out.latest;
        for (int d = int(row.size()) - 1; d + 1 < data::kDevYears; ++d) {
            if (factors.defined[d]) {
                ultimate *= factors.factor[d];
            } else if (d <= last_defined) {
                throw NumericError(
                    "unpaid_estimate: factor undefined at development step " +
                    std::to_string(d) + " inside the observed range");
            } else {
                defaulted.push_back(d);
            }
        }
        out.ultimate = ultimate;
        out.unpaid = ultimate - out.latest;
        report.rows.push_back(out);
        report.total += out.unpaid;
    }

    std::sort(defaulted.begin(), defaulted.end());
    defaulted.erase(std::unique(defaulted.begin(), defaulted.end()),
                    defaulted.end());
    for (int d : defaulted)
        report.warnings.push_back("factor at development step " +
                                  std::to_string(d) +
                                  " has no data; defaulted to 1");
    return report;
}

double actual_unpaid(const std::vector<data::ClaimRecord>& holdout,
                     const data::TrainView& view) {
    double total = 0.0;
    for (const data::ClaimRecord& claim : holdout) {
        for (int d = 0; d < data::kDevYears; ++d)
            if (claim.accident_year + d > view.cutoff)
                total += claim.cash_flows[d];
    }
    return total;
}

std::string triangle_csv(const Triangle& tri) {
    std::string text = "origin";
    for (int d = 0; d < data::kDevYears; ++d)
        text += ",dev" + std::to_string(d);
    text += '\n';
    for (std::size_t i = 0; i < tri.rows.size(); ++i) {
        text += std::to_string(tri.origins[i]);
        for (int d = 0; d < data::kDevYears; ++d) {
            text += ',';
            if (std::size_t(d) < tri.rows[i].size())
                text += io::format_exact(tri.rows[i][d]);
        }
        text += '\n';
    }
    return text;
}

std::string factors_csv(const AtaFactors& factors) {
    std::string text = "dev,factor,defined\n";
    for (std::size_t d = 0; d + 1 < data::kDevYears; ++d) {
        text += std::to_string(d);
        text += ',';
        text += factors.defined[d] ? io::format_exact(factors.factor[d]) : "";
        text += ',';
        text += factors.defined[d] ? '1' : '0';
        text += '\n';
    }
    return text;
}

} // namespace claimcast::cl
