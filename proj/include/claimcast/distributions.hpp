#pragma once

#include <array>
#include <utility>

#include "claimcast/rng.hpp"
#include "claimcast/tensor.hpp"

namespace claimcast::dist {

/// Left shift of the log-normal component: Y + kShift ~ LogNormal.
inline constexpr double kShift = 0.001;
/// Scale transform sigma_ln = kAlpha + kLambda * sigmoid(kBeta * v4).
inline constexpr double kAlpha = 0.001;
inline constexpr double kBeta = 0.01;
inline constexpr double kLambda = 0.7;
/// Targets within this of zero hit the point mass.
inline constexpr double kAtomTolerance = 1e-9;

/// Softmax over two logits, max-subtracted so huge logits stay finite.
std::pair<double, double> mixing_weights(double v1, double v2);

/// kAlpha + kLambda * sigmoid(kBeta * v4), kept strictly inside
/// (kAlpha, kAlpha + kLambda) even when the sigmoid saturates.
double lognormal_scale(double v4);

/// Two-component mixture: shifted log-normal plus a point mass at zero.
/// The four raw values are the network outputs of one head at one step.
struct MixtureParams {
    std::array<double, 4> v{};
    double w1 = 0.0;
    double w2 = 0.0;
    double mu = 0.0;
    double sigma_ln = 0.0;

    static MixtureParams from_raw(double v1, double v2, double v3, double v4);
    /// Direct construction for tests and diagnostics; raw v stays zero.
    static MixtureParams from_components(double w1, double mu, double sigma_ln);
};

/// log density at y of Y where Y + kShift ~ LogNormal(mu, sigma_ln^2).
/// Defined for y > -kShift; throws DataError outside the support.
double shifted_lognormal_logpdf(double y, double mu, double sigma_ln);

/// Mixture log-likelihood of a non-negative target. At the atom the point
/// mass contributes weight w2 alongside the continuous density, combined
/// with log-sum-exp. Returns -inf when the density is exactly zero
/// (e.g. w1 == 0 away from the atom).
double mixture_logprob(double y, const MixtureParams& p);

/// Closed-form mean: w1 * (exp(mu + sigma_ln^2 / 2) - kShift).
double mixture_mean(const MixtureParams& p);

/// One draw: 0 with probability w2, else exp(N(mu, sigma_ln^2)) - kShift.
double mixture_sample(const MixtureParams& p, Rng& rng);

/// Diagonal Gaussian posterior over a weight tensor; scale is
/// softplus(raw_scale), floored at 1e-300 so it stays strictly positive
/// even when softplus underflows.
struct GaussianPosterior {
    Tensor mean;
    Tensor raw_scale;

    Tensor scale() const;
};

/// KL(N(mean, diag(scale^2)) || N(0, I)) summed over elements:
/// sum (scale^2 + mean^2 - 1 - 2 log scale) / 2.
double gaussian_kl_std_normal(const Tensor& mean, const Tensor& scale);
double gaussian_kl_std_normal(const GaussianPosterior& q);

} // namespace claimcast::dist
