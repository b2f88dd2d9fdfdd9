#include "claimcast/distributions.hpp"

#include <algorithm>
#include <cmath>

#include "claimcast/errors.hpp"
#include "claimcast/scalarfn.hpp"

namespace claimcast::dist {

std::pair<double, double> mixing_weights(double v1, double v2) {
    const double m = std::max(v1, v2);
    const double e1 = std::exp(v1 - m);
    const double e2 = std::exp(v2 - m);
    const double total = e1 + e2;
    return {e1 / total, e2 / total};
}

double lognormal_scale(double v4) {
    const double s = std::clamp(stable_sigmoid(kBeta * v4), 1e-12, 1.0 - 1e-12);
    return kAlpha + kLambda * s;
}

MixtureParams MixtureParams::from_raw(double v1, double v2, double v3, double v4) {
    MixtureParams p;
    p.v = {v1, v2, v3, v4};
    const auto [w1, w2] = mixing_weights(v1, v2);
    p.w1 = w1;
    p.w2 = w2;
    p.mu = v3;
    p.sigma_ln = lognormal_scale(v4);
    return p;
}

MixtureParams MixtureParams::from_components(double w1, double mu, double sigma_ln) {
    if (!(w1 >= 0.0 && w1 <= 1.0))
        throw DataError("MixtureParams: w1 must lie in [0, 1]");
    if (!(sigma_ln > 0.0))
        throw DataError("MixtureParams: sigma_ln must be positive");
    MixtureParams p;
    p.w1 = w1;
    p.w2 = 1.0 - w1;
    p.mu = mu;
    p.sigma_ln = sigma_ln;
    return p;
}

double shifted_lognormal_logpdf(double y, double mu, double sigma_ln) {
    if (!(y > -kShift))
        throw DataError("shifted_lognormal_logpdf: value outside shifted support");
    const double z = y + kShift;
    const double t = std::log(z) - mu;
    return -std::log(z) - std::log(sigma_ln) - kHalfLog2Pi -
           t * t / (2.0 * sigma_ln * sigma_ln);
}

double mixture_logprob(double y, const MixtureParams& p) {
    if (y < 0.0) throw DataError("mixture_logprob: target must be non-negative");
    const double log_cont = std::log(p.w1) + shifted_lognormal_logpdf(y, p.mu, p.sigma_ln);
    if (std::abs(y) <= kAtomTolerance)
        return stable_logaddexp(log_cont, std::log(p.w2));
    return log_cont;
}

double mixture_mean(const MixtureParams& p) {
    if (p.w1 == 0.0) return 0.0;
    return p.w1 * (std::exp(p.mu + p.sigma_ln * p.sigma_ln / 2.0) - kShift);
}

double mixture_sample(const MixtureParams& p, Rng& rng) {
    if (rng.uniform01() < p.w2) return 0.0;
    return std::exp(rng.gaussian(p.mu, p.sigma_ln)) - kShift;
}

Tensor GaussianPosterior::scale() const {
    Tensor s = raw_scale;
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = std::max(stable_softplus(s[i]), 1e-300);
    return s;
}

double gaussian_kl_std_normal(const Tensor& mean, const Tensor& scale) {
    if (!mean.same_shape(scale))
        throw DataError("gaussian_kl_std_normal: mean and scale shapes differ");
    double kl = 0.0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double m = mean[i];
        const double s = scale[i];
        if (!(s > 0.0)) throw DataError("gaussian_kl_std_normal: scale must be positive");
        kl += (s * s + m * m - 1.0 - 2.0 * std::log(s)) / 2.0;
    }
    return kl;
}

double gaussian_kl_std_normal(const GaussianPosterior& q) {
    return gaussian_kl_std_normal(q.mean, q.scale());
}

} // namespace claimcast::dist
