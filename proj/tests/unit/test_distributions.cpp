#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "claimcast/distributions.hpp"
#include "claimcast/errors.hpp"
#include "claimcast/rng.hpp"

using claimcast::DataError;
using claimcast::Rng;
using claimcast::Tensor;
namespace dist = claimcast::dist;

namespace {

// ---- oracles -------------------------------------------------------------

// Direct log-normal density, written from the standard formula with long
// doubles so it does not share code with the implementation under test.
long double lognormal_pdf_direct(long double z, long double mu, long double sigma) {
    const long double pi = 3.14159265358979323846264338327950288L;
    const long double t = std::log(z) - mu;
    return std::exp(-t * t / (2.0L * sigma * sigma)) /
           (z * sigma * std::sqrt(2.0L * pi));
}

// Composite Simpson rule, n even.
template <typename F>
double simpson(F f, double a, double b, int n) {
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

} // namespace

TEST_SUITE("distributions") {

TEST_CASE("mixing weights at equal logits") {
    auto [w1, w2] = dist::mixing_weights(0.0, 0.0);
    CHECK(w1 == 0.5);
    CHECK(w2 == 0.5);
}

TEST_CASE("mixing weights are shift invariant") {
    Rng rng(424242);
    for (int i = 0; i < 50; ++i) {
        const double t = rng.uniform(-1e8, 1e8);
        auto [w1, w2] = dist::mixing_weights(t, t);
        CHECK(w1 == 0.5);
        CHECK(w2 == 0.5);
    }
}

TEST_CASE("mixing weights survive extreme logits") {
    auto [w1, w2] = dist::mixing_weights(1000.0, 0.0);
    CHECK(std::isfinite(w1));
    CHECK(std::isfinite(w2));
    CHECK(w1 > 1.0 - 1e-15);
    CHECK(w2 >= 0.0);
    CHECK(w2 < 1e-300);

    auto [u1, u2] = dist::mixing_weights(0.0, 1000.0);
    CHECK(u1 < 1e-300);
    CHECK(u2 > 1.0 - 1e-15);
}

TEST_CASE("mixing weights sum to one and stay positive in working range") {
    Rng rng(77);
    for (int i = 0; i < 200; ++i) {
        const double v1 = rng.uniform(-30.0, 30.0);
        const double v2 = rng.uniform(-30.0, 30.0);
        auto [w1, w2] = dist::mixing_weights(v1, v2);
        CHECK(w1 > 0.0);
        CHECK(w2 > 0.0);
        CHECK(std::abs(w1 + w2 - 1.0) <= 1e-15);
    }
}

TEST_CASE("lognormal scale fixed points") {
    CHECK(dist::lognormal_scale(0.0) == 0.001 + 0.7 * 0.5);
    CHECK(dist::lognormal_scale(1e9) < 0.701);
    CHECK(dist::lognormal_scale(1e9) > 0.700999);
    CHECK(dist::lognormal_scale(-1e9) > 0.001);
    CHECK(dist::lognormal_scale(-1e9) < 0.001001);
}

TEST_CASE("lognormal scale stays strictly inside its band") {
    Rng rng(1234);
    std::vector<double> inputs = {-1e6, 1e6, 0.0, -0.5, 0.5};
    for (int i = 0; i < 500; ++i) inputs.push_back(rng.uniform(-1e6, 1e6));
    for (double v4 : inputs) {
        const double s = dist::lognormal_scale(v4);
        CHECK(s > 0.001);
        CHECK(s < 0.701);
    }
}

TEST_CASE("lognormal scale is monotone increasing") {
    Rng rng(555);
    for (int i = 0; i < 200; ++i) {
        double a = rng.uniform(-500.0, 500.0);
        double b = rng.uniform(-500.0, 500.0);
        if (a > b) std::swap(a, b);
        if (a == b) continue;
        CHECK(dist::lognormal_scale(a) < dist::lognormal_scale(b));
    }
}

TEST_CASE("shifted lognormal logpdf matches the standard formula") {
    // Oracle: direct long-double density; frozen high-precision value for
    // the mode case mu = log(5.001), sigma = 0.351 evaluated at y = 5.
    const double mu = std::log(5.001);
    const double got = dist::shifted_lognormal_logpdf(5.0, mu, 0.351);
    CHECK(got == doctest::Approx(-1.4816073701251681).epsilon(1e-14));

    const double direct =
        static_cast<double>(std::log(lognormal_pdf_direct(5.001L, mu, 0.351L)));
    CHECK(got == doctest::Approx(direct).epsilon(1e-13));

    Rng rng(808);
    for (int i = 0; i < 100; ++i) {
        const double y = rng.uniform(0.0, 20.0);
        const double m = rng.uniform(-1.0, 2.0);
        const double s = rng.uniform(0.05, 0.7);
        const double lib = dist::shifted_lognormal_logpdf(y, m, s);
        const double ref = static_cast<double>(std::log(
            lognormal_pdf_direct(static_cast<long double>(y) + 0.001L, m, s)));
        CHECK(lib == doctest::Approx(ref).epsilon(1e-10));
    }
}

TEST_CASE("shifted lognormal support boundary") {
    CHECK_THROWS_AS((void)dist::shifted_lognormal_logpdf(-0.001, 0.0, 0.3), DataError);
    CHECK_THROWS_AS((void)dist::shifted_lognormal_logpdf(-0.01, 0.0, 0.3), DataError);
    CHECK_NOTHROW((void)dist::shifted_lognormal_logpdf(-0.0005, 0.0, 0.3));
}

TEST_CASE("mixture logprob of a pure point mass at its atom") {
    const auto p = dist::MixtureParams::from_components(0.0, 0.0, 0.351);
    CHECK(dist::mixture_logprob(0.0, p) == 0.0);
    CHECK(dist::mixture_logprob(5.0, p) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("mixture logprob away from the atom is weighted lognormal density") {
    const double mu = std::log(5.001);
    const auto p = dist::MixtureParams::from_components(1.0, mu, 0.351);
    CHECK(dist::mixture_logprob(5.0, p) ==
          doctest::Approx(-1.4816073701251681).epsilon(1e-14));

    const auto half = dist::MixtureParams::from_components(0.5, mu, 0.351);
    CHECK(dist::mixture_logprob(5.0, half) ==
          doctest::Approx(std::log(0.5) - 1.4816073701251681).epsilon(1e-13));
}

TEST_CASE("mixture logprob at the atom blends density and point mass") {
    // Params chosen so both terms matter: the lognormal mode sits at the
    // atom. Oracle is the direct formula in long double, plus a frozen
    // high-precision literal.
    const double mu = std::log(0.001);
    const auto p = dist::MixtureParams::from_components(0.5, mu, 0.351);
    const double got = dist::mixture_logprob(0.0, p);

    const long double f0 = lognormal_pdf_direct(0.001L, mu, 0.351L);
    const double direct = static_cast<double>(std::log(0.5L * f0 + 0.5L));
    CHECK(got == doctest::Approx(direct).epsilon(1e-13));
    CHECK(got == doctest::Approx(6.3435180604377025).epsilon(1e-13));

    // With a negligible continuous density the atom term dominates.
    const auto far = dist::MixtureParams::from_components(0.5, 5.0, 0.1);
    CHECK(dist::mixture_logprob(0.0, far) ==
          doctest::Approx(std::log(0.5)).epsilon(1e-14));
}

TEST_CASE("mixture logprob rejects negative targets") {
    const auto p = dist::MixtureParams::from_components(0.5, 0.0, 0.3);
    CHECK_THROWS_AS((void)dist::mixture_logprob(-0.1, p), DataError);
    CHECK_THROWS_AS((void)dist::mixture_logprob(-1e-12, p), DataError);
}

TEST_CASE("mixture density integrates to one") {
    Rng rng(160914);
    for (int trial = 0; trial < 8; ++trial) {
        const auto p = dist::MixtureParams::from_raw(
            rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
            rng.uniform(-1.0, 2.0), rng.uniform(-300.0, 300.0));

        auto density = [&](double t) {
            // Integration runs in t = log(y + shift); the Jacobian is e^t.
            const double y = std::exp(t) - dist::kShift;
            double logf;
            if (y >= 0.0 && std::abs(y) > dist::kAtomTolerance) {
                logf = dist::mixture_logprob(y, p);
            } else {
                logf = std::log(p.w1) +
                       dist::shifted_lognormal_logpdf(y, p.mu, p.sigma_ln);
            }
            return std::exp(logf + t);
        };
        const double lo = p.mu - 9.0 * p.sigma_ln;
        const double hi = p.mu + 9.0 * p.sigma_ln;
        const double continuous = simpson(density, lo, hi, 4000);
        CHECK(continuous + p.w2 == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("mixture logprob is continuous in the raw parameters") {
    Rng rng(2718);
    for (int trial = 0; trial < 20; ++trial) {
        std::array<double, 4> v = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                                   rng.uniform(-1.0, 2.0), rng.uniform(-300.0, 300.0)};
        const double y = rng.uniform(0.1, 50.0);
        const auto base = dist::MixtureParams::from_raw(v[0], v[1], v[2], v[3]);
        const double f0 = dist::mixture_logprob(y, base);
        for (int k = 0; k < 4; ++k) {
            auto vp = v;
            vp[k] += 1e-8;
            const auto pert = dist::MixtureParams::from_raw(vp[0], vp[1], vp[2], vp[3]);
            CHECK(std::abs(dist::mixture_logprob(y, pert) - f0) < 1e-4);
        }
    }
}

TEST_CASE("mixture mean fixed points") {
    CHECK(dist::mixture_mean(dist::MixtureParams::from_components(0.0, 3.0, 0.5)) == 0.0);
    const auto degenerate = dist::MixtureParams::from_components(1.0, 0.0, 1e-9);
    CHECK(dist::mixture_mean(degenerate) == doctest::Approx(0.999).epsilon(1e-9));
    const auto p = dist::MixtureParams::from_components(0.5, 1.0, 0.5);
    CHECK(dist::mixture_mean(p) == doctest::Approx(1.5396084244590156).epsilon(1e-15));
}

TEST_CASE("mixture mean matches Monte Carlo") {
    Rng param_rng(31);
    for (int trial = 0; trial < 3; ++trial) {
        const auto p = dist::MixtureParams::from_components(
            param_rng.uniform(0.3, 0.95), param_rng.uniform(-1.0, 1.5),
            param_rng.uniform(0.1, 0.65));
        Rng rng(900 + trial);
        double acc = 0.0;
        const int n = 1000000;
        for (int i = 0; i < n; ++i) acc += dist::mixture_sample(p, rng);
        const double mc = acc / n;
        CHECK(mc == doctest::Approx(dist::mixture_mean(p)).epsilon(0.01));
    }

    // The documented example set, at a looser 0.5% tolerance.
    const auto p = dist::MixtureParams::from_components(0.5, 1.0, 0.5);
    Rng rng(1209);
    double acc = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) acc += dist::mixture_sample(p, rng);
    CHECK(acc / n == doctest::Approx(1.5396084244590156).epsilon(0.005));
}

TEST_CASE("mixture sampling hits the atom at the right rate") {
    const auto always_zero = dist::MixtureParams::from_components(0.0, 2.0, 0.4);
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) CHECK(dist::mixture_sample(always_zero, rng) == 0.0);

    const auto p = dist::MixtureParams::from_components(0.7, 0.5, 0.3);
    Rng rng2(12);
    const int n = 100000;
    int zeros = 0;
    for (int i = 0; i < n; ++i)
        if (dist::mixture_sample(p, rng2) == 0.0) ++zeros;
    const double freq = static_cast<double>(zeros) / n;
    const double sd = std::sqrt(p.w2 * (1.0 - p.w2) / n);
    CHECK(std::abs(freq - p.w2) < 3.0 * sd);
}

TEST_CASE("gaussian kl closed-form fixed points") {
    CHECK(dist::gaussian_kl_std_normal(Tensor::scalar(0.0), Tensor::scalar(1.0)) == 0.0);
    CHECK(dist::gaussian_kl_std_normal(Tensor::scalar(1.0), Tensor::scalar(1.0)) == 0.5);
    CHECK(dist::gaussian_kl_std_normal(Tensor::scalar(0.3), Tensor::scalar(0.8)) ==
          doctest::Approx(0.088143551314209756).epsilon(1e-15));

    // Sums over elements.
    const Tensor mean = Tensor::row({0.0, 1.0});
    const Tensor scale = Tensor::row({1.0, 1.0});
    CHECK(dist::gaussian_kl_std_normal(mean, scale) == 0.5);
}

TEST_CASE("gaussian kl matches Monte Carlo") {
    // E_q[log q - log p] with q = N(0.3, 0.8^2), p = N(0, 1).
    const double m = 0.3, s = 0.8;
    Rng rng(190800);
    double acc = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.gaussian(m, s);
        const double log_q = -std::log(s) - (x - m) * (x - m) / (2.0 * s * s);
        const double log_p = -x * x / 2.0;
        acc += log_q - log_p;
    }
    CHECK(acc / n == doctest::Approx(0.088143551314209756).epsilon(0.01));
}

TEST_CASE("gaussian kl is non-negative and zero only at the prior") {
    Rng rng(64);
    for (int i = 0; i < 200; ++i) {
        const Tensor mean = Tensor::scalar(rng.uniform(-2.0, 2.0));
        const Tensor scale = Tensor::scalar(std::exp(rng.uniform(-1.5, 1.0)));
        const double kl = dist::gaussian_kl_std_normal(mean, scale);
        CHECK(kl >= 0.0);
        if (mean[0] != 0.0 || scale[0] != 1.0) CHECK(kl > 0.0);
    }
}

TEST_CASE("gaussian kl input validation") {
    CHECK_THROWS_AS((void)dist::gaussian_kl_std_normal(Tensor(1, 2, 0.0),
                                                       Tensor(1, 3, 1.0)),
                    DataError);
    CHECK_THROWS_AS((void)dist::gaussian_kl_std_normal(Tensor::scalar(0.0),
                                                       Tensor::scalar(0.0)),
                    DataError);
}

TEST_CASE("posterior scale is softplus of the raw parameter and positive") {
    dist::GaussianPosterior q;
    q.mean = Tensor::row({0.0, 0.0, 0.5});
    q.raw_scale = Tensor::row({0.5413248546129181, -5.0, -1000.0});
    const Tensor s = q.scale();
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(std::log1p(std::exp(-5.0))).epsilon(1e-15));
    CHECK(s[2] > 0.0);

    const double kl = dist::gaussian_kl_std_normal(q);
    CHECK(std::isfinite(kl));
    CHECK(kl > 0.0);
}

TEST_CASE("from_components validates its arguments") {
    CHECK_THROWS_AS((void)dist::MixtureParams::from_components(-0.1, 0.0, 0.3), DataError);
    CHECK_THROWS_AS((void)dist::MixtureParams::from_components(1.1, 0.0, 0.3), DataError);
    CHECK_THROWS_AS((void)dist::MixtureParams::from_components(0.5, 0.0, 0.0), DataError);
}

TEST_CASE("from_raw wires the transforms together") {
    const auto p = dist::MixtureParams::from_raw(0.0, 0.0, 1.25, 0.0);
    CHECK(p.w1 == 0.5);
    CHECK(p.w2 == 0.5);
    CHECK(p.mu == 1.25);
    CHECK(p.sigma_ln == 0.001 + 0.7 * 0.5);
    CHECK(p.v[2] == 1.25);
}

} // TEST_SUITE
