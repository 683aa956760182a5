#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "silicon/priors.hpp"

using namespace silicon;

namespace {

double integrate(const std::function<double(double)>& f, double lo, double hi) {
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-13);
}

// Two-sided Kolmogorov–Smirnov statistic of samples against a CDF.
double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

}  // namespace

TEST_CASE("standard normal helpers") {
    CHECK(std_normal_cdf(0.0) == 0.5);
    CHECK(std_normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
    CHECK(std_normal_sf(10.0) == doctest::Approx(7.619853024160527e-24).epsilon(1e-10));
    for (double p : {1e-10, 0.01, 0.3, 0.5, 0.8, 0.999999})
        CHECK(std_normal_cdf(std_normal_quantile(p)) == doctest::Approx(p).epsilon(1e-9));
    CHECK(std_normal_log_pdf(0.0) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-15));
}

TEST_CASE("truncated normal log density") {
    SUBCASE("symmetric window normalizes phi over [-1, 1]") {
        const TruncatedNormal d(0, 1, -1, 1);
        const double z = integrate([](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); }, -1, 1);
        CHECK(d.log_pdf(0.0) == doctest::Approx(std::log(0.3989422804014327 / z)).epsilon(1e-12));
        CHECK(d.log_pdf(0.0) == doctest::Approx(-0.5372).epsilon(1e-4));
    }
    SUBCASE("half normal") {
        const TruncatedNormal d(0, 1, 0, 50);
        CHECK(d.log_pdf(0.0) == doctest::Approx(std::log(0.7978845608028654)).epsilon(1e-12));
    }
    SUBCASE("outside the support is -inf") {
        const TruncatedNormal d(1, 0.5, -3, 3);
        CHECK(d.log_pdf(4.0) == -std::numeric_limits<double>::infinity());
        CHECK(d.log_pdf(-3.5) == -std::numeric_limits<double>::infinity());
    }
    SUBCASE("matches a reference statistics package") {
        // values computed with scipy.stats.truncnorm
        const TruncatedNormal d(1, 0.5, -3, 3);
        CHECK(d.log_pdf(0.3) == doctest::Approx(-1.205759680901349).epsilon(1e-12));
        CHECK(d.cdf(0.7) == doctest::Approx(0.27426180396199196).epsilon(1e-12));
        CHECK(d.cdf(3.0) == 1.0);
        const TruncatedNormal far(0, 1, 4, 6);
        CHECK(far.log_pdf(4.5) == doctest::Approx(-0.6838058952935135).epsilon(1e-10));
        CHECK(far.cdf(4.2) == doctest::Approx(0.5786342002984637).epsilon(1e-10));
        const TruncatedNormal neg(-1, 0.5, -3, 3);
        CHECK(neg.log_pdf(-2.9) == doctest::Approx(-7.44575968090135).epsilon(1e-12));
    }
    SUBCASE("degenerate parameters are rejected") {
        CHECK_THROWS(TruncatedNormal(0, 0, -1, 1));
        CHECK_THROWS(TruncatedNormal(0, 1, 1, 1));
        CHECK_THROWS(TruncatedNormal(0, 1, 40, 41));  // mass below 1e-12
    }
}

TEST_CASE("truncated normal densities integrate to one") {
    for (const TruncatedNormal& d : {TruncatedNormal(0, 1, -1, 1), TruncatedNormal(1, 0.5, -3, 3),
                                     TruncatedNormal(0, 1, 4, 6), TruncatedNormal(-2, 3, -1, 0.5)}) {
        const double mass = integrate([&](double x) { return std::exp(d.log_pdf(x)); }, d.lo(), d.hi());
        CHECK(std::abs(mass - 1.0) <= 1e-6);
    }
}

TEST_CASE("truncated normal sampler") {
    Rng rng(2024);
    const TruncatedNormal d(0, 1, -1, 1);
    std::vector<double> xs(100000);
    for (double& x : xs) x = d.sample(rng);
    CHECK(std::all_of(xs.begin(), xs.end(), [&](double x) { return d.contains(x); }));
    double mean = 0, var = 0;
    for (double x : xs) mean += x / xs.size();
    for (double x : xs) var += (x - mean) * (x - mean) / (xs.size() - 1);
    CHECK(std::abs(mean) <= 0.01);
    const double qvar = integrate([&](double x) { return x * x * std::exp(d.log_pdf(x)); }, -1, 1);
    CHECK(qvar == doctest::Approx(0.2915).epsilon(1e-3));
    CHECK(std::abs(var - qvar) <= 0.01);
    CHECK(ks_statistic(xs, [&](double x) { return d.cdf(x); }) <= 0.01);

    // far tail stays inside its window
    const TruncatedNormal tail(0, 1, 6, 7);
    for (int i = 0; i < 1000; ++i) {
        const double x = tail.sample(rng);
        CHECK((x >= 6 && x <= 7));
    }
}

TEST_CASE("mixture density") {
    SUBCASE("one component equals its density") {
        const TruncatedNormal c(0.3, 0.7, -2, 1.5);
        const TruncNormMixture m({c}, {1.0});
        for (double x : {-1.9, -0.3, 0.0, 0.9, 1.5}) CHECK(m.log_pdf(x) == c.log_pdf(x));
    }
    SUBCASE("default prior integrates to one") {
        const auto m = TruncNormMixture::stain_default();
        CHECK(m.size() == 2);
        const double mass = integrate([&](double x) { return std::exp(m.log_pdf(x)); }, -3, 3);
        CHECK(std::abs(mass - 1.0) <= 1e-6);
        CHECK(m.log_pdf(0.2) == doctest::Approx(-2.015006120572956).epsilon(1e-12));
    }
    SUBCASE("disjoint supports integrate to one over their union") {
        const TruncNormMixture m({TruncatedNormal(0.5, 1, 0, 1), TruncatedNormal(2.5, 0.3, 2, 3)}, {0.3, 0.7});
        const double mass = integrate([&](double x) { return std::exp(m.log_pdf(x)); }, 0, 1) +
                            integrate([&](double x) { return std::exp(m.log_pdf(x)); }, 2, 3);
        CHECK(std::abs(mass - 1.0) <= 1e-6);
        CHECK(m.log_pdf(1.5) == -std::numeric_limits<double>::infinity());
        CHECK(m.distance_to_support(1.25) == doctest::Approx(0.25));
        CHECK(m.distance_to_support(0.5) == 0.0);
    }
    SUBCASE("derivative of the log density matches differences") {
        const auto m = TruncNormMixture::stain_default();
        for (double x : {-2.5, -1.1, 0.0, 0.4, 2.2}) {
            const double h = 1e-6;
            CHECK(m.dlog_pdf(x) == doctest::Approx((m.log_pdf(x + h) - m.log_pdf(x - h)) / (2 * h)).epsilon(1e-6));
        }
    }
    SUBCASE("invalid weights are rejected") {
        const TruncatedNormal c(0, 1, -1, 1);
        CHECK_THROWS(TruncNormMixture({c, c}, {0.5, 0.6}));
        CHECK_THROWS(TruncNormMixture({c, c}, {1.5, -0.5}));
        CHECK_THROWS(TruncNormMixture({}, {}));
        CHECK_THROWS(TruncNormMixture({c}, {0.5, 0.5}));
    }
}

TEST_CASE("mixture sampling picks components by weight") {
    Rng rng(77);
    const TruncNormMixture m({TruncatedNormal(0.5, 1, 0, 1), TruncatedNormal(2.5, 1, 2, 3)}, {0.5, 0.5});
    int in_first = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double x = m.sample(rng);
        CHECK(m.in_support(x));
        in_first += x <= 1.0;
    }
    CHECK(std::abs(in_first / static_cast<double>(n) - 0.5) <= 0.01);

    const auto def = TruncNormMixture::stain_default();
    std::vector<double> xs(100000);
    for (double& x : xs) x = def.sample(rng);
    const auto cdf = [&](double x) {
        return 0.5 * def.components()[0].cdf(x) + 0.5 * def.components()[1].cdf(x);
    };
    CHECK(ks_statistic(xs, cdf) <= 0.01);
}

TEST_CASE("floored density outside the support") {
    const auto m = TruncNormMixture::stain_default();
    const double floor = std::log(kMixtureDensityFloor);
    CHECK(floored_log_pdf(m, 0.5) == m.log_pdf(0.5));
    CHECK(floored_log_pdf(m, 3.5) < floor);
    CHECK(floored_log_pdf(m, 5.0) < floored_log_pdf(m, 3.5));
    CHECK(std::isfinite(floored_log_pdf(m, 100.0)));
    // the slope points back toward the support
    CHECK(floored_dlog_pdf(m, 4.0) < 0.0);
    CHECK(floored_dlog_pdf(m, -4.0) > 0.0);
}

TEST_CASE("closed-form Gaussian KL and entropy") {
    CHECK(gaussian_kl_std(DiagGaussian::standard(5)) == 0.0);
    CHECK(gaussian_kl_std(DiagGaussian({0.7}, {0.0})) == doctest::Approx(0.245).epsilon(1e-14));
    CHECK(gaussian_kl_std(DiagGaussian({0.0}, {std::log(4.0)})) == doctest::Approx(0.5 * (3 - std::log(4.0))).epsilon(1e-14));
    CHECK(gaussian_kl_std(DiagGaussian({0.0}, {std::log(4.0)})) == doctest::Approx(0.8069).epsilon(1e-4));

    CHECK(gaussian_entropy(DiagGaussian::standard(1)) == doctest::Approx(1.41894).epsilon(1e-5));
    CHECK(gaussian_entropy(DiagGaussian::standard(2)) == doctest::Approx(2.83788).epsilon(1e-5));
    CHECK(gaussian_entropy(DiagGaussian({0.0}, {std::log(4.0)})) - gaussian_entropy(DiagGaussian::standard(1)) ==
          doctest::Approx(0.5 * std::log(4.0)).epsilon(1e-12));

    // numeric entropy of a unit normal
    const double h = integrate(
        [](double x) {
            const double lp = std_normal_log_pdf(x);
            return -std::exp(lp) * lp;
        },
        -40, 40);
    CHECK(gaussian_entropy(DiagGaussian::standard(1)) == doctest::Approx(h).epsilon(1e-9));

    Rng rng(8);
    for (int t = 0; t < 200; ++t) {
        DiagGaussian q({rng.uniform(-2, 2), rng.uniform(-2, 2)}, {rng.uniform(-3, 3), rng.uniform(-3, 3)});
        CHECK(gaussian_kl_std(q) >= 0.0);
    }
    CHECK_THROWS(DiagGaussian({0.0, 1.0}, {0.0}));
    CHECK_THROWS(DiagGaussian({}, {}));
}

TEST_CASE("Monte-Carlo KL against a Gaussian reference") {
    Rng rng(123);
    SUBCASE("KL(N(0, s^2) || N(0, 1)) by sampling agrees with the closed form") {
        const DiagGaussian q({0.0}, {std::log(4.0)});
        double acc = 0;
        const int n = 1000000;
        for (int i = 0; i < n; ++i) {
            const double z = 2.0 * rng.normal();
            acc += (std_normal_log_pdf(z / 2.0) - std::log(2.0)) - std_normal_log_pdf(z);
        }
        CHECK(std::abs(acc / n - gaussian_kl_std(q)) <= 0.01);
    }
    SUBCASE("near-Gaussian configuration") {
        const TruncNormMixture wide({TruncatedNormal(0, 1, -50, 50)}, {1.0});
        const DiagGaussian q({0.0}, {std::log(0.04)});
        CHECK(std::abs(kl_vs_mixture_mc(q, wide, 10000, rng) - gaussian_kl_std(q)) <= 0.02);
    }
    SUBCASE("self KL is near zero") {
        const TruncNormMixture wide({TruncatedNormal(0, 1, -50, 50)}, {1.0});
        CHECK(std::abs(kl_vs_mixture_mc(DiagGaussian::standard(1), wide, 10000, rng)) <= 0.05);
    }
    SUBCASE("repetitions are stable") {
        const DiagGaussian q({1.0, -1.0}, {std::log(0.1), std::log(0.1)});
        const auto m = TruncNormMixture::stain_default();
        std::vector<double> reps;
        for (int r = 0; r < 100; ++r) reps.push_back(kl_vs_mixture_mc(q, m, 10000, rng));
        double mean = 0, var = 0;
        for (double v : reps) mean += v / reps.size();
        for (double v : reps) var += (v - mean) * (v - mean) / (reps.size() - 1);
        CHECK(std::sqrt(var) / mean <= 0.1);
        // quadrature KL for the same configuration (independent coordinates)
        double quad = 0;
        for (std::size_t i = 0; i < q.dim(); ++i) {
            const double mu = q.mean[i], sd = std::exp(0.5 * q.log_var[i]);
            quad += integrate(
                [&](double z) {
                    const double lq = std_normal_log_pdf((z - mu) / sd) - std::log(sd);
                    return std::exp(lq) * (lq - floored_log_pdf(m, z));
                },
                mu - 12 * sd, mu + 12 * sd);
        }
        CHECK(std::abs(mean - quad) <= 4 * std::sqrt(var / reps.size()) + 1e-3);
    }
}

TEST_CASE("reparameterized KL gradients follow the value-level estimator") {
    Rng rng(5);
    const auto m = TruncNormMixture::stain_default();
    const std::vector<double> noise = draw_kl_noise(3, 64, rng);
    CHECK(noise.size() == 3 * 64);
    auto mean = ad::parameter(Tensor({3}, std::vector<double>{0.8, -1.2, 0.1}));
    auto lv = ad::parameter(Tensor({3}, std::vector<double>{-1.0, -2.0, -0.5}));
    const double v1 = ad::scalar(ad::kl_vs_mixture_mc(mean, lv, m, noise));
    const double v2 = ad::scalar(ad::kl_vs_mixture_mc(mean, lv, m, noise));
    CHECK(v1 == v2);
    CHECK(std::isfinite(v1));
    CHECK(ad::scalar(ad::gaussian_kl_std(mean, lv)) ==
          doctest::Approx(gaussian_kl_std(DiagGaussian({0.8, -1.2, 0.1}, {-1.0, -2.0, -0.5}))).epsilon(1e-14));
    CHECK(ad::scalar(ad::gaussian_entropy(lv)) ==
          doctest::Approx(gaussian_entropy(DiagGaussian({0, 0, 0}, {-1.0, -2.0, -0.5}))).epsilon(1e-14));
}
