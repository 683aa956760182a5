#include "silicon/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace silicon {

void GridDensityPair::validate() const {
    if (p.size() != q.size() || p.empty()) throw std::invalid_argument("density grids must be non-empty and equal-sized");
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("densities must be non-negative");
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-12 || std::abs(sq - 1.0) > 1e-12)
        throw std::invalid_argument("densities must each sum to 1");
}

GridDensityPair GridDensityPair::random(std::size_t cells, Rng& rng) {
    GridDensityPair g{std::vector<double>(cells), std::vector<double>(cells)};
    for (auto* v : {&g.p, &g.q}) {
        double s = 0.0;
        for (double& x : *v) s += (x = -std::log(rng.uniform()));
        for (double& x : *v) x /= s;
    }
    return g;
}

std::vector<double> optimal_disc(const GridDensityPair& pair, const DiscLabels& labels) {
    std::vector<double> d(pair.p.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double p = pair.p[i], q = pair.q[i];
        d[i] = (p + q > 0.0) ? (labels.a * p + labels.b * q) / (p + q) : 0.5 * (labels.a + labels.b);
    }
    return d;
}

double j1_on_grid(const GridDensityPair& pair, const std::vector<double>& d, const DiscLabels& labels) {
    if (d.size() != pair.p.size()) throw std::invalid_argument("j1_on_grid: discriminator grid size mismatch");
    double j = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
        j += pair.p[i] * (d[i] - labels.a) * (d[i] - labels.a) + pair.q[i] * (d[i] - labels.b) * (d[i] - labels.b);
    return j;
}

std::vector<double> j1_gradient(const GridDensityPair& pair, const std::vector<double>& d, const DiscLabels& labels) {
    if (d.size() != pair.p.size()) throw std::invalid_argument("j1_gradient: discriminator grid size mismatch");
    std::vector<double> g(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
        g[i] = 2.0 * pair.p[i] * (d[i] - labels.a) + 2.0 * pair.q[i] * (d[i] - labels.b);
    return g;
}

double stationarity_check(const GridDensityPair& pair, const DiscLabels& labels) {
    const auto g = j1_gradient(pair, optimal_disc(pair, labels), labels);
    double worst = 0.0;
    for (double v : g) worst = std::max(worst, std::abs(v));
    return worst;
}

namespace {

// Coarse-to-fine scan of p(d-A)² + q(d-B)² over d, without the closed form.
double scan_minimizer(double p, double q, double a, double b) {
    auto f = [&](double d) { return p * (d - a) * (d - a) + q * (d - b) * (d - b); };
    double lo = std::min(a, b) - 1.0, hi = std::max(a, b) + 1.0;
    double best = lo;
    constexpr int kPoints = 200;
    while (hi - lo > 1e-9) {
        const double step = (hi - lo) / kPoints;
        double best_val = f(lo);
        best = lo;
        for (int i = 1; i <= kPoints; ++i) {
            const double d = lo + i * step;
            const double v = f(d);
            if (v < best_val) {
                best_val = v;
                best = d;
            }
        }
        lo = best - step;
        hi = best + step;
    }
    return best;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

}  // namespace

std::vector<TheoryCheck> run_theory_suite(std::uint64_t seed, int pairs) {
    Rng rng(seed);
    const DiscLabels labels{1.0, 0.0, 1.0};
    double worst_scan = 0.0, worst_stat = 0.0, worst_fd = 0.0;
    bool bounded = true, perturb_ok = true, random_ok = true;

    for (int t = 0; t < pairs; ++t) {
        const std::size_t cells = 64 + rng.below(4096 - 64 + 1);
        const auto pair = GridDensityPair::random(cells, rng);
        const auto dstar = optimal_disc(pair, labels);
        const double jstar = j1_on_grid(pair, dstar, labels);

        for (std::size_t i = 0; i < cells; ++i) {
            worst_scan = std::max(worst_scan, std::abs(dstar[i] - scan_minimizer(pair.p[i], pair.q[i], labels.a, labels.b)));
            if (dstar[i] < std::min(labels.a, labels.b) || dstar[i] > std::max(labels.a, labels.b)) bounded = false;
        }
        worst_stat = std::max(worst_stat, stationarity_check(pair, labels));

        // finite-difference derivative on a few cells of a random d
        std::vector<double> d(cells);
        for (double& v : d) v = rng.uniform(-0.5, 1.5);
        const auto g = j1_gradient(pair, d, labels);
        for (int k = 0; k < 4; ++k) {
            const std::size_t i = rng.below(cells);
            const double h = 1e-4;
            auto dp = d, dm = d;
            dp[i] += h;
            dm[i] -= h;
            const double fd = (j1_on_grid(pair, dp, labels) - j1_on_grid(pair, dm, labels)) / (2 * h);
            worst_fd = std::max(worst_fd, std::abs(fd - g[i]));
        }

        // perturbation probe at ε = 1e-3
        std::vector<double> v(cells);
        for (double& x : v) x = rng.normal();
        auto dp = dstar;
        for (std::size_t i = 0; i < cells; ++i) dp[i] += 1e-3 * v[i];
        if (!(j1_on_grid(pair, dp, labels) > jstar)) perturb_ok = false;

        for (int r = 0; r < 1000; ++r) {
            for (double& x : d) x = rng.uniform(-0.5, 1.5);
            if (j1_on_grid(pair, d, labels) < jstar) random_ok = false;
        }
    }

    // equilibrium: p = q gives the midpoint everywhere
    GridDensityPair eq = GridDensityPair::random(256, rng);
    eq.q = eq.p;
    double worst_mid = 0.0;
    for (double v : optimal_disc(eq, labels)) worst_mid = std::max(worst_mid, std::abs(v - 0.5));

    return {
        {"optimal_disc matches quadratic scan (<= 1e-6)", worst_scan <= 1e-6, "max |D* - scan| = " + fmt(worst_scan)},
        {"stationarity at D* (<= 1e-12)", worst_stat <= 1e-12, "max |dJ1/dD| = " + fmt(worst_stat)},
        {"derivative matches finite differences (<= 1e-8)", worst_fd <= 1e-8, "max error = " + fmt(worst_fd)},
        {"D* lies between A and B", bounded, ""},
        {"perturbations of D* increase J1", perturb_ok, "eps = 1e-3"},
        {"J1(D*) <= J1(d) for random d", random_ok, ""},
        {"p = q gives D* = (A+B)/2", worst_mid <= 1e-15, "max deviation = " + fmt(worst_mid)},
    };
}

}  // namespace silicon
