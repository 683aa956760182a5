#pragma once

// Discrete check of the optimal least-squares discriminator: on a finite
// grid of joint states, D*(s) = (A p(s) + B q(s)) / (p(s) + q(s)) minimizes
//   J1(d) = Σ_s p(s)(d(s) - A)² + q(s)(d(s) - B)².

#include <string>
#include <vector>

#include "silicon/losses.hpp"
#include "silicon/rng.hpp"

namespace silicon {

struct GridDensityPair {
    std::vector<double> p;  // real-encoding density
    std::vector<double> q;  // fake-encoding density

    void validate() const;
    /// Normalized positive noise over `cells` states.
    static GridDensityPair random(std::size_t cells, Rng& rng);
};

std::vector<double> optimal_disc(const GridDensityPair& pair, const DiscLabels& labels);
double j1_on_grid(const GridDensityPair& pair, const std::vector<double>& d, const DiscLabels& labels);
/// ∂J1/∂d(s) = 2p(d - A) + 2q(d - B).
std::vector<double> j1_gradient(const GridDensityPair& pair, const std::vector<double>& d, const DiscLabels& labels);
/// Largest |∂J1/∂d| at d = D*.
double stationarity_check(const GridDensityPair& pair, const DiscLabels& labels);

struct TheoryCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// The full verification suite behind `silicon verify-theory`.
std::vector<TheoryCheck> run_theory_suite(std::uint64_t seed, int pairs = 100);

}  // namespace silicon
