#pragma once

// Central finite-difference checks of every differentiable loss and network.

#include <functional>
#include <string>
#include <vector>

#include "silicon/autograd.hpp"
#include "silicon/rng.hpp"

namespace silicon {

struct GradCheckResult {
    std::string name;
    double rel_error = 0.0;  // worst tensor-wise ||analytic - numeric|| / max(norms, 1e-6)
    std::size_t coords = 0;  // coordinates probed
    bool passed = false;
};

/// Checks d f / d wrt against central differences with step h on up to
/// `max_coords` coordinates per tensor. f must rebuild its graph from the
/// current values of `wrt` on every call.
GradCheckResult check_gradient(const std::string& name, const std::function<ad::Var()>& f,
                               const std::vector<ad::Var>& wrt, Rng& rng, int max_coords = 24, double h = 1e-6,
                               double tol = 1e-4);

/// Losses and the five networks at toy shapes, in 64-bit arithmetic.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tol = 1e-4);

}  // namespace silicon
