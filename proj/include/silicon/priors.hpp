#pragma once

#include <vector>

#include "silicon/autograd.hpp"
#include "silicon/rng.hpp"

namespace silicon {

double std_normal_cdf(double x);
/// Upper tail 1 - Φ(x), accurate for large x.
double std_normal_sf(double x);
double std_normal_quantile(double p);
double std_normal_log_pdf(double x);

/// Normal law N(mu, sigma²) restricted to [lo, hi] and renormalized.
class TruncatedNormal {
public:
    TruncatedNormal(double mu, double sigma, double lo, double hi);

    double mu() const { return mu_; }
    double sigma() const { return sigma_; }
    double lo() const { return lo_; }
    double hi() const { return hi_; }
    /// Normalizing mass Φ(β) - Φ(α).
    double mass() const { return mass_; }

    bool contains(double x) const { return x >= lo_ && x <= hi_; }
    /// -inf outside [lo, hi].
    double log_pdf(double x) const;
    double cdf(double x) const;
    /// d/dx log pdf inside the support.
    double dlog_pdf(double x) const { return -(x - mu_) / (sigma_ * sigma_); }
    /// Inverse-CDF draw, always in [lo, hi].
    double sample(Rng& rng) const;

private:
    double mu_, sigma_, lo_, hi_;
    double alpha_, beta_;
    double mass_, log_mass_;
};

class TruncNormMixture {
public:
    TruncNormMixture(std::vector<TruncatedNormal> components, std::vector<double> weights);
    /// Two components at ±1, sigma 0.5, truncated to [-3, 3], equal weights.
    static TruncNormMixture stain_default();

    const std::vector<TruncatedNormal>& components() const { return components_; }
    const std::vector<double>& weights() const { return weights_; }
    std::size_t size() const { return components_.size(); }

    bool in_support(double x) const;
    /// log Σ_k w_k pdf_k(x) via log-sum-exp; -inf outside every support.
    double log_pdf(double x) const;
    /// Derivative of log_pdf inside the support.
    double dlog_pdf(double x) const;
    double sample(Rng& rng) const;

    /// Distance from x to the closest support interval (0 inside).
    double distance_to_support(double x) const;

private:
    std::vector<TruncatedNormal> components_;
    std::vector<double> weights_;
};

inline constexpr double kMixtureDensityFloor = 1e-30;

/// log p_m(x), or log(1e-30) - softplus(distance to support) when x falls
/// outside every component; the penalty keeps gradients finite and pointing
/// back toward the support.
double floored_log_pdf(const TruncNormMixture& m, double x);
double floored_dlog_pdf(const TruncNormMixture& m, double x);

struct DiagGaussian {
    std::vector<double> mean;
    std::vector<double> log_var;

    DiagGaussian() = default;
    DiagGaussian(std::vector<double> mean, std::vector<double> log_var);
    std::size_t dim() const { return mean.size(); }
    static DiagGaussian standard(std::size_t dim);
};

/// KL(q || N(0, I)) in closed form.
double gaussian_kl_std(const DiagGaussian& q);
/// Differential entropy of q.
double gaussian_entropy(const DiagGaussian& q);
/// Monte-Carlo KL(q || Π_i p_m) with reparameterized draws; the mixture
/// applies independently to each coordinate.
double kl_vs_mixture_mc(const DiagGaussian& q, const TruncNormMixture& m, int n_samples, Rng& rng);

/// Standard-normal noise for kl_vs_mixture_mc with a fixed draw, shape (n_samples, dim).
std::vector<double> draw_kl_noise(std::size_t dim, int n_samples, Rng& rng);

namespace ad {

Var gaussian_kl_std(const Var& mean, const Var& log_var);
Var gaussian_entropy(const Var& log_var);
/// Estimator over pre-drawn noise (see draw_kl_noise); deterministic given noise.
Var kl_vs_mixture_mc(const Var& mean, const Var& log_var, const TruncNormMixture& m,
                     std::vector<double> noise);
/// mean + exp(log_var / 2) * noise, with noise held fixed.
Var reparameterize(const Var& mean, const Var& log_var, const Tensor& noise);

}  // namespace ad

}  // namespace silicon
