#include "silicon/priors.hpp"

#include <algorithm>
#include <boost/math/special_functions/erf.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace silicon {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
const double kNegInf = -std::numeric_limits<double>::infinity();

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

double std_normal_cdf(double x) { return 0.5 * boost::math::erfc(-x / std::numbers::sqrt2); }
double std_normal_sf(double x) { return 0.5 * boost::math::erfc(x / std::numbers::sqrt2); }
double std_normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p <= 0.0) return kNegInf;
        return std::numeric_limits<double>::infinity();
    }
    return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p);
}
double std_normal_log_pdf(double x) { return -0.5 * (kLog2Pi + x * x); }

TruncatedNormal::TruncatedNormal(double mu, double sigma, double lo, double hi)
    : mu_(mu), sigma_(sigma), lo_(lo), hi_(hi) {
    if (!(sigma > 0.0)) throw std::invalid_argument("truncated normal: sigma must be positive");
    if (!(lo < hi)) throw std::invalid_argument("truncated normal: lo must be below hi");
    alpha_ = (lo - mu) / sigma;
    beta_ = (hi - mu) / sigma;
    mass_ = alpha_ > 0.0 ? std_normal_sf(alpha_) - std_normal_sf(beta_)
                         : std_normal_cdf(beta_) - std_normal_cdf(alpha_);
    if (!(mass_ > 1e-12)) throw std::invalid_argument("truncated normal: support carries no mass");
    log_mass_ = std::log(mass_);
}

double TruncatedNormal::log_pdf(double x) const {
    if (!contains(x)) return kNegInf;
    return std_normal_log_pdf((x - mu_) / sigma_) - std::log(sigma_) - log_mass_;
}

double TruncatedNormal::cdf(double x) const {
    if (x <= lo_) return 0.0;
    if (x >= hi_) return 1.0;
    const double z = (x - mu_) / sigma_;
    if (alpha_ > 0.0) return (std_normal_sf(alpha_) - std_normal_sf(z)) / mass_;
    return (std_normal_cdf(z) - std_normal_cdf(alpha_)) / mass_;
}

double TruncatedNormal::sample(Rng& rng) const {
    const double u = rng.uniform();
    double z;
    if (alpha_ > 0.0) {
        // Mirror into the lower tail where Φ keeps full precision.
        z = -std_normal_quantile(std_normal_sf(beta_) + u * mass_);
    } else {
        z = std_normal_quantile(std_normal_cdf(alpha_) + u * mass_);
    }
    return std::clamp(mu_ + sigma_ * z, lo_, hi_);
}

TruncNormMixture::TruncNormMixture(std::vector<TruncatedNormal> components, std::vector<double> weights)
    : components_(std::move(components)), weights_(std::move(weights)) {
    if (components_.empty()) throw std::invalid_argument("mixture needs at least one component");
    if (components_.size() != weights_.size()) throw std::invalid_argument("mixture weight count mismatch");
    double total = 0.0;
    for (double w : weights_) {
        if (!(w >= 0.0)) throw std::invalid_argument("mixture weights must be non-negative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("mixture weights must sum to 1");
}

TruncNormMixture TruncNormMixture::stain_default() {
    return TruncNormMixture({TruncatedNormal(-1.0, 0.5, -3.0, 3.0), TruncatedNormal(1.0, 0.5, -3.0, 3.0)},
                            {0.5, 0.5});
}

bool TruncNormMixture::in_support(double x) const {
    for (std::size_t k = 0; k < components_.size(); ++k)
        if (weights_[k] > 0.0 && components_[k].contains(x)) return true;
    return false;
}

double TruncNormMixture::log_pdf(double x) const {
    double best = kNegInf;
    std::vector<double> terms(components_.size(), kNegInf);
    for (std::size_t k = 0; k < components_.size(); ++k) {
        if (weights_[k] <= 0.0) continue;
        terms[k] = std::log(weights_[k]) + components_[k].log_pdf(x);
        best = std::max(best, terms[k]);
    }
    if (best == kNegInf) return kNegInf;
    double s = 0.0;
    for (double t : terms) s += std::exp(t - best);
    return best + std::log(s);
}

double TruncNormMixture::dlog_pdf(double x) const {
    const double total = log_pdf(x);
    if (total == kNegInf) return 0.0;
    double d = 0.0;
    for (std::size_t k = 0; k < components_.size(); ++k) {
        if (weights_[k] <= 0.0 || !components_[k].contains(x)) continue;
        const double resp = std::exp(std::log(weights_[k]) + components_[k].log_pdf(x) - total);
        d += resp * components_[k].dlog_pdf(x);
    }
    return d;
}

double TruncNormMixture::sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t pick = components_.size() - 1;
    for (std::size_t k = 0; k < components_.size(); ++k) {
        acc += weights_[k];
        if (u < acc) {
            pick = k;
            break;
        }
    }
    return components_[pick].sample(rng);
}

double TruncNormMixture::distance_to_support(double x) const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < components_.size(); ++k) {
        if (weights_[k] <= 0.0) continue;
        const auto& c = components_[k];
        const double d = x < c.lo() ? c.lo() - x : (x > c.hi() ? x - c.hi() : 0.0);
        best = std::min(best, d);
    }
    return best;
}

double floored_log_pdf(const TruncNormMixture& m, double x) {
    if (m.in_support(x)) return std::max(m.log_pdf(x), std::log(kMixtureDensityFloor));
    return std::log(kMixtureDensityFloor) - softplus(m.distance_to_support(x));
}

double floored_dlog_pdf(const TruncNormMixture& m, double x) {
    if (m.in_support(x)) {
        if (m.log_pdf(x) < std::log(kMixtureDensityFloor)) return 0.0;
        return m.dlog_pdf(x);
    }
    // distance grows away from the support; move back toward it
    double nearest = 0.0, best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m.size(); ++k) {
        if (m.weights()[k] <= 0.0) continue;
        const auto& c = m.components()[k];
        const double edge = x < c.lo() ? c.lo() : c.hi();
        if (std::abs(x - edge) < best) {
            best = std::abs(x - edge);
            nearest = edge;
        }
    }
    const double ddist_dx = x < nearest ? -1.0 : 1.0;
    return -logistic(best) * ddist_dx;
}

DiagGaussian::DiagGaussian(std::vector<double> mean_, std::vector<double> log_var_)
    : mean(std::move(mean_)), log_var(std::move(log_var_)) {
    if (mean.empty() || mean.size() != log_var.size())
        throw std::invalid_argument("diagonal Gaussian needs equal, non-empty mean and log-variance");
    for (double v : log_var)
        if (!std::isfinite(v)) throw std::invalid_argument("diagonal Gaussian log-variance must be finite");
}

DiagGaussian DiagGaussian::standard(std::size_t dim) {
    return DiagGaussian(std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0));
}

double gaussian_kl_std(const DiagGaussian& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.dim(); ++i)
        s += q.mean[i] * q.mean[i] + std::exp(q.log_var[i]) - 1.0 - q.log_var[i];
    return 0.5 * s;
}

double gaussian_entropy(const DiagGaussian& q) {
    double s = 0.0;
    for (double lv : q.log_var) s += 1.0 + kLog2Pi + lv;
    return 0.5 * s;
}

std::vector<double> draw_kl_noise(std::size_t dim, int n_samples, Rng& rng) {
    if (n_samples < 1) throw std::invalid_argument("Monte-Carlo KL needs at least one sample");
    std::vector<double> eps(dim * static_cast<std::size_t>(n_samples));
    for (double& e : eps) e = rng.normal();
    return eps;
}

double kl_vs_mixture_mc(const DiagGaussian& q, const TruncNormMixture& m, int n_samples, Rng& rng) {
    auto mean = ad::constant(Tensor({static_cast<int>(q.dim())}, q.mean));
    auto lv = ad::constant(Tensor({static_cast<int>(q.dim())}, q.log_var));
    return ad::scalar(ad::kl_vs_mixture_mc(mean, lv, m, draw_kl_noise(q.dim(), n_samples, rng)));
}

namespace ad {

Var gaussian_kl_std(const Var& mean, const Var& log_var) {
    if (mean->value.size() != log_var->value.size()) throw std::invalid_argument("gaussian_kl_std: size mismatch");
    DiagGaussian q(mean->value.storage(), log_var->value.storage());
    return make_node(Tensor({1}, silicon::gaussian_kl_std(q)), {mean, log_var}, [](Node& n) {
        auto& m = *n.parents[0];
        auto& lv = *n.parents[1];
        const double d = n.grad[0];
        if (m.requires_grad) {
            auto& g = m.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * m.value[i];
        }
        if (lv.requires_grad) {
            auto& g = lv.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * 0.5 * (std::exp(lv.value[i]) - 1.0);
        }
    });
}

Var gaussian_entropy(const Var& log_var) {
    double s = 0.0;
    for (double lv : log_var->value.values()) s += 1.0 + kLog2Pi + lv;
    return make_node(Tensor({1}, 0.5 * s), {log_var}, [](Node& n) {
        auto& g = n.parents[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 0.5 * n.grad[0];
    });
}

Var kl_vs_mixture_mc(const Var& mean, const Var& log_var, const TruncNormMixture& m, std::vector<double> noise) {
    const std::size_t dim = mean->value.size();
    if (dim == 0 || log_var->value.size() != dim || noise.size() % dim != 0 || noise.empty())
        throw std::invalid_argument("kl_vs_mixture_mc: inconsistent sizes");
    const std::size_t samples = noise.size() / dim;
    const double inv_s = 1.0 / static_cast<double>(samples);

    // Per coordinate: mean over draws of log q(z) - log p(z), and the path
    // derivatives of -log p(z) with respect to z and to the noise scale.
    std::vector<double> dmean(dim, 0.0), dlv(dim, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        const double mu = mean->value[i];
        const double lv = log_var->value[i];
        const double sd = std::exp(0.5 * lv);
        double acc = 0.0, gz = 0.0, gzs = 0.0;
        for (std::size_t s = 0; s < samples; ++s) {
            const double e = noise[s * dim + i];
            const double z = mu + sd * e;
            const double log_q = -0.5 * (kLog2Pi + lv + e * e);
            acc += log_q - floored_log_pdf(m, z);
            const double dlp = floored_dlog_pdf(m, z);
            gz += dlp;
            gzs += dlp * e;
        }
        total += acc * inv_s;
        dmean[i] = -gz * inv_s;
        dlv[i] = -0.5 - 0.5 * sd * gzs * inv_s;
    }
    return make_node(Tensor({1}, total), {mean, log_var}, [dmean = std::move(dmean), dlv = std::move(dlv)](Node& n) {
        const double d = n.grad[0];
        if (n.parents[0]->requires_grad) {
            auto& g = n.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * dmean[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& g = n.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * dlv[i];
        }
    });
}

Var reparameterize(const Var& mean, const Var& log_var, const Tensor& noise) {
    if (!mean->value.same_shape(log_var->value) || noise.size() != mean->value.size())
        throw std::invalid_argument("reparameterize: shape mismatch");
    auto eps = constant(noise.reshaped(mean->value.shape()));
    return add(mean, mul(exp(scale(log_var, 0.5)), eps));
}

}  // namespace ad

}  // namespace silicon
