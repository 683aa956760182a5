#pragma once

#include <span>
#include <string>
#include <vector>

#include "silicon/autograd.hpp"
#include "silicon/priors.hpp"
#include "silicon/rng.hpp"

namespace silicon {

/// Least-squares targets: A for real encodings, B for fake encodings, C the
/// label the decoder wants D to assign to fakes.
struct DiscLabels {
    double a = 1.0;
    double b = 0.0;
    double c = 1.0;
    void validate() const;
};

struct LossWeights {
    double adv = 0.5;
    double rec = 0.5;
    void validate() const;
    static LossWeights from_adv(double lambda_adv) { return {lambda_adv, 1.0 - lambda_adv}; }
};

struct LossReport {
    double j_disc = 0, j_gen = 0, l_r = 0, r1 = 0, r2 = 0, entropy = 0, l_ssim = 0, j_rec = 0, j_total = 0;

    static std::string csv_header();  // "step,j_disc,...,j_total"
    std::string csv_row(long step) const;
    /// Name of the first non-finite field, empty when all are finite.
    std::string first_non_finite() const;
    bool operator==(const LossReport&) const = default;
};

double disc_loss(std::span<const double> real_scores, std::span<const double> fake_scores, const DiscLabels& labels);
double gen_loss(std::span<const double> fake_scores, const DiscLabels& labels);

enum class ReconstructionKind { absolute, squared };
double reconstruction_nll(const Tensor& x, const Tensor& x_hat, ReconstructionKind kind = ReconstructionKind::absolute);

struct SsimParams {
    int window = 7;
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

/// Mean SSIM over channels and all fully contained uniform windows.
/// x, y: (C,H,W).
double ssim(const Tensor& x, const Tensor& y, const SsimParams& p = {});
double ssim_loss(const Tensor& x, const Tensor& x_hat, const SsimParams& p = {});

double total_objective(double j_adv, double j_rec, const LossWeights& w);

/// How KL and entropy sums over latent coordinates are reduced. `sum` is
/// the literal objective; `mean` divides each by its coordinate count so it
/// matches the per-element reconstruction error.
enum class LatentReduction { sum, mean };

struct RecOptions {
    ReconstructionKind kind = ReconstructionKind::absolute;
    LatentReduction reduction = LatentReduction::sum;
    int mc_samples = 8;
    SsimParams ssim;
};

/// Value-level reconstruction objective. q_yzw is the posterior over the
/// concatenated (y, z_omega) coordinates.
LossReport rec_objective(const Tensor& x, const Tensor& x_hat, const DiagGaussian& q_zc, const DiagGaussian& q_yzw,
                         const TruncNormMixture& prior_zc, Rng& rng, const RecOptions& opt = {});

namespace ad {

Var disc_loss(std::span<const Var> real_scores, std::span<const Var> fake_scores, const DiscLabels& labels);
Var gen_loss(std::span<const Var> fake_scores, const DiscLabels& labels);
Var reconstruction_nll(const Var& x, const Var& x_hat, ReconstructionKind kind = ReconstructionKind::absolute);
Var ssim(const Var& x, const Var& y, const SsimParams& p = {});
Var ssim_loss(const Var& x, const Var& x_hat, const SsimParams& p = {});

struct RecTerms {
    Var l_r, r1, r2, entropy, l_ssim, j_rec;
};

/// Differentiable objective. zc_noise comes from draw_kl_noise.
RecTerms rec_objective(const Var& x, const Var& x_hat, const Var& zc_mean, const Var& zc_log_var,
                       const Var& yzw_mean, const Var& yzw_log_var, const TruncNormMixture& prior_zc,
                       std::vector<double> zc_noise, const RecOptions& opt = {});

}  // namespace ad

}  // namespace silicon
