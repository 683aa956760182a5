#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "silicon/losses.hpp"
#include "support.hpp"

using namespace silicon;

namespace {

// Every fully contained 7x7 window, population moments, averaged over channels.
double brute_ssim(const Tensor& x, const Tensor& y, double c1 = 1e-4, double c2 = 9e-4, int win = 7) {
    double total = 0;
    long count = 0;
    const double n = win * win;
    for (int c = 0; c < x.dim(0); ++c)
        for (int r = 0; r + win <= x.dim(1); ++r)
            for (int s = 0; s + win <= x.dim(2); ++s) {
                double mx = 0, my = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        mx += x.at(c, r + i, s + j) / n;
                        my += y.at(c, r + i, s + j) / n;
                    }
                double vx = 0, vy = 0, cxy = 0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double a = x.at(c, r + i, s + j) - mx, b = y.at(c, r + i, s + j) - my;
                        vx += a * a / n;
                        vy += b * b / n;
                        cxy += a * b / n;
                    }
                total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                ++count;
            }
    return total / static_cast<double>(count);
}

Tensor pattern(int kind, int h, int w) {
    Tensor t = Tensor::chw(3, h, w);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                if (kind == 0) t.at(c, i, j) = 0.5 + 0.4 * std::sin(0.7 * i + 1.3 * j + c);
                if (kind == 1) t.at(c, i, j) = 0.5 + 0.35 * std::cos(0.05 * i * j + 0.3 * c);
                if (kind == 2)
                    t.at(c, i, j) = 0.5 + 0.45 * std::sin(0.31 * i * i - 0.17 * j + 0.5 * c) * std::cos(0.23 * j);
            }
    return t;
}

DiagGaussian gaussian(std::vector<double> mean, double log_var) {
    std::vector<double> lv(mean.size(), log_var);
    return DiagGaussian(std::move(mean), std::move(lv));
}

}  // namespace

TEST_CASE("least-squares adversarial losses on worked examples") {
    const DiscLabels l;  // a=1, b=0, c=1
    const std::vector<double> real{1.0, 0.5}, fake{0.0, 0.25};
    // ((0)^2 + 0.5^2)/2 + (0 + 0.25^2)/2
    CHECK(disc_loss(real, fake, l) == doctest::Approx(0.125 + 0.03125));
    CHECK(gen_loss(fake, l) == doctest::Approx((1.0 + 0.5625) / 2));

    const std::vector<double> perfect_real{1.0, 1.0}, perfect_fake{0.0, 0.0};
    CHECK(disc_loss(perfect_real, perfect_fake, l) == 0.0);
    const std::vector<double> fooled{1.0};
    CHECK(gen_loss(fooled, l) == 0.0);

    const DiscLabels shifted{-1.0, 1.0, 0.0};
    const std::vector<double> zeros{0.0};
    CHECK(disc_loss(zeros, zeros, shifted) == 2.0);
    CHECK(gen_loss(zeros, shifted) == 0.0);
}

TEST_CASE("adversarial losses grow as scores leave their targets") {
    const DiscLabels l;
    double prev = -1;
    for (double s = 1.0; s <= 3.0; s += 0.25) {
        const std::vector<double> real{s}, fake{0.0};
        const double v = disc_loss(real, fake, l);
        CHECK(v > prev);
        prev = v;
    }
    prev = -1;
    for (double s = 1.0; s >= -2.0; s -= 0.25) {
        const std::vector<double> fake{s};
        const double v = gen_loss(fake, l);
        CHECK(v > prev);
        prev = v;
    }
}

TEST_CASE("adversarial loss argument errors") {
    const std::vector<double> none, one{0.5};
    CHECK_THROWS_AS(disc_loss(none, one, DiscLabels{}), std::invalid_argument);
    CHECK_THROWS_AS(disc_loss(one, none, DiscLabels{}), std::invalid_argument);
    CHECK_THROWS_AS(gen_loss(none, DiscLabels{}), std::invalid_argument);
    CHECK_THROWS_AS((DiscLabels{0.5, 0.5, 1.0}.validate()), std::invalid_argument);
}

TEST_CASE("autodiff adversarial losses match the value versions") {
    Rng rng(3);
    std::vector<double> rv, fv;
    std::vector<ad::Var> r, f;
    for (int i = 0; i < 5; ++i) {
        rv.push_back(rng.uniform(-1, 2));
        fv.push_back(rng.uniform(-1, 2));
        r.push_back(ad::constant(Tensor({1}, rv.back())));
        f.push_back(ad::constant(Tensor({1}, fv.back())));
    }
    const DiscLabels l{0.8, -0.3, 0.6};
    CHECK(ad::scalar(ad::disc_loss(r, f, l)) == doctest::Approx(disc_loss(rv, fv, l)).epsilon(1e-14));
    CHECK(ad::scalar(ad::gen_loss(f, l)) == doctest::Approx(gen_loss(fv, l)).epsilon(1e-14));
}

TEST_CASE("reconstruction terms are mean absolute and mean squared error") {
    const Tensor x({2, 2}, std::vector<double>{0.0, 0.5, 1.0, 0.25});
    const Tensor y({2, 2}, std::vector<double>{0.5, 0.5, 0.0, 0.0});
    CHECK(reconstruction_nll(x, y) == doctest::Approx((0.5 + 0 + 1 + 0.25) / 4));
    CHECK(reconstruction_nll(x, y, ReconstructionKind::squared) == doctest::Approx((0.25 + 0 + 1 + 0.0625) / 4));
    CHECK(reconstruction_nll(x, x) == 0.0);
}

TEST_CASE("ssim agrees with a brute-force window average") {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
        const int h = 7 + static_cast<int>(rng.below(10)), w = 7 + static_cast<int>(rng.below(10));
        const Tensor x = testing::random_tensor({3, h, w}, rng, 0, 1);
        Tensor y = x;
        const double amp = rng.uniform(0, 0.6);
        for (double& v : y.values()) v = std::clamp(v + amp * rng.normal(), 0.0, 1.0);
        CHECK(ssim(x, y) == doctest::Approx(brute_ssim(x, y)).epsilon(1e-10));
    }
}

TEST_CASE("ssim matches scikit-image on fixed patterns") {
    // structural_similarity(..., win_size=7, data_range=1, channel_axis=0)
    CHECK(ssim(pattern(0, 16, 12), pattern(1, 16, 12)) == doctest::Approx(0.0220730170166268).epsilon(1e-10));
    CHECK(ssim(pattern(1, 9, 20), pattern(2, 9, 20)) == doctest::Approx(0.20569296458711903).epsilon(1e-10));
    CHECK(ssim(pattern(0, 7, 7), pattern(2, 7, 7)) == doctest::Approx(0.052368055415164504).epsilon(1e-10));
}

TEST_CASE("ssim identities") {
    Rng rng(12);
    const Tensor x = testing::random_tensor({3, 10, 9}, rng, 0, 1);
    const Tensor y = testing::random_tensor({3, 10, 9}, rng, 0, 1);
    CHECK(ssim(x, x) == 1.0);
    CHECK(ssim_loss(x, x) == 0.0);
    CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-14));
    CHECK(ssim(x, y) < 1.0);

    // constant black against constant white: only the stabilizers survive
    const Tensor black = Tensor::chw(3, 8, 8, 0.0), white = Tensor::chw(3, 8, 8, 1.0);
    const double c1 = 1e-4;
    CHECK(ssim(black, white) == doctest::Approx(c1 / (1 + c1)).epsilon(1e-12));
}

TEST_CASE("ssim rejects images smaller than the window") {
    const Tensor x = Tensor::chw(3, 6, 10, 0.5);
    CHECK_THROWS(ssim(x, x));
    const Tensor a = Tensor::chw(3, 8, 8), b = Tensor::chw(3, 8, 9);
    CHECK_THROWS(ssim(a, b));
}

TEST_CASE("total objective is the weighted sum") {
    CHECK(total_objective(2.0, 4.0, LossWeights{}) == 3.0);
    CHECK(total_objective(2.0, 4.0, LossWeights::from_adv(0.25)) == doctest::Approx(3.5));
    CHECK(total_objective(2.0, 4.0, LossWeights::from_adv(0.0)) == 4.0);
    CHECK_THROWS_AS(total_objective(1, 1, LossWeights{0.7, 0.7}), std::invalid_argument);
    CHECK_THROWS_AS(total_objective(1, 1, LossWeights{-0.5, 1.5}), std::invalid_argument);
}

TEST_CASE("reconstruction objective decomposes into its terms") {
    Rng rng(13);
    const Tensor x = testing::random_tensor({3, 8, 8}, rng, 0, 1);
    const Tensor xh = testing::random_tensor({3, 8, 8}, rng, 0, 1);
    const auto prior = TruncNormMixture::stain_default();
    const auto q_zc = gaussian({0.9, -1.1, 0.2}, -2.0);
    const auto q_y = gaussian({0.3, -0.4, 0.0, 1.0}, -0.5);

    for (auto reduction : {LatentReduction::sum, LatentReduction::mean}) {
        RecOptions opt;
        opt.reduction = reduction;
        Rng a(5);
        const LossReport r = rec_objective(x, xh, q_zc, q_y, prior, a, opt);
        CHECK(r.j_rec == doctest::Approx(r.l_r - r.entropy + r.r1 + r.r2 + r.l_ssim).epsilon(1e-14));
        CHECK(r.l_r == doctest::Approx(reconstruction_nll(x, xh)).epsilon(1e-14));
        CHECK(r.l_ssim == doctest::Approx(ssim_loss(x, xh)).epsilon(1e-14));

        const double scale_c = reduction == LatentReduction::mean ? 1.0 / 3 : 1.0;
        const double scale_y = reduction == LatentReduction::mean ? 1.0 / 4 : 1.0;
        CHECK(r.r2 == doctest::Approx(gaussian_kl_std(q_y) * scale_y).epsilon(1e-14));
        CHECK(r.entropy ==
              doctest::Approx(gaussian_entropy(q_zc) * scale_c + gaussian_entropy(q_y) * scale_y).epsilon(1e-14));
        // same noise stream, same Monte Carlo estimate
        Rng b(5);
        const double r1 = kl_vs_mixture_mc(q_zc, prior, opt.mc_samples, b);
        CHECK(r.r1 == doctest::Approx(r1 * scale_c).epsilon(1e-12));
    }
}

TEST_CASE("structure KL follows the half-mean-square law at unit variance") {
    Rng rng(14);
    const Tensor x = Tensor::chw(3, 8, 8, 0.5);
    const auto prior = TruncNormMixture::stain_default();
    const auto q_zc = gaussian({1.0, 1.0}, -3.0);
    for (double mu : {0.0, 0.5, 1.0, 2.0}) {
        const auto q_y = gaussian({mu, -mu, mu}, 0.0);
        const LossReport r = rec_objective(x, x, q_zc, q_y, prior, rng);
        CHECK(r.r2 == doctest::Approx(0.5 * 3 * mu * mu).epsilon(1e-14));
        CHECK(r.l_r == 0.0);
        CHECK(r.l_ssim == 0.0);
    }
    // entropy of a unit Gaussian per coordinate
    const auto q_y = gaussian({0.0}, 0.0);
    RecOptions opt;
    opt.reduction = LatentReduction::mean;
    const LossReport r = rec_objective(x, x, q_zc, q_y, prior, rng, opt);
    const double h_unit = 0.5 * std::log(2 * std::numbers::pi * std::numbers::e);
    CHECK(r.entropy == doctest::Approx(h_unit + gaussian_entropy(q_zc) / 2).epsilon(1e-14));
}

TEST_CASE("loss report rows") {
    LossReport r;
    r.j_disc = 0.1;
    r.j_total = 1.0 / 3.0;
    CHECK(LossReport::csv_header() == "step,j_disc,j_gen,l_r,r1,r2,entropy,l_ssim,j_rec,j_total");
    const std::string row = r.csv_row(7);
    CHECK(row.rfind("7,0.10000000000000001,0,", 0) == 0);
    CHECK(std::stod(row.substr(row.rfind(',') + 1)) == 1.0 / 3.0);
    CHECK(r.first_non_finite().empty());
    r.r2 = std::nan("");
    CHECK(r.first_non_finite() == "r2");
}
