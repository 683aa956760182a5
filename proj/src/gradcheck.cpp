#include "silicon/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "silicon/losses.hpp"
#include "silicon/nets.hpp"
#include "silicon/priors.hpp"

namespace silicon {

GradCheckResult check_gradient(const std::string& name, const std::function<ad::Var()>& f,
                               const std::vector<ad::Var>& wrt, Rng& rng, int max_coords, double h, double tol) {
    ad::zero_grad(wrt);
    const ad::Var out = f();
    if (out->value.size() != 1) throw std::invalid_argument("check_gradient: objective must be scalar");
    ad::backward(out);

    GradCheckResult res{name, 0.0, 0, true};
    for (const auto& v : wrt) {
        const std::size_t n = v->value.size();
        std::vector<std::size_t> coords(n);
        std::iota(coords.begin(), coords.end(), 0);
        if (n > static_cast<std::size_t>(max_coords)) {
            for (int i = 0; i < max_coords; ++i) std::swap(coords[i], coords[i + rng.below(n - i)]);
            coords.resize(max_coords);
        }
        double diff = 0.0, na = 0.0, nn = 0.0;
        for (std::size_t i : coords) {
            const double analytic = v->grad.empty() ? 0.0 : v->grad[i];
            const double saved = v->value[i];
            v->value[i] = saved + h;
            const double fp = ad::scalar(f());
            v->value[i] = saved - h;
            const double fm = ad::scalar(f());
            v->value[i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            diff += (analytic - numeric) * (analytic - numeric);
            na += analytic * analytic;
            nn += numeric * numeric;
        }
        res.coords += coords.size();
        // floor: difference quotients resolve nothing below ~1e-6 (e.g. conv
        // biases feeding an instance norm, whose exact gradient is zero)
        const double scale = std::max(std::sqrt(std::max(na, nn)), 1e-6);
        const double rel = std::sqrt(diff) / scale;
        res.rel_error = std::max(res.rel_error, rel);
    }
    res.passed = res.rel_error <= tol;
    return res;
}

namespace {

ad::Var random_param(std::vector<int> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return ad::parameter(std::move(t));
}

ad::Var normal_param(std::vector<int> shape, Rng& rng, double sd = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = sd * rng.normal();
    return ad::parameter(std::move(t));
}

// sum(out * r) for a fixed random r, so every output coordinate contributes.
ad::Var project(const ad::Var& out, const Tensor& r) { return ad::sum(ad::mul(out, ad::constant(r))); }

Tensor random_like(const ad::Var& v, Rng& rng) {
    Tensor r(v->value.shape());
    for (double& x : r.values()) x = rng.normal();
    return r;
}

std::vector<ad::Var> join(std::vector<ad::Var> a, const std::vector<ad::Var>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed, double tol) {
    Rng rng(seed);
    std::vector<GradCheckResult> out;
    auto run = [&](const std::string& name, const std::function<ad::Var()>& f, const std::vector<ad::Var>& wrt) {
        out.push_back(check_gradient(name, f, wrt, rng, 24, 1e-6, tol));
    };

    // ---- losses
    const DiscLabels labels{1.0, 0.0, 1.0};
    std::vector<ad::Var> real, fake;
    for (int i = 0; i < 3; ++i) {
        real.push_back(random_param({1}, rng, -1.0, 2.0));
        fake.push_back(random_param({1}, rng, -1.0, 2.0));
    }
    run("disc_loss", [&] { return ad::disc_loss(real, fake, labels); }, join(real, fake));
    run("gen_loss", [&] { return ad::gen_loss(fake, labels); }, fake);

    const auto x = random_param({3, 8, 8}, rng, 0.05, 0.95);
    const auto x_hat = random_param({3, 8, 8}, rng, 0.05, 0.95);
    run("reconstruction_nll (absolute)", [&] { return ad::reconstruction_nll(x, x_hat, ReconstructionKind::absolute); },
        {x, x_hat});
    run("reconstruction_nll (squared)", [&] { return ad::reconstruction_nll(x, x_hat, ReconstructionKind::squared); },
        {x, x_hat});
    run("ssim", [&] { return ad::ssim(x, x_hat); }, {x, x_hat});
    run("ssim_loss", [&] { return ad::ssim_loss(x, x_hat); }, {x, x_hat});

    const auto mu = normal_param({5}, rng, 0.5);
    const auto lv = random_param({5}, rng, -2.0, 0.0);
    run("gaussian_kl_std", [&] { return ad::gaussian_kl_std(mu, lv); }, {mu, lv});
    run("gaussian_entropy", [&] { return ad::gaussian_entropy(lv); }, {lv});
    const auto mixture = TruncNormMixture::stain_default();
    const auto noise = draw_kl_noise(5, 16, rng);
    run("kl_vs_mixture_mc", [&] { return ad::kl_vs_mixture_mc(mu, lv, mixture, noise); }, {mu, lv});
    Tensor eps({5});
    for (double& v : eps.values()) v = rng.normal();
    const Tensor r5 = random_like(mu, rng);
    run("reparameterize", [&] { return project(ad::reparameterize(mu, lv, eps), r5); }, {mu, lv});

    const auto yzw_mu = normal_param({20}, rng);
    const auto yzw_lv = random_param({20}, rng, -2.0, 0.0);
    for (auto reduction : {LatentReduction::sum, LatentReduction::mean}) {
        RecOptions opt;
        opt.reduction = reduction;
        opt.mc_samples = 4;
        const auto zc_noise = draw_kl_noise(5, opt.mc_samples, rng);
        run(std::string("rec_objective (") + (reduction == LatentReduction::sum ? "sum" : "mean") + ")",
            [&] { return ad::rec_objective(x, x_hat, mu, lv, yzw_mu, yzw_lv, mixture, zc_noise, opt).j_rec; },
            {x, x_hat, mu, lv, yzw_mu, yzw_lv});
    }

    // ---- networks
    const NetConfig cfg{4, 3, 2, 0.2, false};
    Rng init = rng.derive(7);
    const Model model(cfg, init);
    const auto img = random_param({3, 8, 8}, rng, 0.05, 0.95);
    const auto h = random_param({1, 8, 8}, rng, 0.0, 1.0);

    {
        const auto probe = model.color.forward(img);
        const Tensor rm = random_like(probe.mean, rng), rl = random_like(probe.log_var, rng);
        const auto wrt = join({img}, model.color.params().vars());
        run("E_c mean", [&] { return project(model.color.forward(img).mean, rm); }, wrt);
        run("E_c log_var", [&] { return project(model.color.forward(img).log_var, rl); }, wrt);
    }
    {
        const auto probe = model.seg.forward(h);
        const Tensor rl = random_like(probe.logit, rng), rv = random_like(probe.log_var, rng),
                     rp = random_like(probe.probs, rng);
        const auto wrt = join({h}, model.seg.params().vars());
        run("F_phi logit", [&] { return project(model.seg.forward(h).logit, rl); }, wrt);
        run("F_phi log_var", [&] { return project(model.seg.forward(h).log_var, rv); }, wrt);
        run("F_phi probs", [&] { return project(model.seg.forward(h).probs, rp); }, wrt);
    }
    {
        const auto probe = model.embed.forward(img);
        const Tensor rm = random_like(probe.mean, rng), rl = random_like(probe.log_var, rng);
        const auto wrt = join({img}, model.embed.params().vars());
        run("E_omega mean", [&] { return project(model.embed.forward(img).mean, rm); }, wrt);
        run("E_omega log_var", [&] { return project(model.embed.forward(img).log_var, rl); }, wrt);
    }
    const auto zc = normal_param({3}, rng);
    const auto y = random_param({1, 8, 8}, rng, 0.05, 0.95);
    const auto zw = normal_param({2, 2, 2}, rng);
    {
        const Tensor r = random_like(model.decoder.forward(zc, y, zw), rng);
        run("G output", [&] { return project(model.decoder.forward(zc, y, zw), r); },
            join({zc, y, zw}, model.decoder.params().vars()));
    }
    run("D score", [&] { return model.disc.forward(img, zc, y, zw); },
        join({img, zc, y, zw}, model.disc.params().vars()));
    return out;
}

}  // namespace silicon
