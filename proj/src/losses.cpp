#include "silicon/losses.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace silicon {

void DiscLabels::validate() const {
    if (a == b) throw std::invalid_argument("discriminator labels A and B must differ");
}

void LossWeights::validate() const {
    if (!(adv >= 0.0 && adv <= 1.0 && rec >= 0.0 && rec <= 1.0))
        throw std::invalid_argument("loss weights must lie in [0,1]");
    if (std::abs(adv + rec - 1.0) > 1e-12) throw std::invalid_argument("loss weights must sum to 1");
}

std::string LossReport::csv_header() {
    return "step,j_disc,j_gen,l_r,r1,r2,entropy,l_ssim,j_rec,j_total";
}

std::string LossReport::csv_row(long step) const {
    std::ostringstream os;
    os << std::setprecision(17) << step << ',' << j_disc << ',' << j_gen << ',' << l_r << ',' << r1 << ',' << r2
       << ',' << entropy << ',' << l_ssim << ',' << j_rec << ',' << j_total;
    return os.str();
}

std::string LossReport::first_non_finite() const {
    const std::pair<const char*, double> fields[] = {{"j_disc", j_disc}, {"j_gen", j_gen},   {"l_r", l_r},
                                                     {"r1", r1},         {"r2", r2},         {"entropy", entropy},
                                                     {"l_ssim", l_ssim}, {"j_rec", j_rec},   {"j_total", j_total}};
    for (auto [name, v] : fields)
        if (!std::isfinite(v)) return name;
    return {};
}

double disc_loss(std::span<const double> real_scores, std::span<const double> fake_scores, const DiscLabels& labels) {
    if (real_scores.empty() || fake_scores.empty()) throw std::invalid_argument("disc_loss: empty score list");
    double r = 0.0, f = 0.0;
    for (double s : real_scores) r += (s - labels.a) * (s - labels.a);
    for (double s : fake_scores) f += (s - labels.b) * (s - labels.b);
    return r / static_cast<double>(real_scores.size()) + f / static_cast<double>(fake_scores.size());
}

double gen_loss(std::span<const double> fake_scores, const DiscLabels& labels) {
    if (fake_scores.empty()) throw std::invalid_argument("gen_loss: empty score list");
    double f = 0.0;
    for (double s : fake_scores) f += (s - labels.c) * (s - labels.c);
    return f / static_cast<double>(fake_scores.size());
}

double reconstruction_nll(const Tensor& x, const Tensor& x_hat, ReconstructionKind kind) {
    return ad::scalar(ad::reconstruction_nll(ad::constant(x), ad::constant(x_hat), kind));
}

namespace {

// Sliding-window SSIM with optional gradients, using summed-area tables.
struct SsimResult {
    double value = 0.0;
    Tensor dx, dy;
};

std::vector<double> integral(const double* src, int h, int w) {
    std::vector<double> s(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
    for (int y = 0; y < h; ++y) {
        double row = 0.0;
        for (int x = 0; x < w; ++x) {
            row += src[y * w + x];
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    return s;
}

double box(const std::vector<double>& s, int w, int y0, int x0, int k) {
    const int stride = w + 1;
    return s[(y0 + k) * stride + x0 + k] - s[y0 * stride + x0 + k] - s[(y0 + k) * stride + x0] + s[y0 * stride + x0];
}

SsimResult ssim_core(const Tensor& a, const Tensor& b, const SsimParams& p, bool grads) {
    if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    if (a.rank() != 3) throw std::invalid_argument("ssim: expects (C,H,W)");
    if (p.window < 1 || p.window % 2 == 0) throw std::invalid_argument("ssim: window must be odd");
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2), k = p.window;
    if (k > h || k > w) throw std::invalid_argument("ssim: window larger than image");
    const int oh = h - k + 1, ow = w - k + 1;
    const double n = static_cast<double>(k * k);
    const double total = static_cast<double>(c) * oh * ow;
    const std::size_t plane = static_cast<std::size_t>(h) * w;

    SsimResult res;
    if (grads) {
        res.dx = Tensor(a.shape());
        res.dy = Tensor(a.shape());
    }
    std::vector<double> xx(plane), yy(plane), xy(plane);
    for (int ch = 0; ch < c; ++ch) {
        const double* xa = a.data() + ch * plane;
        const double* yb = b.data() + ch * plane;
        for (std::size_t i = 0; i < plane; ++i) {
            xx[i] = xa[i] * xa[i];
            yy[i] = yb[i] * yb[i];
            xy[i] = xa[i] * yb[i];
        }
        const auto sx = integral(xa, h, w), sy = integral(yb, h, w);
        const auto sxx = integral(xx.data(), h, w), syy = integral(yy.data(), h, w), sxy = integral(xy.data(), h, w);

        // per-window coefficients of the pixel gradient: A + B*x + C*y (and mirrored)
        std::vector<double> ax, bx, cx, ay, by, cy;
        if (grads) {
            for (auto* v : {&ax, &bx, &cx, &ay, &by, &cy}) v->assign(static_cast<std::size_t>(oh) * ow, 0.0);
        }
        for (int y0 = 0; y0 < oh; ++y0)
            for (int x0 = 0; x0 < ow; ++x0) {
                const double mx = box(sx, w, y0, x0, k) / n;
                const double my = box(sy, w, y0, x0, k) / n;
                const double vx = box(sxx, w, y0, x0, k) / n - mx * mx;
                const double vy = box(syy, w, y0, x0, k) / n - my * my;
                const double cxy = box(sxy, w, y0, x0, k) / n - mx * my;
                const double l = 2.0 * mx * my + p.c1;
                const double cs = 2.0 * cxy + p.c2;
                const double m = mx * mx + my * my + p.c1;
                const double v = vx + vy + p.c2;
                const double s = (l * cs) / (m * v);
                res.value += s;
                if (!grads) continue;
                const double d_mx = 2.0 * my * cs / (m * v) - s * 2.0 * mx / m;
                const double d_my = 2.0 * mx * cs / (m * v) - s * 2.0 * my / m;
                const double d_v = -s / v;  // same for vx and vy
                const double d_cxy = 2.0 * l / (m * v);
                const std::size_t o = static_cast<std::size_t>(y0) * ow + x0;
                ax[o] = (d_mx - 2.0 * d_v * mx - d_cxy * my) / n;
                bx[o] = 2.0 * d_v / n;
                cx[o] = d_cxy / n;
                ay[o] = (d_my - 2.0 * d_v * my - d_cxy * mx) / n;
                by[o] = 2.0 * d_v / n;
                cy[o] = d_cxy / n;
            }
        if (!grads) continue;
        const auto iax = integral(ax.data(), oh, ow), ibx = integral(bx.data(), oh, ow), icx = integral(cx.data(), oh, ow);
        const auto iay = integral(ay.data(), oh, ow), iby = integral(by.data(), oh, ow), icy = integral(cy.data(), oh, ow);
        auto window_sum = [&](const std::vector<double>& s, int py, int px) {
            const int y0 = std::max(0, py - k + 1), y1 = std::min(oh - 1, py);
            const int x0 = std::max(0, px - k + 1), x1 = std::min(ow - 1, px);
            if (y0 > y1 || x0 > x1) return 0.0;
            const int stride = ow + 1;
            return s[(y1 + 1) * stride + x1 + 1] - s[y0 * stride + x1 + 1] - s[(y1 + 1) * stride + x0] + s[y0 * stride + x0];
        };
        for (int py = 0; py < h; ++py)
            for (int px = 0; px < w; ++px) {
                const std::size_t i = static_cast<std::size_t>(py) * w + px;
                const double xv = xa[i], yv = yb[i];
                res.dx[ch * plane + i] =
                    (window_sum(iax, py, px) + xv * window_sum(ibx, py, px) + yv * window_sum(icx, py, px)) / total;
                res.dy[ch * plane + i] =
                    (window_sum(iay, py, px) + yv * window_sum(iby, py, px) + xv * window_sum(icy, py, px)) / total;
            }
    }
    res.value /= total;
    return res;
}

}  // namespace

double ssim(const Tensor& x, const Tensor& y, const SsimParams& p) { return ssim_core(x, y, p, false).value; }

double ssim_loss(const Tensor& x, const Tensor& x_hat, const SsimParams& p) { return 1.0 - ssim(x, x_hat, p); }

double total_objective(double j_adv, double j_rec, const LossWeights& w) {
    w.validate();
    return w.adv * j_adv + w.rec * j_rec;
}

LossReport rec_objective(const Tensor& x, const Tensor& x_hat, const DiagGaussian& q_zc, const DiagGaussian& q_yzw,
                         const TruncNormMixture& prior_zc, Rng& rng, const RecOptions& opt) {
    auto vec = [](const std::vector<double>& v) { return ad::constant(Tensor({static_cast<int>(v.size())}, v)); };
    auto noise = draw_kl_noise(q_zc.dim(), opt.mc_samples, rng);
    auto t = ad::rec_objective(ad::constant(x), ad::constant(x_hat), vec(q_zc.mean), vec(q_zc.log_var), vec(q_yzw.mean),
                               vec(q_yzw.log_var), prior_zc, std::move(noise), opt);
    LossReport r;
    r.l_r = ad::scalar(t.l_r);
    r.r1 = ad::scalar(t.r1);
    r.r2 = ad::scalar(t.r2);
    r.entropy = ad::scalar(t.entropy);
    r.l_ssim = ad::scalar(t.l_ssim);
    r.j_rec = ad::scalar(t.j_rec);
    return r;
}

namespace ad {

namespace {

Var squared_error_mean(std::span<const Var> scores, double target) {
    if (scores.empty()) throw std::invalid_argument("least-squares loss: empty score list");
    std::vector<Var> terms;
    terms.reserve(scores.size());
    for (const auto& s : scores) terms.push_back(square(add_scalar(s, -target)));
    return scale(add_all(terms), 1.0 / static_cast<double>(scores.size()));
}

}  // namespace

Var disc_loss(std::span<const Var> real_scores, std::span<const Var> fake_scores, const DiscLabels& labels) {
    return add(squared_error_mean(real_scores, labels.a), squared_error_mean(fake_scores, labels.b));
}

Var gen_loss(std::span<const Var> fake_scores, const DiscLabels& labels) {
    return squared_error_mean(fake_scores, labels.c);
}

Var reconstruction_nll(const Var& x, const Var& x_hat, ReconstructionKind kind) {
    return kind == ReconstructionKind::absolute ? mean_abs_diff(x, x_hat) : mean_sq_diff(x, x_hat);
}

Var ssim(const Var& x, const Var& y, const SsimParams& p) {
    const bool grads = x->requires_grad || y->requires_grad;
    auto res = std::make_shared<SsimResult>(ssim_core(x->value, y->value, p, grads));
    return make_node(Tensor({1}, res->value), {x, y}, [res](Node& n) {
        const double d = n.grad[0];
        if (n.parents[0]->requires_grad) {
            auto& g = n.parents[0]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * res->dx[i];
        }
        if (n.parents[1]->requires_grad) {
            auto& g = n.parents[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * res->dy[i];
        }
    });
}

Var ssim_loss(const Var& x, const Var& x_hat, const SsimParams& p) {
    return add_scalar(scale(ssim(x, x_hat, p), -1.0), 1.0);
}

RecTerms rec_objective(const Var& x, const Var& x_hat, const Var& zc_mean, const Var& zc_log_var, const Var& yzw_mean,
                       const Var& yzw_log_var, const TruncNormMixture& prior_zc, std::vector<double> zc_noise,
                       const RecOptions& opt) {
    const bool per_coord = opt.reduction == LatentReduction::mean;
    const double zc_n = static_cast<double>(zc_mean->value.size());
    const double yzw_n = static_cast<double>(yzw_mean->value.size());
    RecTerms t;
    t.l_r = reconstruction_nll(x, x_hat, opt.kind);
    t.r1 = kl_vs_mixture_mc(zc_mean, zc_log_var, prior_zc, std::move(zc_noise));
    t.r2 = gaussian_kl_std(yzw_mean, yzw_log_var);
    Var h_zc = gaussian_entropy(zc_log_var);
    Var h_yzw = gaussian_entropy(yzw_log_var);
    if (per_coord) {
        t.r1 = scale(t.r1, 1.0 / zc_n);
        t.r2 = scale(t.r2, 1.0 / yzw_n);
        h_zc = scale(h_zc, 1.0 / zc_n);
        h_yzw = scale(h_yzw, 1.0 / yzw_n);
    }
    t.entropy = add(h_zc, h_yzw);
    t.l_ssim = ssim_loss(x, x_hat, opt.ssim);
    const Var parts[] = {t.l_r, scale(t.entropy, -1.0), t.r1, t.r2, t.l_ssim};
    t.j_rec = add_all(parts);
    return t;
}

}  // namespace ad

}  // namespace silicon
