#include "silicon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "silicon/priors.hpp"

namespace silicon {

SegScores dice_jaccard_prec_rec(const BinaryMask& pred, const BinaryMask& truth) {
    if (pred.height != truth.height || pred.width != truth.width)
        throw std::invalid_argument("mask shapes differ");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        const bool p = pred.bits[i] != 0, t = truth.bits[i] != 0;
        tp += p && t;
        fp += p && !t;
        fn += !p && t;
    }
    if (tp + fp + fn == 0) return {1, 1, 1, 1};
    SegScores s;
    s.dice = 2 * tp / (2 * tp + fp + fn);
    s.jaccard = tp / (tp + fp + fn);
    s.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    s.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return s;
}

double percentile(std::vector<double> v, double q) {
    if (v.empty()) throw std::invalid_argument("percentile of an empty set");
    if (q < 0 || q > 100) throw std::invalid_argument("percentile rank must be in [0,100]");
    std::sort(v.begin(), v.end());
    const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double nmi(const RgbImage& image, const BinaryMask& mask) {
    if (mask.height != image.height() || mask.width != image.width())
        throw std::invalid_argument("nmi: mask and image shapes differ");
    std::vector<double> u;
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            if (mask.at(y, x)) u.push_back((image.at(0, y, x) + image.at(1, y, x) + image.at(2, y, x)) / 3.0);
    if (u.empty()) throw std::invalid_argument("nmi: nuclei mask is empty");
    const double p95 = percentile(u, 95.0);
    if (!(p95 > 0.0)) throw std::invalid_argument("nmi: nuclei pixels are black");
    return percentile(std::move(u), 50.0) / p95;
}

double bicc(double nmi_i, double nmi_j) {
    if (!(nmi_i > 0.0) || !(nmi_j > 0.0)) throw std::invalid_argument("bicc: NMI values must be positive");
    return std::min(nmi_i, nmi_j) / std::max(nmi_i, nmi_j);
}

double wscc(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("wscc: empty NMI set");
    const double n = static_cast<double>(v.size());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
    if (!(mean > 0.0)) throw std::invalid_argument("wscc: NMI values must be positive");
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return std::max(0.0, 1.0 - sd / mean);
}

Vec3 geometric_median(const std::vector<Vec3>& pts) {
    if (pts.empty()) throw std::invalid_argument("geometric median of an empty set");
    Vec3 m{0, 0, 0};
    for (const auto& p : pts)
        for (int i = 0; i < 3; ++i) m[i] += p[i] / static_cast<double>(pts.size());
    for (int it = 0; it < 100; ++it) {
        Vec3 num{0, 0, 0};
        double den = 0.0;
        for (const auto& p : pts) {
            const double d = std::sqrt((p[0] - m[0]) * (p[0] - m[0]) + (p[1] - m[1]) * (p[1] - m[1]) +
                                       (p[2] - m[2]) * (p[2] - m[2]));
            if (d < 1e-12) continue;  // coincident point: left out of this step
            for (int i = 0; i < 3; ++i) num[i] += p[i] / d;
            den += 1.0 / d;
        }
        if (den == 0.0) break;  // every point coincides with m
        Vec3 next{num[0] / den, num[1] / den, num[2] / den};
        const double move = std::sqrt((next[0] - m[0]) * (next[0] - m[0]) + (next[1] - m[1]) * (next[1] - m[1]) +
                                      (next[2] - m[2]) * (next[2] - m[2]));
        m = next;
        if (move < 1e-9) break;
    }
    return m;
}

namespace {

Vec3 unit(Vec3 v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (!(n > 0.0)) throw std::invalid_argument("zero stain vector");
    return {v[0] / n, v[1] / n, v[2] / n};
}

}  // namespace

StainVectors estimate_stain_vectors(const RgbImage& image, const StainMatrix& basis) {
    const auto& inv = basis.inverse();
    std::vector<Vec3> h_px, e_px;
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x) {
            const Vec3 od{optical_density(image.at(0, y, x)), optical_density(image.at(1, y, x)),
                          optical_density(image.at(2, y, x))};
            if (std::sqrt(od[0] * od[0] + od[1] * od[1] + od[2] * od[2]) <= 0.05) continue;
            double ch = 0.0, ce = 0.0;
            for (int k = 0; k < 3; ++k) {
                ch += od[k] * inv[k][0];
                ce += od[k] * inv[k][1];
            }
            (ch > ce ? h_px : e_px).push_back(od);
        }
    if (h_px.empty() && e_px.empty()) throw NoTissueError("no tissue pixels (OD <= 0.05 everywhere)");
    if (h_px.empty()) throw NoTissueError("no hematoxylin-dominant pixels");
    if (e_px.empty()) throw NoTissueError("no eosin-dominant pixels");
    return {unit(geometric_median(h_px)), unit(geometric_median(e_px))};
}

double StainSd::mean() const {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += h[i] + e[i];
    return s / 6.0;
}

StainSd stain_vector_sd(const std::vector<StainVectors>& group) {
    if (group.size() < 2) throw std::invalid_argument("stain_vector_sd needs at least two images per group");
    const double n = static_cast<double>(group.size());
    StainSd out{};
    for (int i = 0; i < 3; ++i) {
        double mh = 0, me = 0;
        for (const auto& g : group) {
            mh += g.h[i] / n;
            me += g.e[i] / n;
        }
        double sh = 0, se = 0;
        for (const auto& g : group) {
            sh += (g.h[i] - mh) * (g.h[i] - mh);
            se += (g.e[i] - me) * (g.e[i] - me);
        }
        out.h[i] = std::sqrt(sh / (n - 1));
        out.e[i] = std::sqrt(se / (n - 1));
    }
    return out;
}

namespace {

std::vector<double> differences(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired test: samples differ in length");
    if (a.size() < 5) throw std::invalid_argument("paired test: need at least 5 pairs");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

}  // namespace

double paired_t(std::span<const double> a, std::span<const double> b) {
    const auto d = differences(a, b);
    const double n = static_cast<double>(d.size());
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    if (sd == 0.0) return mean > 0.0 ? 0.0 : (mean < 0.0 ? 1.0 : 0.5);
    const double t = mean / (sd / std::sqrt(n));
    const boost::math::students_t dist(n - 1.0);
    return boost::math::cdf(boost::math::complement(dist, t));
}

double wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
    auto all = differences(a, b);
    std::vector<double> d;
    for (double x : all)
        if (x != 0.0) d.push_back(x);
    if (d.empty()) throw std::invalid_argument("wilcoxon: all differences are zero");
    const std::size_t n = d.size();

    // average ranks of |d|
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(d[i]) < std::abs(d[j]); });
    std::vector<double> rank(n);
    double tie_term = 0.0;
    bool ties = false;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        const double t = static_cast<double>(j - i + 1);
        if (t > 1) ties = true;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    double r_plus = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) r_plus += rank[i];

    const bool zeros = d.size() != all.size();
    if (!ties && !zeros && n <= 50) {
        // exact null: number of subsets of {1..n} with each rank sum
        const std::size_t max_sum = n * (n + 1) / 2;
        std::vector<double> count(max_sum + 1, 0.0);
        count[0] = 1.0;
        for (std::size_t r = 1; r <= n; ++r)
            for (std::size_t s = max_sum; s >= r; --s) count[s] += count[s - r];
        const double total = std::ldexp(1.0, static_cast<int>(n));
        const std::size_t k = static_cast<std::size_t>(std::floor(r_plus));
        double tail = 0.0;
        for (std::size_t s = k; s <= max_sum; ++s) tail += count[s];
        return tail / total;
    }
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (!(var > 0.0)) return 0.5;
    return std_normal_sf((r_plus - mean) / std::sqrt(var));
}

}  // namespace silicon
