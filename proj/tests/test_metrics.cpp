#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "silicon/metrics.hpp"
#include "support.hpp"

using namespace silicon;

namespace {

BinaryMask from_string(int h, int w, const char* bits) {
    BinaryMask m(h, w);
    for (int i = 0; i < h * w; ++i) m.bits[i] = bits[i] == '1';
    return m;
}

// Image with solid colour c inside the mask, white elsewhere.
RgbImage painted(const BinaryMask& m, const std::vector<double>& grey) {
    RgbImage img(m.height, m.width, 1.0);
    std::size_t k = 0;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(y, x)) {
                for (int c = 0; c < 3; ++c) img.set(c, y, x, grey[k]);
                ++k;
            }
    return img;
}

double angle_deg(const Vec3& a, const Vec3& b) {
    const double d = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    return std::acos(std::clamp(d, -1.0, 1.0)) * 180.0 / 3.141592653589793;
}

}  // namespace

TEST_CASE("segmentation scores against set cardinalities") {
    Rng rng(31);
    for (int t = 0; t < 500; ++t) {
        BinaryMask p(6, 7), g(6, 7);
        std::set<int> ps, gs;
        const double fp = rng.uniform(), fg = rng.uniform();
        for (int i = 0; i < 42; ++i) {
            if (rng.uniform() < fp) p.bits[i] = 1, ps.insert(i);
            if (rng.uniform() < fg) g.bits[i] = 1, gs.insert(i);
        }
        std::set<int> inter, uni = ps;
        for (int i : ps)
            if (gs.count(i)) inter.insert(i);
        uni.insert(gs.begin(), gs.end());
        const auto s = dice_jaccard_prec_rec(p, g);
        if (uni.empty()) {
            CHECK(s.dice == 1.0);
            continue;
        }
        const double I = static_cast<double>(inter.size());
        CHECK(s.dice == 2 * I / static_cast<double>(ps.size() + gs.size()));
        CHECK(s.jaccard == I / static_cast<double>(uni.size()));
        CHECK(s.precision == (ps.empty() ? 0.0 : I / static_cast<double>(ps.size())));
        CHECK(s.recall == (gs.empty() ? 0.0 : I / static_cast<double>(gs.size())));
        CHECK(s.dice >= s.jaccard);
    }
}

TEST_CASE("segmentation score conventions") {
    const BinaryMask empty(3, 3);
    const auto both_empty = dice_jaccard_prec_rec(empty, empty);
    CHECK(both_empty.dice == 1.0);
    CHECK(both_empty.jaccard == 1.0);
    CHECK(both_empty.precision == 1.0);
    CHECK(both_empty.recall == 1.0);

    const BinaryMask some = from_string(3, 3, "110000000");
    const auto missed = dice_jaccard_prec_rec(empty, some);
    CHECK(missed.dice == 0.0);
    CHECK(missed.precision == 0.0);
    CHECK(missed.recall == 0.0);

    const BinaryMask half = from_string(3, 3, "100100000");
    const auto s = dice_jaccard_prec_rec(half, some);
    CHECK(s.dice == 0.5);
    CHECK(s.jaccard == 1.0 / 3.0);
    CHECK_THROWS_AS(dice_jaccard_prec_rec(BinaryMask(2, 2), BinaryMask(2, 3)), std::invalid_argument);
}

TEST_CASE("percentile uses linear interpolation between order statistics") {
    CHECK(percentile({3, 1, 2}, 50) == 2.0);
    CHECK(percentile({1, 2, 3, 4}, 50) == 2.5);
    CHECK(percentile({0, 10}, 95) == doctest::Approx(9.5));
    CHECK(percentile({7}, 95) == 7.0);
    CHECK_THROWS(percentile({}, 50));
    CHECK_THROWS(percentile({1}, 101));
}

TEST_CASE("normalized median intensity") {
    // 21 nuclei pixels with grey levels 0.2, 0.23, ..., 0.8
    BinaryMask m(3, 7);
    for (auto& b : m.bits) b = 1;
    std::vector<double> grey;
    for (int k = 0; k <= 20; ++k) grey.push_back(0.2 + 0.03 * k);
    const RgbImage img = painted(m, grey);
    // median is grey[10] = 0.5; the 95th percentile sits at rank 19 -> 0.77
    CHECK(nmi(img, m) == doctest::Approx(0.5 / 0.77).epsilon(1e-12));

    // a uniform nucleus has NMI 1
    CHECK(nmi(painted(m, std::vector<double>(21, 0.4)), m) == doctest::Approx(1.0));

    // background pixels do not count
    BinaryMask part = m;
    part.bits[0] = 0;
    RgbImage with_bg = img;
    with_bg.set(0, 0, 0, 0.0);
    CHECK(nmi(with_bg, part) == doctest::Approx(nmi(img, part)).epsilon(1e-15));

    CHECK_THROWS_AS(nmi(img, BinaryMask(3, 7)), std::invalid_argument);
}

TEST_CASE("colour constancy scores") {
    CHECK(bicc(0.5, 0.8) == doctest::Approx(0.625));
    CHECK(bicc(0.8, 0.5) == doctest::Approx(0.625));
    CHECK(bicc(0.7, 0.7) == 1.0);
    CHECK_THROWS(bicc(0.0, 0.5));

    const std::vector<double> same{0.6, 0.6, 0.6};
    CHECK(wscc(same) == 1.0);
    const std::vector<double> spread{0.4, 0.6};
    // sample sd 0.1414..., mean 0.5
    CHECK(wscc(spread) == doctest::Approx(1.0 - std::sqrt(0.02) / 0.5).epsilon(1e-14));
    const std::vector<double> single{0.3};
    CHECK(wscc(single) == 1.0);
    const std::vector<double> wild{0.01, 5.0};
    CHECK(wscc(wild) == 0.0);
}

TEST_CASE("stain vector spread") {
    StainVectors a{{0.6, 0.7, 0.3}, {0.1, 0.8, 0.5}};
    StainVectors b = a;
    b.h[0] += 0.1;
    const StainSd sd = stain_vector_sd({a, b});
    CHECK(sd.h[0] == doctest::Approx(0.1 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(sd.h[1] == 0.0);
    CHECK(sd.e[2] == 0.0);
    CHECK(sd.mean() == doctest::Approx(0.0707106781186548 / 6).epsilon(1e-12));
    CHECK_THROWS(stain_vector_sd({a}));
}

TEST_CASE("stain vectors are recovered from a two-stain image") {
    Rng rng(32);
    const auto m = StainMatrix::ruifrok();
    for (int t = 0; t < 5; ++t) {
        HedImage hed{Tensor::chw(3, 12, 12)};
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) hed.od.at(y < 6 ? 0 : 1, y, x) = rng.uniform(0.3, 1.0);
        const auto sv = estimate_stain_vectors(hed_to_rgb(hed, m), m);
        CHECK(angle_deg(sv.h, m.row(0)) <= 1.0);
        CHECK(angle_deg(sv.e, m.row(1)) <= 1.0);
    }
    CHECK_THROWS_AS(estimate_stain_vectors(RgbImage(8, 8, 1.0)), NoTissueError);
    HedImage only_h{Tensor::chw(3, 4, 4)};
    for (double& v : only_h.od.values()) v = 0;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) only_h.od.at(0, y, x) = 0.8;
    CHECK_THROWS_AS(estimate_stain_vectors(hed_to_rgb(only_h, m)), NoTissueError);
}

TEST_CASE("geometric median") {
    // the median of a triangle's vertices with one obtuse angle sits on the obtuse vertex
    const std::vector<Vec3> pts{{0, 0, 0}, {10, 0, 0}, {5, 0.1, 0}};
    const Vec3 g = geometric_median(pts);
    CHECK(g[0] == doctest::Approx(5.0).epsilon(1e-4));
    CHECK(g[1] == doctest::Approx(0.1).epsilon(1e-3));
    // symmetric points: the centre
    const Vec3 c = geometric_median({{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}});
    CHECK(std::abs(c[0]) <= 1e-9);
    CHECK(std::abs(c[1]) <= 1e-9);
    // robust to one outlier, unlike the mean
    const Vec3 r = geometric_median({{0, 0, 0}, {0, 0, 0.01}, {0, 0, -0.01}, {0, 0, 100}});
    CHECK(std::abs(r[2]) < 0.02);
}

TEST_CASE("paired tests against scipy") {
    // scipy.stats.ttest_rel(a, b, alternative='greater') and wilcoxon(a, b, alternative='greater')
    const std::vector<double> a{0.913, 0.852, 0.781, 0.884, 0.935, 0.817, 0.768, 0.891, 0.846, 0.902, 0.873, 0.795};
    const std::vector<double> b{0.861, 0.839, 0.806, 0.812, 0.893, 0.809, 0.707, 0.856, 0.864, 0.845, 0.799, 0.772};
    CHECK(paired_t(a, b) == doctest::Approx(0.0028132133190589873).epsilon(1e-9));
    CHECK(wilcoxon_signed_rank(a, b) == doctest::Approx(0.006103515625).epsilon(1e-12));
    CHECK(paired_t(b, a) == doctest::Approx(0.9971867866809411).epsilon(1e-12));
    CHECK(wilcoxon_signed_rank(b, a) == doctest::Approx(0.995361328125).epsilon(1e-12));

    // ties and a zero difference: normal approximation (method='approx', zero_method='wilcox', no correction)
    const std::vector<double> a2{3.1, 2.4, 5.0, 4.4, 3.3, 2.9, 4.1, 3.8, 2.2, 4.0, 3.6, 5.2, 4.7, 3.9, 2.8};
    const std::vector<double> b2{2.6, 2.9, 4.5, 3.9, 3.3, 2.4, 3.1, 3.3, 2.7, 3.5, 3.1, 4.2, 4.2, 3.4, 2.3};
    CHECK(wilcoxon_signed_rank(a2, b2) == doctest::Approx(0.003545596016926051).epsilon(1e-9));
    CHECK(paired_t(a2, b2) == doctest::Approx(0.001464074092836795).epsilon(1e-9));
}

TEST_CASE("paired test edge cases") {
    const std::vector<double> a{1, 2, 3, 4, 5}, up{2, 3, 4, 5, 6};
    CHECK(paired_t(up, a) == 0.0);
    CHECK(paired_t(a, up) == 1.0);
    CHECK(paired_t(a, a) == 0.5);
    CHECK_THROWS(wilcoxon_signed_rank(a, a));
    const std::vector<double> three{1, 2, 3}, four{1, 2, 3, 4};
    CHECK_THROWS(paired_t(three, three));
    CHECK_THROWS(paired_t(a, four));
    // exact null: all five differences positive -> 1/32
    CHECK(wilcoxon_signed_rank(std::vector<double>{1.1, 2.2, 3.3, 4.4, 5.5}, std::vector<double>{1, 2, 3, 4, 5}) ==
          1.0 / 32.0);
}
