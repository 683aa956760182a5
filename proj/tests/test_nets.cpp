#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "silicon/gradcheck.hpp"
#include "silicon/nets.hpp"
#include "support.hpp"

using namespace silicon;

namespace {

const NetConfig kSmall{8, 8, 4, 0.2, false};

void zero_all(ParamSet& ps) {
    for (auto& [name, v] : ps.entries()) v->value.fill(0.0);
}

void fill_param(ParamSet& ps, const std::string& name, Rng& rng) {
    for (double& v : ps.get(name)->value.values()) v = rng.uniform(-1, 1);
}

bool strictly_unit(const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](double v) { return v > 0.0 && v < 1.0; });
}

}  // namespace

TEST_CASE("autograd primitives pass finite-difference checks") {
    Rng rng(31);
    auto p = [&](std::vector<int> shape, double lo = -1, double hi = 1) {
        return ad::parameter(testing::random_tensor(std::move(shape), rng, lo, hi));
    };
    auto proj = [&](const ad::Var& out) {
        const Tensor r = testing::random_tensor(out->value.shape(), rng, -1, 1);
        return r;
    };
    std::vector<GradCheckResult> res;
    auto run = [&](const std::string& name, const std::function<ad::Var()>& f, const std::vector<ad::Var>& wrt) {
        const Tensor r = proj(f());
        res.push_back(check_gradient(
            name, [&, r] { return ad::sum(ad::mul(f(), ad::constant(r))); }, wrt, rng));
    };
    const auto x = p({3, 6, 5}), w = p({4, 3, 3, 3}), b = p({4});
    run("conv2d stride 1", [&] { return ad::conv2d(x, w, b, 1, 1); }, {x, w, b});
    run("conv2d stride 2", [&] { return ad::conv2d(x, w, b, 2, 1); }, {x, w, b});
    run("conv2d no bias", [&] { return ad::conv2d(x, w, nullptr, 1, 0); }, {x, w});
    const auto g = p({3}), be = p({3});
    run("instance_norm", [&] { return ad::instance_norm(x, g, be); }, {x, g, be});
    run("upsample_bilinear", [&] { return ad::upsample_bilinear(x, 12, 7); }, {x});
    run("global_avg_pool", [&] { return ad::global_avg_pool(x); }, {x});
    run("leaky_relu", [&] { return ad::leaky_relu(x, 0.2); }, {x});
    run("sigmoid", [&] { return ad::sigmoid(x); }, {x});
    run("exp", [&] { return ad::exp(x); }, {x});
    run("square", [&] { return ad::square(x); }, {x});
    const auto a = p({1, 6, 5});
    run("mul_channel_broadcast", [&] { return ad::mul_channel_broadcast(x, a); }, {x, a});
    std::vector<ad::Var> parts{x, a};
    run("concat_channels", [&] { return ad::concat_channels(parts); }, {x, a});
    run("concat_flat", [&] { return ad::concat_flat(parts); }, {x, a});
    const auto v = p({5}), lw = p({2, 5}), lb = p({2});
    run("linear", [&] { return ad::linear(v, lw, lb); }, {v, lw, lb});
    run("broadcast_spatial", [&] { return ad::broadcast_spatial(v, 3, 2); }, {v});
    const auto y = p({3, 6, 5});
    run("mean_abs_diff", [&] { return ad::mean_abs_diff(x, y); }, {x, y});
    run("mean_sq_diff", [&] { return ad::mean_sq_diff(x, y); }, {x, y});
    for (const auto& r : res) {
        INFO(r.name << " rel err " << r.rel_error);
        CHECK(r.passed);
    }
}

TEST_CASE("colour encoder shapes and degenerate cases") {
    Rng rng(1);
    const Model model(kSmall, rng);
    const Tensor x = testing::random_tensor({3, 64, 64}, rng, 0, 1);
    const ColorCode code = encode_color(x, model);
    CHECK(code.posterior.dim() == 8);
    CHECK(code.posterior.log_var.size() == 8);
    CHECK(code.sample == code.posterior.mean);
    Rng draw(4);
    const ColorCode sampled = encode_color(x, model, &draw);
    CHECK(sampled.sample != sampled.posterior.mean);

    SUBCASE("zero weights leave the head biases") {
        Rng r2(2);
        Model m(kSmall, r2);
        zero_all(m.color.params());
        fill_param(m.color.params(), "ec.mean.bias", r2);
        fill_param(m.color.params(), "ec.log_var.bias", r2);
        const ColorCode c = encode_color(x, m);
        CHECK(c.posterior.mean == m.color.params().get("ec.mean.bias")->value.storage());
        CHECK(c.posterior.log_var == m.color.params().get("ec.log_var.bias")->value.storage());
    }
    SUBCASE("pointwise encoder is invariant to pixel permutations") {
        NetConfig pc = kSmall;
        pc.color_pointwise = true;
        Rng r3(3);
        const Model m(pc, r3);
        const Tensor img = testing::random_tensor({3, 12, 8}, r3, 0, 1);
        std::vector<int> perm(96);
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = 95; i > 0; --i) std::swap(perm[i], perm[r3.below(i + 1)]);
        Tensor shuffled = img;
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 96; ++i) shuffled[c * 96 + i] = img[c * 96 + perm[i]];
        const auto a = encode_color(img, m).posterior, b = encode_color(shuffled, m).posterior;
        for (std::size_t i = 0; i < a.dim(); ++i) {
            CHECK(a.mean[i] == doctest::Approx(b.mean[i]).epsilon(1e-12));
            CHECK(a.log_var[i] == doctest::Approx(b.log_var[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("segmentation net contract") {
    Rng rng(5);
    const Model model(kSmall, rng);
    const Tensor x = testing::random_tensor({3, 64, 64}, rng, 0, 1);
    const SegMap s = generate_segmap(x, model);
    CHECK(s.probs.shape() == std::vector<int>{1, 64, 64});
    CHECK(strictly_unit(s.probs));

    const Tensor h = extract_h_channel(RgbImage(x), model.stain);
    const SegForward f = model.seg.forward(ad::constant(h));
    REQUIRE(f.attention.size() == 2);
    CHECK(f.attention[0]->value.shape() == std::vector<int>{1, 32, 32});
    CHECK(f.attention[1]->value.shape() == std::vector<int>{1, 64, 64});
    for (const auto& a : f.attention) CHECK(strictly_unit(a->value));

    CHECK_THROWS_AS(generate_segmap(testing::random_tensor({3, 30, 32}, rng, 0, 1), model), std::invalid_argument);
    CHECK_THROWS(generate_segmap(testing::random_tensor({1, 32, 32}, rng, 0, 1), model));
}

TEST_CASE("saturated logits still give probabilities inside (0, 1)") {
    Rng rng(6);
    Model m(kSmall, rng);
    m.seg.params().get("f.head.mean.bias")->value.fill(80.0);
    CHECK(strictly_unit(generate_segmap(testing::random_tensor({3, 8, 8}, rng, 0, 1), m).probs));
    m.seg.params().get("f.head.mean.bias")->value.fill(-800.0);
    CHECK(strictly_unit(generate_segmap(testing::random_tensor({3, 8, 8}, rng, 0, 1), m).probs));
}

TEST_CASE("constant attention gates reduce to a scaled plain U-Net") {
    Rng rng(7);
    Model m(kSmall, rng);
    for (const std::string g : {"f.gate1", "f.gate2"}) {
        for (const std::string part : {".skip.weight", ".skip.bias", ".gating.weight", ".gating.bias", ".psi.weight"})
            m.seg.params().get(g + part)->value.fill(0.0);
        m.seg.params().get(g + ".psi.bias")->value.fill(0.3);
    }
    const Tensor h = testing::random_tensor({1, 16, 16}, rng, 0, 1);
    const SegForward gated = m.seg.forward(ad::constant(h));
    const double s = 1.0 / (1.0 + std::exp(-0.3));
    for (const auto& a : gated.attention)
        for (double v : a->value.values()) CHECK(v == doctest::Approx(s).epsilon(1e-15));
    const SegForward plain = m.seg.forward(ad::constant(h), s);
    CHECK(plain.attention.empty());
    for (std::size_t i = 0; i < gated.logit->value.size(); ++i)
        CHECK(gated.logit->value[i] == doctest::Approx(plain.logit->value[i]).epsilon(1e-12));
}

TEST_CASE("embedding encoder contract") {
    Rng rng(8);
    Model m(kSmall, rng);
    const Tensor x = testing::random_tensor({3, 64, 64}, rng, 0, 1);
    const EmbeddingMap e = encode_embedding(x, m);
    CHECK(e.mean.shape() == std::vector<int>{4, 16, 16});
    CHECK(e.log_var.shape() == std::vector<int>{4, 16, 16});
    CHECK(e.sample.storage() == e.mean.storage());

    zero_all(m.embed.params());
    fill_param(m.embed.params(), "ew.mean.bias", rng);
    fill_param(m.embed.params(), "ew.log_var.bias", rng);
    const EmbeddingMap z = encode_embedding(Tensor::chw(3, 16, 16), m);
    for (int c = 0; c < 4; ++c)
        for (int i = 0; i < 16; ++i) {
            CHECK(z.mean[c * 16 + i] == m.embed.params().get("ew.mean.bias")->value[c]);
            CHECK(z.log_var[c * 16 + i] == m.embed.params().get("ew.log_var.bias")->value[c]);
        }
}

TEST_CASE("decoder contract") {
    Rng rng(9);
    const Model m(kSmall, rng);
    std::vector<double> zc(8);
    for (double& v : zc) v = rng.normal();
    const Tensor y = testing::random_tensor({1, 64, 64}, rng, 0, 1);
    const Tensor zw = testing::random_tensor({4, 16, 16}, rng, -1, 1);
    const Tensor out = decode(zc, y, zw, m);
    CHECK(out.shape() == std::vector<int>{3, 64, 64});
    CHECK(strictly_unit(out));
    CHECK(decode(zc, y, zw, m).storage() == out.storage());
    CHECK_THROWS(decode(zc, y, testing::random_tensor({4, 8, 16}, rng, -1, 1), m));
    CHECK_THROWS(decode({1.0, 2.0}, y, zw, m));
}

TEST_CASE("discriminator contract") {
    Rng rng(10);
    Model m(kSmall, rng);
    Quadruplet q{testing::random_tensor({3, 16, 16}, rng, 0, 1), std::vector<double>(8, 0.5),
                 testing::random_tensor({1, 16, 16}, rng, 0, 1), testing::random_tensor({4, 4, 4}, rng, -1, 1)};
    CHECK(std::isfinite(discriminate(q, m)));
    zero_all(m.disc.params());
    m.disc.params().get("d.head.bias")->value.fill(-2.75);
    CHECK(discriminate(q, m) == -2.75);
    q.y = testing::random_tensor({1, 8, 16}, rng, 0, 1);
    CHECK_THROWS(discriminate(q, m));
}

TEST_CASE("all five networks compose for sizes divisible by 4") {
    Rng rng(11);
    const Model m(kSmall, rng);
    for (auto [h, w] : {std::pair{12, 20}, std::pair{8, 8}, std::pair{24, 4}}) {
        const Tensor x = testing::random_tensor({3, h, w}, rng, 0, 1);
        Rng draw(h * 100 + w);
        const ColorCode c = encode_color(x, m, &draw);
        const SegMap s = generate_segmap(x, m);
        const EmbeddingMap e = encode_embedding(x, m, &draw);
        const Tensor xh = decode(c.sample, s.probs, e.sample, m);
        CHECK(xh.shape() == x.shape());
        CHECK(std::isfinite(discriminate({xh, c.sample, s.probs, e.sample}, m)));
    }
}

TEST_CASE("forward passes are deterministic for a fixed seed") {
    Rng a(42), b(42);
    const Model ma(kSmall, a), mb(kSmall, b);
    Rng rx(1);
    const Tensor x = testing::random_tensor({3, 16, 16}, rx, 0, 1);
    CHECK(generate_segmap(x, ma).probs.storage() == generate_segmap(x, mb).probs.storage());
    CHECK(encode_color(x, ma).posterior.mean == encode_color(x, mb).posterior.mean);
}

TEST_CASE("parameter checkpoints round trip and validate the manifest") {
    testing::TempDir dir("params");
    Rng r1(1), r2(2);
    const Model a(kSmall, r1);
    Model b(kSmall, r2);
    save_params(a.all_sets(), dir.path());
    CHECK(std::filesystem::exists(dir / "manifest.txt"));
    load_params(b.all_sets(), dir.path());
    const auto sa = a.all_sets();
    const auto sb = b.all_sets();
    for (std::size_t i = 0; i < sa.size(); ++i)
        for (std::size_t j = 0; j < sa[i]->entries().size(); ++j)
            CHECK(sa[i]->entries()[j].second->value.storage() == sb[i]->entries()[j].second->value.storage());

    NetConfig wide = kSmall;
    wide.base_width = 6;
    Rng r3(3);
    Model c(wide, r3);
    CHECK_THROWS(load_params(c.all_sets(), dir.path()));
    CHECK_THROWS(load_params(b.all_sets(), dir / "absent"));

    // a manifest line naming a parameter with the wrong shape is refused
    const std::string manifest = a.color.params().manifest();
    CHECK(manifest.find("ec.mean.weight 8 19") != std::string::npos);
}

TEST_CASE("parameter sets reject duplicates and unknown names") {
    ParamSet ps;
    ps.add("w", Tensor({2}));
    CHECK_THROWS(ps.add("w", Tensor({2})));
    CHECK_THROWS(ps.get("v"));
    CHECK(ps.scalar_count() == 2);
}
