#include "silicon/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace silicon {

using ad::Var;

ad::Var ParamSet::add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, ad::parameter(std::move(init)));
    return entries_.back().second;
}

const ad::Var& ParamSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return entries_[it->second].second;
}

std::vector<ad::Var> ParamSet::vars() const {
    std::vector<ad::Var> out;
    out.reserve(entries_.size());
    for (const auto& [_, v] : entries_) out.push_back(v);
    return out;
}

std::size_t ParamSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v->value.size();
    return n;
}

std::string ParamSet::manifest() const {
    std::ostringstream os;
    for (const auto& [name, v] : entries_) {
        os << name;
        for (int d : v->value.shape()) os << ' ' << d;
        os << '\n';
    }
    return os.str();
}

namespace {

// Convolutions feeding an instance norm carry no bias: the norm cancels it.
void add_conv(ParamSet& ps, Rng& rng, const std::string& name, int cout, int cin, int k, bool bias = true) {
    const double sd = std::sqrt(2.0 / (cin * k * k));
    Tensor w({cout, cin, k, k});
    for (double& v : w.values()) v = sd * rng.normal();
    ps.add(name + ".weight", std::move(w));
    if (bias) ps.add(name + ".bias", Tensor({cout}, 0.0));
}

void add_norm(ParamSet& ps, const std::string& name, int c) {
    ps.add(name + ".gamma", Tensor({c}, 1.0));
    ps.add(name + ".beta", Tensor({c}, 0.0));
}

void add_linear(ParamSet& ps, Rng& rng, const std::string& name, int out, int in, double gain = 1.0) {
    const double sd = gain * std::sqrt(1.0 / in);
    Tensor w({out, in});
    for (double& v : w.values()) v = sd * rng.normal();
    ps.add(name + ".weight", std::move(w));
    ps.add(name + ".bias", Tensor({out}, 0.0));
}

Var conv(const ParamSet& ps, const std::string& name, const Var& x, int stride) {
    const auto& w = ps.get(name + ".weight");
    const int k = w->value.dim(2);
    const ad::Var bias = ps.contains(name + ".bias") ? ps.get(name + ".bias") : nullptr;
    return ad::conv2d(x, w, bias, stride, k / 2);
}

Var norm(const ParamSet& ps, const std::string& name, const Var& x) {
    return ad::instance_norm(x, ps.get(name + ".gamma"), ps.get(name + ".beta"));
}

Var lin(const ParamSet& ps, const std::string& name, const Var& v) {
    return ad::linear(v, ps.get(name + ".weight"), ps.get(name + ".bias"));
}

void add_res_block(ParamSet& ps, Rng& rng, const std::string& name, int cin, int cout) {
    add_conv(ps, rng, name + ".conv1", cout, cin, 3, false);
    add_norm(ps, name + ".norm1", cout);
    add_conv(ps, rng, name + ".conv2", cout, cout, 3, false);
    add_norm(ps, name + ".norm2", cout);
    if (cin != cout) add_conv(ps, rng, name + ".proj", cout, cin, 1);
}

Var res_block(const ParamSet& ps, const std::string& name, const Var& x) {
    Var h = ad::relu(norm(ps, name + ".norm1", conv(ps, name + ".conv1", x, 1)));
    h = norm(ps, name + ".norm2", conv(ps, name + ".conv2", h, 1));
    Var skip = ps.contains(name + ".proj.weight") ? conv(ps, name + ".proj", x, 1) : x;
    return ad::relu(ad::add(h, skip));
}

Var conv_norm_relu(const ParamSet& ps, const std::string& name, const Var& x, int stride) {
    return ad::relu(norm(ps, name + ".norm", conv(ps, name, x, stride)));
}

void add_conv_norm(ParamSet& ps, Rng& rng, const std::string& name, int cout, int cin, int k) {
    add_conv(ps, rng, name, cout, cin, k, false);
    add_norm(ps, name + ".norm", cout);
}

void require_image(const Var& x, int channels, const char* who) {
    const auto& v = x->value;
    if (v.rank() != 3 || v.dim(0) != channels)
        throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(channels) +
                                    " input channels, got " + v.shape_string());
}

}  // namespace

void require_divisible_by_4(int height, int width) {
    if (height % 4 != 0 || width % 4 != 0 || height < 4 || width < 4)
        throw std::invalid_argument("image size " + std::to_string(height) + "x" + std::to_string(width) +
                                    " is not a multiple of 4; pad with edge replication first");
}

// ---------------------------------------------------------------- E_c

ColorEncoder::ColorEncoder(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int w = cfg.base_width;
    const int k = cfg.color_pointwise ? 1 : 3;
    add_conv_norm(params_, rng, "ec.conv0", w, 3, k);
    add_conv_norm(params_, rng, "ec.conv1", 2 * w, w, k);
    // pooled features plus the pooled input colour
    add_linear(params_, rng, "ec.mean", cfg.color_dim, 2 * w + 3);
    add_linear(params_, rng, "ec.log_var", cfg.color_dim, 2 * w + 3, 0.1);
}

GaussianMaps ColorEncoder::forward(const Var& x) const {
    require_image(x, 3, "color encoder");
    const int stride = cfg_.color_pointwise ? 1 : 2;
    Var h = conv_norm_relu(params_, "ec.conv0", x, stride);
    h = conv_norm_relu(params_, "ec.conv1", h, stride);
    // Instance normalization discards per-image channel means, which carry
    // the colour; the pooled input restores them.
    std::vector<Var> pooled{ad::global_avg_pool(h), ad::global_avg_pool(x)};
    Var feat = ad::concat_flat(pooled);
    return {lin(params_, "ec.mean", feat), lin(params_, "ec.log_var", feat)};
}

// ---------------------------------------------------------------- F_phi

SegmentationNet::SegmentationNet(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int w = cfg.base_width;
    add_res_block(params_, rng, "f.enc1", 1, w);
    add_conv_norm(params_, rng, "f.down1", w, w, 3);
    add_res_block(params_, rng, "f.enc2", w, 2 * w);
    add_conv_norm(params_, rng, "f.down2", 2 * w, 2 * w, 3);
    add_res_block(params_, rng, "f.bottleneck", 2 * w, 4 * w);

    add_conv_norm(params_, rng, "f.up2", 2 * w, 4 * w, 3);
    const int inter2 = std::max(1, w);
    add_conv(params_, rng, "f.gate2.skip", inter2, 2 * w, 1);
    add_conv(params_, rng, "f.gate2.gating", inter2, 2 * w, 1);
    add_conv(params_, rng, "f.gate2.psi", 1, inter2, 1);
    add_res_block(params_, rng, "f.dec2", 4 * w, 2 * w);

    add_conv_norm(params_, rng, "f.up1", w, 2 * w, 3);
    const int inter1 = std::max(1, w / 2);
    add_conv(params_, rng, "f.gate1.skip", inter1, w, 1);
    add_conv(params_, rng, "f.gate1.gating", inter1, w, 1);
    add_conv(params_, rng, "f.gate1.psi", 1, inter1, 1);
    add_res_block(params_, rng, "f.dec1", 2 * w, w);

    add_conv(params_, rng, "f.head.mean", 1, w, 1);
    add_conv(params_, rng, "f.head.log_var", 1, w, 1);
    for (double& v : params_.get("f.head.log_var.weight")->value.values()) v *= 0.1;
}

Var SegmentationNet::gate(const std::string& prefix, const Var& skip, const Var& gating) const {
    Var q = ad::relu(ad::add(conv(params_, prefix + ".skip", skip, 1), conv(params_, prefix + ".gating", gating, 1)));
    return ad::sigmoid(conv(params_, prefix + ".psi", q, 1));
}

SegForward SegmentationNet::forward(const Var& h, std::optional<double> fixed_gate) const {
    require_image(h, 1, "segmentation net");
    require_divisible_by_4(h->value.dim(1), h->value.dim(2));
    const int height = h->value.dim(1), width = h->value.dim(2);

    Var e1 = res_block(params_, "f.enc1", h);
    Var e2 = res_block(params_, "f.enc2", conv_norm_relu(params_, "f.down1", e1, 2));
    Var b = res_block(params_, "f.bottleneck", conv_norm_relu(params_, "f.down2", e2, 2));

    SegForward out;
    auto gated = [&](const std::string& prefix, const Var& skip, const Var& gating) {
        if (fixed_gate) return ad::scale(skip, *fixed_gate);
        Var a = gate(prefix, skip, gating);
        out.attention.push_back(a);
        return ad::mul_channel_broadcast(skip, a);
    };

    Var u2 = conv_norm_relu(params_, "f.up2", ad::upsample_bilinear(b, height / 2, width / 2), 1);
    std::vector<Var> cat2{u2, gated("f.gate2", e2, u2)};
    Var d2 = res_block(params_, "f.dec2", ad::concat_channels(cat2));

    Var u1 = conv_norm_relu(params_, "f.up1", ad::upsample_bilinear(d2, height, width), 1);
    std::vector<Var> cat1{u1, gated("f.gate1", e1, u1)};
    Var d1 = res_block(params_, "f.dec1", ad::concat_channels(cat1));

    out.logit = conv(params_, "f.head.mean", d1, 1);
    out.log_var = conv(params_, "f.head.log_var", d1, 1);
    out.probs = ad::sigmoid(out.logit);
    return out;
}

// ---------------------------------------------------------------- E_omega

EmbeddingEncoder::EmbeddingEncoder(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int w = cfg.base_width;
    add_conv_norm(params_, rng, "ew.conv0", w, 3, 3);
    add_conv_norm(params_, rng, "ew.conv1", 2 * w, w, 3);
    add_conv(params_, rng, "ew.mean", cfg.embed_channels, 2 * w, 3);
    add_conv(params_, rng, "ew.log_var", cfg.embed_channels, 2 * w, 3);
    for (double& v : params_.get("ew.log_var.weight")->value.values()) v *= 0.1;
}

GaussianMaps EmbeddingEncoder::forward(const Var& x) const {
    require_image(x, 3, "embedding encoder");
    require_divisible_by_4(x->value.dim(1), x->value.dim(2));
    Var h = conv_norm_relu(params_, "ew.conv0", x, 2);
    h = conv_norm_relu(params_, "ew.conv1", h, 2);
    return {conv(params_, "ew.mean", h, 1), conv(params_, "ew.log_var", h, 1)};
}

// ---------------------------------------------------------------- G

Decoder::Decoder(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int w = cfg.base_width;
    add_conv_norm(params_, rng, "g.in", 2 * w, cfg.color_dim + 1 + cfg.embed_channels, 3);
    add_res_block(params_, rng, "g.res", 2 * w, 2 * w);
    add_conv(params_, rng, "g.tint", w, 2 * w + cfg.color_dim, 3);
    add_conv(params_, rng, "g.out", 3, w, 1);
}

Var Decoder::forward(const Var& z_c, const Var& y, const Var& z_omega) const {
    const auto& ys = y->value;
    if (ys.rank() != 3 || ys.dim(0) != 1) throw std::invalid_argument("decoder: y must be (1,H,W)");
    const int h = ys.dim(1), w = ys.dim(2);
    require_divisible_by_4(h, w);
    if (z_c->value.rank() != 1 || z_c->value.dim(0) != cfg_.color_dim)
        throw std::invalid_argument("decoder: colour code has wrong length");
    const auto& zs = z_omega->value;
    if (zs.rank() != 3 || zs.dim(0) != cfg_.embed_channels || zs.dim(1) != h / 4 || zs.dim(2) != w / 4)
        throw std::invalid_argument("decoder: embedding map shape " + zs.shape_string() + " inconsistent with y");

    Var zc_map = ad::broadcast_spatial(z_c, h, w);
    std::vector<Var> parts{zc_map, y, ad::upsample_bilinear(z_omega, h, w)};
    Var f = conv_norm_relu(params_, "g.in", ad::concat_channels(parts), 1);
    f = res_block(params_, "g.res", f);
    // The colour code re-enters after the normalized stack so it can set
    // absolute intensities.
    std::vector<Var> tinted{f, zc_map};
    f = ad::relu(conv(params_, "g.tint", ad::concat_channels(tinted), 1));
    return ad::sigmoid(conv(params_, "g.out", f, 1));
}

// ---------------------------------------------------------------- D

Discriminator::Discriminator(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int w = cfg.base_width;
    add_conv(params_, rng, "d.conv0", w, 3 + 1 + cfg.embed_channels + cfg.color_dim, 3);
    add_conv_norm(params_, rng, "d.conv1", 2 * w, w, 3);
    add_linear(params_, rng, "d.head", 1, 2 * w + cfg.color_dim);
}

Var Discriminator::forward(const Var& x, const Var& z_c, const Var& y, const Var& z_omega) const {
    require_image(x, 3, "discriminator");
    const int h = x->value.dim(1), w = x->value.dim(2);
    require_divisible_by_4(h, w);
    if (y->value.rank() != 3 || y->value.dim(0) != 1 || y->value.dim(1) != h || y->value.dim(2) != w)
        throw std::invalid_argument("discriminator: y shape inconsistent with x");
    const auto& zs = z_omega->value;
    if (zs.rank() != 3 || zs.dim(0) != cfg_.embed_channels || zs.dim(1) != h / 4 || zs.dim(2) != w / 4)
        throw std::invalid_argument("discriminator: embedding map shape inconsistent with x");
    if (z_c->value.rank() != 1 || z_c->value.dim(0) != cfg_.color_dim)
        throw std::invalid_argument("discriminator: colour code has wrong length");

    std::vector<Var> parts{x, y, ad::upsample_bilinear(z_omega, h, w), ad::broadcast_spatial(z_c, h, w)};
    const double slope = cfg_.leaky_slope;
    Var f = ad::leaky_relu(conv(params_, "d.conv0", ad::concat_channels(parts), 2), slope);
    f = ad::leaky_relu(norm(params_, "d.conv1.norm", conv(params_, "d.conv1", f, 2)), slope);
    std::vector<Var> feat{ad::global_avg_pool(f), z_c};
    return lin(params_, "d.head", ad::concat_flat(feat));
}

// ---------------------------------------------------------------- Model

Model::Model(const NetConfig& cfg, Rng& rng)
    : config(cfg), color(cfg, rng), seg(cfg, rng), embed(cfg, rng), decoder(cfg, rng), disc(cfg, rng) {}

std::vector<ParamSet*> Model::generator_sets() {
    return {&color.params(), &seg.params(), &embed.params(), &decoder.params()};
}

std::vector<const ParamSet*> Model::all_sets() const {
    return {&color.params(), &seg.params(), &embed.params(), &decoder.params(), &disc.params()};
}

std::vector<ParamSet*> Model::all_sets() {
    return {&color.params(), &seg.params(), &embed.params(), &decoder.params(), &disc.params()};
}

// ---------------------------------------------------------------- value API

BinaryMask SegMap::binarize() const { return binarize(threshold); }

BinaryMask SegMap::binarize(double t) const {
    BinaryMask m(probs.dim(1), probs.dim(2));
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = probs[i] >= t ? 1 : 0;
    return m;
}

namespace {

void require_rgb_tensor(const Tensor& x) {
    if (x.rank() != 3 || x.dim(0) != 3) throw std::invalid_argument("expected a (3,H,W) image, got " + x.shape_string());
}

Tensor gaussian_noise(const std::vector<int>& shape, Rng& rng) {
    Tensor t(shape);
    for (double& v : t.values()) v = rng.normal();
    return t;
}

// A sigmoid rounds to exactly 0 or 1 beyond |logit| ~ 37; keep the open interval.
Tensor open_unit(Tensor t) {
    constexpr double lo = std::numeric_limits<double>::min();
    const double hi = std::nextafter(1.0, 0.0);
    for (double& v : t.values()) v = std::clamp(v, lo, hi);
    return t;
}

}  // namespace

ColorCode encode_color(const Tensor& x, const Model& model, Rng* rng) {
    require_rgb_tensor(x);
    auto post = model.color.forward(ad::constant(x));
    ColorCode code{DiagGaussian(post.mean->value.storage(), post.log_var->value.storage()), {}};
    if (rng) {
        auto s = ad::reparameterize(post.mean, post.log_var, gaussian_noise(post.mean->value.shape(), *rng));
        code.sample = s->value.storage();
    } else {
        code.sample = code.posterior.mean;
    }
    return code;
}

SegMap generate_segmap(const Tensor& x, const Model& model) {
    require_rgb_tensor(x);
    const Tensor h = extract_h_channel(RgbImage(x), model.stain);
    auto fwd = model.seg.forward(ad::constant(h));
    return SegMap{open_unit(fwd.probs->value), 0.5};
}

EmbeddingMap encode_embedding(const Tensor& x, const Model& model, Rng* rng) {
    require_rgb_tensor(x);
    auto post = model.embed.forward(ad::constant(x));
    EmbeddingMap out{post.mean->value, post.log_var->value, post.mean->value};
    if (rng)
        out.sample = ad::reparameterize(post.mean, post.log_var, gaussian_noise(post.mean->value.shape(), *rng))->value;
    return out;
}

Tensor decode(const std::vector<double>& z_c, const Tensor& y, const Tensor& z_omega, const Model& model) {
    auto zc = ad::constant(Tensor({static_cast<int>(z_c.size())}, z_c));
    return open_unit(model.decoder.forward(zc, ad::constant(y), ad::constant(z_omega))->value);
}

double discriminate(const Quadruplet& q, const Model& model) {
    auto zc = ad::constant(Tensor({static_cast<int>(q.z_c.size())}, q.z_c));
    return ad::scalar(model.disc.forward(ad::constant(q.x), zc, ad::constant(q.y), ad::constant(q.z_omega)));
}

// ---------------------------------------------------------------- checkpoints

void save_params(const std::vector<const ParamSet*>& sets, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
    for (const ParamSet* ps : sets) {
        manifest << ps->manifest();
        for (const auto& [name, v] : ps->entries()) {
            std::ofstream f(dir / (name + ".bin"), std::ios::binary);
            f.write(reinterpret_cast<const char*>(v->value.data()),
                    static_cast<std::streamsize>(v->value.size() * sizeof(double)));
            if (!f) throw std::runtime_error("cannot write parameter " + name);
        }
    }
}

void load_params(const std::vector<ParamSet*>& sets, const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw std::runtime_error("checkpoint manifest missing in " + dir.string());
    std::map<std::string, std::vector<int>> shapes;
    std::string line;
    while (std::getline(manifest, line)) {
        std::istringstream is(line);
        std::string name;
        if (!(is >> name)) continue;
        std::vector<int> dims;
        for (int d; is >> d;) dims.push_back(d);
        shapes[name] = dims;
    }
    std::size_t expected = 0;
    for (ParamSet* ps : sets) expected += ps->entries().size();
    if (shapes.size() != expected)
        throw std::runtime_error("checkpoint manifest lists " + std::to_string(shapes.size()) +
                                 " parameters, model has " + std::to_string(expected));
    for (ParamSet* ps : sets)
        for (const auto& [name, v] : ps->entries()) {
            auto it = shapes.find(name);
            if (it == shapes.end()) throw std::runtime_error("checkpoint lacks parameter " + name);
            if (it->second != v->value.shape())
                throw std::runtime_error("checkpoint shape mismatch for " + name);
            std::ifstream f(dir / (name + ".bin"), std::ios::binary);
            f.read(reinterpret_cast<char*>(v->value.data()),
                   static_cast<std::streamsize>(v->value.size() * sizeof(double)));
            if (!f || f.peek() != std::char_traits<char>::eof())
                throw std::runtime_error("checkpoint array size mismatch for " + name);
            for (double x : v->value.values())
                if (!std::isfinite(x)) throw std::runtime_error("non-finite value in checkpoint parameter " + name);
        }
}

}  // namespace silicon
