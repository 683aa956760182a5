#include "silicon/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "silicon/synthdata.hpp"

namespace silicon {

// ------------------------------------------------------------------ config

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError("config key '" + key + "': not a number: '" + v + "'");
    return out;
}

long parse_long(const std::string& key, const std::string& v) {
    long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ConfigError("config key '" + key + "': not an integer: '" + v + "'");
    return out;
}

int parse_int(const std::string& key, const std::string& v) {
    const long l = parse_long(key, v);
    if (l < std::numeric_limits<int>::min() || l > std::numeric_limits<int>::max())
        throw ConfigError("config key '" + key + "': out of range");
    return static_cast<int>(l);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::string num(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

const std::vector<std::string> kRunOnlyKeys = {"dataset", "out", "total_steps", "checkpoint_interval"};

}  // namespace

const std::vector<std::pair<std::string, std::string>>& TrainConfig::documented_keys() {
    static const std::vector<std::pair<std::string, std::string>> keys = {
        {"dataset", "dataset directory (images/, optional masks/ and meta.csv)"},
        {"out", "output directory for checkpoints and telemetry.csv"},
        {"patch_size", "training patch side in pixels, multiple of 4"},
        {"patch_stride", "stride between training patches"},
        {"batch_size", "images per step"},
        {"total_steps", "number of alternating updates"},
        {"lr_disc", "discriminator learning rate"},
        {"lr_gen", "learning rate of the encoders and decoder"},
        {"beta1", "first-moment decay"},
        {"beta2", "second-moment decay"},
        {"label_a", "least-squares target for real encodings"},
        {"label_b", "least-squares target for fake encodings"},
        {"label_c", "target the decoder wants for fake encodings"},
        {"lambda_adv", "adversarial weight; the reconstruction weight is 1 - lambda_adv"},
        {"prior_center", "color-code prior components sit at +/- this value"},
        {"prior_sigma", "scale of each prior component"},
        {"prior_bound", "prior support is [-bound, bound]"},
        {"fake_y_mean", "mean of the pre-sigmoid fake segmentation maps"},
        {"base_width", "channel width of the first convolution stage"},
        {"color_dim", "length of the color code z_c"},
        {"embed_channels", "channels of the embedding map z_omega"},
        {"leaky_slope", "negative slope of the discriminator activations"},
        {"recon", "reconstruction error: absolute or squared"},
        {"latent_reduction", "sum or mean over latent coordinates for KL and entropy"},
        {"mc_samples", "Monte Carlo samples for the color-code KL"},
        {"seed", "seed of every random stream"},
        {"checkpoint_interval", "steps between checkpoints (0 = final only)"},
        {"supervised", "add BCE against ground-truth masks (true/false)"},
        {"supervised_weight", "weight of the BCE term"},
    };
    return keys;
}

void TrainConfig::set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (key == "dataset") dataset = v;
    else if (key == "out") out = v;
    else if (key == "patch_size") patch_size = parse_int(key, v);
    else if (key == "patch_stride") patch_stride = parse_int(key, v);
    else if (key == "batch_size") batch_size = parse_int(key, v);
    else if (key == "total_steps") total_steps = parse_long(key, v);
    else if (key == "lr_disc") lr_disc = parse_double(key, v);
    else if (key == "lr_gen") lr_gen = parse_double(key, v);
    else if (key == "beta1") beta1 = parse_double(key, v);
    else if (key == "beta2") beta2 = parse_double(key, v);
    else if (key == "label_a") labels.a = parse_double(key, v);
    else if (key == "label_b") labels.b = parse_double(key, v);
    else if (key == "label_c") labels.c = parse_double(key, v);
    else if (key == "lambda_adv") weights = LossWeights::from_adv(parse_double(key, v));
    else if (key == "prior_center") prior_center = parse_double(key, v);
    else if (key == "prior_sigma") prior_sigma = parse_double(key, v);
    else if (key == "prior_bound") prior_bound = parse_double(key, v);
    else if (key == "fake_y_mean") fake_y_mean = parse_double(key, v);
    else if (key == "base_width") net.base_width = parse_int(key, v);
    else if (key == "color_dim") net.color_dim = parse_int(key, v);
    else if (key == "embed_channels") net.embed_channels = parse_int(key, v);
    else if (key == "leaky_slope") net.leaky_slope = parse_double(key, v);
    else if (key == "recon") {
        if (v == "absolute") rec.kind = ReconstructionKind::absolute;
        else if (v == "squared") rec.kind = ReconstructionKind::squared;
        else throw ConfigError("config key 'recon': expected absolute or squared");
    } else if (key == "latent_reduction") {
        if (v == "sum") rec.reduction = LatentReduction::sum;
        else if (v == "mean") rec.reduction = LatentReduction::mean;
        else throw ConfigError("config key 'latent_reduction': expected sum or mean");
    } else if (key == "mc_samples") rec.mc_samples = parse_int(key, v);
    else if (key == "seed") {
        const long s = parse_long(key, v);
        if (s < 0) throw ConfigError("config key 'seed': must be non-negative");
        seed = static_cast<std::uint64_t>(s);
    } else if (key == "checkpoint_interval") checkpoint_interval = parse_long(key, v);
    else if (key == "supervised") supervised = parse_bool(key, v);
    else if (key == "supervised_weight") supervised_weight = parse_double(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
}

void TrainConfig::validate() const {
    try {
        labels.validate();
        weights.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (patch_size <= 0 || patch_size % 4 != 0) throw ConfigError("patch_size must be a positive multiple of 4");
    if (patch_stride <= 0) throw ConfigError("patch_stride must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (total_steps < 0) throw ConfigError("total_steps must be non-negative");
    if (!(lr_disc > 0.0) || !(lr_gen > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("moment decays must be in [0,1)");
    if (!(prior_sigma > 0.0) || !(prior_bound > prior_center) || prior_center < 0.0)
        throw ConfigError("prior needs sigma > 0 and 0 <= center < bound");
    if (net.base_width < 1 || net.color_dim < 1 || net.embed_channels < 1) throw ConfigError("network sizes must be positive");
    if (rec.mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
    if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be non-negative");
    if (supervised_weight < 0.0) throw ConfigError("supervised_weight must be non-negative");
}

TrainConfig TrainConfig::from_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
        try {
            cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str(), path.string());
}

std::string TrainConfig::to_text() const {
    std::ostringstream os;
    os << "dataset = " << dataset.string() << '\n'
       << "out = " << out.string() << '\n'
       << "patch_size = " << patch_size << '\n'
       << "patch_stride = " << patch_stride << '\n'
       << "batch_size = " << batch_size << '\n'
       << "total_steps = " << total_steps << '\n'
       << "lr_disc = " << num(lr_disc) << '\n'
       << "lr_gen = " << num(lr_gen) << '\n'
       << "beta1 = " << num(beta1) << '\n'
       << "beta2 = " << num(beta2) << '\n'
       << "label_a = " << num(labels.a) << '\n'
       << "label_b = " << num(labels.b) << '\n'
       << "label_c = " << num(labels.c) << '\n'
       << "lambda_adv = " << num(weights.adv) << '\n'
       << "prior_center = " << num(prior_center) << '\n'
       << "prior_sigma = " << num(prior_sigma) << '\n'
       << "prior_bound = " << num(prior_bound) << '\n'
       << "fake_y_mean = " << num(fake_y_mean) << '\n'
       << "base_width = " << net.base_width << '\n'
       << "color_dim = " << net.color_dim << '\n'
       << "embed_channels = " << net.embed_channels << '\n'
       << "leaky_slope = " << num(net.leaky_slope) << '\n'
       << "recon = " << (rec.kind == ReconstructionKind::absolute ? "absolute" : "squared") << '\n'
       << "latent_reduction = " << (rec.reduction == LatentReduction::sum ? "sum" : "mean") << '\n'
       << "mc_samples = " << rec.mc_samples << '\n'
       << "seed = " << seed << '\n'
       << "checkpoint_interval = " << checkpoint_interval << '\n'
       << "supervised = " << (supervised ? "true" : "false") << '\n'
       << "supervised_weight = " << num(supervised_weight) << '\n';
    return os.str();
}

std::string TrainConfig::fingerprint() const {
    std::istringstream in(to_text());
    std::string line, kept;
    while (std::getline(in, line)) {
        const std::string key = trim(line.substr(0, line.find('=')));
        if (std::find(kRunOnlyKeys.begin(), kRunOnlyKeys.end(), key) == kRunOnlyKeys.end()) kept += line + '\n';
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(kept);
    return os.str();
}

TruncNormMixture TrainConfig::prior() const {
    return TruncNormMixture({TruncatedNormal(-prior_center, prior_sigma, -prior_bound, prior_bound),
                             TruncatedNormal(prior_center, prior_sigma, -prior_bound, prior_bound)},
                            {0.5, 0.5});
}

TrainingDiverged::TrainingDiverged(long step, std::string term)
    : std::runtime_error("non-finite loss term '" + term + "' at step " + std::to_string(step)),
      step_(step),
      term_(std::move(term)) {}

// ------------------------------------------------------------------ Adam

void Adam::step(const std::vector<ad::Var>& params) {
    if (m_.empty()) {
        for (const auto& p : params) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }
    if (m_.size() != params.size()) throw std::logic_error("Adam: parameter list changed");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        ad::Node& p = *params[k];
        if (p.grad.empty()) continue;  // untouched this step: no update, moments kept
        auto& m = m_[k].storage();
        auto& v = v_[k].storage();
        auto& w = p.value.storage();
        const auto& g = p.grad.storage();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
            v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
            w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
    }
}

void Adam::save(const std::filesystem::path& file) const {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    const std::uint64_t t = static_cast<std::uint64_t>(t_), n = m_.size();
    out.write(reinterpret_cast<const char*>(&t), sizeof t);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    for (std::size_t k = 0; k < m_.size(); ++k) {
        const std::uint64_t sz = m_[k].size();
        out.write(reinterpret_cast<const char*>(&sz), sizeof sz);
        out.write(reinterpret_cast<const char*>(m_[k].data()), static_cast<std::streamsize>(sz * sizeof(double)));
        out.write(reinterpret_cast<const char*>(v_[k].data()), static_cast<std::streamsize>(sz * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing " + file.string());
}

void Adam::load(const std::filesystem::path& file, const std::vector<ad::Var>& params) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read optimizer state " + file.string());
    std::uint64_t t = 0, n = 0;
    in.read(reinterpret_cast<char*>(&t), sizeof t);
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in) throw std::runtime_error("truncated optimizer state " + file.string());
    std::vector<Tensor> m, v;
    if (n != 0) {
        if (n != params.size()) throw std::runtime_error("optimizer state does not match the parameter list");
        for (const auto& p : params) {
            std::uint64_t sz = 0;
            in.read(reinterpret_cast<char*>(&sz), sizeof sz);
            if (!in || sz != p->value.size()) throw std::runtime_error("optimizer state shape mismatch in " + file.string());
            m.emplace_back(p->value.shape());
            v.emplace_back(p->value.shape());
            in.read(reinterpret_cast<char*>(m.back().data()), static_cast<std::streamsize>(sz * sizeof(double)));
            in.read(reinterpret_cast<char*>(v.back().data()), static_cast<std::streamsize>(sz * sizeof(double)));
        }
        if (!in) throw std::runtime_error("truncated optimizer state " + file.string());
    }
    t_ = static_cast<long>(t);
    m_ = std::move(m);
    v_ = std::move(v);
}

// ------------------------------------------------------------------ data

TrainData load_train_data(const std::filesystem::path& dataset, int patch_size, int stride, bool with_masks) {
    require_divisible_by_4(patch_size, patch_size);
    const auto entries = load_dataset(dataset, with_masks);
    TrainData data;
    for (const auto& e : entries) {
        const auto grid = make_patch_grid(e.image.height(), e.image.width(), patch_size, stride);
        for (const auto& [row, col] : grid.origins) {
            data.images.push_back(crop(e.image, row, col, patch_size, patch_size).pixels());
            if (with_masks) {
                Tensor m = Tensor::chw(1, patch_size, patch_size);
                for (int y = 0; y < patch_size; ++y)
                    for (int x = 0; x < patch_size; ++x) m.at(0, y, x) = e.mask->at(row + y, col + x);
                data.masks.push_back(std::move(m));
            }
        }
    }
    return data;
}

// ------------------------------------------------------------------ state

namespace {

std::vector<ad::Var> collect(std::initializer_list<const ParamSet*> sets) {
    std::vector<ad::Var> out;
    for (const auto* s : sets)
        for (const auto& v : s->vars()) out.push_back(v);
    return out;
}

Rng init_stream(std::uint64_t seed) {
    Rng r(seed);
    return r.derive(0x1417);
}

Model build_model(const TrainConfig& cfg) {
    Rng r = init_stream(cfg.seed);
    return Model(cfg.net, r);
}

Tensor normal_tensor(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal();
    return t;
}

// Mean binary cross-entropy between sigmoid(logit) and a {0,1} target.
ad::Var bce_with_logits(const ad::Var& logit, const Tensor& target) {
    const auto& l = logit->value.storage();
    const auto& t = target.storage();
    if (l.size() != t.size()) throw std::invalid_argument("supervised mask shape does not match the segmentation map");
    double s = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) s += std::max(l[i], 0.0) - l[i] * t[i] + std::log1p(std::exp(-std::abs(l[i])));
    const double n = static_cast<double>(l.size());
    return ad::make_node(Tensor({1}, s / n), {logit}, [logit, target, n](ad::Node& self) {
        if (!logit->requires_grad) return;
        auto& g = logit->grad_buffer().storage();
        const double up = self.grad[0];
        const auto& lv = logit->value.storage();
        for (std::size_t i = 0; i < lv.size(); ++i) g[i] += up * (1.0 / (1.0 + std::exp(-lv[i])) - target[i]) / n;
    });
}

}  // namespace

TrainState::TrainState(const TrainConfig& cfg)
    : config(cfg),
      model(build_model(cfg)),
      opt_disc(cfg.lr_disc, cfg.beta1, cfg.beta2),
      opt_gen(cfg.lr_gen, cfg.beta1, cfg.beta2),
      rng(cfg.seed) {
    config.validate();
}

std::vector<ad::Var> TrainState::disc_params() const { return model.disc.params().vars(); }

std::vector<ad::Var> TrainState::gen_params() const {
    return collect({&model.color.params(), &model.seg.params(), &model.embed.params(), &model.decoder.params()});
}

std::vector<std::size_t> next_batch(TrainState& state, std::size_t data_size) {
    if (data_size == 0) throw std::runtime_error("training data is empty");
    std::vector<std::size_t> idx(static_cast<std::size_t>(state.config.batch_size));
    for (auto& i : idx) i = static_cast<std::size_t>(state.rng.below(data_size));
    return idx;
}

LossReport train_step(const std::vector<Tensor>& batch, TrainState& state, const std::vector<Tensor>* masks) {
    const TrainConfig& cfg = state.config;
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    if (cfg.supervised && (!masks || masks->size() != batch.size()))
        throw std::invalid_argument("train_step: supervision needs one mask per image");
    const Model& model = state.model;
    const TruncNormMixture prior = cfg.prior();
    Rng& rng = state.rng;
    const int dc = cfg.net.color_dim;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    struct Branch {
        ad::Var x;
        ad::Var zc, y, zw;   // real: reparameterized samples / probs; fake: prior draws
        ad::Var x_fake;      // decoder output on the fake latents
        ad::Var logit;
    };
    std::vector<Branch> real(batch.size()), fake(batch.size());

    // Generator-side graphs first; their values double as the detached
    // inputs of the discriminator update, since that update leaves them unchanged.
    LossReport report;
    std::vector<ad::Var> rec_terms;
    std::vector<ad::Var> sup_terms;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Tensor& xt = batch[b];
        require_divisible_by_4(xt.dim(1), xt.dim(2));
        Branch& r = real[b];
        r.x = ad::constant(xt);
        const auto ec = model.color.forward(r.x);
        r.zc = ad::reparameterize(ec.mean, ec.log_var, normal_tensor(ec.mean->value.shape(), rng));
        const auto seg = model.seg.forward(ad::constant(extract_h_channel(RgbImage(xt), model.stain)));
        r.y = seg.probs;
        r.logit = seg.logit;
        const auto ew = model.embed.forward(r.x);
        r.zw = ad::reparameterize(ew.mean, ew.log_var, normal_tensor(ew.mean->value.shape(), rng));
        const ad::Var x_hat = model.decoder.forward(r.zc, r.y, r.zw);

        const std::vector<ad::Var> means{seg.logit, ew.mean}, lvs{seg.log_var, ew.log_var};
        const auto terms = ad::rec_objective(r.x, x_hat, ec.mean, ec.log_var, ad::concat_flat(means),
                                             ad::concat_flat(lvs), prior,
                                             draw_kl_noise(static_cast<std::size_t>(dc), cfg.rec.mc_samples, rng), cfg.rec);
        report.l_r += inv_b * ad::scalar(terms.l_r);
        report.r1 += inv_b * ad::scalar(terms.r1);
        report.r2 += inv_b * ad::scalar(terms.r2);
        report.entropy += inv_b * ad::scalar(terms.entropy);
        report.l_ssim += inv_b * ad::scalar(terms.l_ssim);
        report.j_rec += inv_b * ad::scalar(terms.j_rec);
        rec_terms.push_back(terms.j_rec);
        if (cfg.supervised) sup_terms.push_back(bce_with_logits(seg.logit, (*masks)[b]));

        Branch& f = fake[b];
        Tensor zc(std::vector<int>{dc});
        for (double& v : zc.values()) v = prior.sample(rng);
        Tensor y = normal_tensor({1, xt.dim(1), xt.dim(2)}, rng);
        for (double& v : y.values()) v = 1.0 / (1.0 + std::exp(-(v + cfg.fake_y_mean)));
        f.zc = ad::constant(std::move(zc));
        f.y = ad::constant(std::move(y));
        f.zw = ad::constant(normal_tensor({cfg.net.embed_channels, xt.dim(1) / 4, xt.dim(2) / 4}, rng));
        f.x_fake = model.decoder.forward(f.zc, f.y, f.zw);
    }
    if (auto bad = report.first_non_finite(); !bad.empty()) throw TrainingDiverged(state.step, bad);

    // (1) discriminator
    const auto dparams = state.disc_params();
    ad::zero_grad(dparams);
    std::vector<ad::Var> real_scores, fake_scores;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Branch& r = real[b];
        real_scores.push_back(model.disc.forward(r.x, ad::constant(r.zc->value), ad::constant(r.y->value),
                                                 ad::constant(r.zw->value)));
        const Branch& f = fake[b];
        fake_scores.push_back(model.disc.forward(ad::constant(f.x_fake->value), f.zc, f.y, f.zw));
    }
    const ad::Var j_disc = ad::disc_loss(real_scores, fake_scores, cfg.labels);
    report.j_disc = ad::scalar(j_disc);
    if (!std::isfinite(report.j_disc)) throw TrainingDiverged(state.step, "j_disc");
    ad::backward(j_disc);
    state.opt_disc.step(dparams);

    // (2) encoders, segmentation net and decoder against the updated critic
    std::vector<ad::Var> gen_scores;
    for (const Branch& f : fake) gen_scores.push_back(model.disc.forward(f.x_fake, f.zc, f.y, f.zw));
    const ad::Var j_gen = ad::gen_loss(gen_scores, cfg.labels);
    report.j_gen = ad::scalar(j_gen);
    if (!std::isfinite(report.j_gen)) throw TrainingDiverged(state.step, "j_gen");
    report.j_total = total_objective(report.j_gen, report.j_rec, cfg.weights);

    ad::Var objective = ad::add(ad::scale(j_gen, cfg.weights.adv), ad::scale(ad::add_all(rec_terms), cfg.weights.rec * inv_b));
    if (cfg.supervised)
        objective = ad::add(objective, ad::scale(ad::add_all(sup_terms), cfg.supervised_weight * inv_b));
    const auto gparams = state.gen_params();
    ad::zero_grad(gparams);
    ad::backward(objective);
    state.opt_gen.step(gparams);

    ++state.step;
    return report;
}

// ------------------------------------------------------------------ checkpoints

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_params(state.model.all_sets(), dir / "params");
    state.opt_disc.save(dir / "optim_disc.bin");
    state.opt_gen.save(dir / "optim_gen.bin");
    {
        std::ofstream out(dir / "rng.txt");
        out << state.rng.serialize() << '\n';
        if (!out) throw std::runtime_error("cannot write " + (dir / "rng.txt").string());
    }
    std::ofstream out(dir / "state.txt");
    out << "step " << state.step << '\n' << "fingerprint " << state.config.fingerprint() << '\n';
    out << state.config.to_text();
    if (!out) throw std::runtime_error("cannot write " + (dir / "state.txt").string());
}

void load_checkpoint(TrainState& state, const std::filesystem::path& dir) {
    std::ifstream in(dir / "state.txt");
    if (!in) throw std::runtime_error("not a checkpoint directory: " + dir.string());
    std::string tag, fp;
    long step = 0;
    in >> tag >> step >> tag >> fp;
    if (!in) throw std::runtime_error("corrupt checkpoint state in " + dir.string());
    if (fp != state.config.fingerprint())
        throw ConfigError("checkpoint fingerprint " + fp + " does not match the configuration (" +
                          state.config.fingerprint() + ")");
    load_params(state.model.all_sets(), dir / "params");
    state.opt_disc.load(dir / "optim_disc.bin", state.disc_params());
    state.opt_gen.load(dir / "optim_gen.bin", state.gen_params());
    std::ifstream rin(dir / "rng.txt");
    std::stringstream rs;
    rs << rin.rdbuf();
    state.rng = Rng::deserialize(rs.str());
    state.step = step;
}

TrainConfig checkpoint_config(const std::filesystem::path& dir) {
    std::ifstream in(dir / "state.txt");
    if (!in) throw std::runtime_error("not a checkpoint directory: " + dir.string());
    std::string step_line, fp_line;
    std::getline(in, step_line);
    std::getline(in, fp_line);
    std::stringstream rest;
    rest << in.rdbuf();
    return TrainConfig::from_text(rest.str(), (dir / "state.txt").string());
}

Model load_model(const std::filesystem::path& dir) {
    const TrainConfig cfg = checkpoint_config(dir);
    Rng rng(cfg.seed);
    Model model(cfg.net, rng);
    load_params(model.all_sets(), dir / "params");
    return model;
}

// ------------------------------------------------------------------ fit

FitResult fit(const TrainConfig& config, const TrainData& data, const std::optional<std::filesystem::path>& resume) {
    config.validate();
    if (data.images.empty()) throw std::runtime_error("dataset contains no training patches");
    if (config.supervised && data.masks.size() != data.images.size())
        throw std::runtime_error("supervised training needs a mask for every patch");

    std::error_code ec;
    std::filesystem::create_directories(config.out, ec);
    FitResult result{config.out / "final", config.out / "telemetry.csv", {}};
    {
        std::ofstream probe(result.telemetry, std::ios::app);
        if (ec || !probe) throw std::runtime_error("output directory not writable: " + config.out.string());
    }

    TrainState state(config);
    std::vector<std::string> kept_rows;
    if (resume) {
        load_checkpoint(state, *resume);
        std::ifstream old(result.telemetry);
        std::string line;
        std::getline(old, line);
        while (std::getline(old, line)) {
            if (line.empty()) continue;
            if (std::stol(line.substr(0, line.find(','))) < state.step) kept_rows.push_back(line);
        }
    }
    std::ofstream tele(result.telemetry, std::ios::trunc);
    tele << LossReport::csv_header() << '\n';
    for (const auto& r : kept_rows) tele << r << '\n';
    tele.flush();

    std::vector<Tensor> batch, masks;
    while (state.step < config.total_steps) {
        batch.clear();
        masks.clear();
        for (std::size_t i : next_batch(state, data.images.size())) {
            batch.push_back(data.images[i]);
            if (config.supervised) masks.push_back(data.masks[i]);
        }
        const long step = state.step;
        const LossReport report = train_step(batch, state, config.supervised ? &masks : nullptr);
        result.reports.push_back(report);
        tele << report.csv_row(step) << '\n';
        tele.flush();
        if (config.checkpoint_interval > 0 && state.step % config.checkpoint_interval == 0) {
            std::ostringstream name;
            name << "step_" << std::setw(7) << std::setfill('0') << state.step;
            save_checkpoint(state, config.out / "checkpoints" / name.str());
        }
    }
    save_checkpoint(state, result.final_checkpoint);
    return result;
}

FitResult fit(const TrainConfig& config, const std::optional<std::filesystem::path>& resume) {
    config.validate();
    if (config.dataset.empty()) throw ConfigError("no dataset configured");
    const TrainData data = load_train_data(config.dataset, config.patch_size, config.patch_stride, config.supervised);
    return fit(config, data, resume);
}

}  // namespace silicon
