#pragma once

// The five networks: color encoder E_c, attention U-Net F_phi over the
// hematoxylin channel, embedding encoder E_omega, decoder G and the
// quadruplet discriminator D.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "silicon/autograd.hpp"
#include "silicon/imagecore.hpp"
#include "silicon/priors.hpp"
#include "silicon/rng.hpp"

namespace silicon {

struct NetConfig {
    int base_width = 32;
    int color_dim = 8;       // d_c
    int embed_channels = 4;  // c_omega
    double leaky_slope = 0.2;
    /// Color encoder built from stride-1 1x1 convolutions (pooling-invariance checks).
    bool color_pointwise = false;
};

/// Named parameters of one network, in registration order.
class ParamSet {
public:
    ad::Var add(const std::string& name, Tensor init);
    const ad::Var& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::pair<std::string, ad::Var>>& entries() const { return entries_; }
    std::vector<ad::Var> vars() const;
    std::size_t scalar_count() const;
    /// Shape manifest, one "name d0 d1 ..." line per parameter.
    std::string manifest() const;

private:
    std::vector<std::pair<std::string, ad::Var>> entries_;
    std::map<std::string, std::size_t> index_;
};

struct GaussianMaps {
    ad::Var mean;
    ad::Var log_var;
};

class ColorEncoder {
public:
    ColorEncoder(const NetConfig& cfg, Rng& rng);
    GaussianMaps forward(const ad::Var& x) const;  // x: (3,H,W) -> (d_c), (d_c)
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    NetConfig cfg_;
    ParamSet params_;
};

struct SegForward {
    ad::Var logit;      // posterior mean of the pre-sigmoid map, (1,H,W)
    ad::Var log_var;    // (1,H,W)
    ad::Var probs;      // sigmoid(logit)
    std::vector<ad::Var> attention;  // one (1,h,w) gate per skip, coarse to fine
};

class SegmentationNet {
public:
    SegmentationNet(const NetConfig& cfg, Rng& rng);
    /// h: (1,H,W) hematoxylin channel; H and W divisible by 4. With
    /// `fixed_gate`, skips are scaled by that constant instead of gated.
    SegForward forward(const ad::Var& h, std::optional<double> fixed_gate = std::nullopt) const;
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    ad::Var gate(const std::string& prefix, const ad::Var& skip, const ad::Var& gating) const;
    NetConfig cfg_;
    ParamSet params_;
};

class EmbeddingEncoder {
public:
    EmbeddingEncoder(const NetConfig& cfg, Rng& rng);
    GaussianMaps forward(const ad::Var& x) const;  // -> (c_omega, H/4, W/4) each
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    NetConfig cfg_;
    ParamSet params_;
};

class Decoder {
public:
    Decoder(const NetConfig& cfg, Rng& rng);
    ad::Var forward(const ad::Var& z_c, const ad::Var& y, const ad::Var& z_omega) const;  // -> (3,H,W)
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    NetConfig cfg_;
    ParamSet params_;
};

class Discriminator {
public:
    Discriminator(const NetConfig& cfg, Rng& rng);
    /// Unbounded real score, shape (1).
    ad::Var forward(const ad::Var& x, const ad::Var& z_c, const ad::Var& y, const ad::Var& z_omega) const;
    ParamSet& params() { return params_; }
    const ParamSet& params() const { return params_; }

private:
    NetConfig cfg_;
    ParamSet params_;
};

/// All five networks plus the stain basis used for H-channel extraction.
struct Model {
    NetConfig config;
    StainMatrix stain = StainMatrix::ruifrok();
    ColorEncoder color;
    SegmentationNet seg;
    EmbeddingEncoder embed;
    Decoder decoder;
    Discriminator disc;

    Model(const NetConfig& cfg, Rng& rng);

    std::vector<ParamSet*> generator_sets();
    std::vector<const ParamSet*> all_sets() const;
    std::vector<ParamSet*> all_sets();
};

// Value-level interface.

struct ColorCode {
    DiagGaussian posterior;
    std::vector<double> sample;
};

struct SegMap {
    Tensor probs;  // (1,H,W), strictly inside (0,1)
    double threshold = 0.5;
    BinaryMask binarize() const;
    BinaryMask binarize(double t) const;
};

struct EmbeddingMap {
    Tensor mean;     // (c_omega, H/4, W/4)
    Tensor log_var;
    Tensor sample;
};

struct Quadruplet {
    Tensor x;        // (3,H,W)
    std::vector<double> z_c;
    Tensor y;        // (1,H,W)
    Tensor z_omega;  // (c_omega, H/4, W/4)
};

/// Throws unless H and W are multiples of 4.
void require_divisible_by_4(int height, int width);

/// Posterior mean as the sample unless a random source is given.
ColorCode encode_color(const Tensor& x, const Model& model, Rng* rng = nullptr);
SegMap generate_segmap(const Tensor& x, const Model& model);
EmbeddingMap encode_embedding(const Tensor& x, const Model& model, Rng* rng = nullptr);
Tensor decode(const std::vector<double>& z_c, const Tensor& y, const Tensor& z_omega, const Model& model);
double discriminate(const Quadruplet& q, const Model& model);

/// Checkpoint directory: one raw little-endian float64 file per parameter
/// plus manifest.txt. Loading validates names and shapes.
void save_params(const std::vector<const ParamSet*>& sets, const std::filesystem::path& dir);
void load_params(const std::vector<ParamSet*>& sets, const std::filesystem::path& dir);

}  // namespace silicon
