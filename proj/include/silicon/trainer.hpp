#pragma once

// Alternating least-squares adversarial training of the five networks with
// the reconstruction objective on the generator side.

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "silicon/losses.hpp"
#include "silicon/nets.hpp"
#include "silicon/priors.hpp"
#include "silicon/rng.hpp"

namespace silicon {

struct TrainConfig {
    std::filesystem::path dataset;
    std::filesystem::path out = "run";
    int patch_size = 32;
    int patch_stride = 32;
    int batch_size = 4;
    long total_steps = 2000;
    double lr_disc = 2e-4;
    double lr_gen = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    DiscLabels labels;
    LossWeights weights;
    // z_c prior: two truncated normals at ±prior_center, equal weights
    double prior_center = 1.0;
    double prior_sigma = 0.5;
    double prior_bound = 3.0;
    /// Fake segmentation maps are sigmoid(N(fake_y_mean, 1)). A negative mean
    /// makes nuclei the minority class and fixes the map's polarity.
    double fake_y_mean = 0.0;
    NetConfig net{8, 8, 4, 0.2, false};
    RecOptions rec{ReconstructionKind::absolute, LatentReduction::mean, 1, {}};
    std::uint64_t seed = 0;
    long checkpoint_interval = 500;
    bool supervised = false;          // BCE on F_phi against ground-truth masks
    double supervised_weight = 1.0;

    void validate() const;
    void set(const std::string& key, const std::string& value);
    /// `key = value` lines; '#' starts a comment.
    static TrainConfig from_file(const std::filesystem::path& path);
    static TrainConfig from_text(const std::string& text, const std::string& origin);
    std::string to_text() const;
    static const std::vector<std::pair<std::string, std::string>>& documented_keys();
    /// Hash of every setting that affects the optimization trajectory
    /// (dataset location, output directory, run length and checkpoint
    /// cadence excluded).
    std::string fingerprint() const;
    TruncNormMixture prior() const;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(long step, std::string term);
    long step() const { return step_; }
    const std::string& term() const { return term_; }

private:
    long step_;
    std::string term_;
};

/// Adam with bias correction over a fixed parameter list.
class Adam {
public:
    Adam(double lr, double beta1, double beta2, double eps = 1e-8) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}
    void step(const std::vector<ad::Var>& params);
    long iterations() const { return t_; }

    void save(const std::filesystem::path& file) const;
    void load(const std::filesystem::path& file, const std::vector<ad::Var>& params);

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Training patches and, only when supervision is on, their masks.
struct TrainData {
    std::vector<Tensor> images;  // (3,H,W), all the same shape
    std::vector<Tensor> masks;   // (1,H,W) in {0,1}; empty unless supervised
};

/// Cuts every dataset image into patches; masks are read only if `with_masks`.
TrainData load_train_data(const std::filesystem::path& dataset, int patch_size, int stride, bool with_masks);

struct TrainState {
    TrainConfig config;
    Model model;
    Adam opt_disc;
    Adam opt_gen;
    Rng rng;
    long step = 0;

    explicit TrainState(const TrainConfig& cfg);
    std::vector<ad::Var> disc_params() const;
    std::vector<ad::Var> gen_params() const;
};

/// One discriminator update followed by one generator-side update. `masks`
/// is consulted only when supervision is enabled.
LossReport train_step(const std::vector<Tensor>& batch, TrainState& state,
                      const std::vector<Tensor>* masks = nullptr);

/// Draws the next batch indices from the state's random stream.
std::vector<std::size_t> next_batch(TrainState& state, std::size_t data_size);

/// Directory: params/ (per-network weights), optim_disc.bin, optim_gen.bin,
/// rng.txt and state.txt (step, fingerprint).
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
void load_checkpoint(TrainState& state, const std::filesystem::path& dir);

/// The configuration stored with a checkpoint, and its trained networks.
TrainConfig checkpoint_config(const std::filesystem::path& dir);
Model load_model(const std::filesystem::path& dir);

struct FitResult {
    std::filesystem::path final_checkpoint;
    std::filesystem::path telemetry;
    std::vector<LossReport> reports;  // steps run in this call
};

/// Runs until config.total_steps. With `resume`, training continues from that
/// checkpoint and telemetry rows up to its step are kept.
FitResult fit(const TrainConfig& config, const TrainData& data,
              const std::optional<std::filesystem::path>& resume = std::nullopt);
FitResult fit(const TrainConfig& config, const std::optional<std::filesystem::path>& resume = std::nullopt);

}  // namespace silicon
