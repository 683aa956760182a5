#pragma once

// Synthetic H&E-like images with exact ground truth, rendered through the
// Beer–Lambert model: nuclei are hematoxylin-rich ellipses over an
// eosin-stained background.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "silicon/imagecore.hpp"
#include "silicon/rng.hpp"

namespace silicon {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
};

struct SynthSpec {
    int image_size = 32;
    int nuclei_min = 2;
    int nuclei_max = 5;
    Range radius{3.0, 6.0};           // pixels
    Range h_concentration{0.6, 1.0};  // OD
    Range e_concentration{0.15, 0.35};
    double color_jitter_deg = 10.0;   // max rotation of each stain vector
    /// Extra per-image rotation around the group's matrix (0 = groups are
    /// internally constant).
    double within_group_jitter_deg = 0.0;
    double noise_sigma = 0.01;
    double max_eccentricity = 0.8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthSample {
    RgbImage image;
    BinaryMask mask;
    StainMatrix stain_matrix;
    Tensor concentrations;  // (2,H,W): hematoxylin, eosin
    int group = 0;
    std::uint64_t seed = 0;
};

/// Rotates the H and E rows by independent angles up to max_deg; DAB is kept.
StainMatrix jitter_stains(const StainMatrix& base, double max_deg, Rng& rng);

/// Renders one image under a fixed stain matrix.
SynthSample render_sample(const SynthSpec& spec, const StainMatrix& stains, Rng& rng);
/// Draws its own stain jitter, then renders.
SynthSample synth_sample(const SynthSpec& spec, Rng& rng);

/// n images split into contiguous biopsy groups sharing one stain matrix each.
std::vector<SynthSample> synth_set(const SynthSpec& spec, int n, int biopsy_groups, Rng& rng);

/// images/*.png, masks/*.png and meta.csv.
void write_dataset(const std::vector<SynthSample>& samples, const std::filesystem::path& dir);

struct DatasetEntry {
    std::string id;
    int group = 0;
    RgbImage image;
    std::optional<BinaryMask> mask;
    std::optional<StainMatrix> stain_matrix;
};

/// Masks are read only when requested.
std::vector<DatasetEntry> load_dataset(const std::filesystem::path& dir, bool load_masks);

}  // namespace silicon
