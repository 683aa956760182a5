#pragma once

// Segmentation scores, color-constancy indices, stain-vector statistics and
// one-tailed paired significance tests.
//
// BiCC and WsCC follow the lab definitions used throughout this project:
// BiCC = min/max of two NMI values, WsCC = max(0, 1 - sd/mean) over a set.

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "silicon/imagecore.hpp"

namespace silicon {

struct SegScores {
    double dice = 0, jaccard = 0, precision = 0, recall = 0;
};

/// Empty truth and empty prediction score 1 everywhere; a score whose
/// denominator is empty while the other mask is not scores 0.
SegScores dice_jaccard_prec_rec(const BinaryMask& pred, const BinaryMask& truth);

/// median(u) / P95(u) over nuclei pixels, u = mean of RGB; linear-interpolated percentiles.
double nmi(const RgbImage& image, const BinaryMask& nuclei_mask);
/// Percentile with linear interpolation between order statistics (q in [0,100]).
double percentile(std::vector<double> values, double q);

double bicc(double nmi_i, double nmi_j);
double wscc(std::span<const double> nmi_values);

struct StainVectors {
    Vec3 h;
    Vec3 e;
};

class NoTissueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tissue pixels (summed OD > 0.05) are split by comparing their H and E
/// concentrations under `basis`; each stain vector is the unit-normalized
/// geometric median of its class's OD vectors.
StainVectors estimate_stain_vectors(const RgbImage& image, const StainMatrix& basis = StainMatrix::ruifrok());

/// Weiszfeld iteration: at most 100 steps or 1e-9 movement.
Vec3 geometric_median(const std::vector<Vec3>& points);

/// Sample SD (n-1) of each OD component across a group, per stain.
struct StainSd {
    Vec3 h;
    Vec3 e;
    double mean() const;
};
StainSd stain_vector_sd(const std::vector<StainVectors>& group);

/// One-tailed p-values for the alternative mean(a - b) > 0.
/// a == b gives 0.5; zero-variance differences give 0 (positive) or 1 (negative).
double paired_t(std::span<const double> a, std::span<const double> b);
/// Zero differences are dropped; exact null distribution when n <= 50 with
/// no ties, otherwise the normal approximation with tie correction.
double wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

}  // namespace silicon
