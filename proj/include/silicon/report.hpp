#pragma once

// Dataset-level evaluation: segmentation scores before and after
// normalization, NMI-based constancy indices per biopsy group, stain-vector
// spread per group and paired significance tests.

#include <optional>
#include <string>
#include <vector>

#include "silicon/inference.hpp"
#include "silicon/metrics.hpp"

namespace silicon {

struct EvalSample {
    std::string id;
    int group = 0;
    RgbImage image;
    BinaryMask truth;
};

struct ImageEval {
    std::string id;
    int group = 0;
    SegScores seg_source;      // F_phi on the source
    SegScores seg_normalized;  // F_phi on the normalized image
    double nmi_pre = 0, nmi_post = 0;
    double bicc_pre = 0, bicc_post = 0;  // against the template's NMI
    std::optional<StainVectors> stains_pre, stains_post;
};

struct GroupEval {
    int group = 0;
    int count = 0;
    double wscc_pre = 0, wscc_post = 0;
    std::optional<StainSd> sd_pre, sd_post;  // needs >= 2 images with both stains
};

struct EvalReport {
    std::vector<ImageEval> images;
    std::vector<GroupEval> groups;
    double template_nmi = 0;
    SegScores mean_source, mean_normalized;
    double mean_wscc_pre = 0, mean_wscc_post = 0;
    /// Mean over groups of the mean per-component SD; NaN if no group qualifies.
    double mean_sd_pre = 0, mean_sd_post = 0;
    /// One-tailed tests of bicc_post > bicc_pre (NaN below 5 images).
    double p_paired_t = 0, p_wilcoxon = 0;

    std::string metrics_csv() const;
    /// `key = value` lines.
    std::string summary() const;
};

/// Without `template_mask` the template's NMI uses the mask predicted on it;
/// BiCC values are NaN when that mask is empty.
EvalReport evaluate(const std::vector<EvalSample>& samples, const RgbImage& tmpl, const InferenceNets& nets,
                    double threshold = 0.5, const InferenceOptions& opt = {},
                    const BinaryMask* template_mask = nullptr);

}  // namespace silicon
