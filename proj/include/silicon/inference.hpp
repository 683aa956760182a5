#pragma once

// Template-based color normalization followed by segmentation of the
// normalized image. Inference always uses posterior means.

#include <functional>
#include <vector>

#include "silicon/imagecore.hpp"
#include "silicon/nets.hpp"

namespace silicon {

/// The four mappings inference needs. Built from a trained model, or
/// replaced by stubs to check the wiring in isolation.
struct InferenceNets {
    std::function<std::vector<double>(const Tensor& x)> color_mean;  // E_c mean
    std::function<Tensor(const Tensor& x)> segment;                  // F_phi probabilities, (1,H,W)
    std::function<Tensor(const Tensor& x)> embed_mean;               // E_omega mean
    std::function<Tensor(const std::vector<double>& z_c, const Tensor& y, const Tensor& z_omega)> decode;
    /// Spatial down-sampling factor of the embedding map.
    int embed_factor = 4;

    static InferenceNets from_model(const Model& model);
};

struct InferenceOptions {
    /// 0 processes each image whole; otherwise overlapping tiles are
    /// averaged with uniform weights.
    int patch_size = 0;
    int stride = 0;  // multiple of 4, at most patch_size
};

struct NormalizationResult {
    RgbImage normalized_image;
    SegMap final_segmap;  // computed from normalized_image
    std::vector<double> source_zc;
    Tensor source_y;
    Tensor source_zw;
    std::vector<double> template_zc;
};

/// Intermediates of the template. Only z_c feeds the sources; y and z_omega
/// are kept for inspection.
struct TemplateCode {
    std::vector<double> z_c;
    Tensor y;
    Tensor z_omega;
};

TemplateCode encode_template(const RgbImage& tmpl, const InferenceNets& nets, const InferenceOptions& opt = {});

std::vector<NormalizationResult> normalize_and_segment(const RgbImage& tmpl, const std::vector<RgbImage>& sources,
                                                       const InferenceNets& nets, const InferenceOptions& opt = {});
std::vector<NormalizationResult> normalize_and_segment(const RgbImage& tmpl, const std::vector<RgbImage>& sources,
                                                       const Model& model, const InferenceOptions& opt = {});

SegMap segment_map(const RgbImage& image, const InferenceNets& nets, const InferenceOptions& opt = {});
BinaryMask segment_only(const RgbImage& image, const Model& model, double threshold = 0.5,
                        const InferenceOptions& opt = {});

}  // namespace silicon
