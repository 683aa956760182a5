#include "silicon/inference.hpp"

#include <stdexcept>

namespace silicon {

InferenceNets InferenceNets::from_model(const Model& model) {
    InferenceNets n;
    n.color_mean = [&model](const Tensor& x) { return encode_color(x, model).posterior.mean; };
    n.segment = [&model](const Tensor& x) { return generate_segmap(x, model).probs; };
    n.embed_mean = [&model](const Tensor& x) { return encode_embedding(x, model).mean; };
    n.decode = [&model](const std::vector<double>& zc, const Tensor& y, const Tensor& zw) {
        return silicon::decode(zc, y, zw, model);
    };
    n.embed_factor = 4;
    return n;
}

namespace {

bool tiled(const InferenceOptions& opt, int h, int w) {
    return opt.patch_size > 0 && (h > opt.patch_size || w > opt.patch_size);
}

void check_options(const InferenceOptions& opt) {
    if (opt.patch_size < 0 || (opt.patch_size > 0 && (opt.patch_size % 4 != 0 || opt.stride <= 0 || opt.stride % 4 != 0)))
        throw std::invalid_argument("inference tiles need a patch size and stride that are positive multiples of 4");
    if (opt.patch_size > 0 && opt.stride > opt.patch_size)
        throw std::invalid_argument("inference tile stride must not exceed the tile size");
}

Tensor crop_tensor(const Tensor& t, int row, int col, int h, int w) {
    Tensor out = Tensor::chw(t.dim(0), h, w);
    for (int c = 0; c < t.dim(0); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, row + y, col + x);
    return out;
}

// Applies fn tile by tile over the inputs (all full resolution or scaled by
// their own factor) and averages overlapping outputs. `out_factor` is the
// output down-sampling relative to full resolution.
Tensor tile_apply(const std::vector<std::pair<const Tensor*, int>>& inputs, int height, int width, int out_factor,
                  const InferenceOptions& opt, const std::function<Tensor(const std::vector<Tensor>&)>& fn) {
    const auto grid = make_patch_grid(height, width, opt.patch_size, opt.stride);
    Tensor acc, weight;
    for (const auto& [row, col] : grid.origins) {
        std::vector<Tensor> tiles;
        for (const auto& [t, f] : inputs)
            tiles.push_back(crop_tensor(*t, row / f, col / f, opt.patch_size / f, opt.patch_size / f));
        const Tensor out = fn(tiles);
        const int oh = opt.patch_size / out_factor, ow = opt.patch_size / out_factor;
        if (out.dim(1) != oh || out.dim(2) != ow) throw std::logic_error("tile output has an unexpected size");
        if (acc.empty()) {
            acc = Tensor::chw(out.dim(0), height / out_factor, width / out_factor);
            weight = Tensor::chw(1, height / out_factor, width / out_factor);
        }
        const int r0 = row / out_factor, c0 = col / out_factor;
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) {
                weight.at(0, r0 + y, c0 + x) += 1.0;
                for (int c = 0; c < out.dim(0); ++c) acc.at(c, r0 + y, c0 + x) += out.at(c, y, x);
            }
    }
    for (int c = 0; c < acc.dim(0); ++c)
        for (int y = 0; y < acc.dim(1); ++y)
            for (int x = 0; x < acc.dim(2); ++x) acc.at(c, y, x) /= weight.at(0, y, x);
    return acc;
}

Tensor run_segment(const Tensor& x, const InferenceNets& nets, const InferenceOptions& opt) {
    if (!tiled(opt, x.dim(1), x.dim(2))) return nets.segment(x);
    return tile_apply({{&x, 1}}, x.dim(1), x.dim(2), 1, opt, [&](const std::vector<Tensor>& t) { return nets.segment(t[0]); });
}

Tensor run_embed(const Tensor& x, const InferenceNets& nets, const InferenceOptions& opt) {
    if (!tiled(opt, x.dim(1), x.dim(2))) return nets.embed_mean(x);
    return tile_apply({{&x, 1}}, x.dim(1), x.dim(2), nets.embed_factor, opt,
                      [&](const std::vector<Tensor>& t) { return nets.embed_mean(t[0]); });
}

Tensor run_decode(const std::vector<double>& zc, const Tensor& y, const Tensor& zw, const InferenceNets& nets,
                  const InferenceOptions& opt) {
    if (!tiled(opt, y.dim(1), y.dim(2))) return nets.decode(zc, y, zw);
    return tile_apply({{&y, 1}, {&zw, nets.embed_factor}}, y.dim(1), y.dim(2), 1, opt,
                      [&](const std::vector<Tensor>& t) { return nets.decode(zc, t[0], t[1]); });
}

void require_nets(const InferenceNets& nets) {
    if (!nets.color_mean || !nets.segment || !nets.embed_mean || !nets.decode)
        throw std::invalid_argument("inference networks are not fully specified");
}

}  // namespace

TemplateCode encode_template(const RgbImage& tmpl, const InferenceNets& nets, const InferenceOptions& opt) {
    require_nets(nets);
    check_options(opt);
    require_divisible_by_4(tmpl.height(), tmpl.width());
    const Tensor& x = tmpl.pixels();
    return {nets.color_mean(x), run_segment(x, nets, opt), run_embed(x, nets, opt)};
}

std::vector<NormalizationResult> normalize_and_segment(const RgbImage& tmpl, const std::vector<RgbImage>& sources,
                                                       const InferenceNets& nets, const InferenceOptions& opt) {
    const TemplateCode code = encode_template(tmpl, nets, opt);
    std::vector<NormalizationResult> out;
    out.reserve(sources.size());
    for (const RgbImage& src : sources) {
        require_divisible_by_4(src.height(), src.width());
        const Tensor& x = src.pixels();
        NormalizationResult r;
        r.template_zc = code.z_c;
        r.source_zc = nets.color_mean(x);
        r.source_y = run_segment(x, nets, opt);
        r.source_zw = run_embed(x, nets, opt);
        r.normalized_image = RgbImage(run_decode(code.z_c, r.source_y, r.source_zw, nets, opt));
        r.final_segmap = SegMap{run_segment(r.normalized_image.pixels(), nets, opt), 0.5};
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<NormalizationResult> normalize_and_segment(const RgbImage& tmpl, const std::vector<RgbImage>& sources,
                                                       const Model& model, const InferenceOptions& opt) {
    return normalize_and_segment(tmpl, sources, InferenceNets::from_model(model), opt);
}

SegMap segment_map(const RgbImage& image, const InferenceNets& nets, const InferenceOptions& opt) {
    require_nets(nets);
    check_options(opt);
    require_divisible_by_4(image.height(), image.width());
    return SegMap{run_segment(image.pixels(), nets, opt), 0.5};
}

BinaryMask segment_only(const RgbImage& image, const Model& model, double threshold, const InferenceOptions& opt) {
    SegMap m = segment_map(image, InferenceNets::from_model(model), opt);
    m.threshold = threshold;
    return m.binarize();
}

}  // namespace silicon
