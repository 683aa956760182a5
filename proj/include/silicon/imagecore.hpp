#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "silicon/tensor.hpp"

namespace silicon {

/// Linear-intensity RGB image stored channel-major as a (3, H, W) tensor,
/// every value in [0, 1].
class RgbImage {
public:
    RgbImage() = default;
    RgbImage(int height, int width, double fill = 1.0);
    /// Validates shape and range.
    explicit RgbImage(Tensor pixels);

    int height() const { return pixels_.dim(1); }
    int width() const { return pixels_.dim(2); }
    const Tensor& pixels() const { return pixels_; }
    double at(int c, int y, int x) const { return pixels_.at(c, y, x); }
    void set(int c, int y, int x, double v);

private:
    Tensor pixels_;
};

/// Optical densities in (Hematoxylin, Eosin, DAB) channel order, (3, H, W), all ≥ 0.
struct HedImage {
    Tensor od;
    int height() const { return od.dim(1); }
    int width() const { return od.dim(2); }
};

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;  // row-major, 0 or 1

    BinaryMask() = default;
    BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}
    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
    std::size_t count() const;
    bool operator==(const BinaryMask&) const = default;
};

using Vec3 = std::array<double, 3>;

/// Three unit-norm stain OD vectors (rows) and the inverse used for deconvolution.
class StainMatrix {
public:
    /// Rows are normalized to unit length. Throws if the basis is singular.
    static StainMatrix from_rows(const std::array<Vec3, 3>& rows);
    /// Hematoxylin / Eosin / DAB basis of Ruifrok and Johnston.
    static StainMatrix ruifrok();

    const std::array<Vec3, 3>& rows() const { return rows_; }
    const std::array<Vec3, 3>& inverse() const { return inverse_; }
    const Vec3& row(int i) const { return rows_[i]; }

private:
    std::array<Vec3, 3> rows_{};
    std::array<Vec3, 3> inverse_{};
};

inline constexpr double kOdEpsilon = 1e-6;
inline constexpr double kHChannelCap = 1.5;

/// OD(p) = -log10((p + eps) / (1 + eps)); white maps to exactly zero.
double optical_density(double intensity);
/// Exact inverse of optical_density, clamped to [0, 1].
double intensity_from_od(double od);

HedImage rgb_to_hed(const RgbImage& img, const StainMatrix& m);
RgbImage hed_to_rgb(const HedImage& hed, const StainMatrix& m);
/// Hematoxylin density divided by kHChannelCap and clamped to [0, 1]; shape (1, H, W).
Tensor extract_h_channel(const RgbImage& img, const StainMatrix& m);

struct PatchGrid {
    int patch_size = 256;
    int stride = 128;
    std::vector<std::pair<int, int>> origins;  // (row, col)

    std::string to_csv() const;
};

/// Thrown when a requested patch does not fit the image.
class PatchSizeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Origins on multiples of stride plus one flush with each far border. The
/// patches cover the image whenever stride <= patch.
std::vector<int> axis_origins(int dim, int patch, int stride);
PatchGrid make_patch_grid(int height, int width, int patch, int stride);

RgbImage crop(const RgbImage& img, int row, int col, int height, int width);
/// Edge-replicating pad so both dimensions become multiples of `multiple`.
RgbImage pad_to_multiple(const RgbImage& img, int multiple);

enum class ImageErrorKind { missing_file, not_rgb, corrupt_stream, write_failed };

class ImageError : public std::runtime_error {
public:
    ImageError(ImageErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ImageErrorKind kind() const { return kind_; }

private:
    ImageErrorKind kind_;
};

/// 8-bit RGB PNG in, values divided by 255.
RgbImage load_image(const std::filesystem::path& path);
/// Values times 255, rounded half to even.
void save_image(const RgbImage& img, const std::filesystem::path& path);
/// Single-channel PNG; any non-zero value reads as 1.
BinaryMask load_mask(const std::filesystem::path& path);
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);

}  // namespace silicon
