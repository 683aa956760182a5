#include "silicon/imagecore.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>
#include <sstream>

namespace silicon {

RgbImage::RgbImage(int height, int width, double fill) : pixels_(Tensor::chw(3, height, width, fill)) {
    if (height < 1 || width < 1) throw std::invalid_argument("image dimensions must be positive");
    if (!(fill >= 0.0 && fill <= 1.0)) throw std::invalid_argument("image fill outside [0,1]");
}

RgbImage::RgbImage(Tensor pixels) : pixels_(std::move(pixels)) {
    if (pixels_.rank() != 3 || pixels_.dim(0) != 3 || pixels_.dim(1) < 1 || pixels_.dim(2) < 1)
        throw std::invalid_argument("RgbImage expects a (3,H,W) tensor, got " + pixels_.shape_string());
    for (double v : pixels_.values())
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("RgbImage value outside [0,1]");
}

void RgbImage::set(int c, int y, int x, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("RgbImage value outside [0,1]");
    pixels_.at(c, y, x) = v;
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

StainMatrix StainMatrix::from_rows(const std::array<Vec3, 3>& rows) {
    StainMatrix m;
    for (int i = 0; i < 3; ++i) {
        const double n = std::sqrt(rows[i][0] * rows[i][0] + rows[i][1] * rows[i][1] + rows[i][2] * rows[i][2]);
        if (!(n > 0.0)) throw std::invalid_argument("stain vector has zero length");
        for (int j = 0; j < 3; ++j) m.rows_[i][j] = rows[i][j] / n;
    }
    const auto& a = m.rows_;
    const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                       a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                       a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    if (std::abs(det) < 1e-9) throw std::invalid_argument("stain matrix is singular");
    auto& inv = m.inverse_;
    inv[0][0] = (a[1][1] * a[2][2] - a[1][2] * a[2][1]) / det;
    inv[0][1] = (a[0][2] * a[2][1] - a[0][1] * a[2][2]) / det;
    inv[0][2] = (a[0][1] * a[1][2] - a[0][2] * a[1][1]) / det;
    inv[1][0] = (a[1][2] * a[2][0] - a[1][0] * a[2][2]) / det;
    inv[1][1] = (a[0][0] * a[2][2] - a[0][2] * a[2][0]) / det;
    inv[1][2] = (a[0][2] * a[1][0] - a[0][0] * a[1][2]) / det;
    inv[2][0] = (a[1][0] * a[2][1] - a[1][1] * a[2][0]) / det;
    inv[2][1] = (a[0][1] * a[2][0] - a[0][0] * a[2][1]) / det;
    inv[2][2] = (a[0][0] * a[1][1] - a[0][1] * a[1][0]) / det;
    return m;
}

StainMatrix StainMatrix::ruifrok() {
    return from_rows({Vec3{0.65, 0.70, 0.29}, Vec3{0.07, 0.99, 0.11}, Vec3{0.27, 0.57, 0.78}});
}

double optical_density(double intensity) {
    return -std::log10((intensity + kOdEpsilon) / (1.0 + kOdEpsilon));
}

double intensity_from_od(double od) {
    const double t = std::pow(10.0, -od);
    const double p = t + kOdEpsilon * (t - 1.0);  // exactly 1 at od = 0
    return std::clamp(p, 0.0, 1.0);
}

HedImage rgb_to_hed(const RgbImage& img, const StainMatrix& m) {
    const int h = img.height(), w = img.width();
    HedImage out{Tensor::chw(3, h, w)};
    const auto& inv = m.inverse();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec3 od{optical_density(img.at(0, y, x)), optical_density(img.at(1, y, x)),
                          optical_density(img.at(2, y, x))};
            for (int s = 0; s < 3; ++s) {
                const double c = od[0] * inv[0][s] + od[1] * inv[1][s] + od[2] * inv[2][s];
                out.od.at(s, y, x) = std::max(c, 0.0);
            }
        }
    return out;
}

RgbImage hed_to_rgb(const HedImage& hed, const StainMatrix& m) {
    const int h = hed.height(), w = hed.width();
    Tensor px = Tensor::chw(3, h, w);
    const auto& rows = m.rows();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const double od = hed.od.at(0, y, x) * rows[0][ch] + hed.od.at(1, y, x) * rows[1][ch] +
                                  hed.od.at(2, y, x) * rows[2][ch];
                px.at(ch, y, x) = intensity_from_od(od);
            }
    return RgbImage(std::move(px));
}

Tensor extract_h_channel(const RgbImage& img, const StainMatrix& m) {
    const HedImage hed = rgb_to_hed(img, m);
    const int h = img.height(), w = img.width();
    Tensor out = Tensor::chw(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(0, y, x) = std::min(hed.od.at(0, y, x) / kHChannelCap, 1.0);
    return out;
}

std::vector<int> axis_origins(int dim, int patch, int stride) {
    if (stride < 1) throw std::invalid_argument("patch stride must be >= 1");
    if (patch < 1) throw std::invalid_argument("patch size must be >= 1");
    if (patch > dim)
        throw PatchSizeError("patch size " + std::to_string(patch) + " exceeds image dimension " +
                             std::to_string(dim) + "; resize or pad the image first");
    std::vector<int> out;
    for (int o = 0; o <= dim - patch; o += stride) out.push_back(o);
    if (out.back() != dim - patch) out.push_back(dim - patch);
    return out;
}

PatchGrid make_patch_grid(int height, int width, int patch, int stride) {
    PatchGrid g;
    g.patch_size = patch;
    g.stride = stride;
    const auto rows = axis_origins(height, patch, stride);
    const auto cols = axis_origins(width, patch, stride);
    for (int r : rows)
        for (int c : cols) g.origins.emplace_back(r, c);
    return g;
}

std::string PatchGrid::to_csv() const {
    std::ostringstream os;
    os << "row,col\n";
    for (auto [r, c] : origins) os << r << ',' << c << '\n';
    return os.str();
}

RgbImage crop(const RgbImage& img, int row, int col, int height, int width) {
    if (row < 0 || col < 0 || row + height > img.height() || col + width > img.width())
        throw std::out_of_range("crop window outside image");
    Tensor px = Tensor::chw(3, height, width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) px.at(c, y, x) = img.at(c, row + y, col + x);
    return RgbImage(std::move(px));
}

RgbImage pad_to_multiple(const RgbImage& img, int multiple) {
    const int h = (img.height() + multiple - 1) / multiple * multiple;
    const int w = (img.width() + multiple - 1) / multiple * multiple;
    if (h == img.height() && w == img.width()) return img;
    Tensor px = Tensor::chw(3, h, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                px.at(c, y, x) = img.at(c, std::min(y, img.height() - 1), std::min(x, img.width() - 1));
    return RgbImage(std::move(px));
}

namespace {

cv::Mat read_raw(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw ImageError(ImageErrorKind::missing_file, "no such image: " + path.string());
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw ImageError(ImageErrorKind::corrupt_stream, "cannot decode image: " + path.string());
    if (raw.depth() != CV_8U)
        throw ImageError(ImageErrorKind::not_rgb, "expected 8-bit samples: " + path.string());
    return raw;
}

void write_raw(const cv::Mat& mat, const std::filesystem::path& path) {
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), mat);
    } catch (const cv::Exception& e) {
        throw ImageError(ImageErrorKind::write_failed, "cannot write " + path.string() + ": " + e.what());
    }
    if (!ok) throw ImageError(ImageErrorKind::write_failed, "cannot write " + path.string());
}

}  // namespace

RgbImage load_image(const std::filesystem::path& path) {
    const cv::Mat raw = read_raw(path);
    if (raw.channels() != 3)
        throw ImageError(ImageErrorKind::not_rgb,
                         "expected 3 channels, found " + std::to_string(raw.channels()) + ": " + path.string());
    Tensor px = Tensor::chw(3, raw.rows, raw.cols);
    for (int y = 0; y < raw.rows; ++y) {
        const auto* row = raw.ptr<cv::Vec3b>(y);
        for (int x = 0; x < raw.cols; ++x)
            for (int c = 0; c < 3; ++c) px.at(c, y, x) = row[x][2 - c] / 255.0;  // BGR storage
    }
    return RgbImage(std::move(px));
}

void save_image(const RgbImage& img, const std::filesystem::path& path) {
    cv::Mat mat(img.height(), img.width(), CV_8UC3);
    for (int y = 0; y < img.height(); ++y) {
        auto* row = mat.ptr<cv::Vec3b>(y);
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < 3; ++c)
                row[x][2 - c] = static_cast<std::uint8_t>(std::lrint(img.at(c, y, x) * 255.0));
    }
    write_raw(mat, path);
}

BinaryMask load_mask(const std::filesystem::path& path) {
    const cv::Mat raw = read_raw(path);
    if (raw.channels() != 1)
        throw ImageError(ImageErrorKind::not_rgb, "expected a single-channel mask: " + path.string());
    BinaryMask m(raw.rows, raw.cols);
    for (int y = 0; y < raw.rows; ++y) {
        const auto* row = raw.ptr<std::uint8_t>(y);
        for (int x = 0; x < raw.cols; ++x) m.at(y, x) = row[x] != 0 ? 1 : 0;
    }
    return m;
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
    cv::Mat mat(mask.height, mask.width, CV_8UC1);
    for (int y = 0; y < mask.height; ++y) {
        auto* row = mat.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.width; ++x) row[x] = mask.at(y, x) ? 255 : 0;
    }
    write_raw(mat, path);
}

}  // namespace silicon
