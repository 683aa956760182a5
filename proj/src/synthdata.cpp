#include "silicon/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace silicon {

void SynthSpec::validate() const {
    if (image_size < 4) throw std::invalid_argument("synth: image_size must be at least 4");
    if (nuclei_min < 0 || nuclei_max < nuclei_min) throw std::invalid_argument("synth: empty nuclei count range");
    if (radius.lo < 2.0 || radius.hi < radius.lo) throw std::invalid_argument("synth: radii must be >= 2 and ordered");
    for (const Range* r : {&h_concentration, &e_concentration})
        if (r->lo < 0.0 || r->hi < r->lo) throw std::invalid_argument("synth: concentration ranges must be >= 0 and ordered");
    if (color_jitter_deg < 0.0 || within_group_jitter_deg < 0.0 || noise_sigma < 0.0) throw std::invalid_argument("synth: negative jitter or noise");
    if (max_eccentricity < 0.0 || max_eccentricity >= 1.0) throw std::invalid_argument("synth: eccentricity must be in [0,1)");
}

StainMatrix jitter_stains(const StainMatrix& base, double max_deg, Rng& rng) {
    auto rows = base.rows();
    for (int s = 0; s < 2; ++s) {
        const double angle = rng.uniform(-max_deg, max_deg) * std::numbers::pi / 180.0;
        Vec3 v = rows[s];
        // random direction perpendicular to v
        Vec3 r{rng.normal(), rng.normal(), rng.normal()};
        const double dot = r[0] * v[0] + r[1] * v[1] + r[2] * v[2];
        for (int i = 0; i < 3; ++i) r[i] -= dot * v[i];
        const double rn = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        for (int i = 0; i < 3; ++i) {
            const double rotated = std::cos(angle) * v[i] + std::sin(angle) * r[i] / rn;
            rows[s][i] = std::max(rotated, 1e-3);  // stay in the physical (absorbing) octant
        }
    }
    return StainMatrix::from_rows(rows);
}

SynthSample render_sample(const SynthSpec& spec, const StainMatrix& stains, Rng& rng) {
    spec.validate();
    const int n = spec.image_size;
    SynthSample s{RgbImage(n, n), BinaryMask(n, n), stains, Tensor::chw(2, n, n), 0, 0};

    // eosin: per-image base level modulated by a few smooth blobs
    const double e_base = spec.e_concentration.draw(rng);
    const int blobs = 3;
    std::vector<std::array<double, 3>> centers(blobs);
    for (auto& c : centers) c = {rng.uniform(0, n), rng.uniform(0, n), rng.uniform(n / 6.0, n / 2.5)};
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double b = 0.0;
            for (const auto& c : centers) {
                const double d2 = (y - c[0]) * (y - c[0]) + (x - c[1]) * (x - c[1]);
                b = std::max(b, std::exp(-d2 / (2 * c[2] * c[2])));
            }
            s.concentrations.at(1, y, x) = e_base * (0.6 + 0.6 * b);
        }

    const int count = spec.nuclei_min + static_cast<int>(rng.below(spec.nuclei_max - spec.nuclei_min + 1));
    for (int k = 0; k < count; ++k) {
        const double a = spec.radius.draw(rng);
        const double ecc = rng.uniform(0.0, spec.max_eccentricity);
        const double b = a * std::sqrt(1.0 - ecc * ecc);
        const double theta = rng.uniform(0.0, std::numbers::pi);
        const double cy = rng.uniform(0, n), cx = rng.uniform(0, n);
        const double h_level = spec.h_concentration.draw(rng);
        const double ct = std::cos(theta), st = std::sin(theta);
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
                const double u = (dx * ct + dy * st) / a;
                const double v = (-dx * st + dy * ct) / b;
                if (u * u + v * v <= 1.0) {
                    s.mask.at(y, x) = 1;
                    // overlapping nuclei keep the denser stain
                    s.concentrations.at(0, y, x) = std::max(s.concentrations.at(0, y, x), h_level);
                }
            }
    }

    HedImage hed{Tensor::chw(3, n, n)};
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            hed.od.at(0, y, x) = s.concentrations.at(0, y, x);
            hed.od.at(1, y, x) = s.concentrations.at(1, y, x);
        }
    Tensor px = hed_to_rgb(hed, stains).pixels();
    if (spec.noise_sigma > 0.0)
        for (double& v : px.values()) v = std::clamp(v + spec.noise_sigma * rng.normal(), 0.0, 1.0);
    s.image = RgbImage(std::move(px));
    return s;
}

SynthSample synth_sample(const SynthSpec& spec, Rng& rng) {
    const StainMatrix stains = jitter_stains(StainMatrix::ruifrok(), spec.color_jitter_deg, rng);
    return render_sample(spec, stains, rng);
}

std::vector<SynthSample> synth_set(const SynthSpec& spec, int n, int biopsy_groups, Rng& rng) {
    spec.validate();
    if (biopsy_groups < 1 || n < biopsy_groups) throw std::invalid_argument("synth_set: need n >= groups >= 1");
    std::vector<StainMatrix> group_stains;
    for (int g = 0; g < biopsy_groups; ++g) {
        Rng grng = rng.derive(0x5747u + g);
        group_stains.push_back(jitter_stains(StainMatrix::ruifrok(), spec.color_jitter_deg, grng));
    }
    std::vector<SynthSample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        const int g = static_cast<int>(static_cast<long>(i) * biopsy_groups / n);
        const std::uint64_t sample_seed = spec.seed * 1000003ULL + static_cast<std::uint64_t>(i);
        Rng srng(sample_seed);
        const StainMatrix stains = spec.within_group_jitter_deg > 0.0
                                       ? jitter_stains(group_stains[g], spec.within_group_jitter_deg, srng)
                                       : group_stains[g];
        SynthSample s = render_sample(spec, stains, srng);
        s.group = g;
        s.seed = sample_seed;
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

std::string sample_id(std::size_t i) {
    std::ostringstream os;
    os << std::setw(4) << std::setfill('0') << i;
    return os.str();
}

}  // namespace

void write_dataset(const std::vector<SynthSample>& samples, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    std::ofstream meta(dir / "meta.csv");
    if (!meta) throw std::runtime_error("cannot write " + (dir / "meta.csv").string());
    meta << "id,group,h_r,h_g,h_b,e_r,e_g,e_b,d_r,d_g,d_b,seed\n";
    meta << std::setprecision(17);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const std::string id = sample_id(i);
        save_image(s.image, dir / "images" / (id + ".png"));
        save_mask(s.mask, dir / "masks" / (id + ".png"));
        meta << id << ',' << s.group;
        for (const auto& row : s.stain_matrix.rows())
            for (double v : row) meta << ',' << v;
        meta << ',' << s.seed << '\n';
    }
}

std::vector<DatasetEntry> load_dataset(const std::filesystem::path& dir, bool load_masks) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset directory not found: " + dir.string());
    const auto image_dir = std::filesystem::is_directory(dir / "images") ? dir / "images" : dir;

    std::map<std::string, std::pair<int, std::optional<StainMatrix>>> meta;
    if (std::ifstream in(dir / "meta.csv"); in) {
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            std::vector<std::string> f;
            std::stringstream ss(line);
            for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
            if (f.size() < 2) continue;
            std::optional<StainMatrix> m;
            if (f.size() >= 11) {
                std::array<Vec3, 3> rows{};
                for (int r = 0; r < 3; ++r)
                    for (int c = 0; c < 3; ++c) rows[r][c] = std::stod(f[2 + 3 * r + c]);
                m = StainMatrix::from_rows(rows);
            }
            meta[f[0]] = {std::stoi(f[1]), m};
        }
    }

    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(image_dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("dataset contains no PNG images: " + dir.string());

    std::vector<DatasetEntry> out;
    for (const auto& f : files) {
        DatasetEntry e;
        e.id = f.stem().string();
        e.image = load_image(f);
        if (auto it = meta.find(e.id); it != meta.end()) {
            e.group = it->second.first;
            e.stain_matrix = it->second.second;
        }
        if (load_masks) {
            const auto mpath = dir / "masks" / f.filename();
            e.mask = load_mask(mpath);
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace silicon
