// silicon: command-line entry point.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "silicon/gradcheck.hpp"
#include "silicon/inference.hpp"
#include "silicon/report.hpp"
#include "silicon/synthdata.hpp"
#include "silicon/theory.hpp"
#include "silicon/trainer.hpp"

namespace fs = std::filesystem;
using namespace silicon;

namespace {

struct ValidationError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

std::string fingerprint_of(const std::string& command, const std::map<std::string, std::string>& settings) {
    std::string canon = command + '\n';
    for (const auto& [k, v] : settings) canon += k + '=' + v + '\n';
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

void announce(const std::string& fp) { std::cerr << "config fingerprint: " << fp << '\n'; }

std::vector<fs::path> png_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw ValidationError("no PNG images in " + dir.string());
    return out;
}

fs::path require_checkpoint(const fs::path& dir) {
    if (!fs::exists(dir / "state.txt")) throw ValidationError("not a checkpoint directory: " + dir.string());
    return dir;
}

void require_new_output(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + out.string() + ": " + ec.message());
}

// Inputs are edge-padded to a multiple of 4; outputs are cropped back.
RgbImage crop_to(const RgbImage& img, int h, int w) { return crop(img, 0, 0, h, w); }

BinaryMask crop_mask(const BinaryMask& m, int h, int w) {
    BinaryMask out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = m.at(y, x);
    return out;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p);
    out << s;
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"silicon: joint nuclei segmentation and stain color normalization"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic H&E dataset with ground-truth masks");
    SynthSpec spec;
    int synth_n = 200, synth_groups = 2;
    fs::path synth_out;
    synth->add_option("--n", synth_n, "Number of images")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--size", spec.image_size, "Image side in pixels")->capture_default_str();
    synth->add_option("--groups", synth_groups, "Biopsy groups (one stain matrix each)")->capture_default_str();
    synth->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
    synth->add_option("--noise", spec.noise_sigma, "Gaussian pixel noise sigma")->capture_default_str();
    synth->add_option("--jitter", spec.color_jitter_deg, "Max stain-vector rotation per group (degrees)")
        ->capture_default_str();
    synth->add_option("--within-jitter", spec.within_group_jitter_deg,
                      "Extra per-image rotation inside a group (degrees)")
        ->capture_default_str();
    synth->add_option("--nuclei-min", spec.nuclei_min, "Minimum nuclei per image")->capture_default_str();
    synth->add_option("--nuclei-max", spec.nuclei_max, "Maximum nuclei per image")->capture_default_str();
    synth->add_option("--out", synth_out, "Output dataset directory")->required();

    // train
    auto* train = app.add_subcommand("train", "Train the five networks");
    fs::path config_path, resume_dir;
    std::map<std::string, std::string> overrides;
    train->add_option("--config", config_path, "Config file with 'key = value' lines");
    train->add_option("--resume", resume_dir, "Checkpoint directory to continue from");
    {
        const TrainConfig defaults;
        std::map<std::string, std::string> default_values;
        std::istringstream in(defaults.to_text());
        for (std::string line; std::getline(in, line);) {
            const auto eq = line.find(" = ");
            default_values[line.substr(0, eq)] = line.substr(eq + 3);
        }
        for (const auto& [key, doc] : TrainConfig::documented_keys()) {
            train->add_option_function<std::string>(
                "--" + key, [&overrides, key = key](const std::string& v) { overrides[key] = v; },
                doc + " [default: " + default_values[key] + "]");
        }
    }

    // normalize
    auto* norm = app.add_subcommand("normalize", "Re-color sources to a template and segment the result");
    fs::path tmpl_path, sources_dir, norm_out, norm_ckpt;
    double norm_threshold = 0.5;
    InferenceOptions norm_opt;
    norm->add_option("--template", tmpl_path, "Template image (PNG)")->required();
    norm->add_option("--sources", sources_dir, "Directory of source PNGs")->required();
    norm->add_option("--out", norm_out, "Output directory for <name>.norm.png and <name>.mask.png")->required();
    norm->add_option("--checkpoint", norm_ckpt, "Trained checkpoint directory")->required();
    norm->add_option("--threshold", norm_threshold, "Segmentation threshold")->capture_default_str();
    norm->add_option("--patch", norm_opt.patch_size, "Tile size for large images (0 = whole image)")
        ->capture_default_str();
    norm->add_option("--stride", norm_opt.stride, "Tile stride")->capture_default_str();

    // segment
    auto* seg = app.add_subcommand("segment", "Segment nuclei in every PNG of a directory");
    fs::path seg_in, seg_out, seg_ckpt;
    double seg_threshold = 0.5;
    InferenceOptions seg_opt;
    seg->add_option("--in", seg_in, "Directory of input PNGs")->required();
    seg->add_option("--out", seg_out, "Output directory for <name>.mask.png")->required();
    seg->add_option("--checkpoint", seg_ckpt, "Trained checkpoint directory")->required();
    seg->add_option("--threshold", seg_threshold, "Segmentation threshold")->capture_default_str();
    seg->add_option("--patch", seg_opt.patch_size, "Tile size for large images (0 = whole image)")->capture_default_str();
    seg->add_option("--stride", seg_opt.stride, "Tile stride")->capture_default_str();

    // eval
    auto* eval = app.add_subcommand("eval", "Score segmentation and color constancy on a labeled dataset");
    fs::path eval_data, eval_ckpt, eval_tmpl, eval_out;
    double eval_threshold = 0.5;
    eval->add_option("--dataset", eval_data, "Dataset directory with images/, masks/ and meta.csv")->required();
    eval->add_option("--checkpoint", eval_ckpt, "Trained checkpoint directory")->required();
    eval->add_option("--template", eval_tmpl, "Template image (default: first dataset image)");
    eval->add_option("--out", eval_out, "Output directory for metrics.csv and summary.txt")->required();
    eval->add_option("--threshold", eval_threshold, "Segmentation threshold")->capture_default_str();

    // verify-theory
    auto* theory = app.add_subcommand("verify-theory", "Check the optimal least-squares discriminator on random grids");
    std::uint64_t theory_seed = 0;
    int theory_pairs = 100;
    theory->add_option("--seed", theory_seed, "Random seed")->capture_default_str();
    theory->add_option("--pairs", theory_pairs, "Random density pairs")->capture_default_str()->check(CLI::PositiveNumber);

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss and network");
    std::uint64_t grad_seed = 0;
    double grad_tol = 1e-4;
    grad->add_option("--seed", grad_seed, "Random seed")->capture_default_str();
    grad->add_option("--tol", grad_tol, "Relative error tolerance")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*synth) {
            if (synth_groups < 1 || synth_n < synth_groups) throw ValidationError("--groups must be in [1, --n]");
            spec.validate();
            announce(fingerprint_of("synth", {{"n", std::to_string(synth_n)},
                                              {"size", std::to_string(spec.image_size)},
                                              {"groups", std::to_string(synth_groups)},
                                              {"seed", std::to_string(spec.seed)},
                                              {"noise", std::to_string(spec.noise_sigma)},
                                              {"jitter", std::to_string(spec.color_jitter_deg)},
                                              {"within_jitter", std::to_string(spec.within_group_jitter_deg)},
                                              {"nuclei", std::to_string(spec.nuclei_min) + "-" +
                                                             std::to_string(spec.nuclei_max)}}));
            require_new_output(synth_out);
            Rng rng(spec.seed);
            write_dataset(synth_set(spec, synth_n, synth_groups, rng), synth_out);
            std::cerr << "wrote " << synth_n << " images to " << synth_out << '\n';
        } else if (*train) {
            TrainConfig cfg = config_path.empty() ? TrainConfig{} : TrainConfig::from_file(config_path);
            for (const auto& [k, v] : overrides) cfg.set(k, v);
            cfg.validate();
            announce(cfg.fingerprint());
            if (cfg.dataset.empty()) throw ValidationError("no dataset: set 'dataset' in the config or pass --dataset");
            if (!fs::is_directory(cfg.dataset)) throw ValidationError("dataset directory not found: " + cfg.dataset.string());
            std::optional<fs::path> resume;
            if (!resume_dir.empty()) resume = require_checkpoint(resume_dir);
            const auto res = fit(cfg, resume);
            std::cerr << "trained to step " << cfg.total_steps << "; checkpoint " << res.final_checkpoint
                      << ", telemetry " << res.telemetry << '\n';
        } else if (*norm) {
            require_checkpoint(norm_ckpt);
            announce(fingerprint_of("normalize", {{"checkpoint", checkpoint_config(norm_ckpt).fingerprint()},
                                                  {"threshold", std::to_string(norm_threshold)},
                                                  {"patch", std::to_string(norm_opt.patch_size)},
                                                  {"stride", std::to_string(norm_opt.stride)}}));
            const Model model = load_model(norm_ckpt);
            const RgbImage tmpl_raw = load_image(tmpl_path);
            const RgbImage tmpl = pad_to_multiple(tmpl_raw, 4);
            const auto files = png_files(sources_dir);
            require_new_output(norm_out);
            for (const auto& f : files) {
                const RgbImage src = load_image(f);
                const auto res = normalize_and_segment(tmpl, {pad_to_multiple(src, 4)}, model, norm_opt).front();
                const std::string stem = f.stem().string();
                save_image(crop_to(res.normalized_image, src.height(), src.width()), norm_out / (stem + ".norm.png"));
                save_mask(crop_mask(res.final_segmap.binarize(norm_threshold), src.height(), src.width()),
                          norm_out / (stem + ".mask.png"));
            }
            std::cerr << "normalized " << files.size() << " images into " << norm_out << '\n';
        } else if (*seg) {
            require_checkpoint(seg_ckpt);
            announce(fingerprint_of("segment", {{"checkpoint", checkpoint_config(seg_ckpt).fingerprint()},
                                                {"threshold", std::to_string(seg_threshold)},
                                                {"patch", std::to_string(seg_opt.patch_size)},
                                                {"stride", std::to_string(seg_opt.stride)}}));
            const Model model = load_model(seg_ckpt);
            const auto files = png_files(seg_in);
            require_new_output(seg_out);
            for (const auto& f : files) {
                const RgbImage img = load_image(f);
                const BinaryMask m = segment_only(pad_to_multiple(img, 4), model, seg_threshold, seg_opt);
                save_mask(crop_mask(m, img.height(), img.width()), seg_out / (f.stem().string() + ".mask.png"));
            }
            std::cerr << "segmented " << files.size() << " images into " << seg_out << '\n';
        } else if (*eval) {
            require_checkpoint(eval_ckpt);
            announce(fingerprint_of("eval", {{"checkpoint", checkpoint_config(eval_ckpt).fingerprint()},
                                             {"threshold", std::to_string(eval_threshold)},
                                             {"template", eval_tmpl.string()}}));
            const Model model = load_model(eval_ckpt);
            const auto entries = load_dataset(eval_data, true);
            std::vector<EvalSample> samples;
            for (const auto& e : entries) {
                require_divisible_by_4(e.image.height(), e.image.width());
                samples.push_back({e.id, e.group, e.image, *e.mask});
            }
            const RgbImage tmpl = eval_tmpl.empty() ? samples.front().image : load_image(eval_tmpl);
            const EvalReport rep = evaluate(samples, tmpl, InferenceNets::from_model(model), eval_threshold);
            require_new_output(eval_out);
            write_text(eval_out / "metrics.csv", rep.metrics_csv());
            write_text(eval_out / "summary.txt", rep.summary());
            std::cerr << "wrote " << (eval_out / "metrics.csv") << " and " << (eval_out / "summary.txt") << '\n';
        } else if (*theory) {
            announce(fingerprint_of("verify-theory",
                                    {{"seed", std::to_string(theory_seed)}, {"pairs", std::to_string(theory_pairs)}}));
            bool ok = true;
            for (const auto& c : run_theory_suite(theory_seed, theory_pairs)) {
                std::cout << (c.passed ? "PASS  " : "FAIL  ") << c.name;
                if (!c.detail.empty()) std::cout << "  [" << c.detail << "]";
                std::cout << '\n';
                ok = ok && c.passed;
            }
            return ok ? 0 : 2;
        } else if (*grad) {
            announce(fingerprint_of("gradcheck", {{"seed", std::to_string(grad_seed)}, {"tol", std::to_string(grad_tol)}}));
            bool ok = true;
            for (const auto& r : run_gradcheck_suite(grad_seed, grad_tol)) {
                std::cout << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(32) << r.name
                          << " rel err " << std::scientific << std::setprecision(2) << r.rel_error << std::defaultfloat
                          << "  (" << r.coords << " coords)\n";
                ok = ok && r.passed;
            }
            return ok ? 0 : 2;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ImageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.kind() == ImageErrorKind::write_failed ? 2 : 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
