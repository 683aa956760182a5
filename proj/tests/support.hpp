#pragma once

#include <filesystem>
#include <string>

#include <unistd.h>

#include "silicon/imagecore.hpp"
#include "silicon/rng.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("silicon_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline silicon::Tensor random_tensor(std::vector<int> shape, silicon::Rng& rng, double lo, double hi) {
    silicon::Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

inline silicon::RgbImage random_image(int h, int w, silicon::Rng& rng, double lo = 0.0, double hi = 1.0) {
    return silicon::RgbImage(random_tensor({3, h, w}, rng, lo, hi));
}

}  // namespace testing
