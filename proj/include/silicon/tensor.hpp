#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace silicon {

/// Dense row-major array of doubles. Image-like tensors use (C, H, W).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> data);

    static Tensor chw(int c, int h, int w, double fill = 0.0) { return Tensor({c, h, w}, fill); }

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // (c, h, w) access for rank-3 tensors.
    double& at(int c, int h, int w) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    double at(int c, int h, int w) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }

    Tensor reshaped(std::vector<int> shape) const;
    void fill(double v);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_string() const;

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

std::size_t shape_volume(const std::vector<int>& shape);

}  // namespace silicon
