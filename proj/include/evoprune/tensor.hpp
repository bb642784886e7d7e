#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "evoprune/errors.hpp"

namespace evoprune {

using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatF = Eigen::Map<MatrixF>;
using CMapMatF = Eigen::Map<const MatrixF>;

// Dense n-dimensional array of 32-bit floats, row-major (last index fastest).
// The universal value carrier between kernels; rank >= 1 and every dimension
// >= 1 once constructed. A default-constructed Tensor is the empty sentinel
// used for absent optional payloads.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(static_cast<std::size_t>(numel()), 0.0f);
    }

    Tensor(std::vector<int> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (static_cast<std::int64_t>(data_.size()) != numel())
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string());
    }

    bool empty() const { return shape_.empty(); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }

    std::int64_t numel() const {
        std::int64_t n = shape_.empty() ? 0 : 1;
        for (int d : shape_) n *= d;
        return n;
    }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& storage() { return data_; }
    const std::vector<float>& storage() const { return data_; }

    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    float& at(std::initializer_list<int> idx) { return data_[static_cast<std::size_t>(offset(idx))]; }
    float at(std::initializer_list<int> idx) const { return data_[static_cast<std::size_t>(offset(idx))]; }

    // Same storage reinterpreted under a new shape (sizes must agree).
    Tensor reshaped(std::vector<int> new_shape) const {
        Tensor t(std::move(new_shape), data_);
        return t;
    }

    // Rank-2 Eigen view. Throws unless rank == 2.
    MapMatF mat() {
        require_rank2();
        return MapMatF(data_.data(), shape_[0], shape_[1]);
    }
    CMapMatF mat() const {
        require_rank2();
        return CMapMatF(data_.data(), shape_[0], shape_[1]);
    }

    // View of the flat storage as a rows x cols row-major matrix.
    MapMatF as_matrix(std::int64_t rows, std::int64_t cols) {
        if (rows * cols != numel())
            throw DimensionError("as_matrix: " + std::to_string(rows) + "x" + std::to_string(cols) +
                                 " does not cover tensor " + shape_string());
        return MapMatF(data_.data(), rows, cols);
    }
    CMapMatF as_matrix(std::int64_t rows, std::int64_t cols) const {
        if (rows * cols != numel())
            throw DimensionError("as_matrix: " + std::to_string(rows) + "x" + std::to_string(cols) +
                                 " does not cover tensor " + shape_string());
        return CMapMatF(data_.data(), rows, cols);
    }

    std::string shape_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    void validate_shape() const {
        if (shape_.empty()) throw DimensionError("tensor rank must be >= 1");
        for (int d : shape_)
            if (d < 1) throw DimensionError("tensor dimensions must be >= 1, got " + shape_string());
    }
    void require_rank2() const {
        if (rank() != 2) throw DimensionError("expected rank-2 tensor, got " + shape_string());
    }
    std::int64_t offset(std::initializer_list<int> idx) const {
        std::int64_t off = 0;
        int i = 0;
        for (int v : idx) {
            off = off * shape_[static_cast<std::size_t>(i)] + v;
            ++i;
        }
        return off;
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

}  // namespace evoprune
