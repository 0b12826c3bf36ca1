// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensor. Rank 1 tensors behave as 1xN row vectors
// wherever a matrix is expected.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace taplab::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vector(std::vector<double> v);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // Matrix view: rank-1 tensors are a single row.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const { return data_; }
    std::span<double> data() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double item() const;
    bool all_finite() const;

    // Bitwise equality of shape and payload (distinguishes -0.0 from 0.0).
    bool bit_equal(const Tensor& other) const;
    friend bool operator==(const Tensor& a, const Tensor& b) { return a.bit_equal(b); }

private:
    Shape shape_;
    std::vector<double> data_;
};

// FNV-1a over shape and raw payload bytes.
std::uint64_t hash_tensor(const Tensor& t, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace taplab::ad
