// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "sparsekv/error.hpp"

namespace sparsekv {

/// Dense row-major float matrix.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

    std::size_t rows() const { return m_rows; }
    std::size_t cols() const { return m_cols; }
    std::size_t size() const { return m_data.size(); }

    float& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<float> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const float> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    float* data() { return m_data.data(); }
    const float* data() const { return m_data.data(); }
    std::span<const float> values() const { return m_data; }

    static Matrix uniform(std::size_t rows, std::size_t cols, float bound, std::mt19937_64& rng) {
        Matrix m(rows, cols);
        std::uniform_real_distribution<float> dist(-bound, bound);
        for (auto& v : m.m_data) v = dist(rng);
        return m;
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
        return m;
    }

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<float> m_data;
};

/// out = x * w, with x a row vector of length w.rows().
inline void matvec(std::span<const float> x, const Matrix& w, std::span<float> out) {
    SPARSEKV_CHECK(x.size() == w.rows() && out.size() == w.cols(), shape, "matvec dimension mismatch");
    for (auto& v : out) v = 0.0f;
    for (std::size_t i = 0; i < w.rows(); ++i) {
        const float xi = x[i];
        const auto wr = w.row(i);
        for (std::size_t j = 0; j < w.cols(); ++j) out[j] += xi * wr[j];
    }
}

inline std::vector<float> matvec(std::span<const float> x, const Matrix& w) {
    std::vector<float> out(w.cols());
    matvec(x, w, out);
    return out;
}

inline std::vector<float> rms_norm(std::span<const float> x) {
    double ss = 0.0;
    for (float v : x) ss += static_cast<double>(v) * v;
    const float scale = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(x.size()) + 1e-6));
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * scale;
    return out;
}

/// Rotary position encoding over consecutive (even, odd) pairs of one head.
/// An odd trailing element is left unrotated.
inline void apply_rope(std::span<float> head, std::size_t position, double base) {
    const std::size_t dim = head.size();
    for (std::size_t i = 0; i + 1 < dim; i += 2) {
        const double freq = std::pow(base, -static_cast<double>(i) / static_cast<double>(dim));
        const double angle = static_cast<double>(position) * freq;
        const float c = static_cast<float>(std::cos(angle));
        const float s = static_cast<float>(std::sin(angle));
        const float a = head[i];
        const float b = head[i + 1];
        head[i] = a * c - b * s;
        head[i + 1] = a * s + b * c;
    }
}

}  // namespace sparsekv
