// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sparsekv/error.hpp"
#include "sparsekv/tensor.hpp"

namespace sparsekv {

/// One probability row per query head over `seq_len` cached positions.
struct AttnWeights {
    std::size_t heads = 0;
    std::size_t seq_len = 0;
    std::vector<float> data;

    AttnWeights() = default;
    AttnWeights(std::size_t h, std::size_t s) : heads(h), seq_len(s), data(h * s, 0.0f) {}

    std::span<float> row(std::size_t h) { return {data.data() + h * seq_len, seq_len}; }
    std::span<const float> row(std::size_t h) const { return {data.data() + h * seq_len, seq_len}; }
};

/// Read-only view over `rows` rows of `width` floats spaced `stride` apart.
struct StridedRows {
    const float* base = nullptr;
    std::size_t rows = 0;
    std::size_t width = 0;
    std::size_t stride = 0;

    std::span<const float> row(std::size_t i) const { return {base + i * stride, width}; }
};

/// Max-subtracted softmax in place. Exponentials in float, normalizer in double.
inline void softmax_inplace(std::span<float> logits) {
    if (logits.empty()) return;
    const float mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (auto& v : logits) {
        v = std::exp(v - mx);
        sum += v;
    }
    const float inv = static_cast<float>(1.0 / sum);
    for (auto& v : logits) v *= inv;
}

inline float dot(std::span<const float> a, std::span<const float> b) {
    float acc = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

/// softmax(q k^T / sqrt(d)) for one query head, written into `weights`.
inline void head_weights(std::span<const float> q, const StridedRows& keys, std::span<float> weights) {
    SPARSEKV_CHECK(keys.rows >= 1, shape, "attention over an empty key cache");
    SPARSEKV_CHECK(q.size() == keys.width && weights.size() == keys.rows, shape, "query/key dimension mismatch");
    const float scale = 1.0f / std::sqrt(static_cast<float>(q.size()));
    for (std::size_t i = 0; i < keys.rows; ++i) weights[i] = dot(q, keys.row(i)) * scale;
    softmax_inplace(weights);
}

/// Attention of one query head: fills `weights` and writes sum_i w_i v_i to `out`.
/// Dense and subset attention both route through here so that a subset equal
/// to a physically truncated cache produces bit-identical results.
inline void attend_head(std::span<const float> q, const StridedRows& keys, const StridedRows& values,
                        std::span<float> weights, std::span<float> out) {
    SPARSEKV_CHECK(keys.rows == values.rows && out.size() == values.width, shape, "key/value block mismatch");
    head_weights(q, keys, weights);
    std::fill(out.begin(), out.end(), 0.0f);
    for (std::size_t i = 0; i < values.rows; ++i) {
        const auto v = values.row(i);
        const float w = weights[i];
        for (std::size_t d = 0; d < out.size(); ++d) out[d] += w * v[d];
    }
}

/// Attention weights of per-head queries (rows of `q`) against per-kv-head key
/// matrices. Query head h reads key matrix h / (q.rows() / k_cache.size()).
inline AttnWeights attn_weights(const Matrix& q, std::span<const Matrix> k_cache) {
    SPARSEKV_CHECK(!k_cache.empty() && q.rows() % k_cache.size() == 0, shape,
                   "query head count must be a multiple of the key head count");
    const std::size_t seq = k_cache.front().rows();
    SPARSEKV_CHECK(seq >= 1, shape, "attention over an empty key cache");
    for (const auto& k : k_cache) {
        SPARSEKV_CHECK(k.rows() == seq && k.cols() == q.cols(), shape, "key cache shape mismatch");
    }
    const std::size_t group = q.rows() / k_cache.size();
    AttnWeights w(q.rows(), seq);
    for (std::size_t h = 0; h < q.rows(); ++h) {
        const Matrix& k = k_cache[h / group];
        head_weights(q.row(h), StridedRows{k.data(), seq, k.cols(), k.cols()}, w.row(h));
    }
    return w;
}

}  // namespace sparsekv
