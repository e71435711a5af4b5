// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sparsekv/attention.hpp"

using namespace sparsekv;

namespace {

std::vector<long double> softmax_long(const std::vector<long double>& logits) {
    long double mx = logits[0];
    for (auto v : logits) mx = std::max(mx, v);
    long double sum = 0.0L;
    std::vector<long double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

}  // namespace

TEST(AttnWeights, ZeroLogitsAreUniform) {
    Matrix q(1, 4);  // all zero
    Matrix k = Matrix::identity(4);
    std::vector<Matrix> keys{k};
    const auto w = attn_weights(q, keys);
    for (float v : w.row(0)) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(AttnWeights, SingleKeyGetsAllMass) {
    std::mt19937_64 rng(1);
    Matrix q = Matrix::uniform(3, 8, 1.0f, rng);
    std::vector<Matrix> keys{Matrix::uniform(1, 8, 1.0f, rng)};
    const auto w = attn_weights(q, keys);
    for (std::size_t h = 0; h < 3; ++h) EXPECT_EQ(w.row(h)[0], 1.0f);
}

TEST(AttnWeights, MatchesExtendedPrecisionOracle) {
    constexpr std::size_t kHeads = 2, kDim = 8, kSeq = 16;
    std::mt19937_64 rng(7);
    Matrix q = Matrix::uniform(kHeads, kDim, 1.0f, rng);
    std::vector<Matrix> keys{Matrix::uniform(kSeq, kDim, 1.0f, rng), Matrix::uniform(kSeq, kDim, 1.0f, rng)};
    const auto w = attn_weights(q, keys);
    for (std::size_t h = 0; h < kHeads; ++h) {
        std::vector<long double> logits(kSeq);
        for (std::size_t s = 0; s < kSeq; ++s) {
            long double acc = 0.0L;
            for (std::size_t d = 0; d < kDim; ++d) acc += static_cast<long double>(q(h, d)) * keys[h](s, d);
            logits[s] = acc / std::sqrt(static_cast<long double>(kDim));
        }
        const auto ref = softmax_long(logits);
        for (std::size_t s = 0; s < kSeq; ++s) EXPECT_NEAR(w.row(h)[s], static_cast<double>(ref[s]), 1e-6);
    }
}

TEST(AttnWeights, GroupedQueriesShareKeys) {
    std::mt19937_64 rng(3);
    Matrix q = Matrix::uniform(4, 4, 1.0f, rng);
    std::vector<Matrix> keys{Matrix::uniform(5, 4, 1.0f, rng), Matrix::uniform(5, 4, 1.0f, rng)};
    const auto grouped = attn_weights(q, keys);
    // head 1 belongs to group 0, head 2 to group 1
    Matrix q1(1, 4);
    for (std::size_t d = 0; d < 4; ++d) q1(0, d) = q(1, d);
    std::vector<Matrix> k0{keys[0]};
    const auto single = attn_weights(q1, k0);
    for (std::size_t s = 0; s < 5; ++s) EXPECT_EQ(grouped.row(1)[s], single.row(0)[s]);
}

TEST(AttnWeights, ShapeMismatchThrows) {
    Matrix q(3, 8);
    std::vector<Matrix> keys{Matrix(4, 8), Matrix(4, 8)};
    try {
        attn_weights(q, keys);
        FAIL() << "expected shape error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::shape);
    }
    std::vector<Matrix> wrong_dim{Matrix(4, 7)};
    EXPECT_THROW(attn_weights(Matrix(1, 8), wrong_dim), Error);
    std::vector<Matrix> empty{Matrix(0, 8)};
    EXPECT_THROW(attn_weights(Matrix(1, 8), empty), Error);
}

TEST(Softmax, RowsNormalizedForLargeLogits) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<float> mag(-1e4f, 1e4f);
    std::uniform_int_distribution<int> len(1, 300);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<float> logits(static_cast<std::size_t>(len(rng)));
        const float scale = trial % 2 == 0 ? 1e4f : 1.0f;
        for (auto& v : logits) v = mag(rng) * scale / 1e4f;
        softmax_inplace(logits);
        double sum = 0.0;
        for (float v : logits) {
            ASSERT_TRUE(std::isfinite(v));
            ASSERT_GE(v, 0.0f);
            ASSERT_LE(v, 1.0f);
            sum += v;
        }
        ASSERT_NEAR(sum, 1.0, 1e-6);
    }
}
