// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sparsekv/toy_model.hpp"
#include "test_util.hpp"

using namespace sparsekv;
using sparsekv::testing::kAllVariants;
using sparsekv::testing::random_tokens;
using sparsekv::testing::variant_config;

TEST(ModelConfig, VariantClassification) {
    EXPECT_EQ(variant_config(AttentionVariant::mha, 1, 0).variant(), AttentionVariant::mha);
    EXPECT_EQ(variant_config(AttentionVariant::gqa, 1, 0).variant(), AttentionVariant::gqa);
    EXPECT_EQ(variant_config(AttentionVariant::mqa, 1, 0).variant(), AttentionVariant::mqa);
    EXPECT_EQ(variant_config(AttentionVariant::mla, 1, 0).variant(), AttentionVariant::mla);
    ModelConfig gqa1;
    gqa1.kv_heads = 3;
    gqa1.alpha = 1;  // grouped attention with a repeat factor of one is plain multi-head
    EXPECT_EQ(gqa1.variant(), AttentionVariant::mha);
}

TEST(ModelConfig, RejectsInvalidFields) {
    ModelConfig c;
    c.bytes_per_elem = 3;
    EXPECT_THROW(c.validate(), Error);
    c = ModelConfig{};
    c.layers = 0;
    EXPECT_THROW(c.validate(), Error);
    c = ModelConfig{};
    c.latent_dim = 4;
    c.alpha = 2;
    EXPECT_THROW(c.validate(), Error);
}

TEST(ToyModel, SameSeedSameWeights) {
    const auto cfg = variant_config(AttentionVariant::gqa, 2, 42);
    ToyModel a(cfg), b(cfg);
    ASSERT_EQ(a.parameter_count(), b.parameter_count());
    for (std::size_t i = 0; i < a.lm_head().size(); ++i) ASSERT_EQ(a.lm_head().data()[i], b.lm_head().data()[i]);
    for (std::size_t i = 0; i < a.layer(1).w2.size(); ++i) ASSERT_EQ(a.layer(1).w2.data()[i], b.layer(1).w2.data()[i]);
    const float bound = 1.0f / std::sqrt(static_cast<float>(cfg.head_dim));
    for (float v : a.layer(0).wq.values()) ASSERT_LE(std::fabs(v), bound);
}

TEST(DecodeDense, FirstTokenBoundary) {
    for (auto v : kAllVariants) {
        ToyModel model(variant_config(v, 2, 1));
        DenseKvCache cache(model.config());
        const auto out = decode_step_dense(model, cache, 5);
        EXPECT_EQ(cache.seq_len(), 1u);
        ASSERT_EQ(out.logits.size(), model.config().vocab);
        for (float x : out.logits) EXPECT_TRUE(std::isfinite(x));
        for (std::size_t h = 0; h < out.last_layer_weights.heads; ++h) EXPECT_EQ(out.last_layer_weights.row(h)[0], 1.0f);
    }
}

TEST(DecodeDense, DeterministicAcrossRuns) {
    const auto cfg = variant_config(AttentionVariant::gqa, 2, 9);
    const auto prompt = random_tokens(16, cfg.vocab, 4);
    auto run = [&] {
        ToyModel model(cfg);
        DenseKvCache cache(cfg);
        std::vector<float> logits;
        for (auto t : prompt) logits = decode_step_dense(model, cache, t).logits;
        return logits;
    };
    const auto a = run();
    const auto b = run();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(DecodeDense, IncrementalMatchesFullReforward) {
    for (auto v : kAllVariants) {
        const auto cfg = variant_config(v, 2, 17);
        ToyModel model(cfg);
        const auto prompt = random_tokens(32, cfg.vocab, 23);
        const auto reference = forward_reference(model, prompt);
        DenseKvCache cache(cfg);
        for (std::size_t p = 0; p < prompt.size(); ++p) {
            const auto out = decode_step_dense(model, cache, prompt[p]);
            for (std::size_t i = 0; i < out.logits.size(); ++i) {
                ASSERT_NEAR(out.logits[i], reference[p][i], 1e-5) << to_string(v) << " position " << p;
            }
        }
    }
}

TEST(DecodeDense, TokenOutOfVocabulary) {
    ToyModel model(variant_config(AttentionVariant::mha, 1, 0));
    DenseKvCache cache(model.config());
    try {
        decode_step_dense(model, cache, 64);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::input);
    }
    EXPECT_THROW(decode_step_dense(model, cache, -1), Error);
    EXPECT_EQ(cache.seq_len(), 0u);
}

TEST(MlaExpand, IdentityUpProjections) {
    std::mt19937_64 rng(5);
    const Matrix c = Matrix::uniform(6, 4, 1.0f, rng);
    const auto [k, v] = mla_expand(c, Matrix::identity(4), Matrix::identity(4));
    for (std::size_t i = 0; i < c.size(); ++i) {
        EXPECT_EQ(k.data()[i], c.data()[i]);
        EXPECT_EQ(v.data()[i], c.data()[i]);
    }
}

TEST(MlaExpand, MatchesPerRowProductOracle) {
    std::mt19937_64 rng(3);
    const Matrix c = Matrix::uniform(10, 4, 1.0f, rng);
    const Matrix uk = Matrix::uniform(4, 4, 1.0f, rng);
    const Matrix uv = Matrix::uniform(4, 4, 1.0f, rng);
    const auto [k, v] = mla_expand(c, uk, uv);
    for (std::size_t r = 0; r < c.rows(); ++r) {
        for (std::size_t j = 0; j < 4; ++j) {
            double ek = 0.0, ev = 0.0;
            for (std::size_t i = 0; i < 4; ++i) {
                ek += static_cast<double>(c(r, i)) * uk(i, j);
                ev += static_cast<double>(c(r, i)) * uv(i, j);
            }
            EXPECT_NEAR(k(r, j), ek, 1e-6);
            EXPECT_NEAR(v(r, j), ev, 1e-6);
        }
    }
}

TEST(MlaExpand, GatherCommutesWithExpansion) {
    std::mt19937_64 rng(8);
    const Matrix c = Matrix::uniform(12, 4, 1.0f, rng);
    const Matrix uk = Matrix::uniform(4, 8, 1.0f, rng);
    const Matrix uv = Matrix::uniform(4, 8, 1.0f, rng);
    const std::vector<std::size_t> pick{1, 4, 5, 11};
    const auto [k_all, v_all] = mla_expand(c, uk, uv);
    Matrix c_sel(pick.size(), 4);
    for (std::size_t i = 0; i < pick.size(); ++i)
        for (std::size_t j = 0; j < 4; ++j) c_sel(i, j) = c(pick[i], j);
    const auto [k_sel, v_sel] = mla_expand(c_sel, uk, uv);
    for (std::size_t i = 0; i < pick.size(); ++i) {
        for (std::size_t j = 0; j < 8; ++j) {
            EXPECT_NEAR(k_sel(i, j), k_all(pick[i], j), 1e-6);
            EXPECT_NEAR(v_sel(i, j), v_all(pick[i], j), 1e-6);
        }
    }
}

TEST(MlaExpand, ZeroLatentUnsupported) {
    try {
        mla_expand(Matrix(3, 0), Matrix(0, 4), Matrix(0, 4));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::unsupported);
    }
}
