// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "sparsekv/attention.hpp"
#include "sparsekv/error.hpp"
#include "sparsekv/model_config.hpp"
#include "sparsekv/tensor.hpp"

namespace sparsekv {

struct LayerWeights {
    Matrix wq;  // hidden x (query_heads * D)
    Matrix wk;  // hidden x (kv_heads * D), standard variants only
    Matrix wv;  // hidden x (kv_heads * D), standard variants only
    Matrix w_down_kv;  // hidden x d_c, latent variant only
    Matrix w_up_k;     // d_c x (kv_heads * D), latent variant only
    Matrix w_up_v;     // d_c x (kv_heads * D), latent variant only
    Matrix wo;  // (query_heads * D) x hidden
    Matrix w1;  // hidden x ffn
    Matrix w2;  // ffn x hidden
};

/// Deterministic random-weight decoder used as the dense reference and as the
/// host of the sparse path. Weights never change after construction.
class ToyModel {
public:
    explicit ToyModel(const ModelConfig& cfg) : m_cfg(cfg) {
        m_cfg.validate();
        std::mt19937_64 rng(m_cfg.seed);
        const float bound = 1.0f / std::sqrt(static_cast<float>(m_cfg.head_dim));
        const std::size_t hidden = m_cfg.hidden();
        const std::size_t q_width = m_cfg.query_heads() * m_cfg.head_dim;
        const std::size_t kv_width = m_cfg.kv_heads * m_cfg.head_dim;
        m_embedding = Matrix::uniform(m_cfg.vocab, hidden, bound, rng);
        m_layers.resize(m_cfg.layers);
        for (auto& lw : m_layers) {
            lw.wq = Matrix::uniform(hidden, q_width, bound, rng);
            if (m_cfg.is_latent()) {
                lw.w_down_kv = Matrix::uniform(hidden, m_cfg.latent_dim, bound, rng);
                lw.w_up_k = Matrix::uniform(m_cfg.latent_dim, kv_width, bound, rng);
                lw.w_up_v = Matrix::uniform(m_cfg.latent_dim, kv_width, bound, rng);
            } else {
                lw.wk = Matrix::uniform(hidden, kv_width, bound, rng);
                lw.wv = Matrix::uniform(hidden, kv_width, bound, rng);
            }
            lw.wo = Matrix::uniform(q_width, hidden, bound, rng);
            lw.w1 = Matrix::uniform(hidden, m_cfg.ffn_dim(), bound, rng);
            lw.w2 = Matrix::uniform(m_cfg.ffn_dim(), hidden, bound, rng);
        }
        m_lm_head = Matrix::uniform(hidden, m_cfg.vocab, bound, rng);
    }

    const ModelConfig& config() const { return m_cfg; }
    const Matrix& embedding() const { return m_embedding; }
    const LayerWeights& layer(std::size_t l) const { return m_layers.at(l); }
    const Matrix& lm_head() const { return m_lm_head; }

    std::size_t parameter_count() const {
        std::size_t n = m_embedding.size() + m_lm_head.size();
        for (const auto& lw : m_layers) {
            n += lw.wq.size() + lw.wk.size() + lw.wv.size() + lw.w_down_kv.size() + lw.w_up_k.size() +
                 lw.w_up_v.size() + lw.wo.size() + lw.w1.size() + lw.w2.size();
        }
        return n;
    }

private:
    ModelConfig m_cfg;
    Matrix m_embedding;
    std::vector<LayerWeights> m_layers;
    Matrix m_lm_head;
};

/// Append-only cache of one layer: one row of `width` floats per position.
/// Standard rows are laid out head-major as [K_0 V_0 | K_1 V_1 | ...] with K
/// already rotated; latent rows hold the unexpanded latent.
class LayerKv {
public:
    LayerKv() = default;
    explicit LayerKv(std::size_t width) : m_width(width) {}

    std::size_t width() const { return m_width; }
    std::size_t length() const { return m_width == 0 ? 0 : m_rows.size() / m_width; }

    void append(std::span<const float> row) {
        SPARSEKV_CHECK(row.size() == m_width, shape, "cache row width mismatch");
        m_rows.insert(m_rows.end(), row.begin(), row.end());
    }

    void reserve(std::size_t positions) { m_rows.reserve(positions * m_width); }

    std::span<const float> row(std::size_t i) const { return {m_rows.data() + i * m_width, m_width}; }
    const float* data() const { return m_rows.data(); }

private:
    std::size_t m_width = 0;
    std::vector<float> m_rows;
};

/// Full-attention cache: every layer holds every position.
struct DenseKvCache {
    std::vector<LayerKv> layers;

    DenseKvCache() = default;
    explicit DenseKvCache(const ModelConfig& cfg) : layers(cfg.layers, LayerKv(cfg.row_width())) {}

    std::size_t seq_len() const { return layers.empty() ? 0 : layers.front().length(); }
};

struct StepOutput {
    std::vector<float> logits;
    std::vector<std::vector<float>> new_entries;  // per layer, the appended cache row
    AttnWeights last_layer_weights;               // query heads x attended positions
};

/// K = c W_UK and V = c W_UV for each latent row of `latents`.
inline std::pair<Matrix, Matrix> mla_expand(const Matrix& latents, const Matrix& up_k, const Matrix& up_v) {
    SPARSEKV_CHECK(latents.cols() > 0, unsupported, "latent expansion requires latent_dim > 0");
    SPARSEKV_CHECK(up_k.rows() == latents.cols() && up_v.rows() == latents.cols(), shape,
                   "latent rows must have dimension d_c");
    Matrix k(latents.rows(), up_k.cols());
    Matrix v(latents.rows(), up_v.cols());
    for (std::size_t i = 0; i < latents.rows(); ++i) {
        matvec(latents.row(i), up_k, k.row(i));
        matvec(latents.row(i), up_v, v.row(i));
    }
    return {std::move(k), std::move(v)};
}

namespace detail {

/// Entries of one kv head: `rows` entries of head_entry_width floats, entry i
/// at `base + i * stride`, belonging to sequence position `positions[i]`.
struct EntryBlock {
    const float* base = nullptr;
    std::size_t rows = 0;
    std::size_t stride = 0;
    std::span<const std::uint32_t> positions;  // empty => positions are 0..rows-1
};

struct LayerProjection {
    std::vector<float> normed;
    std::vector<float> q;      // query_heads * D, rotated
    std::vector<float> entry;  // one cache row
};

inline LayerProjection project(const ToyModel& model, std::size_t l, std::span<const float> x, std::size_t pos) {
    const auto& cfg = model.config();
    const auto& lw = model.layer(l);
    const std::size_t d = cfg.head_dim;
    LayerProjection p;
    p.normed = rms_norm(x);
    p.q = matvec(p.normed, lw.wq);
    for (std::size_t h = 0; h < cfg.query_heads(); ++h) {
        apply_rope(std::span<float>(p.q).subspan(h * d, d), pos, cfg.rope_base);
    }
    if (cfg.is_latent()) {
        p.entry = matvec(p.normed, lw.w_down_kv);
        return p;
    }
    auto k = matvec(p.normed, lw.wk);
    auto v = matvec(p.normed, lw.wv);
    p.entry.resize(cfg.row_width());
    for (std::size_t g = 0; g < cfg.kv_heads; ++g) {
        auto kg = std::span<float>(k).subspan(g * d, d);
        apply_rope(kg, pos, cfg.rope_base);
        std::copy(kg.begin(), kg.end(), p.entry.begin() + static_cast<std::ptrdiff_t>(g * 2 * d));
        std::copy(v.begin() + static_cast<std::ptrdiff_t>(g * d), v.begin() + static_cast<std::ptrdiff_t>((g + 1) * d),
                  p.entry.begin() + static_cast<std::ptrdiff_t>(g * 2 * d + d));
    }
    return p;
}

/// Head-g slice of the latent up-projection applied to one latent row, RoPE on K.
inline void expand_latent_entry(const ToyModel& model, std::size_t l, std::size_t g, std::span<const float> latent,
                                std::size_t pos, std::span<float> k_out, std::span<float> v_out) {
    const auto& cfg = model.config();
    const auto& lw = model.layer(l);
    const std::size_t d = cfg.head_dim;
    std::fill(k_out.begin(), k_out.end(), 0.0f);
    std::fill(v_out.begin(), v_out.end(), 0.0f);
    for (std::size_t i = 0; i < latent.size(); ++i) {
        const float ci = latent[i];
        const auto uk = lw.w_up_k.row(i).subspan(g * d, d);
        const auto uv = lw.w_up_v.row(i).subspan(g * d, d);
        for (std::size_t j = 0; j < d; ++j) {
            k_out[j] += ci * uk[j];
            v_out[j] += ci * uv[j];
        }
    }
    apply_rope(k_out, pos, cfg.rope_base);
}

/// Attention of the alpha query heads of group g over `block`; writes their
/// outputs into attn_out and, if `weights` is non-null, their weight rows.
inline void attend_group(const ToyModel& model, std::size_t l, std::size_t g, std::span<const float> q,
                         const EntryBlock& block, std::span<float> attn_out, AttnWeights* weights) {
    const auto& cfg = model.config();
    const std::size_t d = cfg.head_dim;
    StridedRows keys;
    StridedRows values;
    Matrix k_tmp;
    Matrix v_tmp;
    if (cfg.is_latent()) {
        k_tmp = Matrix(block.rows, d);
        v_tmp = Matrix(block.rows, d);
        for (std::size_t i = 0; i < block.rows; ++i) {
            const std::size_t pos = block.positions.empty() ? i : block.positions[i];
            expand_latent_entry(model, l, g, {block.base + i * block.stride, cfg.latent_dim}, pos, k_tmp.row(i),
                                v_tmp.row(i));
        }
        keys = {k_tmp.data(), block.rows, d, d};
        values = {v_tmp.data(), block.rows, d, d};
    } else {
        keys = {block.base, block.rows, d, block.stride};
        values = {block.base + d, block.rows, d, block.stride};
    }
    std::vector<float> w(block.rows);
    for (std::size_t a = 0; a < cfg.alpha; ++a) {
        const std::size_t qh = g * cfg.alpha + a;
        attend_head(std::span<const float>(q).subspan(qh * d, d), keys, values, w, attn_out.subspan(qh * d, d));
        if (weights != nullptr) std::copy(w.begin(), w.end(), weights->row(qh).begin());
    }
}

/// Output projection, residual, and feed-forward block.
inline void finish_layer(const ToyModel& model, std::size_t l, std::vector<float>& x, std::span<const float> attn) {
    const auto& lw = model.layer(l);
    const auto o = matvec(attn, lw.wo);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += o[i];
    const auto h = rms_norm(x);
    auto f = matvec(h, lw.w1);
    for (auto& v : f) v = v > 0.0f ? v : 0.0f;
    const auto y = matvec(f, lw.w2);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

inline std::vector<float> lm_logits(const ToyModel& model, std::span<const float> x) {
    return matvec(rms_norm(x), model.lm_head());
}

inline std::vector<float> embed(const ToyModel& model, std::int64_t token) {
    const auto& cfg = model.config();
    SPARSEKV_CHECK(token >= 0 && static_cast<std::size_t>(token) < cfg.vocab, input, "token id out of vocabulary");
    const auto row = model.embedding().row(static_cast<std::size_t>(token));
    return {row.begin(), row.end()};
}

/// Kv-head g entries of a full layer cache as a block over 0..length-1.
inline EntryBlock full_block(const ModelConfig& cfg, const LayerKv& kv, std::size_t g) {
    if (cfg.is_latent()) return {kv.data(), kv.length(), kv.width(), {}};
    return {kv.data() + g * cfg.head_entry_width(), kv.length(), kv.width(), {}};
}

}  // namespace detail

/// One autoregressive step with attention over the entire cache. Appends the
/// new entry of every layer to `cache`.
inline StepOutput decode_step_dense(const ToyModel& model, DenseKvCache& cache, std::int64_t token) {
    const auto& cfg = model.config();
    SPARSEKV_CHECK(cache.layers.size() == cfg.layers, shape, "cache layer count mismatch");
    const std::size_t pos = cache.seq_len();
    auto x = detail::embed(model, token);
    StepOutput out;
    out.new_entries.reserve(cfg.layers);
    std::vector<float> attn(cfg.query_heads() * cfg.head_dim);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        auto proj = detail::project(model, l, x, pos);
        cache.layers[l].append(proj.entry);
        const bool last = l + 1 == cfg.layers;
        if (last) out.last_layer_weights = AttnWeights(cfg.query_heads(), pos + 1);
        for (std::size_t g = 0; g < cfg.kv_heads; ++g) {
            detail::attend_group(model, l, g, proj.q, detail::full_block(cfg, cache.layers[l], g), attn,
                                 last ? &out.last_layer_weights : nullptr);
        }
        detail::finish_layer(model, l, x, attn);
        out.new_entries.push_back(std::move(proj.entry));
    }
    out.logits = detail::lm_logits(model, x);
    return out;
}

/// Layer-by-layer causal forward pass over the whole sequence with no
/// persistent cache. Returns the logits at every position.
inline std::vector<std::vector<float>> forward_reference(const ToyModel& model, std::span<const std::int64_t> tokens) {
    const auto& cfg = model.config();
    const std::size_t n = tokens.size();
    std::vector<std::vector<float>> xs;
    xs.reserve(n);
    for (auto t : tokens) xs.push_back(detail::embed(model, t));
    std::vector<float> attn(cfg.query_heads() * cfg.head_dim);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        std::vector<detail::LayerProjection> proj;
        proj.reserve(n);
        LayerKv kv(cfg.row_width());
        for (std::size_t p = 0; p < n; ++p) {
            proj.push_back(detail::project(model, l, xs[p], p));
            kv.append(proj.back().entry);
        }
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t g = 0; g < cfg.kv_heads; ++g) {
                auto block = detail::full_block(cfg, kv, g);
                block.rows = p + 1;  // causal prefix
                detail::attend_group(model, l, g, proj[p].q, block, attn, nullptr);
            }
            detail::finish_layer(model, l, xs[p], attn);
        }
    }
    std::vector<std::vector<float>> logits;
    logits.reserve(n);
    for (const auto& x : xs) logits.push_back(detail::lm_logits(model, x));
    return logits;
}

}  // namespace sparsekv
