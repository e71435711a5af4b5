// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sparsekv/attention.hpp"
#include "sparsekv/error.hpp"
#include "sparsekv/model_config.hpp"
#include "sparsekv/tensor.hpp"
#include "sparsekv/toy_model.hpp"

namespace sparsekv {

using IndexSet = std::vector<std::uint32_t>;  // sorted ascending, duplicate-free

enum class Granularity { head, group, batch };

/// Per-head (or per-group, or one shared) sets of selected positions.
struct SelectionSet {
    Granularity granularity = Granularity::head;
    std::size_t budget = 0;
    std::size_t seq_len = 0;
    std::vector<IndexSet> sets;

    /// Set applied to kv head g; a batch-level selection shares one set.
    const IndexSet& for_head(std::size_t g) const { return sets.size() == 1 ? sets.front() : sets.at(g); }
    std::size_t cardinality() const { return std::min(budget, seq_len); }
};

/// Element-wise maximum over each run of `alpha` consecutive query heads,
/// producing one row per kv group.
inline AttnWeights group_reduce_max(const AttnWeights& weights, std::size_t alpha) {
    SPARSEKV_CHECK(alpha >= 1 && weights.heads % alpha == 0, shape,
                   "query head count must be divisible by alpha");
    const std::size_t groups = weights.heads / alpha;
    AttnWeights out(groups, weights.seq_len);
    for (std::size_t g = 0; g < groups; ++g) {
        auto dst = out.row(g);
        const auto first = weights.row(g * alpha);
        std::copy(first.begin(), first.end(), dst.begin());
        for (std::size_t a = 1; a < alpha; ++a) {
            const auto src = weights.row(g * alpha + a);
            for (std::size_t s = 0; s < dst.size(); ++s) dst[s] = std::max(dst[s], src[s]);
        }
    }
    return out;
}

namespace detail {

/// Indices of the k largest scores (ties toward the smaller index) with the
/// last position forced in by displacing the k-th ranked entry. Sorted.
inline IndexSet top_budget(std::span<const float> scores, std::size_t budget) {
    const std::size_t seq = scores.size();
    const std::size_t k = std::min(budget, seq);
    IndexSet idx(seq);
    std::iota(idx.begin(), idx.end(), 0u);
    if (k < seq) {
        auto better = [&](std::uint32_t a, std::uint32_t b) {
            return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
        };
        std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k - 1), idx.end(), better);
        idx.resize(k);
        const auto newest = static_cast<std::uint32_t>(seq - 1);
        if (std::find(idx.begin(), idx.end(), newest) == idx.end()) idx[k - 1] = newest;
        std::sort(idx.begin(), idx.end());
    }
    return idx;
}

}  // namespace detail

/// Separate top-B set for every row of `weights` (per head, or per group when
/// given group-reduced weights).
inline SelectionSet retrieve_head_level(const AttnWeights& weights, std::size_t budget,
                                        Granularity granularity = Granularity::head) {
    SPARSEKV_CHECK(budget >= 1, input, "budget must be >= 1");
    SelectionSet sel{granularity, budget, weights.seq_len, {}};
    sel.sets.reserve(weights.heads);
    for (std::size_t h = 0; h < weights.heads; ++h) sel.sets.push_back(detail::top_budget(weights.row(h), budget));
    return sel;
}

/// One top-B set shared by all heads, ranked by the per-position sum of weights.
inline SelectionSet retrieve_batch_level(const AttnWeights& weights, std::size_t budget) {
    SPARSEKV_CHECK(budget >= 1, input, "budget must be >= 1");
    std::vector<float> total(weights.seq_len, 0.0f);
    for (std::size_t h = 0; h < weights.heads; ++h) {
        const auto row = weights.row(h);
        for (std::size_t s = 0; s < total.size(); ++s) total[s] += row[s];
    }
    SelectionSet sel{Granularity::batch, budget, weights.seq_len, {}};
    sel.sets.push_back(detail::top_budget(total, budget));
    return sel;
}

/// Multiply count of computing importance scores against candidate keys.
inline std::uint64_t retrieval_cost(std::uint64_t layers, std::uint64_t bsz, std::uint64_t heads, std::uint64_t dim,
                                    std::uint64_t len_keys, std::uint64_t o_mul) {
    return layers * bsz * heads * dim * len_keys * o_mul;
}

enum class RetrievalBackend { proxy, noisy_oracle };

inline std::string_view to_string(RetrievalBackend b) {
    return b == RetrievalBackend::proxy ? "proxy" : "noisy-oracle";
}

struct RetrievalOptions {
    RetrievalBackend backend = RetrievalBackend::proxy;
    double sigma = 0.0;             // noisy-oracle: log-space noise scale
    std::uint64_t seed = 0;
    std::size_t proxy_hidden = 0;   // proxy embedding width; 0 picks max(4, hidden / 8)
};

/// Importance predictor that runs ahead of the main decoder.
///
/// The proxy backend is a genuine single-layer embedding + QK projection with
/// its own key cache and no value cache. The noisy-oracle backend replays the
/// dense decoder on the same tokens and perturbs its last-layer weights as
/// w_i * exp(sigma * eps_i), renormalized, giving a controllable quality dial.
class RetrievalHead {
public:
    RetrievalHead(std::shared_ptr<const ToyModel> model, RetrievalOptions opts)
        : m_model(std::move(model)), m_opts(opts), m_cfg(m_model->config()), m_rng(opts.seed) {
        SPARSEKV_CHECK(opts.sigma >= 0.0, input, "sigma must be non-negative");
        if (m_opts.backend == RetrievalBackend::proxy) {
            init_proxy();
        } else {
            m_shadow = DenseKvCache(m_cfg);
        }
    }

    RetrievalBackend backend() const { return m_opts.backend; }
    const RetrievalOptions& options() const { return m_opts; }

    std::size_t key_cache_length() const {
        return m_opts.backend == RetrievalBackend::proxy ? m_proxy_len : m_shadow.seq_len();
    }

    /// Parameters held for retrieval; zero for the oracle backend, which borrows the decoder.
    std::size_t parameter_count() const {
        return m_embedding.size() + m_wq.size() + m_wk.size();
    }

    /// Consumes `token` at `position` (which must equal the current key-cache
    /// length) and returns the new query's weights over all cached keys, one
    /// row per query head.
    AttnWeights run(std::int64_t token, std::size_t position) {
        SPARSEKV_CHECK(position == key_cache_length(), state, "retrieval head position does not match key cache");
        SPARSEKV_CHECK(token >= 0 && static_cast<std::size_t>(token) < m_cfg.vocab, input,
                       "token id out of vocabulary");
        return m_opts.backend == RetrievalBackend::proxy ? run_proxy(token, position) : run_oracle(token);
    }

private:
    void init_proxy() {
        const std::size_t width = m_opts.proxy_hidden != 0 ? m_opts.proxy_hidden : std::max<std::size_t>(4, m_cfg.hidden() / 8);
        std::mt19937_64 rng(m_opts.seed ^ 0x9e3779b97f4a7c15ULL);
        const float bound = 1.0f / std::sqrt(static_cast<float>(m_cfg.head_dim));
        m_embedding = Matrix::uniform(m_cfg.vocab, width, bound, rng);
        m_wq = Matrix::uniform(width, m_cfg.query_heads() * m_cfg.head_dim, bound, rng);
        m_wk = Matrix::uniform(width, m_cfg.kv_heads * m_cfg.head_dim, bound, rng);
        SPARSEKV_CHECK(parameter_count() * 10 < m_model->parameter_count(), input,
                       "proxy retrieval head must hold under 10% of the decoder parameters");
    }

    AttnWeights run_proxy(std::int64_t token, std::size_t position) {
        const std::size_t d = m_cfg.head_dim;
        const auto x = rms_norm(m_embedding.row(static_cast<std::size_t>(token)));
        auto q = matvec(x, m_wq);
        auto k = matvec(x, m_wk);
        for (std::size_t h = 0; h < m_cfg.query_heads(); ++h) {
            apply_rope(std::span<float>(q).subspan(h * d, d), position, m_cfg.rope_base);
        }
        for (std::size_t g = 0; g < m_cfg.kv_heads; ++g) {
            apply_rope(std::span<float>(k).subspan(g * d, d), position, m_cfg.rope_base);
        }
        m_keys.insert(m_keys.end(), k.begin(), k.end());
        ++m_proxy_len;
        const std::size_t stride = m_cfg.kv_heads * d;
        AttnWeights w(m_cfg.query_heads(), m_proxy_len);
        for (std::size_t h = 0; h < m_cfg.query_heads(); ++h) {
            const std::size_t g = h / m_cfg.alpha;
            head_weights(std::span<const float>(q).subspan(h * d, d),
                         StridedRows{m_keys.data() + g * d, m_proxy_len, d, stride}, w.row(h));
        }
        return w;
    }

    AttnWeights run_oracle(std::int64_t token) {
        auto w = decode_step_dense(*m_model, m_shadow, token).last_layer_weights;
        if (m_opts.sigma == 0.0) return w;
        std::normal_distribution<double> noise(0.0, 1.0);
        for (std::size_t h = 0; h < w.heads; ++h) {
            auto row = w.row(h);
            double sum = 0.0;
            std::vector<double> tmp(row.size());
            for (std::size_t s = 0; s < row.size(); ++s) {
                tmp[s] = static_cast<double>(row[s]) * std::exp(m_opts.sigma * noise(m_rng));
                sum += tmp[s];
            }
            for (std::size_t s = 0; s < row.size(); ++s) row[s] = static_cast<float>(tmp[s] / sum);
        }
        return w;
    }

    std::shared_ptr<const ToyModel> m_model;
    RetrievalOptions m_opts;
    ModelConfig m_cfg;
    std::mt19937_64 m_rng;

    Matrix m_embedding;
    Matrix m_wq;
    Matrix m_wk;
    std::vector<float> m_keys;
    std::size_t m_proxy_len = 0;

    DenseKvCache m_shadow;
};

}  // namespace sparsekv
