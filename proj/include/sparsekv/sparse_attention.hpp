// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sparsekv/error.hpp"
#include "sparsekv/kv_store.hpp"
#include "sparsekv/retrieval_head.hpp"
#include "sparsekv/toy_model.hpp"

namespace sparsekv {

/// Compacted per-kv-head entry blocks. Row i of group g is the cache entry
/// at position groups[g].index_map[i].
struct GatheredKV {
    struct Group {
        IndexSet index_map;
        std::vector<float> block;
    };
    std::size_t entry_width = 0;
    std::vector<Group> groups;

    std::span<const float> row(std::size_t g, std::size_t i) const {
        return {groups[g].block.data() + i * entry_width, entry_width};
    }
};

namespace detail {

template <typename EntryFn>
GatheredKV gather_with(const ModelConfig& cfg, const SelectionSet& sel, std::size_t length, EntryFn&& entry) {
    SPARSEKV_CHECK(sel.sets.size() == 1 || sel.sets.size() == cfg.kv_heads, shape,
                   "selection must hold one set or one set per kv head");
    GatheredKV out;
    out.entry_width = cfg.head_entry_width();
    out.groups.resize(cfg.kv_heads);
    for (std::size_t g = 0; g < cfg.kv_heads; ++g) {
        const IndexSet& idx = sel.for_head(g);
        auto& grp = out.groups[g];
        grp.index_map = idx;
        grp.block.resize(idx.size() * out.entry_width);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            SPARSEKV_CHECK(idx[i] < length, selection,
                           "selected index " + std::to_string(idx[i]) + " beyond cached length " +
                               std::to_string(length));
            const auto src = entry(g, idx[i]);
            std::copy(src.begin(), src.end(), grp.block.begin() + static_cast<std::ptrdiff_t>(i * out.entry_width));
        }
    }
    return out;
}

inline EntryBlock group_block(const GatheredKV& kv, std::size_t g) {
    const auto& grp = kv.groups[g];
    return {grp.block.data(), grp.index_map.size(), kv.entry_width, grp.index_map};
}

}  // namespace detail

/// Gathers from a dense layer cache.
inline GatheredKV gather_kv(const ModelConfig& cfg, const LayerKv& kv, const SelectionSet& sel) {
    return detail::gather_with(cfg, sel, kv.length(), [&](std::size_t g, std::uint32_t idx) {
        const auto row = kv.row(idx);
        return cfg.is_latent() ? row : row.subspan(g * cfg.head_entry_width(), cfg.head_entry_width());
    });
}

/// Gathers from the fast-tier view of one layer of a tiered cache; a
/// non-resident index raises a contract error.
inline GatheredKV gather_kv(const TieredKvCache& cache, std::size_t layer, const SelectionSet& sel) {
    return detail::gather_with(cache.config(), sel, cache.layer_length(layer),
                               [&](std::size_t g, std::uint32_t idx) { return cache.entry(layer, g, idx); });
}

/// Attention of all query heads of layer l over gathered blocks, softmax
/// renormalized within each block.
inline void sparse_attention(const ToyModel& model, std::size_t l, std::span<const float> q, const GatheredKV& kv,
                             std::span<float> attn_out, AttnWeights* weights = nullptr) {
    for (std::size_t g = 0; g < model.config().kv_heads; ++g) {
        detail::attend_group(model, l, g, q, detail::group_block(kv, g), attn_out, weights);
    }
}

/// One decode step over a tiered cache, layer by layer, so a transfer agent
/// can stage layer l+1 while layer l computes. Each layer appends its new
/// entry (filling any reserved slot) before attending over the selection.
class SparseStep {
public:
    SparseStep(const ToyModel& model, TieredKvCache& cache, const SelectionSet& sel, std::int64_t token)
        : m_model(model), m_cache(cache), m_sel(sel), m_pos(cache.seq_len()), m_x(detail::embed(model, token)),
          m_attn(model.config().query_heads() * model.config().head_dim) {
        SPARSEKV_CHECK(cache.layers() == model.config().layers, shape, "cache layer count mismatch");
        SPARSEKV_CHECK(sel.seq_len == m_pos + 1, contract, "selection must cover the position being decoded");
    }

    void run_layer(std::size_t l) {
        SPARSEKV_CHECK(l == m_next, state, "layers must run in order");
        auto proj = detail::project(m_model, l, m_x, m_pos);
        m_cache.append(l, proj.entry);
        const auto kv = gather_kv(m_cache, l, m_sel);
        sparse_attention(m_model, l, proj.q, kv, m_attn);
        detail::finish_layer(m_model, l, m_x, m_attn);
        m_attended += attended_entries(kv);
        m_new_entries.push_back(std::move(proj.entry));
        ++m_next;
    }

    StepOutput finish() {
        SPARSEKV_CHECK(m_next == m_model.config().layers, state, "not all layers ran");
        StepOutput out;
        out.logits = detail::lm_logits(m_model, m_x);
        out.new_entries = std::move(m_new_entries);
        return out;
    }

    std::size_t position() const { return m_pos; }
    std::size_t attended() const { return m_attended; }

private:
    static std::size_t attended_entries(const GatheredKV& kv) {
        std::size_t n = 0;
        for (const auto& g : kv.groups) n += g.index_map.size();
        return n;
    }

    const ToyModel& m_model;
    TieredKvCache& m_cache;
    const SelectionSet& m_sel;
    std::size_t m_pos;
    std::vector<float> m_x;
    std::vector<float> m_attn;
    std::vector<std::vector<float>> m_new_entries;
    std::size_t m_next = 0;
    std::size_t m_attended = 0;
};

/// Runs all layers of a sparse step. Slow layers must already have been
/// prefetched for `sel`.
inline StepOutput decode_step_sparse(const ToyModel& model, TieredKvCache& cache, const SelectionSet& sel,
                                     std::int64_t token) {
    SparseStep step(model, cache, sel, token);
    for (std::size_t l = 0; l < model.config().layers; ++l) step.run_layer(l);
    return step.finish();
}

}  // namespace sparsekv
