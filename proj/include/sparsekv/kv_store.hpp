// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sparsekv/error.hpp"
#include "sparsekv/model_config.hpp"
#include "sparsekv/retrieval_head.hpp"
#include "sparsekv/toy_model.hpp"

namespace sparsekv {

enum class Tier { fast, slow };

/// Simulated fast <-> slow interconnect.
struct LinkSpec {
    double bandwidth_bytes_per_s = 16e9;
    double latency_s = 10e-6;

    void validate() const {
        SPARSEKV_CHECK(bandwidth_bytes_per_s > 0.0, input, "link bandwidth must be > 0");
        SPARSEKV_CHECK(latency_s >= 0.0, input, "link latency must be >= 0");
    }
};

inline double transfer_time(double bytes, const LinkSpec& link) {
    SPARSEKV_CHECK(bytes >= 0.0, input, "transfer size must be >= 0");
    return link.latency_s + bytes / link.bandwidth_bytes_per_s;
}

struct SetDelta {
    IndexSet to_load;
    IndexSet to_evict;
};

inline SetDelta set_delta(const IndexSet& s_last, const IndexSet& s_now) {
    SetDelta d;
    std::set_difference(s_now.begin(), s_now.end(), s_last.begin(), s_last.end(), std::back_inserter(d.to_load));
    std::set_difference(s_last.begin(), s_last.end(), s_now.begin(), s_now.end(), std::back_inserter(d.to_evict));
    return d;
}

/// Elastic delta between consecutive fixed-budget selections.
inline SetDelta diff_sets(const IndexSet& s_last, const IndexSet& s_now) {
    SPARSEKV_CHECK(s_last.size() == s_now.size(), budget, "consecutive selections must have equal cardinality");
    return set_delta(s_last, s_now);
}

struct LayerTransfer {
    std::size_t rows_loaded = 0;  // head entries copied into slots
    std::size_t rows_evicted = 0;
    double bytes = 0.0;
};

/// Per-layer KV storage split across a fast and a slow tier.
///
/// Every layer keeps its full backing store. A slow layer additionally owns,
/// per kv head, a fast-tier slot buffer of exactly `budget` head entries and
/// may only be read through the entries resident there. A slot may be
/// reserved for the position about to be appended; the append fills it.
class TieredKvCache {
public:
    TieredKvCache(const ModelConfig& cfg, std::size_t budget) : m_cfg(cfg), m_budget(budget) {
        m_cfg.validate();
        SPARSEKV_CHECK(budget >= 1, input, "budget must be >= 1");
        m_layers.reserve(cfg.layers);
        for (std::size_t l = 0; l < cfg.layers; ++l) m_layers.emplace_back(cfg.row_width());
    }

    const ModelConfig& config() const { return m_cfg; }
    std::size_t budget() const { return m_budget; }
    std::size_t layers() const { return m_layers.size(); }
    Tier tier(std::size_t l) const { return m_layers.at(l).tier; }
    std::size_t layer_length(std::size_t l) const { return m_layers.at(l).backing.length(); }

    std::size_t seq_len() const {
        std::size_t s = m_layers.front().backing.length();
        for (const auto& layer : m_layers) s = std::min(s, layer.backing.length());
        return s;
    }

    std::size_t slow_layers() const {
        return static_cast<std::size_t>(std::count_if(m_layers.begin(), m_layers.end(),
                                                      [](const Layer& layer) { return layer.tier == Tier::slow; }));
    }

    void reserve(std::size_t positions) {
        for (auto& layer : m_layers) layer.backing.reserve(positions);
    }

    const LayerKv& backing(std::size_t l) const { return m_layers.at(l).backing; }

    void append(std::size_t l, std::span<const float> entry) {
        auto& layer = m_layers.at(l);
        const auto idx = static_cast<std::uint32_t>(layer.backing.length());
        layer.backing.append(entry);
        if (layer.tier != Tier::slow) return;
        for (std::size_t g = 0; g < m_cfg.kv_heads; ++g) {
            auto& sb = layer.slots[g];
            sb.index_slot.push_back(-1);
            if (sb.pending_slot >= 0) {
                write_slot(layer, g, static_cast<std::size_t>(sb.pending_slot), idx);
                sb.index_slot[idx] = sb.pending_slot;
                sb.pending_slot = -1;
            }
        }
    }

    bool is_resident(std::size_t l, std::size_t g, std::uint32_t idx) const {
        const auto& layer = m_layers.at(l);
        if (idx >= layer.backing.length()) return false;
        if (layer.tier == Tier::fast) return true;
        return layer.slots.at(g).index_slot[idx] >= 0;
    }

    /// Head-g entry of position idx as stored on the fast tier.
    std::span<const float> entry(std::size_t l, std::size_t g, std::uint32_t idx) const {
        const auto& layer = m_layers.at(l);
        SPARSEKV_CHECK(idx < layer.backing.length(), selection,
                       "index " + std::to_string(idx) + " beyond cached length");
        if (layer.tier == Tier::fast) return head_slice(layer.backing.row(idx), g);
        const auto slot = layer.slots.at(g).index_slot[idx];
        SPARSEKV_CHECK(slot >= 0, contract,
                       "layer " + std::to_string(l) + " head " + std::to_string(g) + " index " +
                           std::to_string(idx) + " read while not resident on the fast tier");
        return slot_entry(l, g, static_cast<std::size_t>(slot));
    }

    /// Resident set of a slow layer's head (includes any reserved position).
    const IndexSet& resident(std::size_t l, std::size_t g) const {
        const auto& layer = m_layers.at(l);
        SPARSEKV_CHECK(layer.tier == Tier::slow, state, "fast-tier layers have no slot buffer");
        return layer.slots.at(g).resident;
    }

    std::span<const float> slot_entry(std::size_t l, std::size_t g, std::size_t slot) const {
        const auto& sb = m_layers.at(l).slots.at(g);
        const std::size_t w = m_cfg.head_entry_width();
        return {sb.data.data() + slot * w, w};
    }

    std::int64_t slot_index(std::size_t l, std::size_t g, std::size_t slot) const {
        return m_layers.at(l).slots.at(g).slot_index.at(slot);
    }

    /// Head-g slice of backing row idx.
    std::span<const float> backing_entry(std::size_t l, std::size_t g, std::uint32_t idx) const {
        return head_slice(m_layers.at(l).backing.row(idx), g);
    }

    /// In-place slot update of head g of slow layer l: the slots of `to_evict`
    /// are reused for `to_load`. A load of the position equal to the layer
    /// length reserves its slot for the next append. Returns head entries loaded.
    std::size_t apply_elastic_update(std::size_t l, std::size_t g, const IndexSet& to_load, const IndexSet& to_evict) {
        auto& layer = m_layers.at(l);
        SPARSEKV_CHECK(layer.tier == Tier::slow, state, "elastic update on a fast-tier layer");
        auto& sb = layer.slots.at(g);
        const std::size_t len = layer.backing.length();
        for (auto idx : to_evict) {
            SPARSEKV_CHECK(std::binary_search(sb.resident.begin(), sb.resident.end(), idx), state,
                           "evicting non-resident index " + std::to_string(idx));
        }
        for (auto idx : to_load) {
            SPARSEKV_CHECK(idx <= len, selection, "loading index " + std::to_string(idx) + " beyond cached length");
            SPARSEKV_CHECK(!std::binary_search(sb.resident.begin(), sb.resident.end(), idx) ||
                               std::binary_search(to_evict.begin(), to_evict.end(), idx),
                           state, "loading already resident index " + std::to_string(idx));
        }
        const std::size_t free_after = m_budget - sb.resident.size() + to_evict.size();
        SPARSEKV_CHECK(to_load.size() <= free_after, budget, "slot buffer capacity exceeded");

        std::vector<std::size_t> freed;
        freed.reserve(free_after);
        for (auto idx : to_evict) {
            if (idx == len) {
                freed.push_back(static_cast<std::size_t>(sb.pending_slot));
                sb.pending_slot = -1;
            } else {
                freed.push_back(static_cast<std::size_t>(sb.index_slot[idx]));
                sb.index_slot[idx] = -1;
            }
            sb.slot_index[freed.back()] = -1;
        }
        for (std::size_t s = 0; s < m_budget && freed.size() < to_load.size(); ++s) {
            if (sb.slot_index[s] < 0 && std::find(freed.begin(), freed.end(), s) == freed.end()) freed.push_back(s);
        }
        for (std::size_t i = 0; i < to_load.size(); ++i) {
            const auto idx = to_load[i];
            const std::size_t slot = freed[i];
            sb.slot_index[slot] = idx;
            if (idx == len) {
                sb.pending_slot = static_cast<std::int64_t>(slot);
            } else {
                write_slot(layer, g, slot, idx);
                sb.index_slot[idx] = static_cast<std::int64_t>(slot);
            }
        }
        IndexSet kept;
        std::set_difference(sb.resident.begin(), sb.resident.end(), to_evict.begin(), to_evict.end(),
                            std::back_inserter(kept));
        sb.resident.clear();
        std::set_union(kept.begin(), kept.end(), to_load.begin(), to_load.end(), std::back_inserter(sb.resident));
        return to_load.size();
    }

    /// Brings every head of slow layer l to `sel`. Elastic mode moves only the
    /// set difference; otherwise the whole selection is re-sent. Fast layers
    /// are a no-op.
    LayerTransfer prefetch(std::size_t l, const SelectionSet& sel, bool elastic = true) {
        LayerTransfer xfer;
        auto& layer = m_layers.at(l);
        if (layer.tier != Tier::slow) return xfer;
        const std::size_t len = layer.backing.length();
        SPARSEKV_CHECK(sel.seq_len == len || sel.seq_len == len + 1, contract,
                       "selection does not match the cached sequence length");
        for (std::size_t g = 0; g < m_cfg.kv_heads; ++g) {
            const IndexSet& target = sel.for_head(g);
            const IndexSet& current = layer.slots[g].resident;
            SetDelta d;
            if (elastic) {
                d = current.size() == target.size() ? diff_sets(current, target) : set_delta(current, target);
            } else {
                d.to_evict = current;
                d.to_load = target;
            }
            xfer.rows_loaded += apply_elastic_update(l, g, d.to_load, d.to_evict);
            xfer.rows_evicted += d.to_evict.size();
        }
        xfer.bytes = static_cast<double>(xfer.rows_loaded * m_cfg.head_entry_bytes());
        return xfer;
    }

    void record_selection(const SelectionSet& sel) { m_last_selection = sel; }
    const std::optional<SelectionSet>& last_selection() const { return m_last_selection; }

    /// Moves layer l to the slow tier. Offloads run from the last layer
    /// backward. The slot buffer starts from the latest recorded selection
    /// when it covers the current length, else from the most recent positions.
    void offload_layer(std::size_t l) {
        SPARSEKV_CHECK(l < m_layers.size(), input, "layer index out of range");
        auto& layer = m_layers[l];
        SPARSEKV_CHECK(layer.tier == Tier::fast, state, "layer " + std::to_string(l) + " is already offloaded");
        SPARSEKV_CHECK(l + 1 + slow_layers() == m_layers.size(), state,
                       "layers must be offloaded from the last layer backward");
        const std::size_t len = layer.backing.length();
        layer.tier = Tier::slow;
        layer.slots.assign(m_cfg.kv_heads, SlotBuffer{});
        for (std::size_t g = 0; g < m_cfg.kv_heads; ++g) {
            auto& sb = layer.slots[g];
            sb.data.assign(m_budget * m_cfg.head_entry_width(), 0.0f);
            sb.slot_index.assign(m_budget, -1);
            sb.index_slot.assign(len, -1);
            IndexSet init;
            if (m_last_selection && m_last_selection->seq_len == len) {
                init = m_last_selection->for_head(g);
            } else {
                const std::size_t k = std::min(m_budget, len);
                for (std::size_t i = len - k; i < len; ++i) init.push_back(static_cast<std::uint32_t>(i));
            }
            for (std::size_t s = 0; s < init.size(); ++s) {
                write_slot(layer, g, s, init[s]);
                sb.slot_index[s] = init[s];
                sb.index_slot[init[s]] = static_cast<std::int64_t>(s);
            }
            sb.resident = std::move(init);
        }
    }

    /// Bytes held in the fast tier per the memory model: resident layers in
    /// full, B-entry slot buffers per kv head of slow layers, and the
    /// (1 + alpha) * S rows reserved for the retrieval head cache and the
    /// repeated-KV scratch.
    double fast_tier_bytes() const {
        double bytes = reserved_rows() * static_cast<double>(m_cfg.row_bytes());
        for (const auto& layer : m_layers) {
            if (layer.tier == Tier::fast) {
                bytes += static_cast<double>(layer.backing.length() * m_cfg.row_bytes());
            } else {
                bytes += static_cast<double>(m_cfg.kv_heads * m_budget * m_cfg.head_entry_bytes());
            }
        }
        return bytes;
    }

    double reserved_rows() const { return static_cast<double>((1 + m_cfg.alpha) * seq_len()); }

private:
    struct SlotBuffer {
        std::vector<float> data;               // budget x head_entry_width
        std::vector<std::int64_t> slot_index;  // slot -> position, -1 when free
        std::vector<std::int64_t> index_slot;  // position -> slot, -1 when absent
        std::int64_t pending_slot = -1;        // reserved for the next appended position
        IndexSet resident;
    };

    struct Layer {
        explicit Layer(std::size_t width) : backing(width) {}
        Tier tier = Tier::fast;
        LayerKv backing;
        std::vector<SlotBuffer> slots;
    };

    std::span<const float> head_slice(std::span<const float> row, std::size_t g) const {
        if (m_cfg.is_latent()) return row;
        const std::size_t w = m_cfg.head_entry_width();
        return row.subspan(g * w, w);
    }

    void write_slot(Layer& layer, std::size_t g, std::size_t slot, std::uint32_t idx) {
        const auto src = head_slice(layer.backing.row(idx), g);
        auto& sb = layer.slots[g];
        std::copy(src.begin(), src.end(), sb.data.begin() + static_cast<std::ptrdiff_t>(slot * src.size()));
    }

    ModelConfig m_cfg;
    std::size_t m_budget;
    std::vector<Layer> m_layers;
    std::optional<SelectionSet> m_last_selection;
};

/// Free-function forms of the store operations.
inline std::size_t apply_elastic_update(TieredKvCache& cache, std::size_t layer, std::size_t head,
                                        const IndexSet& to_load, const IndexSet& to_evict) {
    return cache.apply_elastic_update(layer, head, to_load, to_evict);
}

inline void offload_layer(TieredKvCache& cache, std::size_t layer) { cache.offload_layer(layer); }

}  // namespace sparsekv
