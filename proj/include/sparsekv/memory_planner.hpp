// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sparsekv/error.hpp"
#include "sparsekv/kv_store.hpp"
#include "sparsekv/model_config.hpp"

namespace sparsekv {

struct Workload {
    std::size_t requests = 1;
    std::size_t prompt_len = 0;
    std::size_t max_output = 0;
    std::size_t budget = 1;

    void validate() const {
        SPARSEKV_CHECK(requests >= 1, input, "requests must be >= 1");
        SPARSEKV_CHECK(budget >= 1, input, "budget must be >= 1");
    }
};

struct HardwareSpec {
    double mem_gpu_bytes = 24.0 * (1ull << 30);
    LinkSpec link;
    double runtime_factor = 1.3;  // weights plus activation headroom

    void validate() const {
        SPARSEKV_CHECK(mem_gpu_bytes > 0.0, input, "mem_gpu_bytes must be > 0");
        SPARSEKV_CHECK(runtime_factor >= 1.0, input, "runtime_factor must be >= 1");
        link.validate();
    }
};

/// Bytes of one position in one layer for all R requests, K and V together.
inline std::uint64_t kv_unit_bytes(const ModelConfig& cfg, std::size_t requests) {
    return 2ull * cfg.bytes_per_elem * requests * cfg.kv_heads * cfg.head_dim;
}

inline std::uint64_t kv_bytes_dense(const ModelConfig& cfg, std::size_t requests, std::size_t seq_len) {
    return kv_unit_bytes(cfg, requests) * cfg.layers * seq_len;
}

inline double model_bytes(const ModelConfig& cfg, double runtime_factor = 1.3) {
    return runtime_factor * (cfg.weights_bytes_llm + cfg.weights_bytes_draft);
}

/// Cached layers counted by the memory model: the decoder layers, the
/// retrieval head's single layer, and the alpha-fold repeated-KV buffer.
inline std::size_t cached_layer_terms(const ModelConfig& cfg) { return cfg.layers + 1 + cfg.alpha; }

/// KV part of the split placement: l_gpu resident layers plus B-entry
/// buffers for each offloaded layer.
inline std::uint64_t m_part_kv(const ModelConfig& cfg, const Workload& wl, std::size_t seq_len, std::size_t l_gpu) {
    SPARSEKV_CHECK(l_gpu <= cfg.layers, input, "l_gpu must be within [0, L]");
    const std::uint64_t rows = (l_gpu + 1 + cfg.alpha) * static_cast<std::uint64_t>(seq_len) +
                               static_cast<std::uint64_t>(cfg.layers - l_gpu) * wl.budget;
    return kv_unit_bytes(cfg, wl.requests) * rows;
}

inline double m_all(const ModelConfig& cfg, const Workload& wl, std::size_t seq_len, double runtime_factor = 1.3) {
    return model_bytes(cfg, runtime_factor) +
           static_cast<double>(kv_unit_bytes(cfg, wl.requests) * cached_layer_terms(cfg) * seq_len);
}

inline double m_part(const ModelConfig& cfg, const Workload& wl, std::size_t seq_len, std::size_t l_gpu,
                     double runtime_factor = 1.3) {
    return model_bytes(cfg, runtime_factor) + static_cast<double>(m_part_kv(cfg, wl, seq_len, l_gpu));
}

/// Whole bytes left for KV after weights and runtime headroom.
inline std::int64_t kv_capacity_bytes(const ModelConfig& cfg, const HardwareSpec& hw) {
    return static_cast<std::int64_t>(std::floor(hw.mem_gpu_bytes - model_bytes(cfg, hw.runtime_factor)));
}

/// Largest number of resident layers whose placement fits in fast memory.
inline std::size_t max_resident_layers(const ModelConfig& cfg, const Workload& wl, std::size_t seq_len,
                                       const HardwareSpec& hw) {
    const std::int64_t cap = kv_capacity_bytes(cfg, hw);
    const auto need0 = static_cast<std::int64_t>(m_part_kv(cfg, wl, seq_len, 0));
    SPARSEKV_CHECK(cap >= need0, capacity,
                   "offloading every layer still needs " + std::to_string(need0 - cap) +
                       " bytes more than the fast tier holds at S=" + std::to_string(seq_len));
    if (seq_len <= wl.budget) return cfg.layers;  // resident layers cost no more than buffers
    // m_part_kv is affine in l_gpu with slope unit * (S - B) > 0.
    const auto slope = static_cast<std::int64_t>(kv_unit_bytes(cfg, wl.requests) * (seq_len - wl.budget));
    const auto extra = static_cast<std::int64_t>((cap - need0) / slope);
    return static_cast<std::size_t>(std::min<std::int64_t>(extra, static_cast<std::int64_t>(cfg.layers)));
}

/// S^T_i for i = 0..L: the longest sequence that still fits with the last i
/// layers offloaded. The buffer term carries the same K+V byte factor as the
/// resident term so that thresholds agree with m_part exactly.
inline std::vector<std::size_t> thresholds(const ModelConfig& cfg, const Workload& wl, const HardwareSpec& hw) {
    const std::int64_t cap = kv_capacity_bytes(cfg, hw);
    SPARSEKV_CHECK(cap > 0, capacity, "weights and runtime headroom exhaust the fast tier");
    const auto unit = static_cast<std::int64_t>(kv_unit_bytes(cfg, wl.requests));
    const auto terms = static_cast<std::int64_t>(cached_layer_terms(cfg));
    const auto b = static_cast<std::int64_t>(wl.budget);
    std::vector<std::size_t> out(cfg.layers + 1);
    for (std::size_t i = 0; i <= cfg.layers; ++i) {
        const auto ii = static_cast<std::int64_t>(i);
        const std::int64_t num = cap - unit * ii * b;
        const std::int64_t den = unit * (terms - ii);
        out[i] = num <= 0 ? 0 : static_cast<std::size_t>(num / den);
    }
    return out;
}

/// True when C > c * B * (L + 1 + alpha), under which thresholds strictly increase.
inline bool thresholds_monotone_condition(const ModelConfig& cfg, const Workload& wl, const HardwareSpec& hw) {
    const auto unit = static_cast<std::int64_t>(kv_unit_bytes(cfg, wl.requests));
    return kv_capacity_bytes(cfg, hw) >
           unit * static_cast<std::int64_t>(wl.budget) * static_cast<std::int64_t>(cached_layer_terms(cfg));
}

/// Threshold table plus the current split, advanced only by manage_step.
struct MemoryPlan {
    std::vector<std::size_t> thresholds;
    std::size_t layers = 0;
    std::size_t l_cpu = 0;
    ModelConfig cfg;
    Workload workload;
    HardwareSpec hardware;

    std::size_t l_gpu() const { return layers - l_cpu; }
};

inline MemoryPlan make_plan(const ModelConfig& cfg, const Workload& wl, const HardwareSpec& hw) {
    cfg.validate();
    wl.validate();
    hw.validate();
    return MemoryPlan{thresholds(cfg, wl, hw), cfg.layers, 0, cfg, wl, hw};
}

/// Offloads layers from the back while `seq_len` has reached the threshold of
/// the current split. `offload(layer)` is invoked per action; the offloaded
/// layer indices are returned in order. Raises a capacity error if even the
/// fully offloaded placement cannot hold `seq_len` positions.
template <typename OffloadFn>
std::vector<std::size_t> manage_step(MemoryPlan& plan, std::size_t seq_len, OffloadFn&& offload) {
    std::vector<std::size_t> actions;
    while (plan.l_cpu < plan.layers && seq_len >= plan.thresholds[plan.l_cpu]) {
        const std::size_t layer = plan.layers - plan.l_cpu - 1;
        offload(layer);
        actions.push_back(layer);
        ++plan.l_cpu;
    }
    if (plan.l_cpu == plan.layers && seq_len > plan.thresholds[plan.layers]) {
        const auto need = static_cast<std::int64_t>(m_part_kv(plan.cfg, plan.workload, seq_len, 0));
        throw Error(ErrorCode::capacity, "fully offloaded placement needs " +
                                             std::to_string(need - kv_capacity_bytes(plan.cfg, plan.hardware)) +
                                             " more bytes at S=" + std::to_string(seq_len));
    }
    return actions;
}

inline std::vector<std::size_t> manage_step(MemoryPlan& plan, std::size_t seq_len, TieredKvCache& cache) {
    return manage_step(plan, seq_len, [&](std::size_t layer) { cache.offload_layer(layer); });
}

}  // namespace sparsekv
