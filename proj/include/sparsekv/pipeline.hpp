// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <future>
#include <numeric>
#include <span>
#include <string_view>
#include <thread>
#include <vector>

#include "sparsekv/error.hpp"
#include "sparsekv/kv_store.hpp"
#include "sparsekv/sparse_attention.hpp"

namespace sparsekv {

enum class PipelineMode { sync, async };

inline std::string_view to_string(PipelineMode m) { return m == PipelineMode::sync ? "sync" : "async"; }

/// Simulated-time schedule of one decode step.
///
/// sync: layer i loads its entries after layer i-1 finishes, then computes.
/// async: every transfer is issued at step start in layer order on a single
/// link; layer i computes once its transfer and layer i-1 are done. The
/// resulting makespan is the two-stage flow-shop bound
///   max_k ( sum_{i<=k} transfer_i + sum_{i>=k} compute_i ),
/// which is max(sum compute, sum transfer) plus the unhidden fill stage.
struct PipelineTiming {
    std::vector<double> transfer_start_s;
    std::vector<double> transfer_end_s;
    std::vector<double> compute_start_s;
    std::vector<double> compute_end_s;
    double sync_s = 0.0;
    double async_s = 0.0;
};

inline double async_closed_form(std::span<const double> compute_s, std::span<const double> transfer_s) {
    const std::size_t n = compute_s.size();
    double suffix = std::accumulate(compute_s.begin(), compute_s.end(), 0.0);
    double prefix = 0.0;
    double best = suffix;
    for (std::size_t k = 0; k < n; ++k) {
        prefix += transfer_s[k];
        best = std::max(best, prefix + suffix);
        suffix -= compute_s[k];
    }
    return best;
}

inline PipelineTiming simulate_pipeline(std::span<const double> compute_s, std::span<const double> transfer_s,
                                        PipelineMode mode) {
    SPARSEKV_CHECK(compute_s.size() == transfer_s.size(), shape, "per-layer compute and transfer lists differ");
    const std::size_t n = compute_s.size();
    PipelineTiming t;
    t.transfer_start_s.resize(n);
    t.transfer_end_s.resize(n);
    t.compute_start_s.resize(n);
    t.compute_end_s.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        SPARSEKV_CHECK(compute_s[i] >= 0.0 && transfer_s[i] >= 0.0, input, "stage times must be >= 0");
        t.sync_s += compute_s[i] + transfer_s[i];
    }
    double link_free = 0.0;
    double prev_end = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (mode == PipelineMode::sync) {
            t.transfer_start_s[i] = prev_end;
        } else {
            t.transfer_start_s[i] = link_free;
        }
        t.transfer_end_s[i] = t.transfer_start_s[i] + transfer_s[i];
        link_free = t.transfer_end_s[i];
        t.compute_start_s[i] = std::max(prev_end, t.transfer_end_s[i]);
        t.compute_end_s[i] = t.compute_start_s[i] + compute_s[i];
        prev_end = t.compute_end_s[i];
    }
    t.async_s = mode == PipelineMode::async ? prev_end : async_closed_form(compute_s, transfer_s);
    return t;
}

/// Per-step record of the simulated pipeline.
struct StepTrace {
    std::size_t step = 0;
    std::size_t seq_len = 0;
    std::size_t l_cpu = 0;
    std::vector<double> compute_s;
    std::vector<double> transfer_bytes;
    std::vector<double> transfer_s;
    double sync_s = 0.0;
    double async_s = 0.0;
    double step_s = 0.0;  // the figure for the configured mode
    std::size_t loaded_rows = 0;
    double overlap = 0.0;

    double total_compute_s() const { return std::accumulate(compute_s.begin(), compute_s.end(), 0.0); }
    double total_transfer_s() const { return std::accumulate(transfer_s.begin(), transfer_s.end(), 0.0); }
    double total_bytes() const { return std::accumulate(transfer_bytes.begin(), transfer_bytes.end(), 0.0); }
};

/// Times at which the step's selection became available and its first layer
/// compute begins, on the same simulated clock.
struct StepClock {
    double selection_ready_s = 0.0;
    double compute_start_s = 0.0;
};

inline StepTrace trace_from_stages(std::vector<double> compute_s, std::vector<double> bytes, const LinkSpec& link,
                                   PipelineMode mode) {
    StepTrace tr;
    tr.transfer_s.resize(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) tr.transfer_s[i] = bytes[i] > 0.0 ? transfer_time(bytes[i], link) : 0.0;
    const auto sync = simulate_pipeline(compute_s, tr.transfer_s, PipelineMode::sync);
    const auto async = simulate_pipeline(compute_s, tr.transfer_s, PipelineMode::async);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        SPARSEKV_CHECK(async.transfer_end_s[i] <= async.compute_start_s[i], contract,
                       "layer attention scheduled before its transfer completed");
    }
    tr.sync_s = sync.sync_s;
    tr.async_s = async.async_s;
    tr.step_s = mode == PipelineMode::sync ? tr.sync_s : tr.async_s;
    tr.compute_s = std::move(compute_s);
    tr.transfer_bytes = std::move(bytes);
    return tr;
}

/// Stages `sel` into every slow layer of `cache` and times the step. The
/// selection must exist before any layer of the step computes.
inline StepTrace step_pipeline(TieredKvCache& cache, const SelectionSet& sel, PipelineMode mode,
                               const LinkSpec& link, std::span<const double> compute_s, bool elastic = true,
                               StepClock clock = {}) {
    SPARSEKV_CHECK(clock.selection_ready_s <= clock.compute_start_s, contract,
                   "selection arrived after layer compute started");
    SPARSEKV_CHECK(compute_s.size() == cache.layers(), shape, "one compute time per layer required");
    std::vector<double> bytes(cache.layers(), 0.0);
    std::size_t loaded = 0;
    for (std::size_t l = 0; l < cache.layers(); ++l) {
        const auto x = cache.prefetch(l, sel, elastic);
        bytes[l] = x.bytes;
        loaded += x.rows_loaded;
    }
    auto tr = trace_from_stages({compute_s.begin(), compute_s.end()}, std::move(bytes), link, mode);
    tr.seq_len = sel.seq_len;
    tr.l_cpu = cache.slow_layers();
    tr.loaded_rows = loaded;
    return tr;
}

struct ThreadedStepResult {
    StepOutput output;
    std::vector<double> transfer_bytes;
    double wall_s = 0.0;
};

/// Real-threaded step: a transfer agent stages slow layers in order while the
/// calling thread computes, synchronized by one completion barrier per layer.
/// With `emulate_link` the agent sleeps for each transfer's simulated time.
inline ThreadedStepResult run_threaded_step(const ToyModel& model, TieredKvCache& cache, const SelectionSet& sel,
                                            std::int64_t token, bool elastic, const LinkSpec& link,
                                            bool emulate_link = false) {
    const std::size_t n = cache.layers();
    ThreadedStepResult result;
    result.transfer_bytes.assign(n, 0.0);
    std::vector<std::promise<void>> staged(n);
    std::vector<std::future<void>> ready;
    ready.reserve(n);
    for (auto& p : staged) ready.push_back(p.get_future());

    SparseStep step(model, cache, sel, token);
    const auto t0 = std::chrono::steady_clock::now();
    std::thread transfer_agent([&] {
        for (std::size_t l = 0; l < n; ++l) {
            try {
                const auto x = cache.prefetch(l, sel, elastic);
                result.transfer_bytes[l] = x.bytes;
                if (emulate_link && x.bytes > 0.0) {
                    std::this_thread::sleep_for(std::chrono::duration<double>(transfer_time(x.bytes, link)));
                }
                staged[l].set_value();
            } catch (...) {
                for (std::size_t r = l; r < n; ++r) staged[r].set_exception(std::current_exception());
                return;
            }
        }
    });
    std::exception_ptr failure;
    try {
        for (std::size_t l = 0; l < n; ++l) {
            ready[l].get();
            step.run_layer(l);
        }
    } catch (...) {
        failure = std::current_exception();
    }
    transfer_agent.join();
    if (failure) std::rethrow_exception(failure);
    result.output = step.finish();
    result.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

}  // namespace sparsekv
