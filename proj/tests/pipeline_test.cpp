// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#include <functional>
#include <queue>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "sparsekv/pipeline.hpp"
#include "test_util.hpp"

using namespace sparsekv;
using sparsekv::testing::random_tokens;
using sparsekv::testing::variant_config;

namespace {

// Event-driven two-resource simulation: a serial link and a single compute
// unit. Returns the time the last compute finishes.
double event_oracle(const std::vector<double>& compute, const std::vector<double>& transfer) {
    enum Kind { transfer_done, compute_done };
    struct Event {
        double t;
        int kind;
        std::size_t layer;
        bool operator>(const Event& o) const { return t > o.t || (t == o.t && kind > o.kind); }
    };
    const std::size_t n = compute.size();
    std::priority_queue<Event, std::vector<Event>, std::greater<>> q;
    std::vector<bool> staged(n, false);
    std::size_t next_compute = 0;
    bool busy = false;
    double link_t = 0.0, end = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        link_t += transfer[i];
        q.push({link_t, transfer_done, i});
    }
    auto try_start = [&](double now) {
        if (!busy && next_compute < n && staged[next_compute]) {
            busy = true;
            q.push({now + compute[next_compute], compute_done, next_compute});
        }
    };
    while (!q.empty()) {
        const auto e = q.top();
        q.pop();
        if (e.kind == transfer_done) {
            staged[e.layer] = true;
        } else {
            busy = false;
            ++next_compute;
            end = e.t;
        }
        try_start(e.t);
    }
    return end;
}

}  // namespace

TEST(Pipeline, AsyncMatchesEventOracleAndClosedForm) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    for (int t = 0; t < 500; ++t) {
        const std::size_t n = 1 + rng() % 12;
        std::vector<double> c(n), x(n);
        for (std::size_t i = 0; i < n; ++i) {
            c[i] = u(rng);
            x[i] = (rng() % 3 == 0) ? 0.0 : u(rng);
        }
        const auto timing = simulate_pipeline(c, x, PipelineMode::async);
        ASSERT_NEAR(timing.async_s, event_oracle(c, x), 1e-12);
        ASSERT_NEAR(timing.async_s, async_closed_form(c, x), 1e-12);
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += c[i] + x[i];
        ASSERT_NEAR(timing.sync_s, sum, 1e-12);
        ASSERT_LE(timing.async_s, timing.sync_s + 1e-12);
        for (std::size_t i = 0; i < n; ++i) ASSERT_LE(timing.transfer_end_s[i], timing.compute_start_s[i]);
    }
}

TEST(Pipeline, AllFastLayersHaveNothingToHide) {
    const std::vector<double> c{1.0, 2.0, 3.0};
    const std::vector<double> bytes{0.0, 0.0, 0.0};
    const auto tr = trace_from_stages(c, bytes, LinkSpec{}, PipelineMode::async);
    EXPECT_EQ(tr.total_transfer_s(), 0.0);  // no latency charged when nothing moves
    EXPECT_DOUBLE_EQ(tr.async_s, tr.sync_s);
    EXPECT_DOUBLE_EQ(tr.sync_s, 6.0);
}

TEST(Pipeline, EqualStagesOverlapAlmostHalf) {
    const std::vector<double> c(8, 1.0), x(8, 1.0);
    const auto t = simulate_pipeline(c, x, PipelineMode::async);
    EXPECT_DOUBLE_EQ(t.sync_s, 16.0);
    EXPECT_DOUBLE_EQ(t.async_s, 9.0);  // (L + 1) stages
    EXPECT_LE(t.async_s / t.sync_s, 0.6);
}

TEST(Pipeline, TransferBoundIsWithinFivePercentOfLinkTime) {
    const std::vector<double> c(8, 1.0), x(8, 4.0);
    const auto t = simulate_pipeline(c, x, PipelineMode::async);
    EXPECT_DOUBLE_EQ(t.async_s, 33.0);
    EXPECT_LE(t.async_s, 32.0 * 1.05);
}

TEST(Pipeline, SyncSchedule) {
    const std::vector<double> c{1.0, 2.0}, x{0.5, 0.25};
    const auto t = simulate_pipeline(c, x, PipelineMode::sync);
    EXPECT_DOUBLE_EQ(t.transfer_start_s[1], 1.5);
    EXPECT_DOUBLE_EQ(t.compute_end_s[1], 3.75);
    EXPECT_DOUBLE_EQ(t.sync_s, 3.75);
}

TEST(Pipeline, Deterministic) {
    const std::vector<double> c{0.3, 0.1, 0.7, 0.2}, x{0.5, 0.0, 0.9, 0.05};
    const auto a = simulate_pipeline(c, x, PipelineMode::async);
    const auto b = simulate_pipeline(c, x, PipelineMode::async);
    EXPECT_EQ(a.compute_start_s, b.compute_start_s);
    EXPECT_EQ(a.async_s, b.async_s);
}

TEST(Pipeline, LateSelectionIsContractError) {
    auto cfg = variant_config(AttentionVariant::gqa, 2, 0);
    TieredKvCache cache(cfg, 4);
    const SelectionSet sel{Granularity::batch, 4, 1, {{0}}};
    const std::vector<double> c(2, 1.0);
    try {
        step_pipeline(cache, sel, PipelineMode::async, LinkSpec{}, c, true, StepClock{2.0, 1.0});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::contract);
    }
}

TEST(Pipeline, ThreadedStepMatchesSingleThreaded) {
    auto cfg = variant_config(AttentionVariant::gqa, 4, 3);
    ToyModel model(cfg);
    const std::size_t budget = 6;
    const auto tokens = random_tokens(40, cfg.vocab, 2);
    TieredKvCache a(cfg, budget), b(cfg, budget);
    DenseKvCache dense(cfg);
    for (std::size_t i = 0; i < 20; ++i) {
        const auto out = decode_step_dense(model, dense, tokens[i]);
        for (std::size_t l = 0; l < cfg.layers; ++l) {
            a.append(l, out.new_entries[l]);
            b.append(l, out.new_entries[l]);
        }
    }
    for (std::size_t l = cfg.layers; l-- > 1;) {
        a.offload_layer(l);
        b.offload_layer(l);
    }
    for (std::size_t i = 20; i < tokens.size(); ++i) {
        auto probe = dense;
        const auto w = decode_step_dense(model, probe, tokens[i]).last_layer_weights;
        const auto sel = retrieve_head_level(group_reduce_max(w, cfg.alpha), budget, Granularity::group);
        const std::vector<double> compute(cfg.layers, 1e-6);
        const auto tr = step_pipeline(a, sel, PipelineMode::async, LinkSpec{}, compute);
        const auto single = decode_step_sparse(model, a, sel, tokens[i]);
        const auto threaded = run_threaded_step(model, b, sel, tokens[i], true, LinkSpec{});
        ASSERT_EQ(single.logits, threaded.output.logits) << "step " << i;
        ASSERT_EQ(tr.transfer_bytes, threaded.transfer_bytes);
        decode_step_dense(model, dense, tokens[i]);
    }
}
