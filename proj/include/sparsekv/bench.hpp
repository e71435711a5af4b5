// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sparsekv/error.hpp"
#include "sparsekv/kv_store.hpp"
#include "sparsekv/memory_planner.hpp"
#include "sparsekv/metrics.hpp"
#include "sparsekv/pipeline.hpp"
#include "sparsekv/retrieval_head.hpp"
#include "sparsekv/sparse_attention.hpp"
#include "sparsekv/toy_model.hpp"

namespace sparsekv {

/// Raised when a benchmark configuration fails validation; carries one
/// "field.path: reason" entry per problem.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : Error(ErrorCode::config, join(problems)), m_problems(std::move(problems)) {}

    const std::vector<std::string>& problems() const { return m_problems; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s;
        for (const auto& e : p) s += (s.empty() ? "" : "; ") + e;
        return s;
    }
    std::vector<std::string> m_problems;
};

struct ComputeModel {
    double layer_us = 50.0;  // fixed cost of one layer for one request
    double entry_ns = 0.0;   // per attended head entry
};

struct ModeFlags {
    PipelineMode pipeline = PipelineMode::async;
    bool elastic = true;
    bool adaptive_planner = true;
    bool threaded = false;
    bool emulate_link = false;  // threaded only: sleep for simulated transfer time
};

struct BenchConfig {
    ModelConfig model;
    Workload workload;  // prompt_len = In, max_output = Out, budget mirrors `budget`
    std::size_t budget = 32;
    RetrievalBackend backend = RetrievalBackend::noisy_oracle;
    double sigma = 0.0;
    Granularity granularity = Granularity::head;
    HardwareSpec hardware;
    ComputeModel compute;
    ModeFlags mode;
    std::size_t hit_k = 4;
    std::uint64_t seed = 0;
    std::string output;

    std::vector<std::string> problems() const {
        std::vector<std::string> p;
        auto need = [&](bool ok, const std::string& msg) {
            if (!ok) p.push_back(msg);
        };
        need(model.layers >= 1, "model.layers: must be >= 1");
        need(model.kv_heads >= 1, "model.kv_heads: must be >= 1");
        need(model.head_dim >= 1, "model.head_dim: must be >= 1");
        need(model.alpha >= 1, "model.alpha: must be >= 1");
        need(model.vocab >= 1, "model.vocab: must be >= 1");
        need(model.ffn_mult >= 1, "model.ffn_mult: must be >= 1");
        need(model.bytes_per_elem == 1 || model.bytes_per_elem == 2 || model.bytes_per_elem == 4,
             "model.bytes_per_elem: must be 1, 2 or 4");
        need(model.weights_bytes_llm >= 0.0, "model.weights_bytes_llm: must be >= 0");
        need(model.weights_bytes_draft >= 0.0, "model.weights_bytes_draft: must be >= 0");
        need(!model.is_latent() || model.alpha == 1, "model.alpha: latent attention requires alpha == 1");
        need(workload.requests >= 1, "workload.requests: must be >= 1");
        need(workload.prompt_len >= 1, "workload.in: must be >= 1");
        need(workload.max_output >= 1, "workload.out: must be >= 1");
        need(budget >= 1, "budget: must be >= 1");
        need(sigma >= 0.0, "sigma: must be >= 0");
        need(hit_k >= 1 && hit_k <= budget, "hit_k: must be within [1, budget]");
        need(hardware.mem_gpu_bytes > 0.0, "hardware.mem_gpu_bytes: must be > 0");
        need(hardware.runtime_factor >= 1.0, "hardware.runtime_factor: must be >= 1");
        need(hardware.link.bandwidth_bytes_per_s > 0.0, "link.bandwidth_bytes_per_s: must be > 0");
        need(hardware.link.latency_s >= 0.0, "link.latency_s: must be >= 0");
        need(compute.layer_us >= 0.0, "compute.layer_us: must be >= 0");
        need(compute.entry_ns >= 0.0, "compute.entry_ns: must be >= 0");
        return p;
    }

    void validate() const {
        auto p = problems();
        if (!p.empty()) throw ConfigError(std::move(p));
    }
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, const std::string& path, T& dst,
                std::vector<std::string>& problems) {
    if (!obj.contains(key)) return;
    try {
        dst = obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        problems.push_back(path + key + ": wrong type");
    }
}

inline void read_unsigned(const nlohmann::json& obj, const char* key, const std::string& path, std::size_t& dst,
                          std::vector<std::string>& problems) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
        problems.push_back(path + key + ": must be a non-negative integer");
        return;
    }
    dst = v.get<std::size_t>();
}

}  // namespace detail

/// Parses the JSON configuration document. Missing fields keep defaults.
inline BenchConfig parse_config(const nlohmann::json& j) {
    using detail::read_field;
    using detail::read_unsigned;
    BenchConfig c;
    std::vector<std::string> p;
    if (!j.is_object()) throw ConfigError({"<root>: must be an object"});
    auto section = [&](const char* name) -> const nlohmann::json* {
        if (!j.contains(name)) return nullptr;
        if (!j.at(name).is_object()) {
            p.push_back(std::string(name) + ": must be an object");
            return nullptr;
        }
        return &j.at(name);
    };
    if (const auto* m = section("model")) {
        const std::string mp = "model.";
        read_unsigned(*m, "layers", mp, c.model.layers, p);
        read_unsigned(*m, "kv_heads", mp, c.model.kv_heads, p);
        read_unsigned(*m, "head_dim", mp, c.model.head_dim, p);
        read_unsigned(*m, "alpha", mp, c.model.alpha, p);
        read_unsigned(*m, "latent_dim", mp, c.model.latent_dim, p);
        read_unsigned(*m, "vocab", mp, c.model.vocab, p);
        read_unsigned(*m, "bytes_per_elem", mp, c.model.bytes_per_elem, p);
        read_unsigned(*m, "ffn_mult", mp, c.model.ffn_mult, p);
        read_field(*m, "weights_bytes_llm", mp, c.model.weights_bytes_llm, p);
        read_field(*m, "weights_bytes_draft", mp, c.model.weights_bytes_draft, p);
        read_field(*m, "rope_base", mp, c.model.rope_base, p);
        read_field(*m, "seed", mp, c.model.seed, p);
    }
    if (const auto* w = section("workload")) {
        read_unsigned(*w, "in", "workload.", c.workload.prompt_len, p);
        read_unsigned(*w, "out", "workload.", c.workload.max_output, p);
        read_unsigned(*w, "requests", "workload.", c.workload.requests, p);
    }
    read_unsigned(j, "budget", "", c.budget, p);
    if (j.contains("backend")) {
        const auto b = j.at("backend").is_string() ? j.at("backend").get<std::string>() : std::string();
        if (b == "proxy") {
            c.backend = RetrievalBackend::proxy;
        } else if (b == "noisy-oracle") {
            c.backend = RetrievalBackend::noisy_oracle;
        } else {
            p.push_back("backend: must be \"proxy\" or \"noisy-oracle\"");
        }
    }
    read_field(j, "sigma", "", c.sigma, p);
    if (j.contains("granularity")) {
        const auto g = j.at("granularity").is_string() ? j.at("granularity").get<std::string>() : std::string();
        if (g == "head") {
            c.granularity = Granularity::head;
        } else if (g == "batch") {
            c.granularity = Granularity::batch;
        } else {
            p.push_back("granularity: must be \"head\" or \"batch\"");
        }
    }
    if (const auto* h = section("hardware")) {
        read_field(*h, "mem_gpu_bytes", "hardware.", c.hardware.mem_gpu_bytes, p);
        read_field(*h, "runtime_factor", "hardware.", c.hardware.runtime_factor, p);
    }
    if (const auto* l = section("link")) {
        read_field(*l, "bandwidth_bytes_per_s", "link.", c.hardware.link.bandwidth_bytes_per_s, p);
        read_field(*l, "latency_s", "link.", c.hardware.link.latency_s, p);
    }
    if (const auto* k = section("compute")) {
        read_field(*k, "layer_us", "compute.", c.compute.layer_us, p);
        read_field(*k, "entry_ns", "compute.", c.compute.entry_ns, p);
    }
    if (const auto* m = section("mode")) {
        if (m->contains("pipeline")) {
            const auto v = m->at("pipeline").is_string() ? m->at("pipeline").get<std::string>() : std::string();
            if (v == "sync") {
                c.mode.pipeline = PipelineMode::sync;
            } else if (v == "async") {
                c.mode.pipeline = PipelineMode::async;
            } else {
                p.push_back("mode.pipeline: must be \"sync\" or \"async\"");
            }
        }
        read_field(*m, "elastic", "mode.", c.mode.elastic, p);
        read_field(*m, "adaptive_planner", "mode.", c.mode.adaptive_planner, p);
        read_field(*m, "threaded", "mode.", c.mode.threaded, p);
        read_field(*m, "emulate_link", "mode.", c.mode.emulate_link, p);
    }
    read_unsigned(j, "hit_k", "", c.hit_k, p);
    read_field(j, "seed", "", c.seed, p);
    read_field(j, "output", "", c.output, p);
    c.workload.budget = c.budget;
    auto more = c.problems();
    p.insert(p.end(), more.begin(), more.end());
    if (!p.empty()) throw ConfigError(std::move(p));
    return c;
}

inline BenchConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"<file>: cannot open " + path});
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError({std::string("<file>: ") + e.what()});
    }
    return parse_config(j);
}

struct ReportRow {
    StepTrace trace;
    double recall = 0.0;
    double overlap = 0.0;
    double hit_rate = 0.0;
    double fast_tier_bytes = 0.0;
    double max_logit_diff = 0.0;  // vs the dense reference on the same tokens
};

struct Report {
    std::vector<ReportRow> rows;
    std::vector<std::vector<std::int64_t>> tokens;  // generated tokens per request
    std::vector<std::vector<float>> logits;         // request 0, per step
    double sim_tokens_per_s = 0.0;
    double wall_tokens_per_s = 0.0;
    double mean_recall = 0.0;
    double mean_overlap = 0.0;
    double mean_hit_rate = 0.0;
    double total_bytes = 0.0;
    double max_logit_diff = 0.0;
    std::size_t final_l_gpu = 0;
    std::size_t final_l_cpu = 0;
    std::vector<std::size_t> thresholds;
};

/// Recomputes every aggregate of `r` from its rows.
inline void summarize(Report& r, std::size_t layers) {
    double step_s = 0.0;
    r.mean_recall = r.mean_overlap = r.mean_hit_rate = r.total_bytes = r.max_logit_diff = 0.0;
    for (const auto& row : r.rows) {
        step_s += row.trace.step_s;
        r.mean_recall += row.recall;
        r.mean_overlap += row.overlap;
        r.mean_hit_rate += row.hit_rate;
        r.total_bytes += row.trace.total_bytes();
        r.max_logit_diff = std::max(r.max_logit_diff, row.max_logit_diff);
    }
    const auto n = static_cast<double>(r.rows.size());
    if (!r.rows.empty()) {
        r.mean_recall /= n;
        r.mean_overlap /= n;
        r.mean_hit_rate /= n;
        r.final_l_cpu = r.rows.back().trace.l_cpu;
    }
    r.final_l_gpu = layers - r.final_l_cpu;
    r.sim_tokens_per_s = step_s > 0.0 ? n / step_s : 0.0;
}

namespace detail {

inline std::int64_t argmax(const std::vector<float>& v) {
    return static_cast<std::int64_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline SelectionSet select(const AttnWeights& w, std::size_t alpha, std::size_t budget, Granularity granularity) {
    if (granularity == Granularity::batch) return retrieve_batch_level(w, budget);
    if (alpha == 1) return retrieve_head_level(w, budget, Granularity::head);
    return retrieve_head_level(group_reduce_max(w, alpha), budget, Granularity::group);
}

struct Stream {
    DenseKvCache reference;
    TieredKvCache cache;
    RetrievalHead head;
    SelectionSet last_selection;
    std::int64_t next_token = 0;
    std::vector<std::int64_t> generated;
};

}  // namespace detail

/// Runs retrieval head -> planner -> prefetch -> sparse decode for `out`
/// steps after an `in`-token seeded random prompt. Each request stream has
/// its own caches; the planner's split is shared. A dense reference decoder
/// consumes the same tokens and provides the recall oracle.
inline Report run_benchmark(const BenchConfig& cfg) {
    cfg.validate();
    auto model = std::make_shared<const ToyModel>(cfg.model);
    const auto& mc = model->config();
    const std::size_t in_len = cfg.workload.prompt_len;
    const std::size_t out_len = cfg.workload.max_output;
    Workload wl = cfg.workload;
    wl.budget = cfg.budget;

    MemoryPlan plan = make_plan(mc, wl, cfg.hardware);

    std::vector<detail::Stream> streams;
    streams.reserve(wl.requests);
    for (std::size_t r = 0; r < wl.requests; ++r) {
        RetrievalOptions opts{cfg.backend, cfg.sigma, cfg.seed * 7919 + r, 0};
        streams.push_back(detail::Stream{DenseKvCache(mc), TieredKvCache(mc, cfg.budget), RetrievalHead(model, opts),
                                         {}, 0, {}});
        auto& s = streams.back();
        s.cache.reserve(in_len + out_len + 1);
        std::mt19937_64 rng(cfg.seed + 104729 * (r + 1));
        std::uniform_int_distribution<std::int64_t> tok(0, static_cast<std::int64_t>(mc.vocab) - 1);
        std::vector<float> logits;
        for (std::size_t p = 0; p < in_len; ++p) {
            const auto t = tok(rng);
            auto w = s.head.run(t, p);
            if (p + 1 == in_len) s.last_selection = detail::select(w, mc.alpha, cfg.budget, cfg.granularity);
            auto d = decode_step_dense(*model, s.reference, t);
            for (std::size_t l = 0; l < mc.layers; ++l) s.cache.append(l, d.new_entries[l]);
            logits = std::move(d.logits);
        }
        s.cache.record_selection(s.last_selection);
        s.next_token = detail::argmax(logits);
    }

    auto offload_all = [&](std::size_t layer) {
        for (auto& s : streams) s.cache.offload_layer(layer);
    };
    if (cfg.mode.adaptive_planner) {
        manage_step(plan, in_len, offload_all);
    } else {
        for (std::size_t i = 0; i < mc.layers; ++i) offload_all(mc.layers - 1 - i);
        plan.l_cpu = mc.layers;
    }

    Report report;
    report.thresholds = plan.thresholds;
    report.tokens.resize(wl.requests);
    const auto wall0 = std::chrono::steady_clock::now();
    for (std::size_t t = 0; t < out_len; ++t) {
        const std::size_t pos = in_len + t;
        if (cfg.mode.adaptive_planner) manage_step(plan, pos + 1, offload_all);

        std::vector<double> compute_s(mc.layers, 0.0);
        std::vector<double> bytes(mc.layers, 0.0);
        ReportRow row;
        std::size_t loaded = 0;
        for (std::size_t r = 0; r < streams.size(); ++r) {
            auto& s = streams[r];
            const auto token = s.next_token;
            const auto w = s.head.run(token, pos);
            const auto sel = detail::select(w, mc.alpha, cfg.budget, cfg.granularity);

            const auto dense = decode_step_dense(*model, s.reference, token);
            const auto oracle = detail::select(dense.last_layer_weights, mc.alpha, cfg.budget, Granularity::head);

            std::size_t entries = 0;
            for (std::size_t g = 0; g < mc.kv_heads; ++g) entries += sel.for_head(g).size();
            std::vector<double> stream_compute(mc.layers,
                                               cfg.compute.layer_us * 1e-6 + cfg.compute.entry_ns * 1e-9 * static_cast<double>(entries));

            StepOutput out;
            std::vector<double> stream_bytes;
            if (cfg.mode.threaded) {
                auto res = run_threaded_step(*model, s.cache, sel, token, cfg.mode.elastic, cfg.hardware.link,
                                             cfg.mode.emulate_link);
                out = std::move(res.output);
                stream_bytes = std::move(res.transfer_bytes);
                for (double b : stream_bytes) loaded += static_cast<std::size_t>(b) / mc.head_entry_bytes();
            } else {
                const auto tr = step_pipeline(s.cache, sel, cfg.mode.pipeline, cfg.hardware.link, stream_compute,
                                              cfg.mode.elastic);
                stream_bytes = tr.transfer_bytes;
                loaded += tr.loaded_rows;
                out = decode_step_sparse(*model, s.cache, sel, token);
            }
            s.cache.record_selection(sel);

            for (std::size_t l = 0; l < mc.layers; ++l) {
                compute_s[l] += stream_compute[l];
                bytes[l] += stream_bytes[l];
            }
            row.recall += compute_recall(sel, oracle).mean;
            row.overlap += compute_overlap(s.last_selection, sel);
            row.hit_rate += hit_rate(sel, dense.last_layer_weights, std::min(cfg.hit_k, cfg.budget));
            row.fast_tier_bytes += s.cache.fast_tier_bytes();
            for (std::size_t i = 0; i < out.logits.size(); ++i) {
                row.max_logit_diff =
                    std::max(row.max_logit_diff, static_cast<double>(std::fabs(out.logits[i] - dense.logits[i])));
            }
            s.last_selection = sel;
            s.next_token = detail::argmax(out.logits);
            report.tokens[r].push_back(s.next_token);
            if (r == 0) report.logits.push_back(std::move(out.logits));
        }
        const auto nr = static_cast<double>(streams.size());
        row.recall /= nr;
        row.overlap /= nr;
        row.hit_rate /= nr;
        row.trace = trace_from_stages(std::move(compute_s), std::move(bytes), cfg.hardware.link, cfg.mode.pipeline);
        row.trace.step = t;
        row.trace.seq_len = pos + 1;
        row.trace.l_cpu = plan.l_cpu;
        row.trace.loaded_rows = loaded;
        row.trace.overlap = row.overlap;
        report.rows.push_back(std::move(row));
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    summarize(report, mc.layers);
    report.wall_tokens_per_s = wall > 0.0 ? static_cast<double>(out_len) / wall : 0.0;
    return report;
}

inline void write_csv(const Report& r, std::ostream& os) {
    os << "step,seq_len,l_cpu,bytes_xfer,t_compute_us,t_transfer_us,t_step_us,recall,overlap,hit_rate\n";
    os << std::setprecision(10);
    for (const auto& row : r.rows) {
        const auto& t = row.trace;
        os << t.step << ',' << t.seq_len << ',' << t.l_cpu << ',' << static_cast<std::uint64_t>(t.total_bytes()) << ','
           << t.total_compute_s() * 1e6 << ',' << t.total_transfer_s() * 1e6 << ',' << t.step_s * 1e6 << ','
           << row.recall << ',' << row.overlap << ',' << row.hit_rate << '\n';
    }
}

inline nlohmann::json summary_json(const Report& r) {
    return nlohmann::json{{"steps", r.rows.size()},
                          {"sim_tokens_per_s", r.sim_tokens_per_s},
                          {"wall_tokens_per_s", r.wall_tokens_per_s},
                          {"mean_recall", r.mean_recall},
                          {"mean_overlap", r.mean_overlap},
                          {"mean_hit_rate", r.mean_hit_rate},
                          {"total_bytes", r.total_bytes},
                          {"max_logit_diff_vs_dense", r.max_logit_diff},
                          {"final_l_gpu", r.final_l_gpu},
                          {"final_l_cpu", r.final_l_cpu},
                          {"thresholds", r.thresholds}};
}

/// Writes `<path>` (CSV rows) and `<path>.json` (summary block).
inline void write_report(const Report& r, const std::string& path) {
    std::ofstream csv(path);
    SPARSEKV_CHECK(csv.good(), input, "cannot write report to " + path);
    write_csv(r, csv);
    std::ofstream js(path + ".json");
    SPARSEKV_CHECK(js.good(), input, "cannot write report summary to " + path + ".json");
    js << summary_json(r).dump(2) << '\n';
}

/// Human-readable threshold table and the (L_GPU, L_CPU) schedule.
inline void write_plan(const MemoryPlan& plan, std::ostream& os) {
    os << "fast-tier capacity for KV: " << kv_capacity_bytes(plan.cfg, plan.hardware) << " bytes\n";
    os << std::left << std::setw(6) << "i" << std::setw(8) << "L_GPU" << std::setw(8) << "L_CPU"
       << "S^T_i (longest sequence held)\n";
    for (std::size_t i = 0; i < plan.thresholds.size(); ++i) {
        os << std::left << std::setw(6) << i << std::setw(8) << plan.layers - i << std::setw(8) << i
           << plan.thresholds[i] << '\n';
    }
    os << "schedule: offload layer L-1-i once S >= S^T_i\n";
}

struct SweepPoint {
    std::size_t budget = 0;
    double mean_recall = 0.0;
    double mean_step_us = 0.0;
    double sim_tokens_per_s = 0.0;
    double total_bytes = 0.0;
};

inline std::vector<SweepPoint> run_sweep(BenchConfig cfg, const std::vector<std::size_t>& budgets) {
    std::vector<SweepPoint> pts;
    for (auto b : budgets) {
        cfg.budget = b;
        cfg.workload.budget = b;
        cfg.hit_k = std::min(cfg.hit_k, b);
        const auto r = run_benchmark(cfg);
        double step = 0.0;
        for (const auto& row : r.rows) step += row.trace.step_s;
        pts.push_back({b, r.mean_recall, r.rows.empty() ? 0.0 : step * 1e6 / static_cast<double>(r.rows.size()),
                       r.sim_tokens_per_s, r.total_bytes});
    }
    return pts;
}

}  // namespace sparsekv
