// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <iterator>
#include <numeric>
#include <vector>

#include "sparsekv/attention.hpp"
#include "sparsekv/error.hpp"
#include "sparsekv/retrieval_head.hpp"

namespace sparsekv {

inline std::size_t intersection_size(const IndexSet& a, const IndexSet& b) {
    std::size_t n = 0;
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() && j != b.end()) {
        if (*i < *j) {
            ++i;
        } else if (*j < *i) {
            ++j;
        } else {
            ++n;
            ++i;
            ++j;
        }
    }
    return n;
}

struct Recall {
    std::vector<double> per_head;
    double mean = 0.0;
};

/// |selected ∩ oracle| / |oracle| for each kv head. A batch-level selection
/// is compared against every head of the oracle.
inline Recall compute_recall(const SelectionSet& selected, const SelectionSet& oracle) {
    SPARSEKV_CHECK(selected.budget == oracle.budget, input, "recall requires equal budgets");
    Recall r;
    const std::size_t heads = std::max(selected.sets.size(), oracle.sets.size());
    r.per_head.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const auto& ref = oracle.for_head(h);
        const double denom = static_cast<double>(ref.size());
        r.per_head.push_back(denom == 0.0 ? 1.0 : static_cast<double>(intersection_size(selected.for_head(h), ref)) / denom);
    }
    r.mean = heads == 0 ? 0.0 : std::accumulate(r.per_head.begin(), r.per_head.end(), 0.0) / static_cast<double>(heads);
    return r;
}

/// Mean over heads of |s_prev ∩ s_now| / |s_now|; with a saturated budget
/// the denominator is B.
inline double compute_overlap(const SelectionSet& s_prev, const SelectionSet& s_now) {
    SPARSEKV_CHECK(s_prev.budget == s_now.budget, input, "overlap requires equal budgets");
    const std::size_t heads = std::max(s_prev.sets.size(), s_now.sets.size());
    double acc = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
        const auto& now = s_now.for_head(h);
        acc += now.empty() ? 1.0 : static_cast<double>(intersection_size(s_prev.for_head(h), now)) / static_cast<double>(now.size());
    }
    return heads == 0 ? 0.0 : acc / static_cast<double>(heads);
}

/// Fraction of each dense head's top-k positions contained in the selection,
/// averaged over dense heads. Query head h maps to selection set h / (heads / sets).
inline double hit_rate(const SelectionSet& selected, const AttnWeights& dense, std::size_t k) {
    SPARSEKV_CHECK(k >= 1 && k <= selected.budget, input, "hit-rate k must be within [1, B]");
    SPARSEKV_CHECK(!selected.sets.empty() && dense.heads % selected.sets.size() == 0, shape,
                   "dense head count must be a multiple of the selection set count");
    const std::size_t per_set = dense.heads / selected.sets.size();
    double acc = 0.0;
    for (std::size_t h = 0; h < dense.heads; ++h) {
        const auto row = dense.row(h);
        std::vector<std::uint32_t> order(row.size());
        std::iota(order.begin(), order.end(), 0u);
        const std::size_t kk = std::min(k, row.size());
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kk), order.end(),
                          [&](std::uint32_t a, std::uint32_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
        const auto& sel = selected.sets[h / per_set];
        std::size_t hits = 0;
        for (std::size_t i = 0; i < kk; ++i) hits += std::binary_search(sel.begin(), sel.end(), order[i]) ? 1 : 0;
        acc += static_cast<double>(hits) / static_cast<double>(kk);
    }
    return acc / static_cast<double>(dense.heads);
}

}  // namespace sparsekv
