// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "sparsekv/error.hpp"

namespace sparsekv {

enum class AttentionVariant { mha, gqa, mqa, mla };

inline std::string_view to_string(AttentionVariant v) {
    switch (v) {
    case AttentionVariant::mha: return "mha";
    case AttentionVariant::gqa: return "gqa";
    case AttentionVariant::mqa: return "mqa";
    case AttentionVariant::mla: return "mla";
    }
    return "unknown";
}

/// Architecture and storage parameters shared by the toy decoder, the
/// retrieval head, the tiered store and the memory planner.
///
/// `alpha` is the number of query heads served by one KV head, so the model
/// has `alpha * kv_heads` query heads. A non-zero `latent_dim` selects the
/// latent-cache (MLA) form, which caches one `latent_dim` row per position.
struct ModelConfig {
    std::size_t layers = 2;
    std::size_t kv_heads = 2;
    std::size_t head_dim = 8;
    std::size_t alpha = 1;
    std::size_t latent_dim = 0;
    std::size_t vocab = 64;
    std::size_t bytes_per_elem = 2;
    double weights_bytes_llm = 0.0;    // resident weight footprint of the decoder
    double weights_bytes_draft = 0.0;  // resident weight footprint of the retrieval head
    std::size_t ffn_mult = 2;
    double rope_base = 10000.0;
    std::uint64_t seed = 0;

    std::size_t query_heads() const { return alpha * kv_heads; }
    std::size_t hidden() const { return query_heads() * head_dim; }
    std::size_t ffn_dim() const { return ffn_mult * hidden(); }
    bool is_latent() const { return latent_dim > 0; }

    AttentionVariant variant() const {
        if (is_latent()) return AttentionVariant::mla;
        if (alpha == 1) return AttentionVariant::mha;
        if (kv_heads == 1) return AttentionVariant::mqa;
        return AttentionVariant::gqa;
    }

    /// Floats held per (position, kv-head) in a cache entry: K and V for the
    /// standard variants, the shared latent for MLA.
    std::size_t head_entry_width() const { return is_latent() ? latent_dim : 2 * head_dim; }

    /// Floats held per position across all kv heads in the backing store.
    std::size_t row_width() const { return is_latent() ? latent_dim : kv_heads * head_entry_width(); }

    std::size_t row_bytes() const { return row_width() * bytes_per_elem; }
    std::size_t head_entry_bytes() const { return head_entry_width() * bytes_per_elem; }

    void validate() const {
        SPARSEKV_CHECK(layers >= 1, input, "layers must be >= 1");
        SPARSEKV_CHECK(kv_heads >= 1, input, "kv_heads must be >= 1");
        SPARSEKV_CHECK(head_dim >= 1, input, "head_dim must be >= 1");
        SPARSEKV_CHECK(alpha >= 1, input, "alpha must be >= 1");
        SPARSEKV_CHECK(vocab >= 1, input, "vocab must be >= 1");
        SPARSEKV_CHECK(ffn_mult >= 1, input, "ffn_mult must be >= 1");
        SPARSEKV_CHECK(bytes_per_elem == 1 || bytes_per_elem == 2 || bytes_per_elem == 4, input,
                       "bytes_per_elem must be 1, 2 or 4");
        SPARSEKV_CHECK(weights_bytes_llm >= 0.0 && weights_bytes_draft >= 0.0, input,
                       "weight footprints must be non-negative");
        SPARSEKV_CHECK(!is_latent() || alpha == 1, unsupported,
                       "latent attention keeps one KV head per query head (alpha must be 1)");
    }
};

}  // namespace sparsekv
