// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sparsekv {

enum class ErrorCode {
    shape,        // tensor/head dimension mismatch
    input,        // invalid argument value (token id, budget mismatch)
    state,        // operation illegal in the current object state
    selection,    // index outside the cached range
    budget,       // fixed-budget invariant violated
    contract,     // pipeline contract violated (non-resident read, late selection)
    capacity,     // fast-tier memory cannot hold the request
    unsupported,  // variant does not support the operation
    config,       // benchmark configuration failed validation
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::shape: return "shape";
    case ErrorCode::input: return "input";
    case ErrorCode::state: return "state";
    case ErrorCode::selection: return "selection";
    case ErrorCode::budget: return "budget";
    case ErrorCode::contract: return "contract";
    case ErrorCode::capacity: return "capacity";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + " error: " + what), m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

#define SPARSEKV_CHECK(cond, code, msg)                         \
    do {                                                        \
        if (!(cond)) {                                          \
            throw ::sparsekv::Error(::sparsekv::ErrorCode::code, (msg)); \
        }                                                       \
    } while (false)

}  // namespace sparsekv
