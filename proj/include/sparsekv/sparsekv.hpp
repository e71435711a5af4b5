// Copyright (C) 2026 The sparsekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sparsekv/attention.hpp"
#include "sparsekv/bench.hpp"
#include "sparsekv/error.hpp"
#include "sparsekv/kv_store.hpp"
#include "sparsekv/memory_planner.hpp"
#include "sparsekv/metrics.hpp"
#include "sparsekv/model_config.hpp"
#include "sparsekv/pipeline.hpp"
#include "sparsekv/retrieval_head.hpp"
#include "sparsekv/sparse_attention.hpp"
#include "sparsekv/tensor.hpp"
#include "sparsekv/toy_model.hpp"
