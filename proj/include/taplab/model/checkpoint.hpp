// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Block-keyed binary container for trainable tensors.
//
//   "TAPCKPT1" | u32 count | count x entry
//   entry: u32 len, block id | u32 len, name | u32 rank | rank x u64 dim | f64 payload
//
// All integers and floats little-endian.

#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "taplab/model/params.hpp"

namespace taplab::model {

struct CheckpointEntry {
    BlockId block;
    std::string name;
    ad::Tensor value;
};

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Entries for every trainable tensor of `blocks`, in block then name order.
std::vector<CheckpointEntry> collect_blocks(const ParamStore& store, const BlockPartition& partition,
                                            const std::set<BlockId>& blocks);

void save_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> load_checkpoint(const std::string& path);

}  // namespace taplab::model
