// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameter storage and the disjoint block partition of the trainable set.

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "taplab/ad/tensor.hpp"

namespace taplab::model {

using ClientId = std::size_t;

struct BlockId {
    std::string key;
    auto operator<=>(const BlockId&) const = default;
};

// Frozen bases and trainable tensors, keyed by parameter name. The two name
// sets are disjoint.
struct ParamStore {
    std::map<std::string, ad::Tensor> frozen;
    std::map<std::string, ad::Tensor> trainable;

    bool contains(const std::string& name) const { return frozen.count(name) || trainable.count(name); }
    bool is_trainable(const std::string& name) const { return trainable.count(name) > 0; }
    const ad::Tensor& get(const std::string& name) const;
    std::size_t trainable_size() const;
};

// Hash of the named subset of `store.trainable`, in name order.
std::uint64_t hash_params(const ParamStore& store, const std::vector<std::string>& names);

class BlockPartition {
public:
    void add_block(BlockId id, std::vector<std::string> names);

    const std::map<BlockId, std::vector<std::string>>& blocks() const { return blocks_; }
    const std::vector<std::string>& names(const BlockId& id) const;
    const BlockId& block_of(const std::string& param) const;
    bool has_block(const BlockId& id) const { return blocks_.count(id) > 0; }

    void register_client(ClientId client, std::set<BlockId> owned,
                         std::map<std::string, std::set<BlockId>> per_task);
    bool has_client(ClientId client) const { return client_blocks_.count(client) > 0; }
    const std::set<BlockId>& client_blocks(ClientId client) const;
    const std::set<BlockId>& task_blocks(ClientId client, const std::string& task) const;
    std::vector<ClientId> clients() const;

    // Parameter names covered by `ids`, in block order.
    std::vector<std::string> names_of(const std::set<BlockId>& ids) const;

    // Throws unless blocks are pairwise disjoint, cover exactly the trainable
    // names of `store`, and every registered B_{i,o} ⊆ B_i ⊆ B.
    void validate(const ParamStore& store) const;

private:
    std::map<BlockId, std::vector<std::string>> blocks_;
    std::unordered_map<std::string, BlockId> owner_;
    std::map<ClientId, std::set<BlockId>> client_blocks_;
    std::map<std::pair<ClientId, std::string>, std::set<BlockId>> task_blocks_;
};

}  // namespace taplab::model
