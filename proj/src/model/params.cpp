// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/model/params.hpp"

#include <stdexcept>

namespace taplab::model {

const ad::Tensor& ParamStore::get(const std::string& name) const {
    if (auto it = trainable.find(name); it != trainable.end()) return it->second;
    if (auto it = frozen.find(name); it != frozen.end()) return it->second;
    throw std::out_of_range("unknown parameter '" + name + "'");
}

std::size_t ParamStore::trainable_size() const {
    std::size_t n = 0;
    for (const auto& [_, t] : trainable) n += t.size();
    return n;
}

std::uint64_t hash_params(const ParamStore& store, const std::vector<std::string>& names) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& name : names) {
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ULL;
        }
        h = ad::hash_tensor(store.trainable.at(name), h);
    }
    return h;
}

void BlockPartition::add_block(BlockId id, std::vector<std::string> names) {
    if (blocks_.count(id)) throw std::invalid_argument("duplicate block '" + id.key + "'");
    for (const auto& n : names) {
        if (!owner_.emplace(n, id).second) {
            throw std::invalid_argument("parameter '" + n + "' already belongs to block '" + owner_.at(n).key + "'");
        }
    }
    blocks_.emplace(std::move(id), std::move(names));
}

const std::vector<std::string>& BlockPartition::names(const BlockId& id) const {
    auto it = blocks_.find(id);
    if (it == blocks_.end()) throw std::out_of_range("unknown block '" + id.key + "'");
    return it->second;
}

const BlockId& BlockPartition::block_of(const std::string& param) const {
    auto it = owner_.find(param);
    if (it == owner_.end()) throw std::out_of_range("parameter '" + param + "' is in no block");
    return it->second;
}

void BlockPartition::register_client(ClientId client, std::set<BlockId> owned,
                                     std::map<std::string, std::set<BlockId>> per_task) {
    for (const auto& b : owned) {
        if (!blocks_.count(b)) throw std::invalid_argument("client owns unknown block '" + b.key + "'");
    }
    for (auto& [task, bs] : per_task) {
        for (const auto& b : bs) {
            if (!owned.count(b)) throw std::invalid_argument("task block '" + b.key + "' not owned by client");
        }
        task_blocks_[{client, task}] = std::move(bs);
    }
    client_blocks_[client] = std::move(owned);
}

const std::set<BlockId>& BlockPartition::client_blocks(ClientId client) const {
    auto it = client_blocks_.find(client);
    if (it == client_blocks_.end()) throw std::out_of_range("unregistered client " + std::to_string(client));
    return it->second;
}

const std::set<BlockId>& BlockPartition::task_blocks(ClientId client, const std::string& task) const {
    auto it = task_blocks_.find({client, task});
    if (it == task_blocks_.end()) {
        throw std::out_of_range("client " + std::to_string(client) + " has no task '" + task + "'");
    }
    return it->second;
}

std::vector<ClientId> BlockPartition::clients() const {
    std::vector<ClientId> out;
    for (const auto& [c, _] : client_blocks_) out.push_back(c);
    return out;
}

std::vector<std::string> BlockPartition::names_of(const std::set<BlockId>& ids) const {
    std::vector<std::string> out;
    for (const auto& id : ids) {
        const auto& ns = names(id);
        out.insert(out.end(), ns.begin(), ns.end());
    }
    return out;
}

void BlockPartition::validate(const ParamStore& store) const {
    std::size_t covered = 0;
    for (const auto& [id, ns] : blocks_) {
        for (const auto& n : ns) {
            if (!store.trainable.count(n)) {
                throw std::logic_error("block '" + id.key + "' lists '" + n + "' which is not trainable");
            }
        }
        covered += ns.size();
    }
    if (covered != store.trainable.size() || owner_.size() != covered) {
        throw std::logic_error("blocks do not partition the trainable parameters");
    }
    for (const auto& [key, bs] : task_blocks_) {
        const auto& owned = client_blocks(key.first);
        for (const auto& b : bs) {
            if (!owned.count(b)) throw std::logic_error("task block outside its client's blocks");
        }
    }
}

}  // namespace taplab::model
