// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// The server model: modality encoders, a routed two-sided backbone and
// per-task decoders. Encoders and backbone are frozen bases fine-tuned through
// LoRA pairs; decoders are trained in full.
//
// Backbone layout. The modality side (MoTE) has one stack per modality plus a
// shared stack; experts inside those stacks are keyed by task. The task side
// (MoME) has one stack per task plus a shared stack; experts there are keyed
// by modality. Every stack also carries a shared expert. Only experts that a
// (modality, task) route can reach are materialised.
//
// Block keys:
//   enc/<m>                 encoder LoRA of modality m
//   mote/<s>/mix            mixing LoRA of every layer in MoTE stack s
//   mote/<s>/expert/<k>     expert k LoRA of every layer in MoTE stack s
//   mome/<s>/mix, mome/<s>/expert/<k>   same on the task side
//   dec/<o>                 decoder of task o

#pragma once

#include <memory>
#include <set>
#include <string>
#include <vector>

#include "taplab/ad/tensor.hpp"
#include "taplab/model/params.hpp"
#include "taplab/model/spec.hpp"

namespace taplab::model {

enum class Side { mote, mome };

namespace layout {
std::string side_name(Side side);
std::string encoder_base(const std::string& modality);
std::string lora_a(const std::string& prefix);
std::string lora_b(const std::string& prefix);
std::string layer_prefix(Side side, const std::string& stack, std::size_t layer);
std::string mix_prefix(Side side, const std::string& stack, std::size_t layer);
std::string expert_prefix(Side side, const std::string& stack, std::size_t layer, const std::string& key,
                          const char* proj);
std::string decoder_prefix(const std::string& task);

BlockId encoder_block(const std::string& modality);
BlockId mix_block(Side side, const std::string& stack);
BlockId expert_block(Side side, const std::string& stack, const std::string& key);
BlockId decoder_block(const std::string& task);

// Routing keys that get an expert in the given stack (always ends with "shared").
std::vector<std::string> expert_keys(const ModelSpec& spec, Side side, const std::string& stack);
}  // namespace layout

struct ServerModel {
    std::shared_ptr<const ModelSpec> spec;
    ParamStore store;
    BlockPartition partition;
    // Frozen tensor -> block whose computation reads it. Frozen tensors absent
    // here (the head layer norm) are needed by every client.
    std::map<std::string, BlockId> frozen_companion;
};

// Validates `spec`, draws the seeded frozen bases (Gaussian, frozen_init_std),
// LoRA A (Gaussian, 1/sqrt(fan_in)), LoRA B = 0 and decoder weights, and builds
// the block partition (checked for disjointness and coverage before return).
ServerModel build_server_model(const ModelSpec& spec);

// base + (alpha / rank) * B * A.
ad::Tensor effective_weight(const ad::Tensor& base, const ad::Tensor& a, const ad::Tensor& b, double alpha,
                            std::size_t rank);

struct ClientConfig {
    ClientId id = 0;
    std::vector<std::string> modalities;
    std::vector<std::string> tasks;
};

// Blocks a route (modality of `task`, `task`) passes through.
std::set<BlockId> route_blocks(const ModelSpec& spec, const std::string& task);
// B_i: the encoder of every modality in M_i plus the route blocks of every task in O_i.
std::set<BlockId> client_block_rule(const ModelSpec& spec, const ClientConfig& cfg);
// B_{i,o}: decoder(o), task-o experts on the MoTE side, and MoME stack(o).
std::set<BlockId> task_block_rule(const ModelSpec& spec, const ClientConfig& cfg, const std::string& task);

struct ClientView {
    ClientId id = 0;
    std::vector<std::string> modalities;
    std::vector<std::string> tasks;
    std::shared_ptr<const ModelSpec> spec;
    ParamStore store;  // deep copy; trainable set == union of `blocks`
    std::set<BlockId> blocks;

    bool has_task(const std::string& task) const;
};

// Carves client `cfg.id`'s slice out of the server model and records B_i and
// B_{i,o} in the server's partition. Throws if a task's modality is missing
// from M_i or a name is unknown.
ClientView derive_client_view(ServerModel& server, const ClientConfig& cfg);

// Copies the server's trainable values for the view's blocks into the view.
void copy_blocks_from(const ParamStore& source, const BlockPartition& partition, const std::set<BlockId>& blocks,
                      ParamStore& dest);

}  // namespace taplab::model
