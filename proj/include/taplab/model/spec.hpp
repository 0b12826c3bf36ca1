// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace taplab::model {

enum class TaskKind { classification, reconstruction, sequence_generation };
enum class ModalityKind { dense, tokens };

const char* task_kind_name(TaskKind kind);
TaskKind parse_task_kind(const std::string& s);
const char* modality_kind_name(ModalityKind kind);
ModalityKind parse_modality_kind(const std::string& s);

struct ModalitySpec {
    std::string name;
    ModalityKind kind = ModalityKind::dense;
    std::size_t input_dim = 0;  // dense width; for tokens, seq_len * vocab (one-hot)
    std::size_t seq_len = 0;    // tokens only
};

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::classification;
    std::string modality;
    std::size_t output_dim = 0;  // classes, reconstruction width or vocabulary
};

struct LoraRanks {
    std::size_t encoder = 8;
    std::size_t backbone_mix = 16;
    std::size_t backbone_expert = 4;
};

struct ModelSpec {
    std::vector<ModalitySpec> modalities;
    std::vector<TaskSpec> tasks;
    std::size_t d_model = 16;
    std::size_t ffn_dim = 32;
    std::size_t mote_layers = 1;  // per stack, modality side
    std::size_t mome_layers = 1;  // per stack, task side
    LoraRanks ranks;
    // LoRA scale is alpha / rank; alpha <= 0 means alpha = rank (scale 1).
    double lora_alpha = 0.0;
    std::size_t vocab_size = 8;
    std::size_t generation_length = 3;
    double frozen_init_std = 0.02;
    std::uint64_t seed = 0;

    // Throws std::invalid_argument describing the first violated invariant.
    void validate() const;

    std::size_t modality_index(const std::string& name) const;
    std::size_t task_index(const std::string& name) const;
    const ModalitySpec& modality_of(const TaskSpec& task) const { return modalities[modality_index(task.modality)]; }
    double lora_scale(std::size_t rank) const {
        return lora_alpha > 0.0 ? lora_alpha / static_cast<double>(rank) : 1.0;
    }
};

inline constexpr const char* kShared = "shared";

}  // namespace taplab::model
