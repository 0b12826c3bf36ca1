// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/model/spec.hpp"

#include <set>
#include <stdexcept>

namespace taplab::model {

const char* task_kind_name(TaskKind kind) {
    switch (kind) {
    case TaskKind::classification: return "classification";
    case TaskKind::reconstruction: return "reconstruction";
    case TaskKind::sequence_generation: return "sequence-generation";
    }
    return "?";
}

TaskKind parse_task_kind(const std::string& s) {
    if (s == "classification") return TaskKind::classification;
    if (s == "reconstruction") return TaskKind::reconstruction;
    if (s == "sequence-generation" || s == "sequence_generation") return TaskKind::sequence_generation;
    throw std::invalid_argument("unknown task kind '" + s + "'");
}

const char* modality_kind_name(ModalityKind kind) {
    return kind == ModalityKind::dense ? "vector-image" : "token-text";
}

ModalityKind parse_modality_kind(const std::string& s) {
    if (s == "vector-image" || s == "dense") return ModalityKind::dense;
    if (s == "token-text" || s == "tokens") return ModalityKind::tokens;
    throw std::invalid_argument("unknown modality kind '" + s + "'");
}

void ModelSpec::validate() const {
    auto bad = [](const std::string& m) { return std::invalid_argument("invalid model spec: " + m); };
    if (modalities.empty()) throw bad("at least one modality required");
    if (tasks.empty()) throw bad("at least one task required");
    if (d_model == 0 || ffn_dim == 0) throw bad("d_model and ffn_dim must be positive");
    if (mote_layers == 0 || mome_layers == 0) throw bad("layers per stack must be positive");
    std::set<std::string> names;
    for (const auto& m : modalities) {
        if (m.name.empty() || m.name == kShared) throw bad("reserved or empty modality name '" + m.name + "'");
        if (!names.insert(m.name).second) throw bad("duplicate name '" + m.name + "'");
        if (m.kind == ModalityKind::tokens) {
            if (m.seq_len == 0) throw bad("token modality '" + m.name + "' needs seq_len");
            if (m.input_dim != m.seq_len * vocab_size) throw bad("token modality '" + m.name + "' input_dim must be seq_len * vocab");
        }
        if (m.input_dim == 0) throw bad("modality '" + m.name + "' has zero input dim");
    }
    for (const auto& t : tasks) {
        if (t.name.empty() || t.name == kShared) throw bad("reserved or empty task name '" + t.name + "'");
        if (!names.insert(t.name).second) throw bad("duplicate name '" + t.name + "'");
        const auto mi = modality_index(t.modality);
        const auto& m = modalities[mi];
        if (t.output_dim == 0) throw bad("task '" + t.name + "' has zero output dim");
        if (t.kind == TaskKind::reconstruction && t.output_dim != m.input_dim)
            throw bad("reconstruction task '" + t.name + "' must output its modality's input width");
        if (t.kind == TaskKind::sequence_generation) {
            if (m.kind != ModalityKind::tokens) throw bad("sequence task '" + t.name + "' needs a token modality");
            if (t.output_dim != vocab_size) throw bad("sequence task '" + t.name + "' must output the vocabulary");
            if (generation_length == 0) throw bad("generation_length must be positive");
        }
    }
    for (auto r : {ranks.encoder, ranks.backbone_mix, ranks.backbone_expert}) {
        if (r < 1 || r > d_model) throw bad("LoRA ranks must lie in [1, d_model]");
    }
}

std::size_t ModelSpec::modality_index(const std::string& name) const {
    for (std::size_t i = 0; i < modalities.size(); ++i)
        if (modalities[i].name == name) return i;
    throw std::invalid_argument("unknown modality '" + name + "'");
}

std::size_t ModelSpec::task_index(const std::string& name) const {
    for (std::size_t i = 0; i < tasks.size(); ++i)
        if (tasks[i].name == name) return i;
    throw std::invalid_argument("unknown task '" + name + "'");
}

}  // namespace taplab::model
