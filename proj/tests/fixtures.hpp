// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

#include "taplab/model/forward.hpp"
#include "taplab/model/server_model.hpp"

namespace fixtures {

using namespace taplab::model;

// Two modalities, four tasks: the desk topology at a small width.
inline ModelSpec small_spec(std::uint64_t seed = 1) {
    ModelSpec s;
    s.vocab_size = 8;
    s.generation_length = 3;
    s.modalities = {{"img", ModalityKind::dense, 6, 0}, {"txt", ModalityKind::tokens, 4 * 8, 4}};
    s.tasks = {{"img_cls", TaskKind::classification, "img", 3},
               {"img_rec", TaskKind::reconstruction, "img", 6},
               {"txt_cls", TaskKind::classification, "txt", 3},
               {"txt_gen", TaskKind::sequence_generation, "txt", 8}};
    s.d_model = 8;
    s.ffn_dim = 12;
    s.ranks = {2, 4, 2};
    s.seed = seed;
    return s;
}

inline Sample random_sample(const ModelSpec& spec, const std::string& task, std::mt19937_64& rng) {
    const auto& t = spec.tasks[spec.task_index(task)];
    const auto& m = spec.modality_of(t);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_int_distribution<int> tok(0, static_cast<int>(spec.vocab_size) - 1);
    Sample s;
    s.task = task;
    if (m.kind == ModalityKind::dense) {
        for (std::size_t i = 0; i < m.input_dim; ++i) s.features.push_back(n(rng));
    } else {
        for (std::size_t i = 0; i < m.seq_len; ++i) s.tokens.push_back(tok(rng));
        s.features = one_hot_tokens(s.tokens, spec.vocab_size);
    }
    if (t.kind == TaskKind::classification) s.label = std::uniform_int_distribution<std::size_t>(0, t.output_dim - 1)(rng);
    if (t.kind == TaskKind::reconstruction) s.target = s.features;
    if (t.kind == TaskKind::sequence_generation)
        for (std::size_t i = 0; i < spec.generation_length; ++i) s.next_tokens.push_back(tok(rng));
    return s;
}

inline std::vector<Sample> random_samples(const ModelSpec& spec, const std::string& task, std::size_t n,
                                          std::mt19937_64& rng) {
    std::vector<Sample> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(random_sample(spec, task, rng));
    return out;
}

inline Batch as_batch(const std::vector<Sample>& v) {
    Batch b;
    for (const auto& s : v) b.push_back(&s);
    return b;
}

// Fills every trainable tensor (LoRA B included) with small random values so
// LoRA paths are live.
inline void randomize_trainable(ParamStore& store, std::uint64_t seed, double std = 0.3) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, std);
    for (auto& [_, t] : store.trainable)
        for (auto& v : t.data()) v = n(rng);
}

}  // namespace fixtures
