// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic per-client datasets for the desk topology.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "taplab/model/forward.hpp"
#include "taplab/model/spec.hpp"

namespace taplab::exp {

struct SynthDatasetSpec {
    std::string task;
    model::TaskKind kind = model::TaskKind::classification;
    model::ModalityKind modality = model::ModalityKind::dense;
    std::size_t input_dim = 0;  // dense width
    std::size_t seq_len = 0;    // token inputs
    std::size_t classes = 0;    // classification
    std::size_t vocab = 0;      // token inputs and sequence targets
    std::size_t generation_length = 0;

    double label_skew = 0.0;    // [0, 1): weight moved onto one dominant class per client
    double center_shift = 0.0;  // [0, 4]: per-client perturbation of class centers, chains or affine maps
    double noise_std = 1.0;
    double separation = 3.0;    // norm of the class centers
    double concentration = 2.0; // spread of Markov transition logits
    std::size_t latent_dim = 3; // reconstruction inputs live on a latent subspace of this width
    // Optional fixed class centers (classes x input_dim); drawn when empty.
    std::vector<std::vector<double>> centers;

    std::size_t train_per_client = 128;
    std::size_t val_per_client = 64;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ClientSplit {
    std::vector<model::Sample> train;
    std::vector<model::Sample> val;
};

// Samples for clients 0..clients-1. Client i's draw depends only on (seed, i),
// so adding clients leaves earlier ones unchanged.
std::vector<ClientSplit> synth_dataset(const SynthDatasetSpec& spec, std::size_t clients);

// Class proportions of client i: (1 - skew) uniform plus skew on class i mod C.
std::vector<double> label_proportions(std::size_t classes, double skew, std::size_t client);

}  // namespace taplab::exp
