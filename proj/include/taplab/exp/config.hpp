// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment and bound configuration, loaded from YAML.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "taplab/conv/quadratic.hpp"
#include "taplab/exp/synth.hpp"
#include "taplab/fed/federation.hpp"
#include "taplab/model/server_model.hpp"
#include "taplab/tap/tap.hpp"

namespace taplab::exp {

enum class Mode { local, fedavg, fedavg_post, tap, tap_nokd };
const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);
bool is_tap(Mode m);

// Synthetic data knobs; see SynthDatasetSpec.
struct DataKnobs {
    std::size_t train_per_client = 96;
    std::size_t val_per_client = 64;
    double label_skew = 0.5;
    double center_shift = 0.5;
    double noise_std = 1.0;
    double separation = 3.0;
    double concentration = 2.0;
    std::size_t latent_dim = 3;
};

struct ClientAssignment {
    std::vector<std::string> modalities;  // derived from the tasks when left empty
    std::vector<std::string> tasks;
    std::map<std::string, double> margins;  // overrides of the per-task defaults
};

struct ExperimentConfig {
    std::string name = "desk";
    std::string output_dir = "runs";
    std::uint64_t seed = 0;
    Mode mode = Mode::tap;
    std::size_t eval_every = 0;  // 0: final evaluation only

    model::ModelSpec model;
    double lora_dropout = 0.3;

    fed::RoundConfig rounds;
    fed::OptimizerConfig optimizer;

    std::map<std::string, double> margins;  // per task
    tap::KDConfig kd;
    double disentangle_weight = 0.5;

    DataKnobs data;
    std::map<std::string, DataKnobs> task_data;  // per-task overrides, defaults already merged in
    std::vector<ClientAssignment> clients;

    // Sets the run seed and every seed derived from it.
    void set_seed(std::uint64_t s);
    void validate() const;
    std::string run_id() const;
    double margin(std::size_t client, const std::string& task) const;
    std::vector<model::ClientConfig> client_configs() const;
    const DataKnobs& knobs(const std::string& task) const;
    SynthDatasetSpec dataset_spec(const std::string& task) const;
};

ExperimentConfig parse_config(const std::string& yaml_text);
ExperimentConfig load_config(const std::string& path);
// Resolved configuration as YAML; parse_config(dump_config(c)) reproduces c.
std::string dump_config(const ExperimentConfig& cfg);

struct BoundConfig {
    std::string name = "bound";
    std::string output_dir = "runs";
    conv::QuadraticSpec problem;
    std::size_t tau = 1;
    std::size_t T = 2000;
    std::size_t trials = 20;
    double alpha = 0.0;  // 0: lr_cap(L, tau)
    bool diminishing = true;
    std::uint64_t seed = 0;

    void validate() const;
};

BoundConfig parse_bound_config(const std::string& yaml_text);
BoundConfig load_bound_config(const std::string& path);

}  // namespace taplab::exp
