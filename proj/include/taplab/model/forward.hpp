// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Routed forward pass, per-task losses and the lambda-weighted batch loss.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "taplab/ad/graph.hpp"
#include "taplab/model/server_model.hpp"

namespace taplab::model {

// One labelled example. `features` is the dense encoder input (for token
// modalities, the flattened one-hot of `tokens`). Classification reads
// `label`, reconstruction reads `target`, sequence generation reads
// `next_tokens` (length generation_length) with teacher forcing seeded by the
// last input token.
struct Sample {
    std::string task;
    std::vector<double> features;
    std::vector<int> tokens;
    std::size_t label = 0;
    std::vector<double> target;
    std::vector<int> next_tokens;
};

using Batch = std::vector<const Sample*>;

struct ForwardOptions {
    bool use_lora = true;
};

// Lazily creates one graph leaf per parameter name; trainable names become
// trainable leaves, frozen names constants.
class ParamLeaves {
public:
    ParamLeaves(ad::Graph& graph, const ParamStore& store) : graph_(graph), store_(store) {}
    ad::NodeId get(const std::string& name);
    const std::map<std::string, ad::NodeId>& trainable() const { return trainable_; }

private:
    ad::Graph& graph_;
    const ParamStore& store_;
    std::map<std::string, ad::NodeId> all_;
    std::map<std::string, ad::NodeId> trainable_;
};

struct TaskNodes {
    ad::NodeId output;  // logits, reconstruction or per-position vocab logits
    ad::NodeId loss;    // mean sample loss of the group
    std::size_t count = 0;
};

// Graph for a minibatch, one subgraph per task present (grouped in task-name
// order). Parameters are shared leaves across groups.
struct BatchGraph {
    ad::Graph graph;
    std::map<std::string, TaskNodes> tasks;
    std::map<std::string, ad::NodeId> params;  // trainable name -> leaf
};

BatchGraph build_batch_graph(const ClientView& view, const Batch& batch, ForwardOptions opts = {});

// Builds the task-o route for `samples` inside `graph`, returning its output.
ad::NodeId build_route(ad::Graph& graph, ParamLeaves& leaves, const ModelSpec& spec, const std::string& task,
                       const std::vector<const Sample*>& samples, ForwardOptions opts);

// Output of `task` on `batch`, every sample of which must carry that task and
// whose modality must be `modality`.
ad::Tensor forward(const ClientView& view, const Batch& batch, const std::string& modality, const std::string& task,
                   ForwardOptions opts = {});

struct TaskStat {
    double loss = 0.0;
    std::size_t count = 0;
};

struct LossResult {
    double loss = 0.0;
    std::map<std::string, TaskStat> per_task;
    std::map<std::string, ad::Tensor> grads;  // trainable name -> gradient; empty unless requested
};

// Sum over seen tasks of lambda_o * mean task loss, lambda_o = n_o / n.
LossResult task_loss_batch(const ClientView& view, const Batch& batch, bool with_grads = true);

// Weighted sum of per-task losses, as `task_loss_batch` combines them.
ad::NodeId combine_task_losses(ad::Graph& graph, const std::map<std::string, TaskNodes>& tasks);

// Greedy decoding of generation_length tokens per sample.
std::vector<std::vector<int>> greedy_generate(const ClientView& view, const Batch& batch);

struct TaskEval {
    double loss = 0.0;
    double metric = 0.0;  // accuracy, MSE or next-token accuracy
    std::size_t count = 0;
};

// Validation loss and metric per task; samples of tasks the view lacks are
// rejected.
std::map<std::string, TaskEval> evaluate(const ClientView& view, const std::vector<const Sample*>& samples);

std::vector<double> one_hot_tokens(const std::vector<int>& tokens, std::size_t vocab);

}  // namespace taplab::model
