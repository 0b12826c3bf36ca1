// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Client sampling, local training, component-wise FedAvg and broadcast.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "taplab/fed/optimizer.hpp"
#include "taplab/model/forward.hpp"
#include "taplab/model/server_model.hpp"

namespace taplab::fed {

using model::BlockId;
using model::ClientId;

// Deterministic 64-bit seed from (a, b, tag).
std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b, std::uint64_t tag);

// Linear ramp from `initial` to `peak` over `warmup_rounds`, then flat.
struct LrSchedule {
    double initial = 1e-4;
    double peak = 3e-4;
    std::size_t warmup_rounds = 20;

    double at(std::size_t round) const;
};

struct RoundConfig {
    std::size_t clients_per_round = 2;
    std::size_t local_iters = 20;  // tau
    std::size_t rounds = 200;      // T
    std::size_t batch_size = 128;
    std::uint64_t seed = 0;
    LrSchedule lr;

    // Throws unless 1 <= clients_per_round <= clients and local_iters >= 1.
    void validate(std::size_t clients) const;
};

// Thrown when a training step produces a non-finite loss.
class RoundAborted : public std::runtime_error {
public:
    RoundAborted(std::size_t round, ClientId client, const std::string& what)
        : std::runtime_error(what), round_(round), client_(client) {}
    std::size_t round() const { return round_; }
    ClientId client() const { return client_; }

private:
    std::size_t round_;
    ClientId client_;
};

// Stochastic loss on a client's data. `rng` is the caller's batch stream.
class LocalObjective {
public:
    virtual ~LocalObjective() = default;
    virtual model::LossResult evaluate(const model::ClientView& model, std::mt19937_64& rng) const = 0;
    virtual std::size_t size() const = 0;  // |D_i|
};

// Minibatches drawn uniformly without replacement (indices in ascending
// order) from a client's training split.
class ModelObjective : public LocalObjective {
public:
    ModelObjective(std::shared_ptr<const std::vector<model::Sample>> train, std::size_t batch_size);
    model::LossResult evaluate(const model::ClientView& model, std::mt19937_64& rng) const override;
    std::size_t size() const override { return train_->size(); }
    model::Batch draw(std::mt19937_64& rng) const;

private:
    std::shared_ptr<const std::vector<model::Sample>> train_;
    std::size_t batch_size_;
};

// One trainable copy (the FL view or a personal model) with its optimizer
// and batch stream.
struct Trainee {
    model::ClientView model;
    Optimizer optimizer;
    std::mt19937_64 rng;
};

struct ClientState {
    Trainee fl;  // W~_[i]
    std::shared_ptr<const LocalObjective> objective;
    std::size_t data_size() const { return objective->size(); }
};

// Seed of client i's batch stream; every trainable copy of a client draws the
// same sequence of minibatch indices.
std::uint64_t batch_stream_seed(std::uint64_t run_seed, ClientId client);

struct TrainResult {
    std::map<std::string, model::TaskStat> per_task;  // sample-weighted average over the steps
    std::size_t steps = 0;
};

// `iters` optimizer steps. An empty result when iters == 0.
TrainResult train_steps(Trainee& t, const LocalObjective& objective, std::size_t iters, double lr,
                        std::size_t round = 0);

// Local phase of one round for a selected client.
TrainResult local_train(ClientState& client, std::size_t tau, double lr, std::size_t round = 0);

std::vector<ClientId> sample_participants(std::size_t round, std::size_t clients, const RoundConfig& cfg);

struct Upload {
    ClientId client = 0;
    const model::ParamStore* params = nullptr;  // the FL view only
    double weight = 0.0;                        // |D_i|
};

Upload make_upload(const ClientState& client);

// Bytes a client would transmit: its owned blocks in checkpoint encoding.
std::size_t upload_bytes(const ClientState& client, const model::BlockPartition& partition);

struct BlockAggregate {
    std::size_t owners = 0;
    double total_weight = 0.0;
    double weight_sum = 0.0;  // sum of normalised weights, 1 when touched
    double pre_norm = 0.0;
    double post_norm = 0.0;
    bool touched = false;
};

struct AggregationReport {
    std::map<BlockId, BlockAggregate> blocks;
    std::size_t touched() const;
};

// Per-block weighted mean over this round's uploaders owning the block,
// accumulated in ascending client id.
AggregationReport aggregate_components(model::ParamStore& server, const std::vector<Upload>& uploads,
                                       const model::BlockPartition& partition);

// Every client receives the server's current values for its blocks.
void broadcast(const model::ParamStore& server, std::vector<ClientState>& clients,
               const model::BlockPartition& partition);

enum class Role { local, personal };
const char* role_name(Role r);

// Hooks for metric sinks. Default implementations ignore events.
class Observer {
public:
    virtual ~Observer() = default;
    virtual void on_round_start(std::size_t /*round*/, const std::vector<ClientId>& /*selected*/) {}
    virtual void on_loss(std::size_t /*round*/, ClientId /*client*/, const std::string& /*task*/, double /*loss*/,
                         Role /*role*/) {}
    virtual void on_upload(std::size_t /*round*/, ClientId /*client*/, std::size_t /*bytes*/) {}
    virtual void on_aggregate(std::size_t /*round*/, const AggregationReport& /*report*/) {}
    virtual void on_round_end(std::size_t /*round*/) {}
};

enum class FlMode { local, fedavg };

struct Federation {
    model::ServerModel server;
    std::vector<ClientState> clients;  // index == client id
};

// Derives one view per config (ids must be 0..K-1 in order) and seeds each
// client's batch stream from `seed`.
Federation make_federation(model::ServerModel server, const std::vector<model::ClientConfig>& configs,
                           std::vector<std::shared_ptr<const LocalObjective>> objectives, OptimizerConfig opt,
                           std::uint64_t seed);

struct RunStats {
    std::size_t rounds = 0;
    std::map<ClientId, std::size_t> steps;  // optimizer steps on the FL copy
    std::size_t upload_bytes = 0;
};

RunStats run_fl(Federation& fed, const RoundConfig& cfg, FlMode mode, Observer* observer = nullptr);

}  // namespace taplab::fed
