// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Margin-gated replacement of personalised parameters and post-FL
// distillation.

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "taplab/ad/graph.hpp"
#include "taplab/fed/federation.hpp"

namespace taplab::tap {

using model::ClientId;

struct TaskHistory {
    std::optional<double> local;     // h^(l)
    std::optional<double> personal;  // h^(p)
    double margin = 0.0;             // m_{i,o}
    int indicator = 0;               // R_i[o]
};

class RoundLedger {
public:
    void set_margin(ClientId client, const std::string& task, double margin);
    TaskHistory& at(ClientId client, const std::string& task) { return entries_[client][task]; }
    const TaskHistory* find(ClientId client, const std::string& task) const;
    const std::map<std::string, TaskHistory>& client(ClientId c) const;

    // Tasks the client's FL model trained on this round.
    std::set<std::string>& seen(ClientId client) { return seen_[client]; }
    // Zero every indicator of the client.
    void reset_indicators(ClientId client);

private:
    std::map<ClientId, std::map<std::string, TaskHistory>> entries_;
    std::map<ClientId, std::set<std::string>> seen_;
};

// Overwrites the history of every task in `losses`; other tasks are left as
// they were. A local update also replaces the client's seen-task set.
void update_history(RoundLedger& ledger, ClientId client, fed::Role role,
                    const std::map<std::string, model::TaskStat>& losses);

// 1 iff both histories exist and h^(l) + m < h^(p). Stores the result in the
// ledger entry.
int compute_indicator(RoundLedger& ledger, ClientId client, const std::string& task);

struct PersonalState {
    fed::Trainee x;  // X_[i]; never uploaded
    std::map<std::string, std::size_t> replacements;
};

// X_[i] starts as a copy of the client's FL view with its own optimizer and
// an identically seeded batch stream.
PersonalState make_personal(const fed::ClientState& client);

// On indicator 1, copies the view's B_{i,o} tensors into X bit-exactly,
// clears X's optimizer state for them and bumps the counter. Returns whether
// a copy happened.
bool apply_replacement(PersonalState& personal, const model::ClientView& view, const model::BlockPartition& partition,
                       const std::string& task, int indicator);

struct KDConfig {
    double temperature = 1.0;
    double default_beta = 2e-3;
    std::map<std::string, double> beta;  // per-task overrides
    std::size_t post_iters = 50;         // P

    double beta_for(const std::string& task) const;
    void validate() const;
};

// tau^2 * KL(softmax(z_t / tau) || softmax(z_s / tau)), averaged over rows.
double distill_loss(const ad::Tensor& teacher, const ad::Tensor& student, double temperature);

// Graph form; the teacher enters as a constant so only the student receives
// gradients.
ad::NodeId distill_loss_node(ad::Graph& graph, ad::NodeId student, const ad::Tensor& teacher, double temperature);

// Distillation objective for the student: lambda-weighted task loss plus
// beta_o * distillation for every task in the minibatch. Reconstruction tasks
// distil with MSE between outputs.
class DistillObjective : public fed::LocalObjective {
public:
    DistillObjective(const fed::ModelObjective& data, const model::ClientView& teacher, const KDConfig& kd)
        : data_(data), teacher_(teacher), kd_(kd) {}
    model::LossResult evaluate(const model::ClientView& student, std::mt19937_64& rng) const override;
    std::size_t size() const override { return data_.size(); }

private:
    const fed::ModelObjective& data_;
    const model::ClientView& teacher_;
    const KDConfig& kd_;
};

struct PostResult {
    fed::TrainResult teacher;
    fed::TrainResult student;
};

// P steps on the FL view with the plain loss, then P steps on X with the
// distillation objective against the (now fixed) view.
PostResult post_fl_phase(fed::ClientState& client, PersonalState& personal, const KDConfig& kd, double lr);

struct ReplacementEvent {
    std::size_t round = 0;
    ClientId client = 0;
    std::string task;
    double h_local = 0.0;
    std::optional<double> h_personal;
    double margin = 0.0;
    bool fired = false;
    std::size_t cumulative = 0;
};

class TapObserver : public fed::Observer {
public:
    virtual void on_replacement(const ReplacementEvent& /*event*/) {}
    virtual void on_post(ClientId /*client*/, const PostResult& /*result*/) {}
};

struct TapStats {
    fed::RunStats fl;
    std::map<ClientId, std::size_t> personal_steps;
    std::map<ClientId, std::map<std::string, std::size_t>> replacements;
};

// The full loop: per selected client train the view, update h^(l), upload,
// gate and replace, reset R, train X, update h^(p); then aggregate and
// broadcast to all; finally the post-FL phase on every client.
TapStats run_tap(fed::Federation& fed, std::vector<PersonalState>& personal, RoundLedger& ledger,
                 const fed::RoundConfig& cfg, const KDConfig& kd, TapObserver* observer = nullptr);

}  // namespace taplab::tap
