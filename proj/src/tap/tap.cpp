// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/tap/tap.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>

namespace taplab::tap {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;

void RoundLedger::set_margin(ClientId client, const std::string& task, double margin) {
    if (std::isnan(margin)) throw std::invalid_argument("margin for task '" + task + "' is NaN");
    entries_[client][task].margin = margin;
}

const TaskHistory* RoundLedger::find(ClientId client, const std::string& task) const {
    auto c = entries_.find(client);
    if (c == entries_.end()) return nullptr;
    auto t = c->second.find(task);
    return t == c->second.end() ? nullptr : &t->second;
}

const std::map<std::string, TaskHistory>& RoundLedger::client(ClientId c) const {
    static const std::map<std::string, TaskHistory> empty;
    auto it = entries_.find(c);
    return it == entries_.end() ? empty : it->second;
}

void RoundLedger::reset_indicators(ClientId client) {
    for (auto& [_, h] : entries_[client]) h.indicator = 0;
}

void update_history(RoundLedger& ledger, ClientId client, fed::Role role,
                    const std::map<std::string, model::TaskStat>& losses) {
    for (const auto& [task, s] : losses) {
        if (!std::isfinite(s.loss)) throw std::invalid_argument("non-finite history loss for task '" + task + "'");
    }
    if (role == fed::Role::local) ledger.seen(client).clear();
    for (const auto& [task, s] : losses) {
        auto& h = ledger.at(client, task);
        (role == fed::Role::local ? h.local : h.personal) = s.loss;
        if (role == fed::Role::local) ledger.seen(client).insert(task);
    }
}

int compute_indicator(RoundLedger& ledger, ClientId client, const std::string& task) {
    auto& h = ledger.at(client, task);
    h.indicator = (h.local && h.personal && *h.local + h.margin < *h.personal) ? 1 : 0;
    return h.indicator;
}

PersonalState make_personal(const fed::ClientState& client) {
    PersonalState p;
    p.x.model = client.fl.model;
    p.x.optimizer = fed::Optimizer(client.fl.optimizer.config());
    p.x.rng = client.fl.rng;
    return p;
}

bool apply_replacement(PersonalState& personal, const model::ClientView& view, const model::BlockPartition& partition,
                       const std::string& task, int indicator) {
    if (!view.has_task(task)) {
        throw std::invalid_argument("client " + std::to_string(view.id) + " does not hold task '" + task + "'");
    }
    auto& count = personal.replacements[task];
    if (indicator == 0) return false;
    const auto& blocks = partition.task_blocks(view.id, task);
    model::copy_blocks_from(view.store, partition, blocks, personal.x.model.store);
    personal.x.optimizer.reset(partition.names_of(blocks));
    ++count;
    return true;
}

double KDConfig::beta_for(const std::string& task) const {
    auto it = beta.find(task);
    return it == beta.end() ? default_beta : it->second;
}

void KDConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("KD temperature must be > 0");
    if (default_beta < 0.0) throw std::invalid_argument("KD beta must be >= 0");
    for (const auto& [task, b] : beta)
        if (b < 0.0) throw std::invalid_argument("KD beta for '" + task + "' must be >= 0");
}

namespace {

// log_softmax(z / tau) through the graph kernels, so teacher and student
// sides round identically.
Tensor softened_log(const Tensor& z, double temperature) {
    Graph g;
    return g.value(g.log_softmax(g.scale(g.constant(z), 1.0 / temperature)));
}

}  // namespace

ad::NodeId distill_loss_node(ad::Graph& graph, ad::NodeId student, const ad::Tensor& teacher, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("KD temperature must be > 0");
    if (graph.shape(student) != teacher.shape()) {
        throw std::invalid_argument("teacher " + ad::shape_str(teacher.shape()) + " and student " +
                                    ad::shape_str(graph.shape(student)) + " logits differ in shape");
    }
    const Tensor log_pt = softened_log(teacher, temperature);
    Tensor pt = log_pt;
    for (auto& v : pt.data()) v = std::exp(v);
    NodeId log_ps = graph.log_softmax(graph.scale(student, 1.0 / temperature));
    NodeId diff = graph.sub(graph.constant(log_pt), log_ps);
    const double rows = static_cast<double>(teacher.rows());
    return graph.scale(graph.sum(graph.mul(graph.constant(std::move(pt)), diff)), temperature * temperature / rows);
}

double distill_loss(const ad::Tensor& teacher, const ad::Tensor& student, double temperature) {
    Graph g;
    return g.value(distill_loss_node(g, g.constant(student), teacher, temperature)).item();
}

model::LossResult DistillObjective::evaluate(const model::ClientView& student, std::mt19937_64& rng) const {
    const auto batch = data_.draw(rng);
    auto bg = model::build_batch_graph(student, batch);
    NodeId root = model::combine_task_losses(bg.graph, bg.tasks);

    std::optional<model::BatchGraph> teacher;
    for (const auto& [task, nodes] : bg.tasks) {
        const double beta = kd_.beta_for(task);
        if (beta == 0.0) continue;
        if (!teacher) teacher = model::build_batch_graph(teacher_, batch);
        const Tensor& target = teacher->graph.value(teacher->tasks.at(task).output);
        const auto& spec = *student.spec;
        NodeId kd = spec.tasks[spec.task_index(task)].kind == model::TaskKind::reconstruction
                        ? bg.graph.mse(nodes.output, bg.graph.constant(target))
                        : distill_loss_node(bg.graph, nodes.output, target, kd_.temperature);
        root = bg.graph.add(root, bg.graph.scale(kd, beta));
    }

    model::LossResult r;
    r.loss = bg.graph.value(root).item();
    for (const auto& [task, t] : bg.tasks) r.per_task[task] = {bg.graph.value(t.loss).item(), t.count};
    auto grads = bg.graph.backward(root);
    for (const auto& [name, id] : bg.params) r.grads.emplace(name, std::move(grads.at(id)));
    return r;
}

PostResult post_fl_phase(fed::ClientState& client, PersonalState& personal, const KDConfig& kd, double lr) {
    kd.validate();
    const auto* data = dynamic_cast<const fed::ModelObjective*>(client.objective.get());
    if (!data) throw std::invalid_argument("post-FL distillation needs a minibatch objective");
    PostResult out;
    out.teacher = fed::train_steps(client.fl, *client.objective, kd.post_iters, lr);
    DistillObjective student(*data, client.fl.model, kd);
    out.student = fed::train_steps(personal.x, student, kd.post_iters, lr);
    return out;
}

TapStats run_tap(fed::Federation& fed, std::vector<PersonalState>& personal, RoundLedger& ledger,
                 const fed::RoundConfig& cfg, const KDConfig& kd, TapObserver* observer) {
    cfg.validate(fed.clients.size());
    kd.validate();
    if (personal.size() != fed.clients.size()) throw std::invalid_argument("one personal state per client required");
    TapObserver silent;
    TapObserver& obs = observer ? *observer : silent;
    const auto& partition = fed.server.partition;

    TapStats stats;
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        const auto selected = fed::sample_participants(t, fed.clients.size(), cfg);
        obs.on_round_start(t, selected);
        const double lr = cfg.lr.at(t);
        std::vector<fed::Upload> uploads;
        for (auto id : selected) {
            auto& c = fed.clients.at(id);
            auto& p = personal.at(id);

            const auto lr_local = fed::local_train(c, cfg.local_iters, lr, t);
            stats.fl.steps[id] += lr_local.steps;
            for (const auto& [task, s] : lr_local.per_task) obs.on_loss(t, id, task, s.loss, fed::Role::local);
            update_history(ledger, id, fed::Role::local, lr_local.per_task);

            const auto bytes = fed::upload_bytes(c, partition);
            stats.fl.upload_bytes += bytes;
            obs.on_upload(t, id, bytes);
            uploads.push_back(fed::make_upload(c));

            for (const auto& task : ledger.seen(id)) {
                const int r = compute_indicator(ledger, id, task);
                const auto& h = ledger.at(id, task);
                ReplacementEvent ev{t, id, task, *h.local, h.personal, h.margin, r == 1, 0};
                apply_replacement(p, c.fl.model, partition, task, r);
                ev.cumulative = p.replacements[task];
                obs.on_replacement(ev);
            }
            ledger.reset_indicators(id);

            const auto lr_personal = fed::train_steps(p.x, *c.objective, cfg.local_iters, lr, t);
            stats.personal_steps[id] += lr_personal.steps;
            for (const auto& [task, s] : lr_personal.per_task) obs.on_loss(t, id, task, s.loss, fed::Role::personal);
            update_history(ledger, id, fed::Role::personal, lr_personal.per_task);
        }
        const auto report = fed::aggregate_components(fed.server.store, uploads, partition);
        obs.on_aggregate(t, report);
        fed::broadcast(fed.server.store, fed.clients, partition);
        obs.on_round_end(t);
        ++stats.fl.rounds;
    }

    const double post_lr = cfg.lr.at(cfg.rounds);
    for (std::size_t i = 0; i < fed.clients.size(); ++i) {
        const auto r = post_fl_phase(fed.clients[i], personal[i], kd, post_lr);
        stats.fl.steps[i] += r.teacher.steps;
        stats.personal_steps[i] += r.student.steps;
        obs.on_post(i, r);
    }
    for (std::size_t i = 0; i < personal.size(); ++i) stats.replacements[i] = personal[i].replacements;
    return stats;
}

}  // namespace taplab::tap
