// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/model/forward.hpp"

#include <algorithm>
#include <optional>
#include <stdexcept>

namespace taplab::model {

using ad::Graph;
using ad::NodeId;
using ad::Tensor;

ad::NodeId ParamLeaves::get(const std::string& name) {
    if (auto it = all_.find(name); it != all_.end()) return it->second;
    NodeId id;
    if (auto it = store_.trainable.find(name); it != store_.trainable.end()) {
        id = graph_.parameter(it->second, name);
        trainable_.emplace(name, id);
    } else {
        id = graph_.constant(store_.get(name), name);
    }
    all_.emplace(name, id);
    return id;
}

std::vector<double> one_hot_tokens(const std::vector<int>& tokens, std::size_t vocab) {
    std::vector<double> out(tokens.size() * vocab, 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab) {
            throw std::invalid_argument("token " + std::to_string(tokens[i]) + " outside vocabulary");
        }
        out[i * vocab + static_cast<std::size_t>(tokens[i])] = 1.0;
    }
    return out;
}

namespace {

class Router {
public:
    Router(Graph& g, ParamLeaves& leaves, const ModelSpec& spec, ForwardOptions opts)
        : g_(g), leaves_(leaves), spec_(spec), opts_(opts) {}

    // x (n x d_in) -> x W_eff^T
    NodeId lora_linear(NodeId x, const std::string& prefix, std::size_t rank) {
        NodeId w = leaves_.get(prefix + ".W");
        if (opts_.use_lora) {
            NodeId ba = g_.matmul(leaves_.get(layout::lora_b(prefix)), leaves_.get(layout::lora_a(prefix)));
            const double s = spec_.lora_scale(rank);
            w = g_.add(w, s == 1.0 ? ba : g_.scale(ba, s));
        }
        return g_.matmul_nt(x, w);
    }

    NodeId expert(NodeId h, Side side, const std::string& stack, std::size_t l, const std::string& key) {
        const auto r = spec_.ranks.backbone_expert;
        NodeId up = lora_linear(h, layout::expert_prefix(side, stack, l, key, "up"), r);
        return lora_linear(g_.gelu(up), layout::expert_prefix(side, stack, l, key, "down"), r);
    }

    NodeId layer(NodeId x, Side side, const std::string& stack, std::size_t l, const std::string& key) {
        const auto lp = layout::layer_prefix(side, stack, l);
        NodeId u = g_.layer_norm(x, leaves_.get(lp + ".ln.gain"), leaves_.get(lp + ".ln.bias"));
        NodeId h = g_.add(x, lora_linear(u, layout::mix_prefix(side, stack, l), spec_.ranks.backbone_mix));
        NodeId ffn = g_.scale(g_.add(expert(h, side, stack, l, key), expert(h, side, stack, l, kShared)), 0.5);
        return g_.add(h, ffn);
    }

    NodeId stack(NodeId x, Side side, const std::string& name, const std::string& key) {
        const auto layers = side == Side::mote ? spec_.mote_layers : spec_.mome_layers;
        for (std::size_t l = 0; l < layers; ++l) x = layer(x, side, name, l, key);
        return x;
    }

    NodeId both(NodeId x, Side side, const std::string& specific, const std::string& key) {
        return g_.scale(g_.add(stack(x, side, specific, key), stack(x, side, kShared, key)), 0.5);
    }

private:
    Graph& g_;
    ParamLeaves& leaves_;
    const ModelSpec& spec_;
    ForwardOptions opts_;
};

NodeId mlp_head(Graph& g, ParamLeaves& leaves, NodeId h, const std::string& prefix) {
    NodeId z = g.relu(g.add_row(g.matmul_nt(h, leaves.get(prefix + ".W1")), leaves.get(prefix + ".b1")));
    return g.add_row(g.matmul_nt(z, leaves.get(prefix + ".W2")), leaves.get(prefix + ".b2"));
}

int teacher_prev(const Sample& s, std::size_t step) {
    if (step == 0) {
        if (s.tokens.empty()) throw std::invalid_argument("sequence sample without input tokens");
        return s.tokens.back();
    }
    return s.next_tokens.at(step - 1);
}

// (n*G) x V logits = R (H Wh^T) + onehot(prev) E + b, rows ordered sample-major.
NodeId sequence_head(Graph& g, ParamLeaves& leaves, const ModelSpec& spec, NodeId h, const std::string& prefix,
                     const std::vector<const Sample*>& samples) {
    const auto n = samples.size(), steps = spec.generation_length, v = spec.vocab_size;
    Tensor repeat({n * steps, n}, 0.0);
    Tensor prev({n * steps, v}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < steps; ++t) {
            repeat.at(i * steps + t, i) = 1.0;
            prev.at(i * steps + t, static_cast<std::size_t>(teacher_prev(*samples[i], t))) = 1.0;
        }
    }
    NodeId ctx = g.matmul(g.constant(std::move(repeat)), g.matmul_nt(h, leaves.get(prefix + ".Wh")));
    NodeId emb = g.matmul(g.constant(std::move(prev)), leaves.get(prefix + ".E"));
    return g.add_row(g.add(ctx, emb), leaves.get(prefix + ".b"));
}

void check_samples(const ModelSpec& spec, const TaskSpec& task, const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw std::invalid_argument("empty batch for task '" + task.name + "'");
    const auto& m = spec.modality_of(task);
    for (const auto* s : samples) {
        if (s->task != task.name) throw std::invalid_argument("sample of task '" + s->task + "' in '" + task.name + "' group");
        if (s->features.size() != m.input_dim) {
            throw std::invalid_argument("sample width " + std::to_string(s->features.size()) + " does not match modality '" +
                                        m.name + "' width " + std::to_string(m.input_dim));
        }
        if (task.kind == TaskKind::classification && s->label >= task.output_dim) {
            throw std::invalid_argument("label out of range for task '" + task.name + "'");
        }
        if (task.kind == TaskKind::reconstruction && s->target.size() != task.output_dim) {
            throw std::invalid_argument("reconstruction target width mismatch for task '" + task.name + "'");
        }
        if (task.kind == TaskKind::sequence_generation && s->next_tokens.size() != spec.generation_length) {
            throw std::invalid_argument("sequence target length mismatch for task '" + task.name + "'");
        }
    }
}

std::map<std::string, std::vector<const Sample*>> group(const Batch& batch) {
    std::map<std::string, std::vector<const Sample*>> out;
    for (const auto* s : batch) out[s->task].push_back(s);
    return out;
}

NodeId task_loss(Graph& g, const ModelSpec& spec, const TaskSpec& task, NodeId out,
                 const std::vector<const Sample*>& samples) {
    const auto n = samples.size();
    switch (task.kind) {
    case TaskKind::classification: {
        Tensor t({n, task.output_dim}, 0.0);
        for (std::size_t i = 0; i < n; ++i) t.at(i, samples[i]->label) = 1.0;
        return g.cross_entropy(out, g.constant(std::move(t)));
    }
    case TaskKind::reconstruction: {
        Tensor t({n, task.output_dim});
        for (std::size_t i = 0; i < n; ++i)
            std::copy(samples[i]->target.begin(), samples[i]->target.end(), t.data().begin() + i * task.output_dim);
        return g.mse(out, g.constant(std::move(t)));
    }
    case TaskKind::sequence_generation: {
        const auto steps = spec.generation_length;
        Tensor t({n * steps, spec.vocab_size}, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < steps; ++k)
                t.at(i * steps + k, static_cast<std::size_t>(samples[i]->next_tokens[k])) = 1.0;
        return g.cross_entropy(out, g.constant(std::move(t)));
    }
    }
    throw std::logic_error("unhandled task kind");
}

}  // namespace

namespace {

// Encoder, both backbone sides and the head layer norm.
NodeId trunk(Graph& graph, ParamLeaves& leaves, const ModelSpec& spec, const TaskSpec& t,
             const std::vector<const Sample*>& samples, ForwardOptions opts) {
    check_samples(spec, t, samples);
    const auto& m = spec.modality_of(t);
    Tensor x({samples.size(), m.input_dim});
    for (std::size_t i = 0; i < samples.size(); ++i)
        std::copy(samples[i]->features.begin(), samples[i]->features.end(), x.data().begin() + i * m.input_dim);

    Router router(graph, leaves, spec, opts);
    NodeId h = router.lora_linear(graph.constant(std::move(x)), "enc." + m.name, spec.ranks.encoder);
    h = router.both(h, Side::mote, m.name, t.name);
    h = router.both(h, Side::mome, t.name, m.name);
    return graph.layer_norm(h, leaves.get("head.ln.gain"), leaves.get("head.ln.bias"));
}

}  // namespace

ad::NodeId build_route(ad::Graph& graph, ParamLeaves& leaves, const ModelSpec& spec, const std::string& task,
                       const std::vector<const Sample*>& samples, ForwardOptions opts) {
    const auto& t = spec.tasks[spec.task_index(task)];
    NodeId h = trunk(graph, leaves, spec, t, samples, opts);
    const auto prefix = layout::decoder_prefix(task);
    if (t.kind == TaskKind::sequence_generation) return sequence_head(graph, leaves, spec, h, prefix, samples);
    return mlp_head(graph, leaves, h, prefix);
}

BatchGraph build_batch_graph(const ClientView& view, const Batch& batch, ForwardOptions opts) {
    if (batch.empty()) throw std::invalid_argument("empty minibatch");
    const auto& spec = *view.spec;
    BatchGraph bg;
    ParamLeaves leaves(bg.graph, view.store);
    for (const auto& [task, samples] : group(batch)) {
        if (!view.has_task(task)) {
            throw std::invalid_argument("client " + std::to_string(view.id) + " does not hold task '" + task + "'");
        }
        const auto& t = spec.tasks[spec.task_index(task)];
        NodeId out = build_route(bg.graph, leaves, spec, task, samples, opts);
        bg.tasks[task] = TaskNodes{out, task_loss(bg.graph, spec, t, out, samples), samples.size()};
    }
    bg.params = leaves.trainable();
    return bg;
}

ad::Tensor forward(const ClientView& view, const Batch& batch, const std::string& modality, const std::string& task,
                   ForwardOptions opts) {
    const auto& spec = *view.spec;
    if (!view.has_task(task)) throw std::invalid_argument("client " + std::to_string(view.id) + " does not hold task '" + task + "'");
    if (spec.tasks[spec.task_index(task)].modality != modality) {
        throw std::invalid_argument("task '" + task + "' does not read modality '" + modality + "'");
    }
    Graph g;
    ParamLeaves leaves(g, view.store);
    return g.value(build_route(g, leaves, spec, task, batch, opts));
}

ad::NodeId combine_task_losses(ad::Graph& graph, const std::map<std::string, TaskNodes>& tasks) {
    std::size_t total = 0;
    for (const auto& [_, t] : tasks) total += t.count;
    if (total == 0) throw std::invalid_argument("no samples to combine");
    std::optional<NodeId> acc;
    for (const auto& [_, t] : tasks) {
        const double lambda = static_cast<double>(t.count) / static_cast<double>(total);
        NodeId term = lambda == 1.0 ? t.loss : graph.scale(t.loss, lambda);
        acc = acc ? graph.add(*acc, term) : term;
    }
    return *acc;
}

LossResult task_loss_batch(const ClientView& view, const Batch& batch, bool with_grads) {
    auto bg = build_batch_graph(view, batch);
    NodeId root = combine_task_losses(bg.graph, bg.tasks);
    LossResult r;
    r.loss = bg.graph.value(root).item();
    for (const auto& [task, t] : bg.tasks) r.per_task[task] = TaskStat{bg.graph.value(t.loss).item(), t.count};
    if (with_grads) {
        auto grads = bg.graph.backward(root);
        for (const auto& [name, id] : bg.params) r.grads.emplace(name, std::move(grads.at(id)));
    }
    return r;
}

namespace {

std::size_t argmax_row(const Tensor& t, std::size_t row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < t.cols(); ++j)
        if (t.at(row, j) > t.at(row, best)) best = j;
    return best;
}

}  // namespace

std::vector<std::vector<int>> greedy_generate(const ClientView& view, const Batch& batch) {
    if (batch.empty()) return {};
    const auto& spec = *view.spec;
    const auto& task = batch.front()->task;
    const auto& t = spec.tasks[spec.task_index(task)];
    if (t.kind != TaskKind::sequence_generation) throw std::invalid_argument("task '" + task + "' does not generate");
    // Context logits H Wh^T + b, then greedy steps through E.
    Graph g;
    ParamLeaves leaves(g, view.store);
    const auto prefix = layout::decoder_prefix(task);
    std::vector<const Sample*> samples(batch.begin(), batch.end());
    NodeId h = trunk(g, leaves, spec, t, samples, {});
    const Tensor ctx = g.value(g.add_row(g.matmul_nt(h, leaves.get(prefix + ".Wh")), leaves.get(prefix + ".b")));
    const Tensor& emb = view.store.get(prefix + ".E");

    std::vector<std::vector<int>> out(samples.size());
    Tensor row({1, spec.vocab_size});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        int prev = samples[i]->tokens.back();
        for (std::size_t k = 0; k < spec.generation_length; ++k) {
            for (std::size_t j = 0; j < spec.vocab_size; ++j)
                row.at(0, j) = ctx.at(i, j) + emb.at(static_cast<std::size_t>(prev), j);
            prev = static_cast<int>(argmax_row(row, 0));
            out[i].push_back(prev);
        }
    }
    return out;
}

std::map<std::string, TaskEval> evaluate(const ClientView& view, const std::vector<const Sample*>& samples) {
    std::map<std::string, TaskEval> out;
    if (samples.empty()) return out;
    const auto& spec = *view.spec;
    auto bg = build_batch_graph(view, Batch(samples.begin(), samples.end()));
    const auto groups = group(Batch(samples.begin(), samples.end()));
    for (const auto& [task, nodes] : bg.tasks) {
        const auto& t = spec.tasks[spec.task_index(task)];
        const auto& members = groups.at(task);
        const Tensor& y = bg.graph.value(nodes.output);
        TaskEval e;
        e.loss = bg.graph.value(nodes.loss).item();
        e.count = members.size();
        switch (t.kind) {
        case TaskKind::classification: {
            std::size_t hit = 0;
            for (std::size_t i = 0; i < members.size(); ++i) hit += argmax_row(y, i) == members[i]->label;
            e.metric = static_cast<double>(hit) / static_cast<double>(members.size());
            break;
        }
        case TaskKind::reconstruction:
            e.metric = e.loss;
            break;
        case TaskKind::sequence_generation: {
            const auto gen = greedy_generate(view, Batch(members.begin(), members.end()));
            std::size_t hit = 0, total = 0;
            for (std::size_t i = 0; i < members.size(); ++i) {
                for (std::size_t k = 0; k < gen[i].size(); ++k, ++total) hit += gen[i][k] == members[i]->next_tokens[k];
            }
            e.metric = static_cast<double>(hit) / static_cast<double>(total);
            break;
        }
        }
        out[task] = e;
    }
    return out;
}

}  // namespace taplab::model
