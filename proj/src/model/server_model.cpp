// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/model/server_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace taplab::model {

namespace layout {

std::string side_name(Side side) { return side == Side::mote ? "mote" : "mome"; }
std::string encoder_base(const std::string& modality) { return "enc." + modality + ".W"; }
std::string lora_a(const std::string& prefix) { return prefix + ".lora_A"; }
std::string lora_b(const std::string& prefix) { return prefix + ".lora_B"; }

std::string layer_prefix(Side side, const std::string& stack, std::size_t layer) {
    return side_name(side) + "." + stack + ".L" + std::to_string(layer);
}

std::string mix_prefix(Side side, const std::string& stack, std::size_t layer) {
    return layer_prefix(side, stack, layer) + ".mix";
}

std::string expert_prefix(Side side, const std::string& stack, std::size_t layer, const std::string& key,
                          const char* proj) {
    return layer_prefix(side, stack, layer) + ".expert." + key + "." + proj;
}

std::string decoder_prefix(const std::string& task) { return "dec." + task; }

BlockId encoder_block(const std::string& modality) { return {"enc/" + modality}; }
BlockId mix_block(Side side, const std::string& stack) { return {side_name(side) + "/" + stack + "/mix"}; }
BlockId expert_block(Side side, const std::string& stack, const std::string& key) {
    return {side_name(side) + "/" + stack + "/expert/" + key};
}
BlockId decoder_block(const std::string& task) { return {"dec/" + task}; }

std::vector<std::string> expert_keys(const ModelSpec& spec, Side side, const std::string& stack) {
    std::vector<std::string> keys;
    if (side == Side::mote) {
        for (const auto& t : spec.tasks)
            if (stack == kShared || t.modality == stack) keys.push_back(t.name);
    } else {
        for (const auto& m : spec.modalities) {
            const bool reachable =
                stack == kShared || spec.tasks[spec.task_index(stack)].modality == m.name;
            if (reachable) keys.push_back(m.name);
        }
    }
    keys.emplace_back(kShared);
    return keys;
}

}  // namespace layout

namespace {

std::vector<std::string> stacks(const ModelSpec& spec, Side side) {
    std::vector<std::string> out;
    if (side == Side::mote) {
        for (const auto& m : spec.modalities) out.push_back(m.name);
    } else {
        for (const auto& t : spec.tasks) out.push_back(t.name);
    }
    out.emplace_back(kShared);
    return out;
}

class Builder {
public:
    explicit Builder(const ModelSpec& spec) : spec_(spec), rng_(spec.seed) {}

    ad::Tensor gaussian(std::size_t rows, std::size_t cols, double std) {
        std::normal_distribution<double> dist(0.0, std);
        ad::Tensor t({rows, cols});
        for (auto& v : t.data()) v = dist(rng_);
        return t;
    }

    void frozen(const std::string& name, ad::Tensor t, const BlockId* companion) {
        model_.store.frozen.emplace(name, std::move(t));
        if (companion) model_.frozen_companion.emplace(name, *companion);
    }

    void trainable(const BlockId& block, const std::string& name, ad::Tensor t) {
        model_.store.trainable.emplace(name, std::move(t));
        pending_[block].push_back(name);
    }

    // Frozen base (d_out x d_in) plus its LoRA pair.
    void lora_linear(const BlockId& block, const std::string& prefix, std::size_t d_out, std::size_t d_in,
                     std::size_t rank, const BlockId& base_companion) {
        frozen(prefix + ".W", gaussian(d_out, d_in, spec_.frozen_init_std), &base_companion);
        trainable(block, layout::lora_a(prefix), gaussian(rank, d_in, 1.0 / std::sqrt(static_cast<double>(d_in))));
        trainable(block, layout::lora_b(prefix), ad::Tensor({d_out, rank}, 0.0));
    }

    ServerModel finish() {
        for (auto& [id, names] : pending_) model_.partition.add_block(id, std::move(names));
        pending_.clear();
        model_.partition.validate(model_.store);
        return std::move(model_);
    }

private:
    const ModelSpec& spec_;
    std::mt19937_64 rng_;
    ServerModel model_;
    std::map<BlockId, std::vector<std::string>> pending_;
};

}  // namespace

ServerModel build_server_model(const ModelSpec& spec) {
    spec.validate();
    Builder b(spec);
    const auto d = spec.d_model;

    for (const auto& m : spec.modalities) {
        const auto block = layout::encoder_block(m.name);
        b.lora_linear(block, "enc." + m.name, d, m.input_dim, spec.ranks.encoder, block);
    }

    for (Side side : {Side::mote, Side::mome}) {
        const auto layers = side == Side::mote ? spec.mote_layers : spec.mome_layers;
        for (const auto& stack : stacks(spec, side)) {
            const auto mix = layout::mix_block(side, stack);
            for (std::size_t l = 0; l < layers; ++l) {
                const auto lp = layout::layer_prefix(side, stack, l);
                b.frozen(lp + ".ln.gain", ad::Tensor({d}, 1.0), &mix);
                b.frozen(lp + ".ln.bias", ad::Tensor({d}, 0.0), &mix);
                b.lora_linear(mix, layout::mix_prefix(side, stack, l), d, d, spec.ranks.backbone_mix, mix);
                for (const auto& key : layout::expert_keys(spec, side, stack)) {
                    const auto eb = layout::expert_block(side, stack, key);
                    b.lora_linear(eb, layout::expert_prefix(side, stack, l, key, "up"), spec.ffn_dim, d,
                                  spec.ranks.backbone_expert, eb);
                    b.lora_linear(eb, layout::expert_prefix(side, stack, l, key, "down"), d, spec.ffn_dim,
                                  spec.ranks.backbone_expert, eb);
                }
            }
        }
    }

    b.frozen("head.ln.gain", ad::Tensor({d}, 1.0), nullptr);
    b.frozen("head.ln.bias", ad::Tensor({d}, 0.0), nullptr);

    for (const auto& t : spec.tasks) {
        const auto block = layout::decoder_block(t.name);
        const auto p = layout::decoder_prefix(t.name);
        auto he = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
        switch (t.kind) {
        case TaskKind::classification: {
            const auto hidden = std::max<std::size_t>(d / 2, 1);
            b.trainable(block, p + ".W1", b.gaussian(hidden, d, he(d)));
            b.trainable(block, p + ".b1", ad::Tensor({hidden}, 0.0));
            b.trainable(block, p + ".W2", b.gaussian(t.output_dim, hidden, he(hidden)));
            b.trainable(block, p + ".b2", ad::Tensor({t.output_dim}, 0.0));
            break;
        }
        case TaskKind::reconstruction: {
            const auto hidden = 2 * d;
            b.trainable(block, p + ".W1", b.gaussian(hidden, d, he(d)));
            b.trainable(block, p + ".b1", ad::Tensor({hidden}, 0.0));
            b.trainable(block, p + ".W2", b.gaussian(t.output_dim, hidden, he(hidden)));
            b.trainable(block, p + ".b2", ad::Tensor({t.output_dim}, 0.0));
            break;
        }
        case TaskKind::sequence_generation: {
            const auto v = spec.vocab_size;
            b.trainable(block, p + ".Wh", b.gaussian(v, d, he(d)));
            b.trainable(block, p + ".E", b.gaussian(v, v, he(v)));
            b.trainable(block, p + ".b", ad::Tensor({v}, 0.0));
            break;
        }
        }
    }

    auto model = b.finish();
    model.spec = std::make_shared<const ModelSpec>(spec);
    return model;
}

ad::Tensor effective_weight(const ad::Tensor& base, const ad::Tensor& a, const ad::Tensor& b, double alpha,
                            std::size_t rank) {
    if (base.rank() != 2 || a.rank() != 2 || b.rank() != 2 || rank == 0 || b.cols() != rank || a.rows() != rank ||
        b.rows() != base.rows() || a.cols() != base.cols()) {
        throw std::invalid_argument("effective_weight: shapes base " + ad::shape_str(base.shape()) + ", A " +
                                    ad::shape_str(a.shape()) + ", B " + ad::shape_str(b.shape()) +
                                    " do not conform for rank " + std::to_string(rank));
    }
    const double s = alpha / static_cast<double>(rank);
    ad::Tensor out = base;
    const auto rows = base.rows(), cols = base.cols();
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < rank; ++k) acc += b.at(i, k) * a.at(k, j);
            out.at(i, j) += s * acc;
        }
    }
    return out;
}

std::set<BlockId> route_blocks(const ModelSpec& spec, const std::string& task) {
    const auto& t = spec.tasks[spec.task_index(task)];
    const auto& m = t.modality;
    return {
        layout::encoder_block(m),
        layout::mix_block(Side::mote, m),
        layout::expert_block(Side::mote, m, task),
        layout::expert_block(Side::mote, m, kShared),
        layout::mix_block(Side::mote, kShared),
        layout::expert_block(Side::mote, kShared, task),
        layout::expert_block(Side::mote, kShared, kShared),
        layout::mix_block(Side::mome, task),
        layout::expert_block(Side::mome, task, m),
        layout::expert_block(Side::mome, task, kShared),
        layout::mix_block(Side::mome, kShared),
        layout::expert_block(Side::mome, kShared, m),
        layout::expert_block(Side::mome, kShared, kShared),
        layout::decoder_block(task),
    };
}

namespace {
void check_client(const ModelSpec& spec, const ClientConfig& cfg) {
    if (cfg.tasks.empty()) throw std::invalid_argument("client " + std::to_string(cfg.id) + " has no tasks");
    for (const auto& m : cfg.modalities) (void)spec.modality_index(m);
    for (const auto& o : cfg.tasks) {
        const auto& t = spec.tasks[spec.task_index(o)];
        if (std::find(cfg.modalities.begin(), cfg.modalities.end(), t.modality) == cfg.modalities.end()) {
            throw std::invalid_argument("client " + std::to_string(cfg.id) + ": task '" + o + "' needs modality '" +
                                        t.modality + "' which the client does not hold");
        }
    }
}
}  // namespace

std::set<BlockId> client_block_rule(const ModelSpec& spec, const ClientConfig& cfg) {
    check_client(spec, cfg);
    std::set<BlockId> out;
    for (const auto& m : cfg.modalities) out.insert(layout::encoder_block(m));
    for (const auto& o : cfg.tasks) {
        auto r = route_blocks(spec, o);
        out.insert(r.begin(), r.end());
    }
    return out;
}

std::set<BlockId> task_block_rule(const ModelSpec& spec, const ClientConfig& cfg, const std::string& task) {
    check_client(spec, cfg);
    if (std::find(cfg.tasks.begin(), cfg.tasks.end(), task) == cfg.tasks.end()) {
        throw std::invalid_argument("task '" + task + "' not held by client " + std::to_string(cfg.id));
    }
    const auto& m = spec.tasks[spec.task_index(task)].modality;
    std::set<BlockId> out{
        layout::decoder_block(task),
        layout::expert_block(Side::mote, m, task),
        layout::expert_block(Side::mote, kShared, task),
        layout::mix_block(Side::mome, task),
    };
    for (const auto& key : layout::expert_keys(spec, Side::mome, task)) {
        out.insert(layout::expert_block(Side::mome, task, key));
    }
    return out;
}

bool ClientView::has_task(const std::string& task) const {
    return std::find(tasks.begin(), tasks.end(), task) != tasks.end();
}

ClientView derive_client_view(ServerModel& server, const ClientConfig& cfg) {
    const auto& spec = *server.spec;
    auto owned = client_block_rule(spec, cfg);
    std::map<std::string, std::set<BlockId>> per_task;
    for (const auto& o : cfg.tasks) per_task[o] = task_block_rule(spec, cfg, o);

    ClientView view;
    view.id = cfg.id;
    view.modalities = cfg.modalities;
    view.tasks = cfg.tasks;
    view.spec = server.spec;
    view.blocks = owned;
    for (const auto& name : server.partition.names_of(owned)) {
        view.store.trainable.emplace(name, server.store.trainable.at(name));
    }
    for (const auto& [name, t] : server.store.frozen) {
        auto it = server.frozen_companion.find(name);
        if (it == server.frozen_companion.end() || owned.count(it->second)) view.store.frozen.emplace(name, t);
    }
    server.partition.register_client(cfg.id, std::move(owned), std::move(per_task));
    return view;
}

void copy_blocks_from(const ParamStore& source, const BlockPartition& partition, const std::set<BlockId>& blocks,
                      ParamStore& dest) {
    for (const auto& id : blocks) {
        for (const auto& name : partition.names(id)) {
            auto it = dest.trainable.find(name);
            if (it == dest.trainable.end()) throw std::out_of_range("destination lacks '" + name + "'");
            const auto& src = source.trainable.at(name);
            if (src.shape() != it->second.shape()) throw std::invalid_argument("shape drift on '" + name + "'");
            it->second = src;
        }
    }
}

}  // namespace taplab::model
