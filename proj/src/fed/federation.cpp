// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/fed/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "taplab/model/checkpoint.hpp"

namespace taplab::fed {

std::uint64_t derive_seed(std::uint64_t a, std::uint64_t b, std::uint64_t tag) {
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                      static_cast<std::uint32_t>(tag)};
    std::uint32_t words[2];
    seq.generate(words, words + 2);
    return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

namespace {

double l2(const model::ParamStore& store, const std::vector<std::string>& names) {
    double s = 0.0;
    for (const auto& n : names)
        for (double v : store.trainable.at(n).data()) s += v * v;
    return std::sqrt(s);
}

}  // namespace

double LrSchedule::at(std::size_t round) const {
    if (warmup_rounds == 0 || round >= warmup_rounds) return peak;
    const double frac = static_cast<double>(round) / static_cast<double>(warmup_rounds);
    return initial + (peak - initial) * frac;
}

void RoundConfig::validate(std::size_t clients) const {
    if (clients == 0) throw std::invalid_argument("federation has no clients");
    if (clients_per_round < 1 || clients_per_round > clients) {
        throw std::invalid_argument("clients_per_round must lie in [1, " + std::to_string(clients) + "], got " +
                                    std::to_string(clients_per_round));
    }
    if (local_iters < 1) throw std::invalid_argument("local_iters must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
}

ModelObjective::ModelObjective(std::shared_ptr<const std::vector<model::Sample>> train, std::size_t batch_size)
    : train_(std::move(train)), batch_size_(batch_size) {
    if (!train_ || train_->empty()) throw std::invalid_argument("client dataset is empty");
    if (batch_size_ == 0) throw std::invalid_argument("batch size must be positive");
}

model::Batch ModelObjective::draw(std::mt19937_64& rng) const {
    const auto n = train_->size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::size_t> picked;
    if (batch_size_ >= n) {
        picked = std::move(idx);
    } else {
        picked.reserve(batch_size_);
        std::sample(idx.begin(), idx.end(), std::back_inserter(picked), batch_size_, rng);
        std::sort(picked.begin(), picked.end());
    }
    model::Batch b;
    b.reserve(picked.size());
    for (auto i : picked) b.push_back(&(*train_)[i]);
    return b;
}

model::LossResult ModelObjective::evaluate(const model::ClientView& model, std::mt19937_64& rng) const {
    return model::task_loss_batch(model, draw(rng), true);
}

std::uint64_t batch_stream_seed(std::uint64_t run_seed, ClientId client) {
    return derive_seed(run_seed, client, 0xBA7C);
}

TrainResult train_steps(Trainee& t, const LocalObjective& objective, std::size_t iters, double lr, std::size_t round) {
    TrainResult out;
    std::map<std::string, double> weighted;
    for (std::size_t k = 0; k < iters; ++k) {
        auto r = objective.evaluate(t.model, t.rng);
        if (!std::isfinite(r.loss)) {
            throw RoundAborted(round, t.model.id,
                               "non-finite loss at step " + std::to_string(k) + " of round " + std::to_string(round) +
                                   " on client " + std::to_string(t.model.id));
        }
        t.optimizer.step(t.model.store, r.grads, lr);
        for (const auto& [task, s] : r.per_task) {
            weighted[task] += s.loss * static_cast<double>(s.count);
            out.per_task[task].count += s.count;
        }
        ++out.steps;
    }
    for (auto& [task, s] : out.per_task) s.loss = weighted[task] / static_cast<double>(s.count);
    return out;
}

TrainResult local_train(ClientState& client, std::size_t tau, double lr, std::size_t round) {
    if (tau < 1) throw std::invalid_argument("local_train needs tau >= 1");
    return train_steps(client.fl, *client.objective, tau, lr, round);
}

std::vector<ClientId> sample_participants(std::size_t round, std::size_t clients, const RoundConfig& cfg) {
    cfg.validate(clients);
    std::vector<ClientId> all(clients);
    std::iota(all.begin(), all.end(), 0);
    if (cfg.clients_per_round == clients) return all;
    std::mt19937_64 rng(derive_seed(cfg.seed, round, 0x5A3E));
    std::vector<ClientId> out;
    std::sample(all.begin(), all.end(), std::back_inserter(out), cfg.clients_per_round, rng);
    return out;
}

Upload make_upload(const ClientState& client) {
    return Upload{client.fl.model.id, &client.fl.model.store, static_cast<double>(client.data_size())};
}

std::size_t upload_bytes(const ClientState& client, const model::BlockPartition& partition) {
    const auto& view = client.fl.model;
    return model::encode_checkpoint(model::collect_blocks(view.store, partition, partition.client_blocks(view.id)))
        .size();
}

std::size_t AggregationReport::touched() const {
    std::size_t n = 0;
    for (const auto& [_, b] : blocks) n += b.touched;
    return n;
}

AggregationReport aggregate_components(model::ParamStore& server, const std::vector<Upload>& uploads,
                                       const model::BlockPartition& partition) {
    std::vector<const Upload*> order;
    for (const auto& u : uploads) {
        if (!u.params) throw std::invalid_argument("upload without parameters");
        if (!(u.weight > 0.0)) throw std::invalid_argument("upload weight |D_i| must be positive");
        order.push_back(&u);
    }
    std::sort(order.begin(), order.end(), [](const Upload* a, const Upload* b) { return a->client < b->client; });
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (order[i]->client == order[i - 1]->client) {
            throw std::invalid_argument("client " + std::to_string(order[i]->client) + " uploaded twice");
        }
    }

    // Validate every upload before the server is touched.
    for (const auto* u : order) {
        for (const auto& name : partition.names_of(partition.client_blocks(u->client))) {
            auto it = u->params->trainable.find(name);
            if (it == u->params->trainable.end()) {
                throw std::invalid_argument("client " + std::to_string(u->client) + " upload lacks '" + name + "'");
            }
            const auto& dst = server.trainable.at(name);
            if (it->second.shape() != dst.shape()) {
                throw std::invalid_argument("shape drift on '" + name + "' from client " + std::to_string(u->client) +
                                            ": " + ad::shape_str(it->second.shape()) + " vs server " +
                                            ad::shape_str(dst.shape()));
            }
        }
    }

    AggregationReport report;
    for (const auto& [id, names] : partition.blocks()) {
        std::vector<const Upload*> owners;
        for (const auto* u : order)
            if (partition.client_blocks(u->client).count(id)) owners.push_back(u);

        BlockAggregate agg;
        agg.pre_norm = l2(server, names);
        agg.owners = owners.size();
        if (owners.empty()) {
            agg.post_norm = agg.pre_norm;
            report.blocks.emplace(id, agg);
            continue;
        }
        for (const auto* u : owners) agg.total_weight += u->weight;
        for (const auto& name : names) {
            auto& dst = server.trainable.at(name);
            ad::Tensor acc(dst.shape(), 0.0);
            for (const auto* u : owners) {
                const double w = u->weight / agg.total_weight;
                const auto src = u->params->trainable.at(name).data();
                auto a = acc.data();
                for (std::size_t k = 0; k < a.size(); ++k) a[k] += w * src[k];
            }
            dst = std::move(acc);
        }
        for (const auto* u : owners) agg.weight_sum += u->weight / agg.total_weight;
        agg.post_norm = l2(server, names);
        agg.touched = true;
        report.blocks.emplace(id, agg);
    }
    return report;
}

void broadcast(const model::ParamStore& server, std::vector<ClientState>& clients,
               const model::BlockPartition& partition) {
    for (auto& c : clients) {
        auto& view = c.fl.model;
        model::copy_blocks_from(server, partition, partition.client_blocks(view.id), view.store);
    }
}

Federation make_federation(model::ServerModel server, const std::vector<model::ClientConfig>& configs,
                           std::vector<std::shared_ptr<const LocalObjective>> objectives, OptimizerConfig opt,
                           std::uint64_t seed) {
    if (configs.size() != objectives.size()) throw std::invalid_argument("one objective per client required");
    Federation fed{std::move(server), {}};
    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (configs[i].id != i) throw std::invalid_argument("client ids must be 0..K-1 in order");
        if (!objectives[i]) throw std::invalid_argument("client " + std::to_string(i) + " has no objective");
        ClientState c;
        c.fl.model = model::derive_client_view(fed.server, configs[i]);
        c.fl.optimizer = Optimizer(opt);
        c.fl.rng.seed(batch_stream_seed(seed, i));
        c.objective = std::move(objectives[i]);
        fed.clients.push_back(std::move(c));
    }
    fed.server.partition.validate(fed.server.store);
    return fed;
}

const char* role_name(Role r) { return r == Role::local ? "local" : "personal"; }

RunStats run_fl(Federation& fed, const RoundConfig& cfg, FlMode mode, Observer* observer) {
    cfg.validate(fed.clients.size());
    Observer silent;
    Observer& obs = observer ? *observer : silent;
    RunStats stats;
    for (std::size_t t = 0; t < cfg.rounds; ++t) {
        const auto selected = sample_participants(t, fed.clients.size(), cfg);
        obs.on_round_start(t, selected);
        const double lr = cfg.lr.at(t);
        std::vector<Upload> uploads;
        for (auto id : selected) {
            auto& c = fed.clients.at(id);
            const auto r = local_train(c, cfg.local_iters, lr, t);
            stats.steps[id] += r.steps;
            for (const auto& [task, s] : r.per_task) obs.on_loss(t, id, task, s.loss, Role::local);
            if (mode == FlMode::fedavg) {
                const auto bytes = upload_bytes(c, fed.server.partition);
                stats.upload_bytes += bytes;
                obs.on_upload(t, id, bytes);
                uploads.push_back(make_upload(c));
            }
        }
        if (mode == FlMode::fedavg) {
            const auto report = aggregate_components(fed.server.store, uploads, fed.server.partition);
            obs.on_aggregate(t, report);
            broadcast(fed.server.store, fed.clients, fed.server.partition);
        }
        obs.on_round_end(t);
        ++stats.rounds;
    }
    return stats;
}

}  // namespace taplab::fed
