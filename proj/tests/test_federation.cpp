// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "taplab/fed/federation.hpp"
#include "taplab/model/checkpoint.hpp"

using namespace taplab;
using namespace taplab::fed;
using fixtures::small_spec;
using model::ClientConfig;
using model::Sample;

namespace {

// 0.5 * ||w - c||^2 on the trainable tensor "w", no noise.
class Quadratic : public LocalObjective {
public:
    explicit Quadratic(ad::Tensor c, std::size_t n = 1) : c_(std::move(c)), n_(n) {}
    model::LossResult evaluate(const model::ClientView& m, std::mt19937_64&) const override {
        const auto& w = m.store.trainable.at("w");
        model::LossResult r;
        ad::Tensor g = w;
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = w[i] - c_[i];
            r.loss += 0.5 * g[i] * g[i];
        }
        r.per_task["q"] = {r.loss, 1};
        r.grads.emplace("w", std::move(g));
        return r;
    }
    std::size_t size() const override { return n_; }

private:
    ad::Tensor c_;
    std::size_t n_;
};

std::shared_ptr<const std::vector<Sample>> dataset(const model::ModelSpec& spec, const std::vector<std::string>& tasks,
                                                   std::size_t per_task, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto out = std::make_shared<std::vector<Sample>>();
    for (const auto& t : tasks)
        for (std::size_t i = 0; i < per_task; ++i) out->push_back(fixtures::random_sample(spec, t, rng));
    return out;
}

Federation small_federation(const std::vector<ClientConfig>& cfgs, std::size_t per_task, std::size_t batch,
                            std::uint64_t seed, OptimizerConfig opt = {}, bool same_data = false) {
    auto server = model::build_server_model(small_spec(seed));
    std::vector<std::shared_ptr<const LocalObjective>> objs;
    for (const auto& c : cfgs) {
        auto data = dataset(*server.spec, c.tasks, per_task, same_data ? seed : seed * 31 + c.id);
        objs.push_back(std::make_shared<ModelObjective>(data, batch));
    }
    return make_federation(std::move(server), cfgs, std::move(objs), opt, seed);
}

const std::vector<ClientConfig> kThree = {
    {0, {"img"}, {"img_cls", "img_rec"}},
    {1, {"img", "txt"}, {"img_cls", "txt_gen"}},
    {2, {"txt"}, {"txt_cls"}},
};

model::ParamStore quadratic_store(std::vector<double> w) {
    model::ParamStore s;
    s.trainable.emplace("w", ad::Tensor::vector(std::move(w)));
    return s;
}

}  // namespace

TEST_CASE("participant sampling") {
    RoundConfig cfg;
    cfg.seed = 5;
    SUBCASE("full participation returns every client") {
        cfg.clients_per_round = 4;
        CHECK(sample_participants(3, 4, cfg) == std::vector<model::ClientId>{0, 1, 2, 3});
    }
    SUBCASE("deterministic per seed and round, distinct, in range") {
        cfg.clients_per_round = 2;
        for (std::size_t t = 0; t < 50; ++t) {
            const auto a = sample_participants(t, 30, cfg);
            CHECK(a == sample_participants(t, 30, cfg));
            CHECK(a.size() == 2);
            CHECK(a[0] != a[1]);
            for (auto c : a) CHECK(c < 30);
        }
    }
    SUBCASE("roughly uniform") {
        cfg.clients_per_round = 2;
        std::vector<int> hits(6, 0);
        for (std::size_t t = 0; t < 3000; ++t)
            for (auto c : sample_participants(t, 6, cfg)) ++hits[c];
        for (int h : hits) CHECK(std::abs(h - 1000) < 120);
    }
    SUBCASE("invalid sizes") {
        cfg.clients_per_round = 0;
        CHECK_THROWS_AS(sample_participants(0, 3, cfg), std::invalid_argument);
        cfg.clients_per_round = 4;
        CHECK_THROWS_AS(sample_participants(0, 3, cfg), std::invalid_argument);
    }
}

TEST_CASE("learning-rate warmup") {
    LrSchedule s{1e-4, 3e-4, 20};
    CHECK(s.at(0) == 1e-4);
    CHECK(s.at(10) == doctest::Approx(2e-4));
    CHECK(s.at(20) == 3e-4);
    CHECK(s.at(500) == 3e-4);
    CHECK(LrSchedule{0.1, 0.5, 0}.at(0) == 0.5);
}

TEST_CASE("optimizers") {
    SUBCASE("sgd is w - lr * g") {
        Optimizer opt({OptimizerKind::sgd, 0.9, 0.999, 1e-8, 0.0});
        auto s = quadratic_store({1.0, -2.0});
        opt.step(s, {{"w", ad::Tensor::vector({0.5, 4.0})}}, 0.1);
        CHECK(s.trainable.at("w") == ad::Tensor::vector({1.0 - 0.1 * 0.5, -2.0 - 0.1 * 4.0}));
    }
    SUBCASE("adamw first step moves by lr against the gradient sign, plus decay") {
        Optimizer opt;
        auto s = quadratic_store({1.0, -2.0});
        opt.step(s, {{"w", ad::Tensor::vector({0.5, -4.0})}}, 0.01);
        const auto& w = s.trainable.at("w");
        CHECK(w[0] == doctest::Approx(1.0 * (1 - 0.01 * 0.01) - 0.01).epsilon(1e-6));
        CHECK(w[1] == doctest::Approx(-2.0 * (1 - 0.01 * 0.01) + 0.01).epsilon(1e-6));
        CHECK(opt.steps("w") == 1);
        opt.reset({"w"});
        CHECK_FALSE(opt.has_state("w"));
    }
    SUBCASE("parameters without gradients are untouched") {
        Optimizer opt;
        auto s = quadratic_store({1.0});
        s.trainable.emplace("v", ad::Tensor::vector({3.0}));
        opt.step(s, {{"w", ad::Tensor::vector({1.0})}}, 0.1);
        CHECK(s.trainable.at("v")[0] == 3.0);
        CHECK_FALSE(opt.has_state("v"));
    }
}

TEST_CASE("one SGD step on a quadratic client is exact") {
    Trainee t;
    t.model.store = quadratic_store({1.0, 2.0, -1.0});
    t.optimizer = Optimizer({OptimizerKind::sgd, 0.9, 0.999, 1e-8, 0.0});
    Quadratic q(ad::Tensor::vector({0.5, 0.0, 1.0}));
    const auto r = train_steps(t, q, 1, 0.1);
    CHECK(r.steps == 1);
    const auto& w = t.model.store.trainable.at("w");
    CHECK(w[0] == 1.0 - 0.1 * 0.5);
    CHECK(w[1] == 2.0 - 0.1 * 2.0);
    CHECK(w[2] == -1.0 - 0.1 * -2.0);
}

TEST_CASE("local training leaves frozen bases untouched") {
    auto fed = small_federation(kThree, 8, 6, 3);
    auto& c = fed.clients[1];
    const auto frozen = c.fl.model.store.frozen;
    const auto before = c.fl.model.store.trainable;
    const auto r = local_train(c, 3, 1e-2);
    CHECK(r.steps == 3);
    for (const auto& [name, t] : frozen) CHECK(c.fl.model.store.frozen.at(name) == t);
    bool moved = false;
    for (const auto& [name, t] : before) moved |= !(c.fl.model.store.trainable.at(name) == t);
    CHECK(moved);
}

TEST_CASE("reported per-task losses equal a replay of the drawn batches") {
    auto fed = small_federation(kThree, 10, 7, 4);
    auto& c = fed.clients[0];
    fixtures::randomize_trainable(c.fl.model.store, 2, 0.1);
    auto replay_rng = c.fl.rng;
    const auto r = local_train(c, 4, 0.0);
    const auto& obj = dynamic_cast<const ModelObjective&>(*c.objective);
    std::map<std::string, double> sum;
    std::map<std::string, std::size_t> count;
    for (int k = 0; k < 4; ++k) {
        const auto lb = model::task_loss_batch(c.fl.model, obj.draw(replay_rng), false);
        for (const auto& [task, s] : lb.per_task) {
            sum[task] += s.loss * static_cast<double>(s.count);
            count[task] += s.count;
        }
    }
    REQUIRE(r.per_task.size() == sum.size());
    for (const auto& [task, s] : r.per_task) {
        CHECK(s.count == count[task]);
        CHECK(s.loss == doctest::Approx(sum[task] / static_cast<double>(count[task])).epsilon(1e-12));
    }
}

TEST_CASE("non-finite loss aborts the round") {
    class Bad : public LocalObjective {
    public:
        model::LossResult evaluate(const model::ClientView&, std::mt19937_64&) const override {
            model::LossResult r;
            r.loss = std::numeric_limits<double>::quiet_NaN();
            return r;
        }
        std::size_t size() const override { return 1; }
    } bad;
    Trainee t;
    t.model.id = 7;
    try {
        train_steps(t, bad, 1, 0.1, 12);
        FAIL("expected abort");
    } catch (const RoundAborted& e) {
        CHECK(e.round() == 12);
        CHECK(e.client() == 7);
    }
}

TEST_CASE("aggregation oracles") {
    model::BlockPartition p;
    p.add_block({"a"}, {"a.x", "a.y"});
    p.add_block({"b"}, {"b.x"});
    p.add_block({"c"}, {"c.x"});
    p.register_client(0, {{"a"}, {"b"}}, {});
    p.register_client(1, {{"a"}}, {});
    p.register_client(2, {{"a"}, {"b"}}, {});
    model::ParamStore server;
    server.trainable = {{"a.x", ad::Tensor::vector({0, 0})}, {"a.y", ad::Tensor::vector({9})},
                        {"b.x", ad::Tensor::vector({7, 7})}, {"c.x", ad::Tensor::vector({3})}};
    auto client = [](double ax, double ay, double bx) {
        model::ParamStore s;
        s.trainable = {{"a.x", ad::Tensor::vector({ax, -ax})}, {"a.y", ad::Tensor::vector({ay})},
                       {"b.x", ad::Tensor::vector({bx, 2 * bx})}};
        return s;
    };
    auto s0 = client(1.0, 1.0, 1.0), s1 = client(5.0, 5.0, 0.0), s2 = client(3.0, 3.0, 5.0);

    SUBCASE("single owner copies exactly") {
        auto srv = server;
        const auto rep = aggregate_components(srv, {{0, &s0, 3.0}}, p);
        CHECK(srv.trainable.at("b.x") == s0.trainable.at("b.x"));
        CHECK(srv.trainable.at("a.y") == s0.trainable.at("a.y"));
        CHECK(rep.blocks.at({"c"}).touched == false);
    }
    SUBCASE("weights 2 and 6 on values 1 and 5 give 4") {
        auto srv = server;
        aggregate_components(srv, {{0, &s0, 2.0}, {1, &s1, 6.0}}, p);
        CHECK(srv.trainable.at("a.y")[0] == 4.0);
        CHECK(srv.trainable.at("a.x") == ad::Tensor::vector({4.0, -4.0}));
        CHECK(srv.trainable.at("b.x") == s0.trainable.at("b.x"));
    }
    SUBCASE("untouched blocks stay bit-identical and weights sum to one") {
        auto srv = server;
        const auto rep = aggregate_components(srv, {{2, &s2, 1.0}, {1, &s1, 4.0}}, p);
        CHECK(srv.trainable.at("c.x") == server.trainable.at("c.x"));
        CHECK(rep.blocks.at({"c"}).owners == 0);
        CHECK(rep.blocks.at({"a"}).owners == 2);
        CHECK(std::abs(rep.blocks.at({"a"}).weight_sum - 1.0) < 1e-12);
        CHECK(rep.touched() == 2);
    }
    SUBCASE("order invariance") {
        auto x = server, y = server;
        aggregate_components(x, {{0, &s0, 2.0}, {1, &s1, 3.0}, {2, &s2, 7.0}}, p);
        aggregate_components(y, {{2, &s2, 7.0}, {0, &s0, 2.0}, {1, &s1, 3.0}}, p);
        for (const auto& [n, t] : x.trainable) CHECK(y.trainable.at(n) == t);
    }
    SUBCASE("shape drift is an error and leaves the server intact") {
        auto srv = server;
        auto bad = client(1.0, 1.0, 1.0);
        bad.trainable.at("b.x") = ad::Tensor::vector({1, 2, 3});
        CHECK_THROWS_AS(aggregate_components(srv, {{1, &s1, 1.0}, {2, &bad, 1.0}}, p), std::invalid_argument);
        for (const auto& [n, t] : server.trainable) CHECK(srv.trainable.at(n) == t);
    }
    SUBCASE("duplicate uploads are rejected") {
        auto srv = server;
        CHECK_THROWS_AS(aggregate_components(srv, {{0, &s0, 1.0}, {0, &s0, 1.0}}, p), std::invalid_argument);
    }
}

TEST_CASE("equal weights give the brute-force coordinate mean") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0, 1);
    model::BlockPartition p;
    p.add_block({"b"}, {"b.w"});
    model::ParamStore server;
    server.trainable.emplace("b.w", ad::Tensor({4, 5}, 0.0));
    std::vector<model::ParamStore> stores(4);
    std::vector<Upload> ups;
    for (std::size_t i = 0; i < 4; ++i) {
        p.register_client(i, {{"b"}}, {});
        ad::Tensor t({4, 5});
        for (auto& v : t.data()) v = n(rng);
        stores[i].trainable.emplace("b.w", t);
    }
    for (std::size_t i = 0; i < 4; ++i) ups.push_back({i, &stores[i], 10.0});
    aggregate_components(server, ups, p);
    for (std::size_t k = 0; k < 20; ++k) {
        double mean = 0.0;
        for (const auto& s : stores) mean += s.trainable.at("b.w")[k];
        mean /= 4.0;
        CHECK(std::abs(server.trainable.at("b.w")[k] - mean) < 1e-12);
    }
}

TEST_CASE("broadcast reaches every client") {
    auto fed = small_federation(kThree, 6, 4, 5);
    fixtures::randomize_trainable(fed.server.store, 8);
    broadcast(fed.server.store, fed.clients, fed.server.partition);
    for (const auto& c : fed.clients) {
        const auto& v = c.fl.model;
        for (const auto& name : fed.server.partition.names_of(v.blocks))
            CHECK(v.store.trainable.at(name) == fed.server.store.trainable.at(name));
        CHECK(v.store.trainable.size() == fed.server.partition.names_of(v.blocks).size());
    }
    const auto shared = model::layout::mix_block(model::Side::mote, model::kShared);
    const auto bytes0 = model::encode_checkpoint(model::collect_blocks(fed.clients[0].fl.model.store, fed.server.partition, {shared}));
    const auto bytes2 = model::encode_checkpoint(model::collect_blocks(fed.clients[2].fl.model.store, fed.server.partition, {shared}));
    CHECK(bytes0 == bytes2);
    CHECK_FALSE(fed.clients[2].fl.model.store.trainable.count("dec.img_cls.W1"));
}

TEST_CASE("upload bytes are the encoded owned blocks") {
    auto fed = small_federation(kThree, 6, 4, 6);
    for (const auto& c : fed.clients) {
        std::size_t floats = 0;
        for (const auto& [_, t] : c.fl.model.store.trainable) floats += t.size();
        CHECK(upload_bytes(c, fed.server.partition) > floats * sizeof(double));
    }
    CHECK(upload_bytes(fed.clients[1], fed.server.partition) > upload_bytes(fed.clients[2], fed.server.partition));
}

TEST_CASE("run_fl edge cases") {
    RoundConfig cfg;
    cfg.local_iters = 2;
    cfg.batch_size = 5;
    cfg.lr = {1e-2, 1e-2, 0};

    SUBCASE("zero rounds leave the model unchanged") {
        auto fed = small_federation(kThree, 6, 5, 7);
        const auto before = fed.server.store.trainable;
        cfg.rounds = 0;
        cfg.clients_per_round = 3;
        const auto stats = run_fl(fed, cfg, FlMode::fedavg);
        CHECK(stats.rounds == 0);
        for (const auto& [n, t] : before) CHECK(fed.server.store.trainable.at(n) == t);
    }
    SUBCASE("a single client: fedavg and local trajectories coincide") {
        const std::vector<ClientConfig> one = {{0, {"img", "txt"}, {"img_cls", "txt_gen"}}};
        auto a = small_federation(one, 8, 5, 8);
        auto b = small_federation(one, 8, 5, 8);
        cfg.rounds = 4;
        cfg.clients_per_round = 1;
        run_fl(a, cfg, FlMode::fedavg);
        run_fl(b, cfg, FlMode::local);
        for (const auto& [n, t] : a.clients[0].fl.model.store.trainable)
            CHECK(b.clients[0].fl.model.store.trainable.at(n) == t);
    }
    SUBCASE("identical clients with full batches match centralised training for one step") {
        const std::vector<ClientConfig> two = {{0, {"img"}, {"img_cls"}}, {1, {"img"}, {"img_cls"}}};
        const OptimizerConfig sgd{OptimizerKind::sgd, 0.9, 0.999, 1e-8, 0.0};
        auto fed = small_federation(two, 6, 100, 9, sgd, true);
        const std::vector<ClientConfig> solo = {{0, {"img"}, {"img_cls"}}};
        auto central = small_federation(solo, 6, 100, 9, sgd, true);
        cfg.rounds = 1;
        cfg.local_iters = 1;
        cfg.clients_per_round = 2;
        cfg.batch_size = 100;
        run_fl(fed, cfg, FlMode::fedavg);
        train_steps(central.clients[0].fl, *central.clients[0].objective, 1, cfg.lr.at(0));
        for (const auto& [n, t] : central.clients[0].fl.model.store.trainable) {
            const auto& got = fed.server.store.trainable.at(n);
            for (std::size_t k = 0; k < t.size(); ++k) CHECK(std::abs(got[k] - t[k]) < 1e-12);
        }
    }
    SUBCASE("local mode never touches the server") {
        auto fed = small_federation(kThree, 6, 5, 10);
        const auto before = fed.server.store.trainable;
        cfg.rounds = 2;
        cfg.clients_per_round = 2;
        const auto stats = run_fl(fed, cfg, FlMode::local);
        CHECK(stats.upload_bytes == 0);
        for (const auto& [n, t] : before) CHECK(fed.server.store.trainable.at(n) == t);
    }
}
