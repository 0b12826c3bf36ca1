// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "taplab/exp/config.hpp"
#include "taplab/exp/runner.hpp"
#include "taplab/exp/synth.hpp"

using namespace taplab;
using namespace taplab::exp;
namespace fs = std::filesystem;

namespace {

const char* kTiny = R"(
name: tiny
seed: 3
mode: tap
model:
  d_model: 6
  ffn_dim: 8
  vocab_size: 5
  generation_length: 2
  lora: {encoder_rank: 2, backbone_attention_rank: 2, expert_rank: 2}
  modalities:
    - {name: img, kind: vector-image, input_dim: 4}
    - {name: txt, kind: token-text, seq_len: 3}
  tasks:
    - {name: img_cls, kind: classification, modality: img, classes: 3}
    - {name: img_rec, kind: reconstruction, modality: img}
    - {name: txt_gen, kind: sequence-generation, modality: txt}
federation:
  rounds: 3
  local_iters: 2
  clients_per_round: 2
  batch_size: 8
  lr: {initial: 0.01, peak: 0.02, warmup_rounds: 1}
tap:
  margins: {img_cls: 0.01, img_rec: 0.005, txt_gen: 0.01}
  kd: {temperature: 1.0, beta: 0.5, post_iters: 2}
data:
  train_per_client: 12
  val_per_client: 6
clients:
  - {tasks: [img_cls, img_rec]}
  - {tasks: [img_cls, txt_gen]}
  - {tasks: [txt_gen]}
)";

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("taplab_test_" + name);
    fs::remove_all(p);
    return p;
}

ExperimentConfig tiny(Mode mode, const std::string& out) {
    auto c = parse_config(kTiny);
    c.mode = mode;
    c.output_dir = out;
    return c;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<nlohmann::json> records(const fs::path& dir) {
    std::vector<nlohmann::json> out;
    std::ifstream in(dir / "events.jsonl");
    std::string line;
    while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
    return out;
}

SynthDatasetSpec dense_cls() {
    SynthDatasetSpec s;
    s.task = "cls";
    s.kind = model::TaskKind::classification;
    s.modality = model::ModalityKind::dense;
    s.input_dim = 5;
    s.classes = 3;
    s.label_skew = 0.6;
    s.center_shift = 0.8;
    s.train_per_client = 40;
    s.val_per_client = 10;
    s.seed = 7;
    return s;
}

bool same(const std::vector<model::Sample>& a, const std::vector<model::Sample>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].task != b[i].task || a[i].features != b[i].features || a[i].tokens != b[i].tokens ||
            a[i].label != b[i].label || a[i].target != b[i].target || a[i].next_tokens != b[i].next_tokens)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("same seed gives identical datasets") {
    for (auto kind : {model::TaskKind::classification, model::TaskKind::reconstruction,
                      model::TaskKind::sequence_generation}) {
        auto s = dense_cls();
        s.kind = kind;
        if (kind == model::TaskKind::sequence_generation) {
            s.modality = model::ModalityKind::tokens;
            s.seq_len = 4;
            s.vocab = 6;
            s.generation_length = 2;
        }
        const auto a = synth_dataset(s, 3), b = synth_dataset(s, 3);
        for (std::size_t i = 0; i < 3; ++i) {
            CHECK(same(a[i].train, b[i].train));
            CHECK(same(a[i].val, b[i].val));
        }
        s.seed = 8;
        CHECK_FALSE(same(a[0].train, synth_dataset(s, 1)[0].train));
    }
}

TEST_CASE("adding clients leaves earlier clients unchanged") {
    const auto a = synth_dataset(dense_cls(), 2), b = synth_dataset(dense_cls(), 4);
    CHECK(same(a[1].train, b[1].train));
    CHECK(same(a[0].val, b[0].val));
}

TEST_CASE("zero skew and shift give identically distributed clients") {
    auto s = dense_cls();
    s.label_skew = 0.0;
    s.center_shift = 0.0;
    s.train_per_client = 6000;
    const auto d = synth_dataset(s, 2);
    CHECK(label_proportions(3, 0.0, 0) == label_proportions(3, 0.0, 1));
    // Per-class feature means agree across clients up to sampling error.
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<std::vector<double>> mean(2, std::vector<double>(5, 0.0));
        std::vector<double> n(2, 0.0);
        for (std::size_t i = 0; i < 2; ++i) {
            for (const auto& x : d[i].train) {
                if (x.label != c) continue;
                n[i] += 1;
                for (std::size_t k = 0; k < 5; ++k) mean[i][k] += x.features[k];
            }
            CHECK(std::abs(n[i] / 6000.0 - 1.0 / 3.0) < 0.03);
        }
        for (std::size_t k = 0; k < 5; ++k) CHECK(std::abs(mean[0][k] / n[0] - mean[1][k] / n[1]) < 0.15);
    }
}

TEST_CASE("skewed clients favour their dominant class") {
    auto p = label_proportions(4, 0.6, 5);
    CHECK(p[1] == doctest::Approx(0.7));
    CHECK(p[0] == doctest::Approx(0.1));
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("well separated classes are linearly separable on validation data") {
    SynthDatasetSpec s;
    s.task = "probe";
    s.input_dim = 2;
    s.classes = 2;
    s.centers = {{3.0, 0.0}, {-3.0, 0.0}};
    s.noise_std = 1.0;
    s.train_per_client = 400;
    s.val_per_client = 2000;
    const auto d = synth_dataset(s, 1)[0];
    // Logistic-regression probe trained by plain gradient descent.
    double w0 = 0.0, w1 = 0.0, b = 0.0;
    for (int it = 0; it < 200; ++it) {
        double g0 = 0.0, g1 = 0.0, gb = 0.0;
        for (const auto& x : d.train) {
            const double y = x.label == 0 ? 1.0 : 0.0;
            const double p = 1.0 / (1.0 + std::exp(-(w0 * x.features[0] + w1 * x.features[1] + b)));
            g0 += (p - y) * x.features[0];
            g1 += (p - y) * x.features[1];
            gb += p - y;
        }
        const double n = static_cast<double>(d.train.size());
        w0 -= 0.1 * g0 / n;
        w1 -= 0.1 * g1 / n;
        b -= 0.1 * gb / n;
    }
    std::size_t hit = 0;
    for (const auto& x : d.val) hit += ((w0 * x.features[0] + w1 * x.features[1] + b > 0) == (x.label == 0));
    CHECK(static_cast<double>(hit) / static_cast<double>(d.val.size()) > 0.95);
}

TEST_CASE("reconstruction targets equal inputs and token samples are well formed") {
    auto s = dense_cls();
    s.kind = model::TaskKind::reconstruction;
    const auto rec = synth_dataset(s, 1);
    for (const auto& x : rec[0].train) CHECK(x.target == x.features);
    s.kind = model::TaskKind::sequence_generation;
    s.modality = model::ModalityKind::tokens;
    s.seq_len = 4;
    s.vocab = 6;
    s.generation_length = 3;
    const auto gen = synth_dataset(s, 1);
    for (const auto& x : gen[0].train) {
        CHECK(x.tokens.size() == 4);
        CHECK(x.next_tokens.size() == 3);
        CHECK(x.features.size() == 24);
        for (int t : x.next_tokens) CHECK((t >= 0 && t < 6));
    }
}

TEST_CASE("dataset specs outside their bounds are rejected") {
    auto s = dense_cls();
    s.label_skew = 1.0;
    CHECK_THROWS_AS(synth_dataset(s, 1), std::invalid_argument);
    s = dense_cls();
    s.center_shift = 5.0;
    CHECK_THROWS_AS(synth_dataset(s, 1), std::invalid_argument);
    s = dense_cls();
    s.centers = {{1.0}};
    CHECK_THROWS_AS(synth_dataset(s, 1), std::invalid_argument);
    s = dense_cls();
    s.kind = model::TaskKind::sequence_generation;
    CHECK_THROWS_AS(synth_dataset(s, 1), std::invalid_argument);
}

TEST_CASE("shipped default config carries the reference hyperparameters") {
    const auto c = load_config(TAPLAB_SOURCE_DIR "/configs/desk_default.yaml");
    CHECK_NOTHROW(c.validate());
    CHECK(c.rounds.rounds == 200);
    CHECK(c.rounds.local_iters == 20);
    CHECK(c.rounds.batch_size == 128);
    CHECK(c.rounds.clients_per_round == 2);
    CHECK(c.model.ranks.encoder == 8);
    CHECK(c.model.ranks.backbone_mix == 16);
    CHECK(c.model.ranks.backbone_expert == 4);
    CHECK(c.lora_dropout == 0.3);
    CHECK(c.kd.temperature == 1.0);
    CHECK(c.kd.default_beta == 2e-3);
    CHECK(c.kd.post_iters == 50);
    CHECK(c.disentangle_weight == 0.5);
    CHECK(c.rounds.lr.initial == 1e-4);
    CHECK(c.rounds.lr.peak == 3e-4);
    CHECK(c.rounds.lr.warmup_rounds == 20);
    CHECK(c.optimizer.kind == fed::OptimizerKind::adamw);
    CHECK(c.optimizer.weight_decay == 0.01);
    CHECK(c.margins.at("img_cls") == 0.01);
    CHECK(c.margins.at("img_rec") == 0.005);
    CHECK(c.margins.at("txt_cls") == 0.005);
    CHECK(c.margins.at("txt_gen") == 0.01);
    CHECK(c.clients.size() == 6);
    CHECK(c.model.modalities.size() == 2);
    CHECK(c.model.tasks.size() == 4);
}

TEST_CASE("default topology has shared and single-owner blocks") {
    const auto c = load_config(TAPLAB_SOURCE_DIR "/configs/desk_default.yaml");
    std::map<model::BlockId, std::size_t> owners;
    for (const auto& cc : c.client_configs())
        for (const auto& b : model::client_block_rule(c.model, cc)) ++owners[b];
    bool single = false, shared = false;
    for (const auto& [_, n] : owners) {
        single |= n == 1;
        shared |= n > 1;
    }
    CHECK(single);
    CHECK(shared);
}

TEST_CASE("config round-trips through its dump") {
    const auto a = load_config(TAPLAB_SOURCE_DIR "/configs/desk_default.yaml");
    const auto text = dump_config(a);
    const auto b = parse_config(text);
    CHECK(dump_config(b) == text);
    CHECK(b.model.seed == a.model.seed);
    CHECK(b.rounds.seed == a.rounds.seed);
}

TEST_CASE("config errors are reported") {
    CHECK_THROWS_WITH_AS(parse_config("federation: {roundz: 3}"), doctest::Contains("roundz"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("mode: sideways"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("federation: {rounds: -1}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_config("tap: {margins: {img_cls: abc}}"), std::invalid_argument);
    CHECK_THROWS_AS(load_config("/nonexistent/config.yaml"), std::runtime_error);

    auto c = parse_config(kTiny);
    c.margins.erase("txt_gen");
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("no margin"), std::invalid_argument);
    c.mode = Mode::fedavg;
    CHECK_NOTHROW(c.validate());

    c = parse_config(kTiny);
    c.rounds.batch_size = 13;
    CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("batch size"), std::invalid_argument);

    c = parse_config(kTiny);
    c.clients[0].tasks.push_back("nope");
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("margins accept infinities and per-client overrides") {
    auto c = parse_config(std::string(kTiny) + "\n");
    auto text = std::string(kTiny);
    text.replace(text.find("{img_cls: 0.01,"), 15, "{img_cls: .inf,");
    c = parse_config(text);
    CHECK(std::isinf(c.margin(0, "img_cls")));
    text.replace(text.find("- {tasks: [txt_gen]}"), 20, "- {tasks: [txt_gen], margins: {txt_gen: -inf}}");
    c = parse_config(text);
    CHECK(c.margin(2, "txt_gen") == -std::numeric_limits<double>::infinity());
    CHECK(c.margin(1, "txt_gen") == 0.01);
}

TEST_CASE("set_seed re-derives every dependent seed") {
    auto a = parse_config(kTiny);
    auto b = a;
    b.set_seed(4);
    CHECK(b.seed == 4);
    CHECK(b.model.seed != a.model.seed);
    CHECK(b.rounds.seed != a.rounds.seed);
    CHECK(b.dataset_spec("img_cls").seed != a.dataset_spec("img_cls").seed);
    b.set_seed(3);
    CHECK(b.model.seed == a.model.seed);
    CHECK(b.run_id() == "tiny-tap-seed3");
}

TEST_CASE("local mode with no rounds and no post iterations evaluates the initial model") {
    const auto out = scratch("initial");
    auto c = tiny(Mode::local, out.string());
    c.rounds.rounds = 0;
    c.kd.post_iters = 0;
    const auto r = run_config(c);
    const auto data = build_client_data(c);
    auto server = model::build_server_model(c.model);
    for (const auto& f : r.finals) {
        const auto view = model::derive_client_view(server, c.client_configs()[f.client]);
        std::vector<const model::Sample*> val;
        for (const auto& s : data[f.client].val) val.push_back(&s);
        const auto e = model::evaluate(view, val).at(f.task);
        CHECK(f.loss == e.loss);
        CHECK(f.metric == e.metric);
    }
    for (const auto& j : records(r.dir)) CHECK(j["type"] != "loss");
    CHECK(r.finals.size() == 5);
    fs::remove_all(out);
}

TEST_CASE("tap with infinite margins and no distillation reproduces local training") {
    const auto out = scratch("nesting");
    auto lc = tiny(Mode::local, out.string());
    auto tc = tiny(Mode::tap_nokd, out.string());
    for (auto& [_, m] : tc.margins) m = std::numeric_limits<double>::infinity();
    const auto l = run_config(lc), t = run_config(tc);
    REQUIRE(l.finals.size() == t.finals.size());
    for (std::size_t i = 0; i < l.finals.size(); ++i) {
        CHECK(l.finals[i].loss == t.finals[i].loss);
        CHECK(l.finals[i].metric == t.finals[i].metric);
    }
    CHECK(l.fl_steps == t.personal_steps);
    for (const auto& [_, per_task] : t.replacements)
        for (const auto& [__, n] : per_task) CHECK(n == 0);
    fs::remove_all(out);
}

TEST_CASE("fedavg-post adds exactly P local iterations per client") {
    const auto out = scratch("post");
    const auto f = run_config(tiny(Mode::fedavg, out.string()));
    const auto p = run_config(tiny(Mode::fedavg_post, out.string()));
    for (const auto& [client, steps] : f.fl_steps) CHECK(p.fl_steps.at(client) == steps + 2);
    CHECK(p.upload_bytes_per_round == f.upload_bytes_per_round);
    fs::remove_all(out);
}

TEST_CASE("tap uploads exactly what fedavg uploads each round") {
    const auto out = scratch("bytes");
    const auto f = run_config(tiny(Mode::fedavg, out.string()));
    const auto t = run_config(tiny(Mode::tap, out.string()));
    CHECK(f.upload_bytes_per_round.size() == 3);
    CHECK(f.upload_bytes_per_round == t.upload_bytes_per_round);
    for (auto b : f.upload_bytes_per_round) CHECK(b > 0);
    const auto l = run_config(tiny(Mode::local, out.string()));
    for (auto b : l.upload_bytes_per_round) CHECK(b == 0);
    fs::remove_all(out);
}

TEST_CASE("identical config and seed give identical summaries") {
    const auto out = scratch("repro");
    const auto a = run_config(tiny(Mode::tap, out.string()));
    const auto first = read_file(a.dir / "summary.csv");
    const auto events = read_file(a.dir / "events.jsonl");
    const auto b = run_config(tiny(Mode::tap, out.string()));
    CHECK(read_file(b.dir / "summary.csv") == first);
    CHECK(read_file(b.dir / "events.jsonl") == events);
    auto other = tiny(Mode::tap, out.string());
    other.set_seed(9);
    const auto c = run_config(other);
    CHECK(read_file(c.dir / "summary.csv") != first);
    fs::remove_all(out);
}

TEST_CASE("every record carries run id, seed and round") {
    const auto out = scratch("records");
    const auto r = run_config(tiny(Mode::tap, out.string()));
    std::set<std::string> types;
    for (const auto& j : records(r.dir)) {
        CHECK(j["run_id"] == "tiny-tap-seed3");
        CHECK(j["seed"] == 3);
        CHECK(j.contains("round"));
        types.insert(j["type"].get<std::string>());
    }
    for (const char* t : {"header", "round", "loss", "upload", "aggregate", "replacement", "post", "eval", "end"})
        CHECK(types.count(t));
    CHECK(fs::exists(r.dir / "config.yaml"));
    CHECK(parse_config(read_file(r.dir / "config.yaml")).run_id() == r.run_id);
    fs::remove_all(out);
}

TEST_CASE("summary means equal hand averages of the final eval records") {
    const auto out = scratch("summary");
    const auto r = run_config(tiny(Mode::tap, out.string()));
    std::map<std::string, std::vector<double>> loss, metric;
    std::map<std::size_t, std::vector<double>> by_client;
    for (const auto& j : records(r.dir)) {
        if (j["type"] != "eval" || !j["final"].get<bool>() || j["model"] != "personal") continue;
        loss[j["task"]].push_back(j["loss"]);
        metric[j["task"]].push_back(j["metric"]);
        by_client[j["client"]].push_back(j["loss"]);
    }
    for (const auto& [task, l] : loss) {
        const auto* row = r.summary.find("mean", task);
        REQUIRE(row);
        double m = 0.0;
        for (double v : l) m += v / static_cast<double>(l.size());
        CHECK(row->loss == doctest::Approx(m).epsilon(1e-12));
        double a = 0.0;
        for (double v : metric[task]) a += v / static_cast<double>(l.size());
        CHECK(row->metric == doctest::Approx(a).epsilon(1e-12));
        CHECK(row->count == l.size());
    }
    for (const auto& [c, l] : by_client) {
        double m = 0.0;
        for (double v : l) m += v / static_cast<double>(l.size());
        CHECK(r.summary.client_loss.at(c) == doctest::Approx(m).epsilon(1e-12));
    }
    // img_rec has a single owner.
    CHECK(r.summary.find("std", "img_rec")->loss == 0.0);
    CHECK(r.summary.find("std", "img_rec")->count == 1);
    CHECK(r.summary.find("mean", "avg_classification")->metric_name == "accuracy");
    CHECK_FALSE(r.summary.find("mean", "avg_generation")->has_metric);

    const auto csv = read_file(r.dir / "summary.csv");
    CHECK(csv.rfind("client,task,kind,metric_name,metric,loss,count\n", 0) == 0);
    CHECK(emit_metrics(r.dir).rows.size() == r.summary.rows.size());
    CHECK(read_file(r.dir / "summary.csv") == csv);
    fs::remove_all(out);
}

TEST_CASE("replacement counters are cumulative and non-decreasing") {
    const auto out = scratch("counters");
    auto c = tiny(Mode::tap, out.string());
    for (auto& [_, m] : c.margins) m = -std::numeric_limits<double>::infinity();
    c.rounds.rounds = 4;
    const auto r = run_config(c);
    std::map<std::pair<std::size_t, std::string>, std::size_t> last;
    std::size_t fired = 0;
    for (const auto& j : records(r.dir)) {
        if (j["type"] != "replacement") continue;
        const auto key = std::make_pair(j["client"].get<std::size_t>(), j["task"].get<std::string>());
        const auto cum = j["cumulative"].get<std::size_t>();
        CHECK(cum >= last[key]);
        CHECK(cum - last[key] == (j["fired"].get<bool>() ? 1u : 0u));
        last[key] = cum;
        fired += j["fired"].get<bool>();
    }
    CHECK(fired > 0);
    for (const auto& [key, n] : last) CHECK(r.replacements.at(key.first).at(key.second) == n);
    const auto csv = read_file(r.dir / "replacements.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') > 1);
    fs::remove_all(out);
}

TEST_CASE("one client gives zero spread") {
    const auto out = scratch("single");
    auto c = tiny(Mode::fedavg, out.string());
    c.clients.resize(1);
    c.rounds.clients_per_round = 1;
    const auto r = run_config(c);
    for (const auto& row : r.summary.rows) {
        if (row.client != "std") continue;
        CHECK(row.loss == 0.0);
        if (row.has_metric) CHECK(row.metric == 0.0);
    }
    fs::remove_all(out);
}

TEST_CASE("missing runs are reported") {
    CHECK_THROWS_AS(resolve_run("no-such-run", "/nonexistent"), std::runtime_error);
    CHECK_THROWS_AS(emit_metrics("/nonexistent/run"), std::runtime_error);
    const auto out = scratch("resolve");
    const auto r = run_config(tiny(Mode::local, out.string()));
    CHECK(resolve_run(r.run_id, out.string()) == r.dir);
    CHECK(resolve_run(r.dir.string()) == r.dir);
    fs::remove_all(out);
}

TEST_CASE("bound config parses with cap and explicit step sizes") {
    auto b = parse_bound_config("bound: {R: 3, sigma: 0.1, zeta: 1, tau: 5, T: 100, trials: 4, alpha: cap}");
    CHECK(b.problem.R == 3);
    CHECK(b.alpha == 0.0);
    CHECK(b.diminishing);
    b = parse_bound_config("bound: {alpha: 0.001, schedule: constant}");
    CHECK(b.alpha == 0.001);
    CHECK_FALSE(b.diminishing);
    CHECK_THROWS_AS(parse_bound_config("bound: {T: 2}"), std::invalid_argument);
    CHECK_THROWS_AS(parse_bound_config("name: x"), std::invalid_argument);
    CHECK_THROWS_AS(parse_bound_config("bound: {schedule: wavy}"), std::invalid_argument);
    CHECK_NOTHROW(load_bound_config(TAPLAB_SOURCE_DIR "/configs/bound_default.yaml"));
}
