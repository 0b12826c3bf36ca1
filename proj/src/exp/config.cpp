// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/exp/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

namespace taplab::exp {

namespace {

[[noreturn]] void fail(const YAML::Node& node, const std::string& what) {
    const auto m = node.Mark();
    if (m.is_null()) throw std::invalid_argument("config: " + what);
    throw std::invalid_argument("config line " + std::to_string(m.line + 1) + ": " + what);
}

void check_keys(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!node) return;
    if (!node.IsMap()) fail(node, "'" + where + "' must be a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            fail(kv.first, "unknown key '" + key + "' in '" + where + "'");
    }
}

double to_double(const YAML::Node& n) {
    const auto s = n.as<std::string>();
    if (s == "inf" || s == "+inf" || s == ".inf" || s == "+.inf" || s == ".Inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf" || s == "-.inf" || s == "-.Inf") return -std::numeric_limits<double>::infinity();
    try {
        return n.as<double>();
    } catch (const YAML::Exception&) {
        fail(n, "expected a number, got '" + s + "'");
    }
}

template <typename T>
void read(const YAML::Node& parent, const char* key, T& out) {
    const auto n = parent[key];
    if (!n) return;
    try {
        if constexpr (std::is_same_v<T, double>) {
            out = to_double(n);
        } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (n.as<std::string>().find('-') != std::string::npos) fail(n, std::string("'") + key + "' must be >= 0");
            out = n.as<T>();
        } else {
            out = n.as<T>();
        }
    } catch (const YAML::Exception&) {
        fail(n, std::string("bad value for '") + key + "'");
    }
}

std::map<std::string, double> read_task_map(const YAML::Node& n, const std::string& where) {
    std::map<std::string, double> out;
    if (!n) return out;
    if (!n.IsMap()) fail(n, "'" + where + "' must map task names to numbers");
    for (const auto& kv : n) out[kv.first.as<std::string>()] = to_double(kv.second);
    return out;
}

std::vector<std::string> read_list(const YAML::Node& n, const std::string& where) {
    std::vector<std::string> out;
    if (!n) return out;
    if (!n.IsSequence()) fail(n, "'" + where + "' must be a list");
    for (const auto& v : n) out.push_back(v.as<std::string>());
    return out;
}

void read_knobs(const YAML::Node& n, DataKnobs& k, const std::string& where) {
    check_keys(n, where, {"train_per_client", "val_per_client", "label_skew", "center_shift", "noise_std",
                          "separation", "concentration", "latent_dim", "tasks"});
    if (!n) return;
    read(n, "train_per_client", k.train_per_client);
    read(n, "val_per_client", k.val_per_client);
    read(n, "label_skew", k.label_skew);
    read(n, "center_shift", k.center_shift);
    read(n, "noise_std", k.noise_std);
    read(n, "separation", k.separation);
    read(n, "concentration", k.concentration);
    read(n, "latent_dim", k.latent_dim);
}

YAML::Node load_text(const std::string& text) {
    try {
        auto root = YAML::Load(text);
        if (root.IsNull()) return YAML::Node(YAML::NodeType::Map);
        if (!root.IsMap()) throw std::invalid_argument("config: top level must be a mapping");
        return root;
    } catch (const YAML::ParserException& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string num(double v) {
    if (std::isinf(v)) return v > 0 ? ".inf" : "-.inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

const char* mode_name(Mode m) {
    switch (m) {
    case Mode::local: return "local";
    case Mode::fedavg: return "fedavg";
    case Mode::fedavg_post: return "fedavg-post";
    case Mode::tap: return "tap";
    case Mode::tap_nokd: return "tap-nokd";
    }
    return "?";
}

Mode parse_mode(const std::string& s) {
    for (auto m : {Mode::local, Mode::fedavg, Mode::fedavg_post, Mode::tap, Mode::tap_nokd})
        if (s == mode_name(m)) return m;
    throw std::invalid_argument("unknown mode '" + s + "' (local|fedavg|fedavg-post|tap|tap-nokd)");
}

bool is_tap(Mode m) { return m == Mode::tap || m == Mode::tap_nokd; }

void ExperimentConfig::validate() const {
    if (name.empty() || name.find('/') != std::string::npos) throw std::invalid_argument("name must be non-empty without '/'");
    model.validate();
    rounds.validate(clients.size());
    kd.validate();
    if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) throw std::invalid_argument("lora dropout must lie in [0, 1)");
    if (!(disentangle_weight >= 0.0)) throw std::invalid_argument("disentangle_weight must be >= 0");
    for (const auto& [task, _] : margins) model.task_index(task);
    for (const auto& [task, _] : kd.beta) model.task_index(task);
    for (const auto& [task, _] : task_data) model.task_index(task);
    for (const auto& [task, m] : margins)
        if (std::isnan(m)) throw std::invalid_argument("margin for '" + task + "' is NaN");

    const auto configs = client_configs();
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const auto tag = "client " + std::to_string(i);
        const auto& c = clients[i];
        if (c.tasks.empty()) throw std::invalid_argument(tag + " has no tasks");
        if (std::set<std::string>(c.tasks.begin(), c.tasks.end()).size() != c.tasks.size())
            throw std::invalid_argument(tag + " lists a task twice");
        for (const auto& t : c.tasks) {
            const auto& ts = model.tasks[model.task_index(t)];
            const auto& mods = configs[i].modalities;
            if (std::find(mods.begin(), mods.end(), ts.modality) == mods.end())
                throw std::invalid_argument(tag + ": task '" + t + "' needs modality '" + ts.modality + "'");
            if (is_tap(mode) && !c.margins.count(t) && !margins.count(t))
                throw std::invalid_argument(tag + ": no margin for task '" + t + "'");
        }
        for (const auto& [t, m] : c.margins) {
            if (std::find(c.tasks.begin(), c.tasks.end(), t) == c.tasks.end())
                throw std::invalid_argument(tag + ": margin for task '" + t + "' it does not hold");
            if (std::isnan(m)) throw std::invalid_argument(tag + ": margin for '" + t + "' is NaN");
        }
        for (const auto& m : c.modalities) model.modality_index(m);
        std::size_t pooled = 0;
        for (const auto& t : c.tasks) pooled += knobs(t).train_per_client;
        if (pooled < rounds.batch_size)
            throw std::invalid_argument(tag + " holds " + std::to_string(pooled) + " training samples, fewer than batch size " +
                                        std::to_string(rounds.batch_size));
    }
    for (const auto& t : model.tasks) dataset_spec(t.name).validate();
}

void ExperimentConfig::set_seed(std::uint64_t s) {
    seed = s;
    model.seed = fed::derive_seed(s, 0, 0x30DE);
    rounds.seed = fed::derive_seed(s, 0, 0x50CC);
}

std::string ExperimentConfig::run_id() const { return name + "-" + mode_name(mode) + "-seed" + std::to_string(seed); }

double ExperimentConfig::margin(std::size_t client, const std::string& task) const {
    const auto& c = clients.at(client);
    if (auto it = c.margins.find(task); it != c.margins.end()) return it->second;
    if (auto it = margins.find(task); it != margins.end()) return it->second;
    throw std::invalid_argument("no margin for client " + std::to_string(client) + " task '" + task + "'");
}

std::vector<model::ClientConfig> ExperimentConfig::client_configs() const {
    std::vector<model::ClientConfig> out;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        model::ClientConfig c{i, clients[i].modalities, clients[i].tasks};
        if (c.modalities.empty()) {
            for (const auto& m : model.modalities) {
                const bool used = std::any_of(c.tasks.begin(), c.tasks.end(), [&](const std::string& t) {
                    return model.tasks[model.task_index(t)].modality == m.name;
                });
                if (used) c.modalities.push_back(m.name);
            }
        }
        out.push_back(std::move(c));
    }
    return out;
}

const DataKnobs& ExperimentConfig::knobs(const std::string& task) const {
    auto it = task_data.find(task);
    return it == task_data.end() ? data : it->second;
}

SynthDatasetSpec ExperimentConfig::dataset_spec(const std::string& task) const {
    const auto& t = model.tasks[model.task_index(task)];
    const auto& m = model.modality_of(t);
    const auto& k = knobs(task);
    SynthDatasetSpec s;
    s.task = task;
    s.kind = t.kind;
    s.modality = m.kind;
    s.input_dim = m.input_dim;
    s.seq_len = m.seq_len;
    s.classes = t.kind == model::TaskKind::classification ? t.output_dim : 0;
    s.vocab = model.vocab_size;
    s.generation_length = model.generation_length;
    s.label_skew = k.label_skew;
    s.center_shift = k.center_shift;
    s.noise_std = k.noise_std;
    s.separation = k.separation;
    s.concentration = k.concentration;
    s.latent_dim = k.latent_dim;
    s.train_per_client = k.train_per_client;
    s.val_per_client = k.val_per_client;
    s.seed = fed::derive_seed(seed, model.task_index(task), 0xD5E7);
    return s;
}

ExperimentConfig parse_config(const std::string& yaml_text) {
    const auto root = load_text(yaml_text);
    check_keys(root, "top level",
               {"name", "seed", "mode", "output_dir", "eval_every", "model", "federation", "tap", "data", "clients"});
    ExperimentConfig c;
    read(root, "name", c.name);
    read(root, "seed", c.seed);
    read(root, "output_dir", c.output_dir);
    read(root, "eval_every", c.eval_every);
    if (root["mode"]) c.mode = parse_mode(root["mode"].as<std::string>());

    const auto m = root["model"];
    check_keys(m, "model", {"d_model", "ffn_dim", "mote_layers", "mome_layers", "vocab_size", "generation_length",
                            "frozen_init_std", "lora", "modalities", "tasks"});
    if (m) {
        read(m, "d_model", c.model.d_model);
        read(m, "ffn_dim", c.model.ffn_dim);
        read(m, "mote_layers", c.model.mote_layers);
        read(m, "mome_layers", c.model.mome_layers);
        read(m, "vocab_size", c.model.vocab_size);
        read(m, "generation_length", c.model.generation_length);
        read(m, "frozen_init_std", c.model.frozen_init_std);
        const auto l = m["lora"];
        check_keys(l, "model.lora", {"encoder_rank", "backbone_attention_rank", "expert_rank", "alpha", "dropout"});
        if (l) {
            read(l, "encoder_rank", c.model.ranks.encoder);
            read(l, "backbone_attention_rank", c.model.ranks.backbone_mix);
            read(l, "expert_rank", c.model.ranks.backbone_expert);
            read(l, "alpha", c.model.lora_alpha);
            read(l, "dropout", c.lora_dropout);
        }
        if (const auto ms = m["modalities"]) {
            if (!ms.IsSequence()) fail(ms, "'model.modalities' must be a list");
            for (const auto& e : ms) {
                check_keys(e, "model.modalities[]", {"name", "kind", "input_dim", "seq_len"});
                model::ModalitySpec s;
                read(e, "name", s.name);
                if (e["kind"]) s.kind = model::parse_modality_kind(e["kind"].as<std::string>());
                read(e, "input_dim", s.input_dim);
                read(e, "seq_len", s.seq_len);
                c.model.modalities.push_back(s);
            }
        }
        if (const auto ts = m["tasks"]) {
            if (!ts.IsSequence()) fail(ts, "'model.tasks' must be a list");
            for (const auto& e : ts) {
                check_keys(e, "model.tasks[]", {"name", "kind", "modality", "classes"});
                model::TaskSpec s;
                read(e, "name", s.name);
                if (e["kind"]) s.kind = model::parse_task_kind(e["kind"].as<std::string>());
                read(e, "modality", s.modality);
                read(e, "classes", s.output_dim);
                c.model.tasks.push_back(s);
            }
        }
    }
    // Derived widths: token inputs are one-hot, reconstruction mirrors its
    // input, generation emits vocabulary logits.
    for (auto& mod : c.model.modalities)
        if (mod.kind == model::ModalityKind::tokens) mod.input_dim = mod.seq_len * c.model.vocab_size;
    for (auto& t : c.model.tasks) {
        if (t.kind == model::TaskKind::reconstruction) {
            auto it = std::find_if(c.model.modalities.begin(), c.model.modalities.end(),
                                   [&](const model::ModalitySpec& s) { return s.name == t.modality; });
            if (it != c.model.modalities.end()) t.output_dim = it->input_dim;
        }
        if (t.kind == model::TaskKind::sequence_generation) t.output_dim = c.model.vocab_size;
    }

    const auto f = root["federation"];
    check_keys(f, "federation", {"rounds", "local_iters", "clients_per_round", "batch_size", "lr", "optimizer"});
    if (f) {
        read(f, "rounds", c.rounds.rounds);
        read(f, "local_iters", c.rounds.local_iters);
        read(f, "clients_per_round", c.rounds.clients_per_round);
        read(f, "batch_size", c.rounds.batch_size);
        const auto lr = f["lr"];
        check_keys(lr, "federation.lr", {"initial", "peak", "warmup_rounds"});
        if (lr) {
            read(lr, "initial", c.rounds.lr.initial);
            read(lr, "peak", c.rounds.lr.peak);
            read(lr, "warmup_rounds", c.rounds.lr.warmup_rounds);
        }
        const auto o = f["optimizer"];
        check_keys(o, "federation.optimizer", {"kind", "weight_decay", "beta1", "beta2", "eps"});
        if (o) {
            if (o["kind"]) c.optimizer.kind = fed::parse_optimizer_kind(o["kind"].as<std::string>());
            read(o, "weight_decay", c.optimizer.weight_decay);
            read(o, "beta1", c.optimizer.beta1);
            read(o, "beta2", c.optimizer.beta2);
            read(o, "eps", c.optimizer.eps);
        }
    }
    c.set_seed(c.seed);

    const auto t = root["tap"];
    check_keys(t, "tap", {"margins", "kd", "disentangle_weight"});
    if (t) {
        c.margins = read_task_map(t["margins"], "tap.margins");
        read(t, "disentangle_weight", c.disentangle_weight);
        const auto kd = t["kd"];
        check_keys(kd, "tap.kd", {"temperature", "beta", "task_beta", "post_iters"});
        if (kd) {
            read(kd, "temperature", c.kd.temperature);
            read(kd, "beta", c.kd.default_beta);
            read(kd, "post_iters", c.kd.post_iters);
            c.kd.beta = read_task_map(kd["task_beta"], "tap.kd.task_beta");
        }
    }

    const auto d = root["data"];
    read_knobs(d, c.data, "data");
    if (d && d["tasks"]) {
        if (!d["tasks"].IsMap()) fail(d["tasks"], "'data.tasks' must map task names to settings");
        for (const auto& kv : d["tasks"]) {
            const auto task = kv.first.as<std::string>();
            if (kv.second["tasks"]) fail(kv.second, "nested 'tasks' in data.tasks." + task);
            DataKnobs k = c.data;
            read_knobs(kv.second, k, "data.tasks." + task);
            c.task_data[task] = k;
        }
    }

    if (const auto cl = root["clients"]) {
        if (!cl.IsSequence()) fail(cl, "'clients' must be a list");
        for (const auto& e : cl) {
            check_keys(e, "clients[]", {"modalities", "tasks", "margins"});
            ClientAssignment a;
            a.modalities = read_list(e["modalities"], "clients[].modalities");
            a.tasks = read_list(e["tasks"], "clients[].tasks");
            a.margins = read_task_map(e["margins"], "clients[].margins");
            c.clients.push_back(std::move(a));
        }
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(slurp(path)); }

std::string dump_config(const ExperimentConfig& c) {
    YAML::Emitter out;
    auto task_map = [&](const std::map<std::string, double>& m) {
        out << YAML::BeginMap;
        for (const auto& [k, v] : m) out << YAML::Key << k << YAML::Value << num(v);
        out << YAML::EndMap;
    };
    auto knobs = [&](const DataKnobs& k) {
        out << YAML::Key << "train_per_client" << YAML::Value << k.train_per_client;
        out << YAML::Key << "val_per_client" << YAML::Value << k.val_per_client;
        out << YAML::Key << "label_skew" << YAML::Value << num(k.label_skew);
        out << YAML::Key << "center_shift" << YAML::Value << num(k.center_shift);
        out << YAML::Key << "noise_std" << YAML::Value << num(k.noise_std);
        out << YAML::Key << "separation" << YAML::Value << num(k.separation);
        out << YAML::Key << "concentration" << YAML::Value << num(k.concentration);
        out << YAML::Key << "latent_dim" << YAML::Value << k.latent_dim;
    };

    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << c.name;
    out << YAML::Key << "seed" << YAML::Value << c.seed;
    out << YAML::Key << "mode" << YAML::Value << mode_name(c.mode);
    out << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
    out << YAML::Key << "eval_every" << YAML::Value << c.eval_every;

    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "d_model" << YAML::Value << c.model.d_model;
    out << YAML::Key << "ffn_dim" << YAML::Value << c.model.ffn_dim;
    out << YAML::Key << "mote_layers" << YAML::Value << c.model.mote_layers;
    out << YAML::Key << "mome_layers" << YAML::Value << c.model.mome_layers;
    out << YAML::Key << "vocab_size" << YAML::Value << c.model.vocab_size;
    out << YAML::Key << "generation_length" << YAML::Value << c.model.generation_length;
    out << YAML::Key << "frozen_init_std" << YAML::Value << num(c.model.frozen_init_std);
    out << YAML::Key << "lora" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "encoder_rank" << YAML::Value << c.model.ranks.encoder;
    out << YAML::Key << "backbone_attention_rank" << YAML::Value << c.model.ranks.backbone_mix;
    out << YAML::Key << "expert_rank" << YAML::Value << c.model.ranks.backbone_expert;
    out << YAML::Key << "alpha" << YAML::Value << num(c.model.lora_alpha);
    out << YAML::Key << "dropout" << YAML::Value << num(c.lora_dropout);
    out << YAML::EndMap;
    out << YAML::Key << "modalities" << YAML::Value << YAML::BeginSeq;
    for (const auto& m : c.model.modalities) {
        out << YAML::Flow << YAML::BeginMap << YAML::Key << "name" << YAML::Value << m.name << YAML::Key << "kind"
            << YAML::Value << model::modality_kind_name(m.kind);
        if (m.kind == model::ModalityKind::dense) out << YAML::Key << "input_dim" << YAML::Value << m.input_dim;
        else out << YAML::Key << "seq_len" << YAML::Value << m.seq_len;
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;
    out << YAML::Key << "tasks" << YAML::Value << YAML::BeginSeq;
    for (const auto& t : c.model.tasks) {
        out << YAML::Flow << YAML::BeginMap << YAML::Key << "name" << YAML::Value << t.name << YAML::Key << "kind"
            << YAML::Value << model::task_kind_name(t.kind) << YAML::Key << "modality" << YAML::Value << t.modality;
        if (t.kind == model::TaskKind::classification) out << YAML::Key << "classes" << YAML::Value << t.output_dim;
        out << YAML::EndMap;
    }
    out << YAML::EndSeq << YAML::EndMap;

    out << YAML::Key << "federation" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "rounds" << YAML::Value << c.rounds.rounds;
    out << YAML::Key << "local_iters" << YAML::Value << c.rounds.local_iters;
    out << YAML::Key << "clients_per_round" << YAML::Value << c.rounds.clients_per_round;
    out << YAML::Key << "batch_size" << YAML::Value << c.rounds.batch_size;
    out << YAML::Key << "lr" << YAML::Value << YAML::BeginMap << YAML::Key << "initial" << YAML::Value
        << num(c.rounds.lr.initial) << YAML::Key << "peak" << YAML::Value << num(c.rounds.lr.peak) << YAML::Key
        << "warmup_rounds" << YAML::Value << c.rounds.lr.warmup_rounds << YAML::EndMap;
    out << YAML::Key << "optimizer" << YAML::Value << YAML::BeginMap << YAML::Key << "kind" << YAML::Value
        << fed::optimizer_kind_name(c.optimizer.kind) << YAML::Key << "weight_decay" << YAML::Value
        << num(c.optimizer.weight_decay) << YAML::Key << "beta1" << YAML::Value << num(c.optimizer.beta1) << YAML::Key
        << "beta2" << YAML::Value << num(c.optimizer.beta2) << YAML::Key << "eps" << YAML::Value
        << num(c.optimizer.eps) << YAML::EndMap;
    out << YAML::EndMap;

    out << YAML::Key << "tap" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "margins" << YAML::Value;
    task_map(c.margins);
    out << YAML::Key << "kd" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "temperature" << YAML::Value << num(c.kd.temperature);
    out << YAML::Key << "beta" << YAML::Value << num(c.kd.default_beta);
    out << YAML::Key << "task_beta" << YAML::Value;
    task_map(c.kd.beta);
    out << YAML::Key << "post_iters" << YAML::Value << c.kd.post_iters;
    out << YAML::EndMap;
    out << YAML::Key << "disentangle_weight" << YAML::Value << num(c.disentangle_weight);
    out << YAML::EndMap;

    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    knobs(c.data);
    out << YAML::Key << "tasks" << YAML::Value << YAML::BeginMap;
    for (const auto& [task, k] : c.task_data) {
        out << YAML::Key << task << YAML::Value << YAML::BeginMap;
        knobs(k);
        out << YAML::EndMap;
    }
    out << YAML::EndMap << YAML::EndMap;

    out << YAML::Key << "clients" << YAML::Value << YAML::BeginSeq;
    for (const auto& a : c.clients) {
        out << YAML::BeginMap;
        out << YAML::Key << "modalities" << YAML::Value << YAML::Flow << a.modalities;
        out << YAML::Key << "tasks" << YAML::Value << YAML::Flow << a.tasks;
        out << YAML::Key << "margins" << YAML::Value << YAML::Flow;
        task_map(a.margins);
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

void BoundConfig::validate() const {
    if (name.empty() || name.find('/') != std::string::npos) throw std::invalid_argument("name must be non-empty without '/'");
    if (tau < 1) throw std::invalid_argument("bound tau must be >= 1");
    if (T < 4) throw std::invalid_argument("bound T must be >= 4");
    if (trials < 1) throw std::invalid_argument("bound trials must be >= 1");
    if (alpha < 0.0) throw std::invalid_argument("bound alpha must be >= 0");
}

BoundConfig parse_bound_config(const std::string& yaml_text) {
    const auto root = load_text(yaml_text);
    check_keys(root, "top level", {"name", "output_dir", "bound"});
    BoundConfig c;
    read(root, "name", c.name);
    read(root, "output_dir", c.output_dir);
    const auto b = root["bound"];
    if (!b) throw std::invalid_argument("config: missing 'bound' section");
    check_keys(b, "bound", {"R", "block_dim", "clients", "owners_per_block", "sigma", "zeta", "eig_min", "eig_max",
                            "init_distance", "tau", "T", "trials", "alpha", "schedule", "seed"});
    read(b, "R", c.problem.R);
    read(b, "block_dim", c.problem.block_dim);
    read(b, "clients", c.problem.clients);
    read(b, "owners_per_block", c.problem.owners_per_block);
    read(b, "sigma", c.problem.sigma);
    read(b, "zeta", c.problem.zeta);
    read(b, "eig_min", c.problem.eig_min);
    read(b, "eig_max", c.problem.eig_max);
    read(b, "init_distance", c.problem.init_distance);
    read(b, "tau", c.tau);
    read(b, "T", c.T);
    read(b, "trials", c.trials);
    read(b, "seed", c.seed);
    c.problem.seed = c.seed;
    if (b["alpha"] && b["alpha"].as<std::string>() != "cap") read(b, "alpha", c.alpha);
    if (b["schedule"]) {
        const auto s = b["schedule"].as<std::string>();
        if (s == "diminishing") c.diminishing = true;
        else if (s == "constant") c.diminishing = false;
        else fail(b["schedule"], "schedule must be 'diminishing' or 'constant'");
    }
    c.validate();
    return c;
}

BoundConfig load_bound_config(const std::string& path) { return parse_bound_config(slurp(path)); }

}  // namespace taplab::exp
