// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/exp/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>
#include <stdexcept>

namespace taplab::exp {

namespace fs = std::filesystem;
using nlohmann::json;

MetricsSink::MetricsSink(const fs::path& path, std::string run_id, std::uint64_t seed)
    : out_(path, std::ios::trunc), run_id_(std::move(run_id)), seed_(seed) {
    if (!out_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
}

void MetricsSink::write(json record) {
    if (!record.contains("round")) throw std::invalid_argument("metrics record without a round");
    record["run_id"] = run_id_;
    record["seed"] = seed_;
    out_ << record.dump() << '\n';
    out_.flush();
}

std::vector<ClientData> build_client_data(const ExperimentConfig& cfg) {
    const auto K = cfg.clients.size();
    std::map<std::string, std::vector<ClientSplit>> per_task;
    for (const auto& t : cfg.model.tasks) per_task[t.name] = synth_dataset(cfg.dataset_spec(t.name), K);
    std::vector<ClientData> out(K);
    for (std::size_t i = 0; i < K; ++i) {
        for (const auto& task : cfg.clients[i].tasks) {
            auto& split = per_task.at(task)[i];
            out[i].train.insert(out[i].train.end(), split.train.begin(), split.train.end());
            out[i].val.insert(out[i].val.end(), split.val.begin(), split.val.end());
        }
    }
    return out;
}

namespace {

const char* metric_name(model::TaskKind k) {
    switch (k) {
    case model::TaskKind::classification: return "accuracy";
    case model::TaskKind::reconstruction: return "mse";
    case model::TaskKind::sequence_generation: return "token_accuracy";
    }
    return "?";
}

const char* group_of(model::TaskKind k) {
    return k == model::TaskKind::classification ? "avg_classification" : "avg_generation";
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

class RunObserver : public tap::TapObserver {
public:
    RunObserver(MetricsSink& sink, const ExperimentConfig& cfg, const fed::Federation& fed,
                const std::vector<tap::PersonalState>* personal, const std::vector<ClientData>& data, RunResult& result)
        : sink_(sink), cfg_(cfg), fed_(fed), personal_(personal), data_(data), result_(result) {}

    void on_round_start(std::size_t round, const std::vector<model::ClientId>& selected) override {
        sink_.write({{"type", "round"}, {"round", round}, {"selected", selected}, {"lr", cfg_.rounds.lr.at(round)}});
        if (round >= result_.upload_bytes_per_round.size()) result_.upload_bytes_per_round.resize(round + 1, 0);
    }
    void on_loss(std::size_t round, model::ClientId client, const std::string& task, double loss,
                 fed::Role role) override {
        sink_.write({{"type", "loss"}, {"round", round}, {"client", client}, {"task", task},
                     {"model", role == fed::Role::local ? "fl" : "personal"}, {"loss", loss}});
    }
    void on_upload(std::size_t round, model::ClientId client, std::size_t bytes) override {
        result_.upload_bytes_per_round.at(round) += bytes;
        sink_.write({{"type", "upload"}, {"round", round}, {"client", client}, {"bytes", bytes}});
    }
    void on_aggregate(std::size_t round, const fed::AggregationReport& report) override {
        json blocks = json::object();
        for (const auto& [id, b] : report.blocks)
            if (b.touched) blocks[id.key] = b.owners;
        sink_.write({{"type", "aggregate"}, {"round", round}, {"touched", report.touched()}, {"owners", blocks}});
    }
    void on_replacement(const tap::ReplacementEvent& e) override {
        json rec{{"type", "replacement"}, {"round", e.round}, {"client", e.client}, {"task", e.task},
                 {"h_local", e.h_local}, {"margin", std::isinf(e.margin) ? json(e.margin > 0 ? "inf" : "-inf") : json(e.margin)},
                 {"fired", e.fired}, {"cumulative", e.cumulative}};
        rec["h_personal"] = e.h_personal ? json(*e.h_personal) : json(nullptr);
        sink_.write(std::move(rec));
    }
    void on_post(model::ClientId client, const tap::PostResult& r) override {
        json teacher = json::object(), student = json::object();
        for (const auto& [t, s] : r.teacher.per_task) teacher[t] = s.loss;
        for (const auto& [t, s] : r.student.per_task) student[t] = s.loss;
        sink_.write({{"type", "post"}, {"round", cfg_.rounds.rounds}, {"client", client}, {"teacher_loss", teacher},
                     {"student_loss", student}, {"steps", r.student.steps}});
    }
    void on_round_end(std::size_t round) override {
        if (cfg_.eval_every > 0 && (round + 1) % cfg_.eval_every == 0 && round + 1 < cfg_.rounds.rounds)
            evaluate_all(round + 1, false);
    }

    // Evaluates every client's FL view and, in TAP modes, its X.
    void evaluate_all(std::size_t round, bool final) {
        for (std::size_t i = 0; i < fed_.clients.size(); ++i) {
            evaluate_one(round, i, fed_.clients[i].fl.model, "fl", final);
            if (personal_) evaluate_one(round, i, (*personal_)[i].x.model, "personal", final);
        }
    }

private:
    void evaluate_one(std::size_t round, std::size_t client, const model::ClientView& view, const char* role,
                      bool final) {
        std::vector<const model::Sample*> val;
        for (const auto& s : data_[client].val) val.push_back(&s);
        const auto evals = model::evaluate(view, val);
        const bool primary = std::string(role) == (personal_ ? "personal" : "fl");
        for (const auto& task : cfg_.clients[client].tasks) {
            const auto& e = evals.at(task);
            const auto kind = cfg_.model.tasks[cfg_.model.task_index(task)].kind;
            sink_.write({{"type", "eval"}, {"round", round}, {"client", client}, {"task", task},
                         {"kind", model::task_kind_name(kind)}, {"model", role}, {"final", final},
                         {"loss", e.loss}, {"metric", e.metric}, {"metric_name", metric_name(kind)},
                         {"count", e.count}});
            if (final && primary) result_.finals.push_back({client, task, kind, e.loss, e.metric, e.count});
        }
    }

    MetricsSink& sink_;
    const ExperimentConfig& cfg_;
    const fed::Federation& fed_;
    const std::vector<tap::PersonalState>* personal_;
    const std::vector<ClientData>& data_;
    RunResult& result_;
};

}  // namespace

RunResult run_config(const ExperimentConfig& cfg) {
    cfg.validate();
    RunResult result;
    result.run_id = cfg.run_id();
    result.dir = fs::path(cfg.output_dir) / result.run_id;
    fs::create_directories(result.dir);
    {
        std::ofstream c(result.dir / "config.yaml", std::ios::trunc);
        c << dump_config(cfg);
    }
    MetricsSink sink(result.dir / "events.jsonl", result.run_id, cfg.seed);

    const auto data = build_client_data(cfg);
    json clients = json::array();
    const auto configs = cfg.client_configs();
    for (std::size_t i = 0; i < configs.size(); ++i) {
        clients.push_back({{"id", i}, {"modalities", configs[i].modalities}, {"tasks", configs[i].tasks},
                           {"train", data[i].train.size()}, {"val", data[i].val.size()}});
    }
    sink.write({{"type", "header"}, {"round", 0}, {"name", cfg.name}, {"mode", mode_name(cfg.mode)},
                {"primary_model", is_tap(cfg.mode) ? "personal" : "fl"}, {"rounds", cfg.rounds.rounds},
                {"local_iters", cfg.rounds.local_iters}, {"clients_per_round", cfg.rounds.clients_per_round},
                {"batch_size", cfg.rounds.batch_size}, {"post_iters", cfg.kd.post_iters}, {"clients", clients}});

    try {
        std::vector<std::shared_ptr<const fed::LocalObjective>> objectives;
        for (const auto& d : data) {
            auto train = std::make_shared<const std::vector<model::Sample>>(d.train);
            objectives.push_back(std::make_shared<fed::ModelObjective>(train, cfg.rounds.batch_size));
        }
        auto fed = fed::make_federation(model::build_server_model(cfg.model), configs, objectives, cfg.optimizer,
                                        cfg.rounds.seed);
        const double post_lr = cfg.rounds.lr.at(cfg.rounds.rounds);
        const auto post_iters = cfg.kd.post_iters;

        if (is_tap(cfg.mode)) {
            std::vector<tap::PersonalState> personal;
            tap::RoundLedger ledger;
            for (std::size_t i = 0; i < fed.clients.size(); ++i) {
                personal.push_back(tap::make_personal(fed.clients[i]));
                for (const auto& t : cfg.clients[i].tasks) ledger.set_margin(i, t, cfg.margin(i, t));
            }
            tap::KDConfig kd = cfg.kd;
            if (cfg.mode == Mode::tap_nokd) {
                kd.default_beta = 0.0;
                kd.beta.clear();
            }
            RunObserver obs(sink, cfg, fed, &personal, data, result);
            const auto stats = tap::run_tap(fed, personal, ledger, cfg.rounds, kd, &obs);
            result.fl_steps = stats.fl.steps;
            result.personal_steps = stats.personal_steps;
            result.replacements = stats.replacements;
            obs.evaluate_all(cfg.rounds.rounds, true);
        } else {
            RunObserver obs(sink, cfg, fed, nullptr, data, result);
            const auto mode = cfg.mode == Mode::local ? fed::FlMode::local : fed::FlMode::fedavg;
            const auto stats = fed::run_fl(fed, cfg.rounds, mode, &obs);
            result.fl_steps = stats.steps;
            if (cfg.mode == Mode::local || cfg.mode == Mode::fedavg_post) {
                for (std::size_t i = 0; i < fed.clients.size(); ++i) {
                    auto& c = fed.clients[i];
                    const auto r = fed::train_steps(c.fl, *c.objective, post_iters, post_lr, cfg.rounds.rounds);
                    result.fl_steps[i] += r.steps;
                    json losses = json::object();
                    for (const auto& [t, s] : r.per_task) losses[t] = s.loss;
                    sink.write({{"type", "post"}, {"round", cfg.rounds.rounds}, {"client", i}, {"fl_loss", losses},
                                {"steps", r.steps}});
                }
            }
            obs.evaluate_all(cfg.rounds.rounds, true);
        }
        result.upload_bytes_per_round.resize(cfg.rounds.rounds, 0);
        sink.write({{"type", "end"}, {"round", cfg.rounds.rounds}, {"fl_steps", result.fl_steps},
                    {"personal_steps", result.personal_steps}});
    } catch (const std::exception& e) {
        sink.write({{"type", "error"}, {"round", cfg.rounds.rounds}, {"message", e.what()}});
        throw;
    }
    result.summary = emit_metrics(result.dir);
    return result;
}

const SummaryRow* Summary::find(const std::string& client, const std::string& task) const {
    for (const auto& r : rows)
        if (r.client == client && r.task == task) return &r;
    return nullptr;
}

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {0.0, 0.0};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

fs::path resolve_run(const std::string& id_or_path, const std::string& output_dir) {
    const fs::path direct(id_or_path);
    if (fs::is_regular_file(direct / "events.jsonl")) return direct;
    const auto nested = fs::path(output_dir) / id_or_path;
    if (fs::is_regular_file(nested / "events.jsonl")) return nested;
    throw std::runtime_error("no run '" + id_or_path + "' (looked in '" + direct.string() + "' and '" +
                             nested.string() + "')");
}

Summary emit_metrics(const fs::path& run_dir) {
    std::ifstream in(run_dir / "events.jsonl");
    if (!in) throw std::runtime_error("no events.jsonl in '" + run_dir.string() + "'");

    struct Eval {
        std::size_t client;
        std::string task, kind, metric_name;
        double loss, metric;
        std::size_t count;
    };
    std::string primary;
    std::vector<Eval> evals;
    std::ostringstream repl;
    repl << "round,client,task,fired,cumulative\n";
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = json::parse(line);
        const auto type = j.at("type").get<std::string>();
        if (type == "header") primary = j.at("primary_model").get<std::string>();
        if (type == "replacement") {
            repl << j.at("round").get<std::size_t>() << ',' << j.at("client").get<std::size_t>() << ','
                 << j.at("task").get<std::string>() << ',' << (j.at("fired").get<bool>() ? 1 : 0) << ','
                 << j.at("cumulative").get<std::size_t>() << '\n';
        }
        if (type == "eval" && j.at("final").get<bool>() && j.at("model").get<std::string>() == primary) {
            evals.push_back({j.at("client").get<std::size_t>(), j.at("task").get<std::string>(),
                             j.at("kind").get<std::string>(), j.at("metric_name").get<std::string>(),
                             j.at("loss").get<double>(), j.at("metric").get<double>(), j.at("count").get<std::size_t>()});
        }
    }
    if (primary.empty()) throw std::runtime_error("run '" + run_dir.string() + "' has no header record");

    Summary s;
    std::map<std::size_t, std::vector<double>> client_losses;
    std::vector<std::string> task_order;
    for (const auto& e : evals) {
        s.rows.push_back({std::to_string(e.client), e.task, e.kind, e.metric_name, e.metric, true, e.loss, e.count});
        client_losses[e.client].push_back(e.loss);
        if (std::find(task_order.begin(), task_order.end(), e.task) == task_order.end()) task_order.push_back(e.task);
    }
    for (const auto& [c, l] : client_losses) {
        s.client_loss[c] = mean_std(l).first;
        s.rows.push_back({std::to_string(c), "all", "", "", 0.0, false, s.client_loss[c], l.size()});
    }

    auto push_stats = [&](const std::string& task, const std::string& kind, const std::string& mname, bool has_metric,
                          const std::vector<double>& metrics, const std::vector<double>& losses) {
        const auto [mm, ms] = mean_std(metrics);
        const auto [lm, ls] = mean_std(losses);
        s.rows.push_back({"mean", task, kind, has_metric ? mname : "", mm, has_metric, lm, losses.size()});
        s.rows.push_back({"std", task, kind, has_metric ? mname : "", ms, has_metric, ls, losses.size()});
    };
    std::sort(task_order.begin(), task_order.end());
    for (const auto& task : task_order) {
        std::vector<double> m, l;
        std::string kind, mname;
        for (const auto& e : evals) {
            if (e.task != task) continue;
            m.push_back(e.metric);
            l.push_back(e.loss);
            kind = e.kind;
            mname = e.metric_name;
        }
        push_stats(task, kind, mname, true, m, l);
    }
    for (const char* group : {"avg_classification", "avg_generation"}) {
        std::map<std::size_t, std::vector<const Eval*>> by_client;
        std::set<std::string> names;
        for (const auto& e : evals) {
            if (group_of(model::parse_task_kind(e.kind)) != std::string(group)) continue;
            by_client[e.client].push_back(&e);
            names.insert(e.metric_name);
        }
        if (by_client.empty()) continue;
        std::vector<double> m, l;
        for (const auto& [_, es] : by_client) {
            double mm = 0.0, ll = 0.0;
            for (const auto* e : es) {
                mm += e->metric;
                ll += e->loss;
            }
            m.push_back(mm / static_cast<double>(es.size()));
            l.push_back(ll / static_cast<double>(es.size()));
        }
        const bool homogeneous = names.size() == 1;
        push_stats(group, "", homogeneous ? *names.begin() : "", homogeneous, m, l);
    }
    {
        std::vector<double> l;
        for (const auto& [_, v] : s.client_loss) l.push_back(v);
        push_stats("all", "", "", false, {}, l);
    }

    std::ofstream(run_dir / "summary.csv", std::ios::trunc) << summary_csv(s);
    std::ofstream(run_dir / "replacements.csv", std::ios::trunc) << repl.str();
    return s;
}

std::string summary_csv(const Summary& s) {
    std::ostringstream out;
    out << "client,task,kind,metric_name,metric,loss,count\n";
    for (const auto& r : s.rows) {
        out << r.client << ',' << r.task << ',' << r.kind << ',' << r.metric_name << ','
            << (r.has_metric ? fmt(r.metric) : "") << ',' << fmt(r.loss) << ',' << r.count << '\n';
    }
    return out.str();
}

std::string format_summary(const Summary& s) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-20s %-16s %-22s %-22s\n", "task", "metric", "metric mean±std", "loss mean±std");
    out << buf;
    for (std::size_t i = 0; i + 1 < s.rows.size(); ++i) {
        const auto& m = s.rows[i];
        const auto& d = s.rows[i + 1];
        if (m.client != "mean" || d.client != "std" || m.task != d.task) continue;
        const std::string metric = m.has_metric ? fmt(m.metric) + "±" + fmt(d.metric) : "-";
        std::snprintf(buf, sizeof buf, "%-20s %-16s %-22s %-22s\n", m.task.c_str(),
                      m.metric_name.empty() ? "-" : m.metric_name.c_str(), metric.c_str(),
                      (fmt(m.loss) + "±" + fmt(d.loss)).c_str());
        out << buf;
    }
    return out.str();
}

}  // namespace taplab::exp
