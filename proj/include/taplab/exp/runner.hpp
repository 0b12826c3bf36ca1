// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Baseline and TAP runners with JSONL logging and per-run summaries.
//
// A run writes <output_dir>/<run_id>/ containing
//   config.yaml        resolved configuration
//   events.jsonl       header, loss, upload, aggregate, replacement and eval records
//   summary.csv        final validation metrics, rebuilt from events.jsonl
//   replacements.csv   cumulative replacement counters (TAP modes)

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "taplab/exp/config.hpp"

namespace taplab::exp {

// Append-only JSONL writer. Every record carries run_id and seed; callers
// supply the round.
class MetricsSink {
public:
    MetricsSink(const std::filesystem::path& path, std::string run_id, std::uint64_t seed);
    void write(nlohmann::json record);

private:
    std::ofstream out_;
    std::string run_id_;
    std::uint64_t seed_;
};

struct ClientData {
    std::vector<model::Sample> train;
    std::vector<model::Sample> val;
};

// Pooled per-client train and validation samples, tasks in the client's order.
std::vector<ClientData> build_client_data(const ExperimentConfig& cfg);

struct FinalEval {
    std::size_t client = 0;
    std::string task;
    model::TaskKind kind = model::TaskKind::classification;
    double loss = 0.0;
    double metric = 0.0;
    std::size_t count = 0;
};

struct SummaryRow {
    std::string client;  // id, "mean" or "std"
    std::string task;    // task name, "all", "avg_classification" or "avg_generation"
    std::string kind;
    std::string metric_name;
    double metric = 0.0;
    bool has_metric = true;
    double loss = 0.0;
    std::size_t count = 0;
};

struct Summary {
    std::vector<SummaryRow> rows;
    std::map<std::size_t, double> client_loss;  // mean validation loss over the client's tasks
    const SummaryRow* find(const std::string& client, const std::string& task) const;
};

struct RunResult {
    std::string run_id;
    std::filesystem::path dir;
    std::vector<FinalEval> finals;                 // the mode's reported model
    std::map<std::size_t, std::size_t> fl_steps;   // per client, post-FL steps included
    std::map<std::size_t, std::size_t> personal_steps;
    std::vector<std::size_t> upload_bytes_per_round;
    std::map<std::size_t, std::map<std::string, std::size_t>> replacements;
    Summary summary;
};

// local: views train without uploads, then P more iterations.
// fedavg: component-wise FedAvg; the broadcast views are reported.
// fedavg-post: fedavg followed by P local iterations per client.
// tap / tap-nokd: the full loop with beta as configured or zero; X is reported.
RunResult run_config(const ExperimentConfig& cfg);

// Rebuilds summary.csv (and replacements.csv) from the run's events.jsonl.
Summary emit_metrics(const std::filesystem::path& run_dir);
std::string summary_csv(const Summary& s);
std::string format_summary(const Summary& s);

// A run directory from an id or a path; throws if it does not exist.
std::filesystem::path resolve_run(const std::string& id_or_path, const std::string& output_dir = "runs");

// Mean and population standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& v);

}  // namespace taplab::exp
