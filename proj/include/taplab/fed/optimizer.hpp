// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "taplab/model/params.hpp"

namespace taplab::fed {

enum class OptimizerKind { adamw, sgd };

OptimizerKind parse_optimizer_kind(const std::string& s);
const char* optimizer_kind_name(OptimizerKind k);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adamw;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;  // decoupled for AdamW, plain L2 for SGD
};

// Per-parameter moment state. Parameters missing from a step's gradients are
// left untouched, state included.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

    void step(model::ParamStore& params, const std::map<std::string, ad::Tensor>& grads, double lr);
    // Zero moments and step counts of the named parameters.
    void reset(const std::vector<std::string>& names);

    const OptimizerConfig& config() const { return cfg_; }
    bool has_state(const std::string& name) const { return state_.count(name) > 0; }
    std::uint64_t steps(const std::string& name) const;

private:
    struct Slot {
        std::vector<double> m, v;
        std::uint64_t t = 0;
    };
    OptimizerConfig cfg_;
    std::map<std::string, Slot> state_;
};

}  // namespace taplab::fed
