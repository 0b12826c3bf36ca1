// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/fed/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace taplab::fed {

OptimizerKind parse_optimizer_kind(const std::string& s) {
    if (s == "adamw") return OptimizerKind::adamw;
    if (s == "sgd") return OptimizerKind::sgd;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

const char* optimizer_kind_name(OptimizerKind k) { return k == OptimizerKind::adamw ? "adamw" : "sgd"; }

void Optimizer::step(model::ParamStore& params, const std::map<std::string, ad::Tensor>& grads, double lr) {
    for (const auto& [name, g] : grads) {
        auto it = params.trainable.find(name);
        if (it == params.trainable.end()) throw std::out_of_range("gradient for non-trainable '" + name + "'");
        auto p = it->second.data();
        const auto gd = g.data();
        if (gd.size() != p.size()) throw std::invalid_argument("gradient shape mismatch on '" + name + "'");

        if (cfg_.kind == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * (gd[i] + cfg_.weight_decay * p[i]);
            ++state_[name].t;
            continue;
        }

        auto& s = state_[name];
        if (s.m.empty()) {
            s.m.assign(p.size(), 0.0);
            s.v.assign(p.size(), 0.0);
        }
        ++s.t;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
        const double decay = 1.0 - lr * cfg_.weight_decay;
        for (std::size_t i = 0; i < p.size(); ++i) {
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gd[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gd[i] * gd[i];
            const double mhat = s.m[i] / c1;
            const double vhat = s.v[i] / c2;
            p[i] = p[i] * decay - lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void Optimizer::reset(const std::vector<std::string>& names) {
    for (const auto& n : names) state_.erase(n);
}

std::uint64_t Optimizer::steps(const std::string& name) const {
    auto it = state_.find(name);
    return it == state_.end() ? 0 : it->second.t;
}

}  // namespace taplab::fed
