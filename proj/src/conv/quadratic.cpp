// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/conv/quadratic.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace taplab::conv {

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

Vec gaussian(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    Vec v(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = d(rng);
    return v;
}

Vec unit(std::size_t n, std::mt19937_64& rng) {
    Vec v = gaussian(n, rng);
    return v / v.norm();
}

}  // namespace

std::vector<std::size_t> QuadraticFederation::client_blocks(std::size_t client) const {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < blocks.size(); ++r) {
        const auto& o = blocks[r].owners;
        if (std::find(o.begin(), o.end(), client) != o.end()) out.push_back(r);
    }
    return out;
}

std::size_t QuadraticFederation::client_dim(std::size_t client) const {
    std::size_t d = 0;
    for (auto r : client_blocks(client)) d += static_cast<std::size_t>(blocks[r].Q.rows());
    return d;
}

double QuadraticFederation::f(const Point& w) const {
    double total = 0.0;
    for (std::size_t r = 0; r < blocks.size(); ++r) {
        const auto& b = blocks[r];
        double block = 0.0;
        for (const auto& c : b.centers) {
            const Vec d = w[r] - c;
            block += 0.5 * d.dot(b.Q * d);
        }
        total += block / static_cast<double>(b.owners.size());
    }
    return total;
}

Point QuadraticFederation::grad(const Point& w) const {
    Point g(blocks.size());
    for (std::size_t r = 0; r < blocks.size(); ++r) g[r] = blocks[r].Q * (w[r] - blocks[r].mean_center);
    return g;
}

double QuadraticFederation::grad_norm_sq(const Point& w) const {
    double s = 0.0;
    for (const auto& g : grad(w)) s += g.squaredNorm();
    return s;
}

double QuadraticFederation::f_star() const {
    Point w;
    for (const auto& b : blocks) w.push_back(b.mean_center);
    return f(w);
}

double power_iteration(const Mat& Q, std::size_t max_iters, double tol) {
    if (Q.rows() == 0 || Q.rows() != Q.cols()) throw std::invalid_argument("power iteration needs a square matrix");
    Vec v = Vec::Ones(Q.rows()) / std::sqrt(static_cast<double>(Q.rows()));
    // Nudge off any symmetric subspace an all-ones start might sit in.
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += 1e-3 * static_cast<double>(i + 1);
    v.normalize();
    double lambda = 0.0;
    for (std::size_t k = 0; k < max_iters; ++k) {
        Vec w = Q * v;
        const double n = w.norm();
        if (n == 0.0) return 0.0;
        w /= n;
        const double next = w.dot(Q * w);
        v = w;
        if (std::abs(next - lambda) <= tol * std::max(1.0, std::abs(next))) return next;
        lambda = next;
    }
    return lambda;
}

QuadraticFederation assemble(std::vector<QuadraticBlock> blocks, std::size_t clients, double sigma, Point initial) {
    if (blocks.empty()) throw std::invalid_argument("federation needs at least one block");
    if (sigma < 0.0) throw std::invalid_argument("sigma must be >= 0");
    QuadraticFederation fed;
    fed.clients = clients;
    fed.sigma = sigma;
    for (std::size_t r = 0; r < blocks.size(); ++r) {
        auto& b = blocks[r];
        const auto tag = "block " + std::to_string(r);
        if (b.Q.rows() == 0 || b.Q.rows() != b.Q.cols()) throw std::invalid_argument(tag + ": Q must be square");
        if (!b.Q.isApprox(b.Q.transpose(), 1e-12)) throw std::invalid_argument(tag + ": Q must be symmetric");
        if (b.owners.empty()) throw std::invalid_argument(tag + " has no owner");
        if (b.owners.size() != b.centers.size()) throw std::invalid_argument(tag + ": one center per owner required");
        if (!std::is_sorted(b.owners.begin(), b.owners.end()) ||
            std::adjacent_find(b.owners.begin(), b.owners.end()) != b.owners.end()) {
            throw std::invalid_argument(tag + ": owners must be ascending and distinct");
        }
        for (auto o : b.owners)
            if (o >= clients) throw std::invalid_argument(tag + ": owner " + std::to_string(o) + " out of range");
        b.mean_center = Vec::Zero(b.Q.rows());
        for (const auto& c : b.centers) b.mean_center += c;
        b.mean_center /= static_cast<double>(b.centers.size());
        b.zeta_sq = 0.0;
        for (const auto& c : b.centers) b.zeta_sq += (b.Q * (b.mean_center - c)).squaredNorm();
        b.zeta_sq /= static_cast<double>(b.centers.size());
        b.lambda_max = power_iteration(b.Q);
        fed.L = std::max(fed.L, b.lambda_max);
        fed.Z += b.zeta_sq;
        fed.C_K += 1.0 / static_cast<double>(b.owners.size());
    }
    fed.blocks = std::move(blocks);
    if (initial.empty()) {
        for (const auto& b : fed.blocks) initial.push_back(Vec::Zero(b.Q.rows()));
    }
    if (initial.size() != fed.blocks.size()) throw std::invalid_argument("initial point needs one vector per block");
    fed.initial = std::move(initial);
    return fed;
}

QuadraticFederation make_quadratic_federation(const QuadraticSpec& spec) {
    if (spec.clients == 0 || spec.owners_per_block == 0 || spec.owners_per_block > spec.clients) {
        throw std::invalid_argument("owners_per_block must lie in [1, clients]");
    }
    if (spec.block_dim == 0) throw std::invalid_argument("block_dim must be positive");
    if (!(spec.eig_min > 0.0 && spec.eig_min <= spec.eig_max)) throw std::invalid_argument("need 0 < eig_min <= eig_max");
    if (spec.zeta < 0.0) throw std::invalid_argument("zeta must be >= 0");
    const auto d = static_cast<Eigen::Index>(spec.block_dim);
    const std::size_t spacing = spec.clients / spec.owners_per_block;

    std::vector<QuadraticBlock> blocks;
    Point initial;
    for (std::size_t r = 0; r <= spec.R; ++r) {
        auto rng = seeded(spec.seed, r);
        QuadraticBlock b;
        std::set<std::size_t> owners;
        for (std::size_t j = 0; j < spec.owners_per_block; ++j) owners.insert((r + j * spacing) % spec.clients);
        if (owners.size() != spec.owners_per_block) throw std::invalid_argument("ownership pattern collides; adjust clients");
        b.owners.assign(owners.begin(), owners.end());

        Mat g(d, d);
        for (Eigen::Index i = 0; i < d; ++i) g.col(i) = gaussian(spec.block_dim, rng);
        const Mat U = Eigen::HouseholderQR<Mat>(g).householderQ();
        std::uniform_real_distribution<double> eig(spec.eig_min, spec.eig_max);
        Vec lambda(d);
        for (Eigen::Index i = 0; i < d; ++i) lambda[i] = i == 0 ? spec.eig_max : eig(rng);
        b.Q = U * lambda.asDiagonal() * U.transpose();
        b.Q = 0.5 * (b.Q + b.Q.transpose());

        const Vec cbar = gaussian(spec.block_dim, rng);
        // Deviations u_j sum to zero with mean squared norm zeta^2; centers
        // sit at cbar + Q^{-1} u_j so that ||Q (cbar - c_j)|| = ||u_j||.
        const auto k = b.owners.size();
        std::vector<Vec> u(k);
        Vec mean = Vec::Zero(d);
        for (auto& x : u) {
            x = gaussian(spec.block_dim, rng);
            mean += x;
        }
        mean /= static_cast<double>(k);
        double ms = 0.0;
        for (auto& x : u) {
            x -= mean;
            ms += x.squaredNorm();
        }
        ms /= static_cast<double>(k);
        const Eigen::LDLT<Mat> solver(b.Q);
        for (auto& x : u) {
            const Vec dev = ms > 0.0 ? Vec(x * (spec.zeta / std::sqrt(ms))) : Vec(Vec::Zero(d));
            b.centers.push_back(cbar + solver.solve(dev));
        }
        initial.push_back(cbar + spec.init_distance * unit(spec.block_dim, rng));
        blocks.push_back(std::move(b));
    }
    return assemble(std::move(blocks), spec.clients, spec.sigma, std::move(initial));
}

double lr_cap(double L, std::size_t tau) {
    if (!(L > 0.0)) throw std::invalid_argument("lr_cap needs L > 0");
    if (tau < 1) throw std::invalid_argument("lr_cap needs tau >= 1");
    const double lt = L * static_cast<double>(tau);
    return std::min({1.0 / (48.0 * lt), 1.0 / (std::sqrt(8.0) * lt), std::cbrt(1.0 / (96.0 * lt * lt * lt))});
}

StepSums step_sums(const StepSchedule& s, std::size_t T) {
    StepSums out;
    for (std::size_t t = 0; t < T; ++t) {
        const double e = s.at(t);
        out.s1 += e;
        out.s2 += e * e;
        out.s3 += e * e * e;
    }
    return out;
}

Trajectories run_component_fedavg_quadratic(const QuadraticFederation& fed, std::size_t tau, std::size_t T,
                                            const StepSchedule& schedule, std::size_t trials, std::uint64_t seed) {
    if (tau < 1) throw std::invalid_argument("tau must be >= 1");
    if (trials < 1) throw std::invalid_argument("need at least one trial");
    const double cap = lr_cap(fed.L, tau);
    Trajectories out;
    for (std::size_t t = 0; t < T; ++t) {
        const double e = schedule.at(t);
        if (!(e > 0.0) || e > cap * (1.0 + 1e-12)) {
            std::ostringstream msg;
            msg << std::setprecision(17) << "step size eta_" << t << " = " << e << " violates (0, lr_cap = " << cap
                << "] for L = " << fed.L << ", tau = " << tau;
            throw std::invalid_argument(msg.str());
        }
        out.eta.push_back(e);
    }

    const auto K = fed.clients;
    std::vector<std::vector<std::size_t>> owned(K);
    std::vector<double> noise_std(K, 0.0);
    for (std::size_t i = 0; i < K; ++i) {
        owned[i] = fed.client_blocks(i);
        const auto dim = fed.client_dim(i);
        if (dim > 0) noise_std[i] = fed.sigma / std::sqrt(static_cast<double>(dim));
    }
    // Index of client i among block r's owners.
    std::vector<std::vector<std::size_t>> slot(K);
    for (std::size_t i = 0; i < K; ++i) {
        for (auto r : owned[i]) {
            const auto& o = fed.blocks[r].owners;
            slot[i].push_back(static_cast<std::size_t>(std::find(o.begin(), o.end(), i) - o.begin()));
        }
    }

    out.grad_sq.assign(trials, {});
    out.f.assign(trials, {});
    for (std::size_t k = 0; k < trials; ++k) {
        auto rng = seeded(seed, 0x7000 + k);
        std::normal_distribution<double> normal(0.0, 1.0);
        Point w = fed.initial;
        auto& gs = out.grad_sq[k];
        auto& fv = out.f[k];
        gs.reserve(T + 1);
        fv.reserve(T + 1);
        gs.push_back(fed.grad_norm_sq(w));
        fv.push_back(fed.f(w));
        std::vector<std::vector<Vec>> copies(fed.blocks.size());
        for (std::size_t r = 0; r < fed.blocks.size(); ++r) copies[r].assign(fed.blocks[r].owners.size(), Vec());
        for (std::size_t t = 0; t < T; ++t) {
            const double eta = out.eta[t];
            for (std::size_t i = 0; i < K; ++i) {
                std::vector<Vec> local;
                for (auto r : owned[i]) local.push_back(w[r]);
                for (std::size_t s = 0; s < tau; ++s) {
                    for (std::size_t j = 0; j < owned[i].size(); ++j) {
                        const auto& b = fed.blocks[owned[i][j]];
                        Vec g = b.Q * (local[j] - b.centers[slot[i][j]]);
                        if (noise_std[i] > 0.0)
                            for (Eigen::Index c = 0; c < g.size(); ++c) g[c] += noise_std[i] * normal(rng);
                        local[j] -= eta * g;
                    }
                }
                for (std::size_t j = 0; j < owned[i].size(); ++j) copies[owned[i][j]][slot[i][j]] = std::move(local[j]);
            }
            for (std::size_t r = 0; r < fed.blocks.size(); ++r) {
                Vec acc = Vec::Zero(w[r].size());
                for (const auto& c : copies[r]) acc += c;
                w[r] = acc / static_cast<double>(copies[r].size());
            }
            gs.push_back(fed.grad_norm_sq(w));
            fv.push_back(fed.f(w));
        }
    }
    return out;
}

RhsTerms bound_rhs(const RhsInputs& in) {
    if (!(in.sums.s1 > 0.0)) throw std::invalid_argument("bound needs sum of step sizes > 0");
    const double s1 = in.sums.s1, s2 = in.sums.s2, s3 = in.sums.s3;
    const double tau = static_cast<double>(in.tau);
    const double sig2 = in.sigma * in.sigma;
    RhsTerms t;
    t.optimality = 8.0 * in.delta_f / s1;
    t.drift = 16.0 * (in.Z + static_cast<double>(in.R + 1) * sig2 / 3.0) * tau * tau * tau * in.L * in.L * s3 / s1;
    t.heterogeneity = 48.0 * in.L * tau * tau * in.Z * s2 / s1;
    t.noise = 16.0 * in.L * tau * sig2 * in.C_K * s2 / s1;
    t.total = t.optimality + t.drift + t.heterogeneity + t.noise;
    return t;
}

namespace {

Checkpoint evaluate_checkpoint(const QuadraticFederation& fed, const Trajectories& tr, std::size_t tau,
                               std::size_t Tc) {
    Checkpoint c;
    c.T = Tc;
    for (std::size_t t = 0; t < Tc; ++t) {
        const double e = tr.eta[t];
        c.sums.s1 += e;
        c.sums.s2 += e * e;
        c.sums.s3 += e * e * e;
    }
    const auto n = tr.grad_sq.size();
    std::vector<double> lhs(n), df(n);
    for (std::size_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (std::size_t t = 0; t < Tc; ++t) acc += tr.eta[t] * tr.grad_sq[k][t];
        lhs[k] = acc / c.sums.s1;
        df[k] = tr.f[k][0] - tr.f[k][Tc];
    }
    double mean = 0.0;
    for (double v : lhs) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : lhs) var += (v - mean) * (v - mean);
    c.lhs_mean = mean;
    c.lhs_stderr = n > 1 ? std::sqrt(var / static_cast<double>(n - 1) / static_cast<double>(n)) : 0.0;
    c.lhs_upper = c.lhs_mean + 2.0 * c.lhs_stderr;
    c.delta_f_worst = *std::min_element(df.begin(), df.end());
    for (double v : df) c.delta_f_mean += v / static_cast<double>(n);
    c.rhs = bound_rhs({c.delta_f_worst, c.sums, fed.Z, fed.R(), fed.sigma, fed.L, tau, fed.C_K});
    c.holds = c.lhs_upper <= c.rhs.total;
    return c;
}

}  // namespace

BoundReport verify_bound(const QuadraticFederation& fed, std::size_t tau, std::size_t T, const StepSchedule& schedule,
                         std::size_t trials, std::uint64_t seed) {
    if (T < 4) throw std::invalid_argument("bound verification needs T >= 4");
    const auto tr = run_component_fedavg_quadratic(fed, tau, T, schedule, trials, seed);
    BoundReport r;
    r.T = T;
    r.tau = tau;
    r.trials = trials;
    r.L = fed.L;
    r.sigma = fed.sigma;
    r.Z = fed.Z;
    r.C_K = fed.C_K;
    r.R = fed.R();
    r.alpha = schedule.alpha;
    r.eta = tr.eta;
    r.grad_sq_mean.assign(T + 1, 0.0);
    for (const auto& g : tr.grad_sq)
        for (std::size_t t = 0; t <= T; ++t) r.grad_sq_mean[t] += g[t] / static_cast<double>(trials);

    for (auto Tc : {T / 4, T / 2, T}) r.checkpoints.push_back(evaluate_checkpoint(fed, tr, tau, Tc));
    r.holds = std::all_of(r.checkpoints.begin(), r.checkpoints.end(), [](const Checkpoint& c) { return c.holds; });
    r.rhs_decreasing = true;
    for (std::size_t i = 1; i < r.checkpoints.size(); ++i)
        r.rhs_decreasing &= r.checkpoints[i].rhs.total < r.checkpoints[i - 1].rhs.total;

    // Running curves: per-trial weighted sums advanced one round at a time.
    std::vector<double> acc(trials, 0.0);
    StepSums sums;
    for (std::size_t t = 1; t <= T; ++t) {
        const double e = tr.eta[t - 1];
        sums.s1 += e;
        sums.s2 += e * e;
        sums.s3 += e * e * e;
        double mean = 0.0, worst_df = 0.0;
        for (std::size_t k = 0; k < trials; ++k) {
            acc[k] += e * tr.grad_sq[k][t - 1];
            mean += acc[k] / sums.s1;
            const double df = tr.f[k][0] - tr.f[k][t];
            worst_df = k == 0 ? df : std::min(worst_df, df);
        }
        mean /= static_cast<double>(trials);
        double var = 0.0;
        for (std::size_t k = 0; k < trials; ++k) var += std::pow(acc[k] / sums.s1 - mean, 2);
        const double se = trials > 1 ? std::sqrt(var / static_cast<double>(trials - 1) / static_cast<double>(trials)) : 0.0;
        const auto rhs = bound_rhs({worst_df, sums, fed.Z, fed.R(), fed.sigma, fed.L, tau, fed.C_K});
        r.curve.push_back({t, e, r.grad_sq_mean[t - 1], mean + 2.0 * se, rhs.total});
    }
    return r;
}

std::string bound_report_json(const BoundReport& r) {
    using nlohmann::json;
    auto terms = [](const RhsTerms& t) {
        return json{{"optimality", t.optimality}, {"drift", t.drift}, {"heterogeneity", t.heterogeneity},
                    {"noise", t.noise}, {"total", t.total}};
    };
    json cps = json::array();
    for (const auto& c : r.checkpoints) {
        cps.push_back({{"T", c.T},
                       {"sum_eta", c.sums.s1},
                       {"sum_eta2", c.sums.s2},
                       {"sum_eta3", c.sums.s3},
                       {"lhs_mean", c.lhs_mean},
                       {"lhs_stderr", c.lhs_stderr},
                       {"lhs_upper", c.lhs_upper},
                       {"delta_f_worst", c.delta_f_worst},
                       {"delta_f_mean", c.delta_f_mean},
                       {"rhs", terms(c.rhs)},
                       {"holds", c.holds}});
    }
    json j{{"T", r.T},
           {"tau", r.tau},
           {"trials", r.trials},
           {"constants", {{"L", r.L}, {"sigma", r.sigma}, {"Z", r.Z}, {"C_K", r.C_K}, {"R", r.R}}},
           {"alpha", r.alpha},
           {"lr_cap", lr_cap(r.L, r.tau)},
           {"eta", r.eta},
           {"grad_sq_mean", r.grad_sq_mean},
           {"checkpoints", cps},
           {"holds", r.holds},
           {"rhs_decreasing", r.rhs_decreasing}};
    return j.dump(2);
}

std::string bound_curve_csv(const BoundReport& r) {
    std::ostringstream out;
    out << std::setprecision(17) << "t,eta,grad_sq_mean,lhs_upper,rhs\n";
    for (const auto& p : r.curve) out << p.t << ',' << p.eta << ',' << p.grad_sq_mean << ',' << p.lhs_upper << ',' << p.rhs << '\n';
    return out.str();
}

}  // namespace taplab::conv
