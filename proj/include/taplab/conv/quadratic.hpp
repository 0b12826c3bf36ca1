// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Block-structured quadratic federations with exactly known smoothness,
// noise and heterogeneity constants, and the component-wise FedAvg bound
// checks run on them.
//
// Client i owning block r sees g_{i,r}(w_r) = 0.5 (w_r - c_{i,r})^T Q_r (w_r - c_{i,r}).
// The global objective averages each block over its owners:
//   f(w) = sum_r (1/K_r) sum_{i owns r} g_{i,r}(w_r),   grad_r f = Q_r (w_r - cbar_r).

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace taplab::conv {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Point = std::vector<Vec>;  // one vector per block

struct QuadraticBlock {
    Mat Q;                            // symmetric PSD, shared by the owners
    std::vector<std::size_t> owners;  // ascending client ids, K_r = owners.size()
    std::vector<Vec> centers;         // c_{i,r}, aligned with `owners`
    Vec mean_center;                  // cbar_r, the block minimiser
    double lambda_max = 0.0;          // by power iteration
    double zeta_sq = 0.0;             // (1/K_r) sum_i ||Q_r (cbar_r - c_{i,r})||^2
};

struct QuadraticFederation {
    std::vector<QuadraticBlock> blocks;  // R + 1 of them
    std::size_t clients = 0;             // K
    double sigma = 0.0;                  // E||noise||^2 = sigma^2 per client gradient
    double L = 0.0;                      // max_r lambda_max(Q_r)
    double Z = 0.0;                      // sum_r zeta_r^2
    double C_K = 0.0;                    // sum_r 1/K_r
    Point initial;                       // W~_0

    std::size_t R() const { return blocks.size() - 1; }
    std::vector<std::size_t> client_blocks(std::size_t client) const;
    std::size_t client_dim(std::size_t client) const;

    double f(const Point& w) const;
    Point grad(const Point& w) const;
    double grad_norm_sq(const Point& w) const;
    double f_star() const;
};

// Largest eigenvalue of a symmetric PSD matrix.
double power_iteration(const Mat& Q, std::size_t max_iters = 10000, double tol = 1e-14);

// Fills the derived constants (minimisers, lambda_max, zeta, L, Z, C_K).
// Throws if a block has no owner, owner and center counts differ, or Q is not
// square and symmetric.
QuadraticFederation assemble(std::vector<QuadraticBlock> blocks, std::size_t clients, double sigma, Point initial);

struct QuadraticSpec {
    std::size_t R = 1;           // blocks are 0..R
    std::size_t block_dim = 4;   // d_r
    std::size_t clients = 4;     // K
    std::size_t owners_per_block = 2;
    double sigma = 0.0;
    double zeta = 0.0;           // every block gets zeta_r = zeta exactly
    double eig_min = 0.2;
    double eig_max = 1.0;        // Q_r spectrum drawn in [eig_min, eig_max], one eigenvalue pinned at eig_max
    double init_distance = 1.0;  // ||W~_0,r - cbar_r|| per block
    std::uint64_t seed = 0;
};

// Block r is owned by clients {r, r + K/2, ...} mod K (owners_per_block of
// them) and drawn from its own seed, so federations with more blocks extend
// those with fewer.
QuadraticFederation make_quadratic_federation(const QuadraticSpec& spec);

// min{1/(48 L tau), 1/(sqrt(8) L tau), (1/(96 L^3 tau^3))^(1/3)}.
double lr_cap(double L, std::size_t tau);

// eta_t = alpha / (t + 1), or constant alpha.
struct StepSchedule {
    double alpha = 0.0;
    bool diminishing = true;
    double at(std::size_t t) const { return diminishing ? alpha / static_cast<double>(t + 1) : alpha; }
};

struct StepSums {
    double s1 = 0.0, s2 = 0.0, s3 = 0.0;  // sum over t < T of eta_t, eta_t^2, eta_t^3
};
StepSums step_sums(const StepSchedule& s, std::size_t T);

struct Trajectories {
    std::vector<double> eta;                  // eta_t, t < T
    std::vector<std::vector<double>> grad_sq; // [trial][t], t <= T, ||grad f(W~_t)||^2
    std::vector<std::vector<double>> f;       // [trial][t], t <= T
};

// Full-participation component-wise FedAvg: every round each client runs tau
// noisy SGD steps on its owned blocks from the server point, then each block
// becomes the plain mean of its owners' copies. Throws if any eta_t exceeds
// lr_cap(L, tau).
Trajectories run_component_fedavg_quadratic(const QuadraticFederation& fed, std::size_t tau, std::size_t T,
                                            const StepSchedule& schedule, std::size_t trials, std::uint64_t seed);

struct RhsInputs {
    double delta_f = 0.0;
    StepSums sums;
    double Z = 0.0;
    std::size_t R = 0;
    double sigma = 0.0;
    double L = 0.0;
    std::size_t tau = 1;
    double C_K = 0.0;
};

struct RhsTerms {
    double optimality = 0.0;     // 8 df / S1
    double drift = 0.0;          // 16 (Z + (R+1) sigma^2 / 3) tau^3 L^2 S3 / S1
    double heterogeneity = 0.0;  // 48 L tau^2 Z S2 / S1
    double noise = 0.0;          // 16 L tau sigma^2 C_K S2 / S1
    double total = 0.0;
};

RhsTerms bound_rhs(const RhsInputs& in);

struct Checkpoint {
    std::size_t T = 0;
    StepSums sums;
    double lhs_mean = 0.0;
    double lhs_stderr = 0.0;
    double lhs_upper = 0.0;       // mean + 2 stderr
    double delta_f_worst = 0.0;   // min over trials of f(W~_0) - f(W~_T)
    double delta_f_mean = 0.0;
    RhsTerms rhs;
    bool holds = false;
};

struct CurvePoint {
    std::size_t t = 0;  // rounds completed
    double eta = 0.0;
    double grad_sq_mean = 0.0;
    double lhs_upper = 0.0;
    double rhs = 0.0;
};

struct BoundReport {
    std::size_t T = 0;
    std::size_t tau = 1;
    std::size_t trials = 0;
    double L = 0.0, sigma = 0.0, Z = 0.0, C_K = 0.0;
    std::size_t R = 0;
    double alpha = 0.0;
    std::vector<double> eta;
    std::vector<double> grad_sq_mean;  // t <= T
    std::vector<Checkpoint> checkpoints;  // T/4, T/2, T
    std::vector<CurvePoint> curve;
    bool holds = false;           // LHS upper <= RHS at every checkpoint
    bool rhs_decreasing = false;  // RHS strictly decreasing across the checkpoints
};

// Runs the trajectories and evaluates the bound at T/4, T/2 and T.
BoundReport verify_bound(const QuadraticFederation& fed, std::size_t tau, std::size_t T, const StepSchedule& schedule,
                         std::size_t trials, std::uint64_t seed);

std::string bound_report_json(const BoundReport& r);
std::string bound_curve_csv(const BoundReport& r);

}  // namespace taplab::conv
