// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Tape-style computation graph with reverse-mode differentiation.
//
// Nodes are appended in topological order. Whenever every input of a new node
// already carries a value the node is evaluated eagerly, so model code can
// build and read a graph in one pass. `eval` and `backward` can re-run the
// forward pass under a set of leaf bindings without mutating the graph, which
// makes a finished graph safe to share between threads.

#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "taplab/ad/tensor.hpp"

namespace taplab::ad {

struct NodeId {
    std::uint32_t index = 0;
    auto operator<=>(const NodeId&) const = default;
};

enum class Op {
    leaf,
    matmul,      // A(m,k) . B(k,n)
    matmul_nt,   // A(m,k) . B(n,k)^T
    add,
    sub,
    mul,         // elementwise
    add_row,     // X(m,n) + b(n) broadcast over rows
    relu,
    gelu,        // tanh approximation
    layer_norm,  // row-wise, inputs: x, gain(n), bias(n)
    softmax,     // row-wise
    log_softmax, // row-wise
    mse,         // mean((a - b)^2)
    cross_entropy, // -(1/m) sum t * log_softmax(logits), inputs: logits, targets
    scale,
    sum,
    mean,
    slice_cols,
    slice_rows,
    concat_cols,
    concat_rows,
    reshape,
};

const char* op_name(Op op);

class GraphError : public std::runtime_error {
public:
    GraphError(NodeId node, Op op, const std::string& what);
    NodeId node() const { return node_; }
    Op op() const { return op_; }

private:
    NodeId node_;
    Op op_;
};

class ShapeError : public GraphError {
public:
    using GraphError::GraphError;
};

class NonFiniteError : public GraphError {
public:
    using GraphError::GraphError;
};

using Bindings = std::map<NodeId, Tensor>;
using GradMap = std::map<NodeId, Tensor>;

class Graph {
public:
    struct Node {
        Op op = Op::leaf;
        std::vector<NodeId> inputs;
        Shape shape;
        std::optional<Tensor> value;
        bool trainable = false;
        double scalar = 0.0;            // scale factor or layer-norm epsilon
        std::size_t begin = 0, end = 0; // slice range
        std::string label;
    };

    // Leaves.
    NodeId leaf(Tensor value, bool trainable, std::string label = {});
    NodeId constant(Tensor value, std::string label = {}) { return leaf(std::move(value), false, std::move(label)); }
    NodeId parameter(Tensor value, std::string label = {}) { return leaf(std::move(value), true, std::move(label)); }
    // Unbound leaf; its value must be supplied through Bindings.
    NodeId placeholder(Shape shape, bool trainable = false, std::string label = {});

    // Primitives.
    NodeId matmul(NodeId a, NodeId b);
    NodeId matmul_nt(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId add_row(NodeId x, NodeId bias);
    NodeId relu(NodeId x);
    NodeId gelu(NodeId x);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps = 1e-5);
    NodeId softmax(NodeId x);
    NodeId log_softmax(NodeId x);
    NodeId mse(NodeId a, NodeId b);
    NodeId cross_entropy(NodeId logits, NodeId targets);
    NodeId scale(NodeId x, double factor);
    NodeId sum(NodeId x);
    NodeId mean(NodeId x);
    NodeId slice_cols(NodeId x, std::size_t begin, std::size_t end);
    NodeId slice_rows(NodeId x, std::size_t begin, std::size_t end);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId reshape(NodeId x, Shape shape);

    std::size_t size() const { return nodes_.size(); }
    const Node& node(NodeId id) const;
    const Shape& shape(NodeId id) const { return node(id).shape; }
    // Cached eager value; throws if the node depends on an unbound placeholder.
    const Tensor& value(NodeId id) const;
    std::vector<NodeId> trainable_leaves() const;

    // Evaluates `root` under `bindings` (which override any stored leaf value).
    Tensor eval(NodeId root, const Bindings& bindings = {}) const;

    // Reverse-mode gradients of scalar `root` for every trainable leaf.
    // Leaves that do not influence `root` receive zero gradients.
    GradMap backward(NodeId root, const Bindings& bindings = {}) const;

private:
    NodeId push(Node node);
    std::vector<const Tensor*> forward_values(NodeId root, const Bindings& bindings,
                                              std::vector<Tensor>& storage) const;

    std::vector<Node> nodes_;
};

// Max relative error between `backward` and central finite differences over
// every coordinate of `leaf`. The relative error of one coordinate is
// |a - b| / max(|a|, |b|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-6;
double grad_check(const Graph& graph, NodeId root, NodeId leaf, double step);

}  // namespace taplab::ad
