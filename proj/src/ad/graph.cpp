// Copyright (c) 2026, The TAP Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "taplab/ad/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>

namespace taplab::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_mat(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap as_mat(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

std::size_t rows_of(const Shape& s) { return s.size() == 2 ? s[0] : 1; }
std::size_t cols_of(const Shape& s) { return s.back(); }

constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

// ---------------------------------------------------------------------------
// Shape inference
// ---------------------------------------------------------------------------

Shape infer_shape(NodeId id, const Graph::Node& n, const std::vector<const Shape*>& in) {
    auto fail = [&](const std::string& msg) -> ShapeError {
        std::string detail = msg + " (inputs:";
        for (auto* s : in) detail += " " + shape_str(*s);
        detail += ")";
        return ShapeError(id, n.op, detail);
    };
    switch (n.op) {
    case Op::leaf:
        return n.shape;
    case Op::matmul: {
        if (cols_of(*in[0]) != rows_of(*in[1])) throw fail("inner dimensions differ");
        return {rows_of(*in[0]), cols_of(*in[1])};
    }
    case Op::matmul_nt: {
        if (cols_of(*in[0]) != cols_of(*in[1])) throw fail("inner dimensions differ");
        return {rows_of(*in[0]), rows_of(*in[1])};
    }
    case Op::add:
    case Op::sub:
    case Op::mul:
    case Op::mse:
    case Op::cross_entropy:
        if (*in[0] != *in[1]) throw fail("operand shapes differ");
        if (n.op == Op::mse || n.op == Op::cross_entropy) return {1};
        return *in[0];
    case Op::add_row:
        if (shape_size(*in[1]) != cols_of(*in[0]) || rows_of(*in[1]) != 1) throw fail("bias must be a row of width cols(x)");
        return *in[0];
    case Op::layer_norm: {
        const auto width = cols_of(*in[0]);
        if (shape_size(*in[1]) != width || shape_size(*in[2]) != width) throw fail("gain/bias width must equal cols(x)");
        return *in[0];
    }
    case Op::relu:
    case Op::gelu:
    case Op::softmax:
    case Op::log_softmax:
    case Op::scale:
        return *in[0];
    case Op::sum:
    case Op::mean:
        return {1};
    case Op::slice_cols:
        if (n.begin >= n.end || n.end > cols_of(*in[0])) throw fail("bad column range");
        return {rows_of(*in[0]), n.end - n.begin};
    case Op::slice_rows:
        if (n.begin >= n.end || n.end > rows_of(*in[0])) throw fail("bad row range");
        return {n.end - n.begin, cols_of(*in[0])};
    case Op::concat_cols: {
        std::size_t cols = 0;
        for (auto* s : in) {
            if (rows_of(*s) != rows_of(*in[0])) throw fail("row counts differ");
            cols += cols_of(*s);
        }
        return {rows_of(*in[0]), cols};
    }
    case Op::concat_rows: {
        std::size_t rows = 0;
        for (auto* s : in) {
            if (cols_of(*s) != cols_of(*in[0])) throw fail("column counts differ");
            rows += rows_of(*s);
        }
        return {rows, cols_of(*in[0])};
    }
    case Op::reshape:
        if (shape_size(n.shape) != shape_size(*in[0])) throw fail("reshape changes element count");
        return n.shape;
    }
    throw fail("unknown op");
}

// ---------------------------------------------------------------------------
// Forward kernels
// ---------------------------------------------------------------------------

void softmax_rows(const Tensor& x, Tensor& out, bool log_space) {
    const auto m = x.rows(), n = x.cols();
    for (std::size_t r = 0; r < m; ++r) {
        const double* xr = x.data().data() + r * n;
        double* yr = out.data().data() + r * n;
        const double mx = *std::max_element(xr, xr + n);
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) z += std::exp(xr[c] - mx);
        if (log_space) {
            const double lse = mx + std::log(z);
            for (std::size_t c = 0; c < n; ++c) yr[c] = xr[c] - lse;
        } else {
            for (std::size_t c = 0; c < n; ++c) yr[c] = std::exp(xr[c] - mx) / z;
        }
    }
}

Tensor forward_op(const Graph::Node& n, const std::vector<const Tensor*>& in) {
    Tensor out(n.shape);
    auto o = out.data();
    switch (n.op) {
    case Op::leaf:
        break;
    case Op::matmul:
        as_mat(out).noalias() = as_mat(*in[0]) * as_mat(*in[1]);
        break;
    case Op::matmul_nt:
        as_mat(out).noalias() = as_mat(*in[0]) * as_mat(*in[1]).transpose();
        break;
    case Op::add:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = (*in[0])[i] + (*in[1])[i];
        break;
    case Op::sub:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = (*in[0])[i] - (*in[1])[i];
        break;
    case Op::mul:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = (*in[0])[i] * (*in[1])[i];
        break;
    case Op::add_row: {
        const auto cols = out.cols();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = (*in[0])[i] + (*in[1])[i % cols];
        break;
    }
    case Op::relu:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::max(0.0, (*in[0])[i]);
        break;
    case Op::gelu:
        for (std::size_t i = 0; i < o.size(); ++i) {
            const double x = (*in[0])[i];
            o[i] = 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
        }
        break;
    case Op::layer_norm: {
        const auto& x = *in[0];
        const auto m = x.rows(), w = x.cols();
        for (std::size_t r = 0; r < m; ++r) {
            const double* xr = x.data().data() + r * w;
            double mu = 0.0;
            for (std::size_t c = 0; c < w; ++c) mu += xr[c];
            mu /= static_cast<double>(w);
            double var = 0.0;
            for (std::size_t c = 0; c < w; ++c) var += (xr[c] - mu) * (xr[c] - mu);
            var /= static_cast<double>(w);
            const double inv = 1.0 / std::sqrt(var + n.scalar);
            for (std::size_t c = 0; c < w; ++c) {
                o[r * w + c] = (*in[1])[c] * (xr[c] - mu) * inv + (*in[2])[c];
            }
        }
        break;
    }
    case Op::softmax:
        softmax_rows(*in[0], out, false);
        break;
    case Op::log_softmax:
        softmax_rows(*in[0], out, true);
        break;
    case Op::mse: {
        double acc = 0.0;
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
            const double d = (*in[0])[i] - (*in[1])[i];
            acc += d * d;
        }
        o[0] = acc / static_cast<double>(in[0]->size());
        break;
    }
    case Op::cross_entropy: {
        Tensor ls(in[0]->shape());
        softmax_rows(*in[0], ls, true);
        double acc = 0.0;
        for (std::size_t i = 0; i < ls.size(); ++i) acc -= (*in[1])[i] * ls[i];
        o[0] = acc / static_cast<double>(in[0]->rows());
        break;
    }
    case Op::scale:
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = n.scalar * (*in[0])[i];
        break;
    case Op::sum:
    case Op::mean: {
        double acc = 0.0;
        for (double v : in[0]->data()) acc += v;
        o[0] = n.op == Op::mean ? acc / static_cast<double>(in[0]->size()) : acc;
        break;
    }
    case Op::slice_cols: {
        const auto& x = *in[0];
        const auto w = out.cols();
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < w; ++c) o[r * w + c] = x.at(r, n.begin + c);
        break;
    }
    case Op::slice_rows: {
        const auto w = out.cols();
        std::copy_n(in[0]->data().begin() + static_cast<std::ptrdiff_t>(n.begin * w), out.size(), o.begin());
        break;
    }
    case Op::concat_cols: {
        const auto w = out.cols();
        std::size_t off = 0;
        for (auto* part : in) {
            const auto pw = part->cols();
            for (std::size_t r = 0; r < out.rows(); ++r)
                for (std::size_t c = 0; c < pw; ++c) o[r * w + off + c] = part->at(r, c);
            off += pw;
        }
        break;
    }
    case Op::concat_rows: {
        auto it = o.begin();
        for (auto* part : in) it = std::copy(part->data().begin(), part->data().end(), it);
        break;
    }
    case Op::reshape:
        std::copy(in[0]->data().begin(), in[0]->data().end(), o.begin());
        break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backward kernels: accumulate into the non-null entries of `gin`.
// ---------------------------------------------------------------------------

void backward_op(const Graph::Node& n, const std::vector<const Tensor*>& in, const Tensor& out,
                 const Tensor& gout, const std::vector<Tensor*>& gin) {
    const auto g = gout.data();
    switch (n.op) {
    case Op::leaf:
        break;
    case Op::matmul:
        if (gin[0]) as_mat(*gin[0]).noalias() += as_mat(gout) * as_mat(*in[1]).transpose();
        if (gin[1]) as_mat(*gin[1]).noalias() += as_mat(*in[0]).transpose() * as_mat(gout);
        break;
    case Op::matmul_nt:
        if (gin[0]) as_mat(*gin[0]).noalias() += as_mat(gout) * as_mat(*in[1]);
        if (gin[1]) as_mat(*gin[1]).noalias() += as_mat(gout).transpose() * as_mat(*in[0]);
        break;
    case Op::add:
        for (int k = 0; k < 2; ++k)
            if (gin[k])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[k])[i] += g[i];
        break;
    case Op::sub:
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
        break;
    case Op::mul:
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*in[1])[i];
        if (gin[1])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*in[0])[i];
        break;
    case Op::add_row: {
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        if (gin[1]) {
            const auto cols = out.cols();
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i % cols] += g[i];
        }
        break;
    }
    case Op::relu:
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i)
                if ((*in[0])[i] > 0.0) (*gin[0])[i] += g[i];
        break;
    case Op::gelu:
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = (*in[0])[i];
                const double t = std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x));
                const double dt = (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * x * x);
                (*gin[0])[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
            }
        break;
    case Op::layer_norm: {
        const auto& x = *in[0];
        const auto m = x.rows(), w = x.cols();
        std::vector<double> xhat(w), dxhat(w);
        for (std::size_t r = 0; r < m; ++r) {
            const double* xr = x.data().data() + r * w;
            double mu = 0.0;
            for (std::size_t c = 0; c < w; ++c) mu += xr[c];
            mu /= static_cast<double>(w);
            double var = 0.0;
            for (std::size_t c = 0; c < w; ++c) var += (xr[c] - mu) * (xr[c] - mu);
            var /= static_cast<double>(w);
            const double inv = 1.0 / std::sqrt(var + n.scalar);
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t c = 0; c < w; ++c) {
                xhat[c] = (xr[c] - mu) * inv;
                const double gy = g[r * w + c];
                dxhat[c] = gy * (*in[1])[c];
                if (gin[1]) (*gin[1])[c] += gy * xhat[c];
                if (gin[2]) (*gin[2])[c] += gy;
                mean_d += dxhat[c];
                mean_dx += dxhat[c] * xhat[c];
            }
            mean_d /= static_cast<double>(w);
            mean_dx /= static_cast<double>(w);
            if (gin[0])
                for (std::size_t c = 0; c < w; ++c)
                    (*gin[0])[r * w + c] += inv * (dxhat[c] - mean_d - xhat[c] * mean_dx);
        }
        break;
    }
    case Op::softmax: {
        if (!gin[0]) break;
        const auto m = out.rows(), w = out.cols();
        for (std::size_t r = 0; r < m; ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < w; ++c) dot += g[r * w + c] * out[r * w + c];
            for (std::size_t c = 0; c < w; ++c) (*gin[0])[r * w + c] += out[r * w + c] * (g[r * w + c] - dot);
        }
        break;
    }
    case Op::log_softmax: {
        if (!gin[0]) break;
        const auto m = out.rows(), w = out.cols();
        for (std::size_t r = 0; r < m; ++r) {
            double gs = 0.0;
            for (std::size_t c = 0; c < w; ++c) gs += g[r * w + c];
            for (std::size_t c = 0; c < w; ++c) (*gin[0])[r * w + c] += g[r * w + c] - std::exp(out[r * w + c]) * gs;
        }
        break;
    }
    case Op::mse: {
        const double k = 2.0 * g[0] / static_cast<double>(in[0]->size());
        for (std::size_t i = 0; i < in[0]->size(); ++i) {
            const double d = (*in[0])[i] - (*in[1])[i];
            if (gin[0]) (*gin[0])[i] += k * d;
            if (gin[1]) (*gin[1])[i] -= k * d;
        }
        break;
    }
    case Op::cross_entropy: {
        const auto& logits = *in[0];
        const auto& t = *in[1];
        Tensor ls(logits.shape());
        softmax_rows(logits, ls, true);
        const auto m = logits.rows(), w = logits.cols();
        const double k = g[0] / static_cast<double>(m);
        for (std::size_t r = 0; r < m; ++r) {
            double tsum = 0.0;
            for (std::size_t c = 0; c < w; ++c) tsum += t[r * w + c];
            for (std::size_t c = 0; c < w; ++c) {
                const auto i = r * w + c;
                if (gin[0]) (*gin[0])[i] += k * (std::exp(ls[i]) * tsum - t[i]);
                if (gin[1]) (*gin[1])[i] -= k * ls[i];
            }
        }
        break;
    }
    case Op::scale:
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += n.scalar * g[i];
        break;
    case Op::sum:
    case Op::mean: {
        if (!gin[0]) break;
        const double k = n.op == Op::mean ? g[0] / static_cast<double>(in[0]->size()) : g[0];
        for (auto& v : gin[0]->data()) v += k;
        break;
    }
    case Op::slice_cols: {
        if (!gin[0]) break;
        const auto w = out.cols();
        for (std::size_t r = 0; r < out.rows(); ++r)
            for (std::size_t c = 0; c < w; ++c) gin[0]->at(r, n.begin + c) += g[r * w + c];
        break;
    }
    case Op::slice_rows: {
        if (!gin[0]) break;
        const auto off = n.begin * out.cols();
        for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[off + i] += g[i];
        break;
    }
    case Op::concat_cols: {
        const auto w = out.cols();
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
            const auto pw = in[k]->cols();
            if (gin[k])
                for (std::size_t r = 0; r < out.rows(); ++r)
                    for (std::size_t c = 0; c < pw; ++c) gin[k]->at(r, c) += g[r * w + off + c];
            off += pw;
        }
        break;
    }
    case Op::concat_rows: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < in.size(); ++k) {
            if (gin[k])
                for (std::size_t i = 0; i < in[k]->size(); ++i) (*gin[k])[i] += g[off + i];
            off += in[k]->size();
        }
        break;
    }
    case Op::reshape:
        if (gin[0])
            for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
        break;
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::matmul_nt: return "matmul_nt";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::add_row: return "add_row";
    case Op::relu: return "relu";
    case Op::gelu: return "gelu";
    case Op::layer_norm: return "layer_norm";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::mse: return "mse";
    case Op::cross_entropy: return "cross_entropy";
    case Op::scale: return "scale";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::slice_cols: return "slice_cols";
    case Op::slice_rows: return "slice_rows";
    case Op::concat_cols: return "concat_cols";
    case Op::concat_rows: return "concat_rows";
    case Op::reshape: return "reshape";
    }
    return "?";
}

GraphError::GraphError(NodeId node, Op op, const std::string& what)
    : std::runtime_error("node " + std::to_string(node.index) + " (" + op_name(op) + "): " + what),
      node_(node),
      op_(op) {}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

NodeId Graph::push(Node node) {
    const NodeId id{static_cast<std::uint32_t>(nodes_.size())};
    std::vector<const Shape*> in_shapes;
    in_shapes.reserve(node.inputs.size());
    bool ready = true;
    for (auto in : node.inputs) {
        if (in.index >= nodes_.size()) throw GraphError(id, node.op, "input refers to a later node");
        in_shapes.push_back(&nodes_[in.index].shape);
        ready = ready && nodes_[in.index].value.has_value();
    }
    node.shape = infer_shape(id, node, in_shapes);
    if (node.op != Op::leaf && ready) {
        std::vector<const Tensor*> in_vals;
        in_vals.reserve(node.inputs.size());
        for (auto in : node.inputs) in_vals.push_back(&*nodes_[in.index].value);
        Tensor v = forward_op(node, in_vals);
        if (!v.all_finite()) throw NonFiniteError(id, node.op, "non-finite value produced");
        node.value = std::move(v);
    }
    nodes_.push_back(std::move(node));
    return id;
}

NodeId Graph::leaf(Tensor value, bool trainable, std::string label) {
    Node n;
    n.op = Op::leaf;
    n.shape = value.shape();
    if (!value.all_finite()) throw NonFiniteError(NodeId{static_cast<std::uint32_t>(nodes_.size())}, Op::leaf, "non-finite leaf value");
    n.value = std::move(value);
    n.trainable = trainable;
    n.label = std::move(label);
    return push(std::move(n));
}

NodeId Graph::placeholder(Shape shape, bool trainable, std::string label) {
    Node n;
    n.op = Op::leaf;
    n.shape = std::move(shape);
    (void)shape_size(n.shape);
    n.trainable = trainable;
    n.label = std::move(label);
    return push(std::move(n));
}

namespace {
Graph::Node make(Op op, std::vector<NodeId> inputs) {
    Graph::Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    return n;
}
}  // namespace

NodeId Graph::matmul(NodeId a, NodeId b) { return push(make(Op::matmul, {a, b})); }
NodeId Graph::matmul_nt(NodeId a, NodeId b) { return push(make(Op::matmul_nt, {a, b})); }
NodeId Graph::add(NodeId a, NodeId b) { return push(make(Op::add, {a, b})); }
NodeId Graph::sub(NodeId a, NodeId b) { return push(make(Op::sub, {a, b})); }
NodeId Graph::mul(NodeId a, NodeId b) { return push(make(Op::mul, {a, b})); }
NodeId Graph::add_row(NodeId x, NodeId bias) { return push(make(Op::add_row, {x, bias})); }
NodeId Graph::relu(NodeId x) { return push(make(Op::relu, {x})); }
NodeId Graph::gelu(NodeId x) { return push(make(Op::gelu, {x})); }
NodeId Graph::softmax(NodeId x) { return push(make(Op::softmax, {x})); }
NodeId Graph::log_softmax(NodeId x) { return push(make(Op::log_softmax, {x})); }
NodeId Graph::mse(NodeId a, NodeId b) { return push(make(Op::mse, {a, b})); }
NodeId Graph::cross_entropy(NodeId logits, NodeId targets) { return push(make(Op::cross_entropy, {logits, targets})); }
NodeId Graph::sum(NodeId x) { return push(make(Op::sum, {x})); }
NodeId Graph::mean(NodeId x) { return push(make(Op::mean, {x})); }

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
    auto n = make(Op::layer_norm, {x, gain, bias});
    n.scalar = eps;
    return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
    auto n = make(Op::scale, {x});
    n.scalar = factor;
    return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId x, std::size_t begin, std::size_t end) {
    auto n = make(Op::slice_cols, {x});
    n.begin = begin;
    n.end = end;
    return push(std::move(n));
}

NodeId Graph::slice_rows(NodeId x, std::size_t begin, std::size_t end) {
    auto n = make(Op::slice_rows, {x});
    n.begin = begin;
    n.end = end;
    return push(std::move(n));
}

NodeId Graph::concat_cols(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
    return push(make(Op::concat_cols, parts));
}

NodeId Graph::concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
    return push(make(Op::concat_rows, parts));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
    auto n = make(Op::reshape, {x});
    n.shape = std::move(shape);
    return push(std::move(n));
}

const Graph::Node& Graph::node(NodeId id) const {
    if (id.index >= nodes_.size()) throw std::out_of_range("unknown node " + std::to_string(id.index));
    return nodes_[id.index];
}

const Tensor& Graph::value(NodeId id) const {
    const auto& n = node(id);
    if (!n.value) throw GraphError(id, n.op, "node has no value (depends on an unbound placeholder)");
    return *n.value;
}

std::vector<NodeId> Graph::trainable_leaves() const {
    std::vector<NodeId> out;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].op == Op::leaf && nodes_[i].trainable) out.push_back(NodeId{i});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

std::vector<const Tensor*> Graph::forward_values(NodeId root, const Bindings& bindings,
                                                 std::vector<Tensor>& storage) const {
    (void)node(root);
    const std::size_t count = root.index + 1;
    std::vector<const Tensor*> vals(count, nullptr);
    if (bindings.empty()) {
        bool cached = true;
        for (std::size_t i = 0; i < count && cached; ++i) cached = nodes_[i].value.has_value();
        if (cached) {
            for (std::size_t i = 0; i < count; ++i) vals[i] = &*nodes_[i].value;
            return vals;
        }
    }
    for (const auto& [id, t] : bindings) {
        const auto& n = node(id);
        if (n.op != Op::leaf) throw GraphError(id, n.op, "only leaves can be bound");
        if (t.shape() != n.shape) throw ShapeError(id, n.op, "binding shape " + shape_str(t.shape()) + " != " + shape_str(n.shape));
    }
    // Recompute everything downstream of a binding; reuse cached values otherwise.
    std::vector<char> dirty(count, 0);
    storage.clear();
    storage.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto& n = nodes_[i];
        const NodeId id{i};
        if (n.op == Op::leaf) {
            if (auto it = bindings.find(id); it != bindings.end()) {
                vals[i] = &it->second;
                dirty[i] = 1;
            } else if (n.value) {
                vals[i] = &*n.value;
            } else {
                throw GraphError(id, n.op, "unbound placeholder '" + n.label + "'");
            }
            continue;
        }
        bool any_dirty = !n.value.has_value();
        for (auto in : n.inputs) any_dirty = any_dirty || dirty[in.index];
        if (!any_dirty) {
            vals[i] = &*n.value;
            continue;
        }
        std::vector<const Tensor*> in_vals;
        for (auto in : n.inputs) in_vals.push_back(vals[in.index]);
        Tensor v = forward_op(n, in_vals);
        if (!v.all_finite()) throw NonFiniteError(id, n.op, "non-finite value produced");
        storage.push_back(std::move(v));
        vals[i] = &storage.back();
        dirty[i] = 1;
    }
    return vals;
}

Tensor Graph::eval(NodeId root, const Bindings& bindings) const {
    std::vector<Tensor> storage;
    auto vals = forward_values(root, bindings, storage);
    return *vals[root.index];
}

GradMap Graph::backward(NodeId root, const Bindings& bindings) const {
    const auto& rn = node(root);
    if (shape_size(rn.shape) != 1) throw ShapeError(root, rn.op, "backward requires a scalar root, got " + shape_str(rn.shape));
    std::vector<Tensor> storage;
    auto vals = forward_values(root, bindings, storage);

    const std::size_t count = root.index + 1;
    std::vector<char> needs(count, 0);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& n = nodes_[i];
        if (n.op == Op::leaf) {
            needs[i] = n.trainable;
        } else {
            for (auto in : n.inputs) needs[i] = needs[i] || needs[in.index];
        }
    }

    std::vector<std::optional<Tensor>> grads(count);
    grads[root.index] = Tensor(rn.shape, 1.0);
    for (std::size_t i = count; i-- > 0;) {
        const auto& n = nodes_[i];
        if (n.op == Op::leaf || !grads[i] || !needs[i]) continue;
        std::vector<const Tensor*> in_vals;
        std::vector<Tensor*> gin;
        for (auto in : n.inputs) {
            in_vals.push_back(vals[in.index]);
            if (needs[in.index]) {
                if (!grads[in.index]) grads[in.index] = Tensor(nodes_[in.index].shape, 0.0);
                gin.push_back(&*grads[in.index]);
            } else {
                gin.push_back(nullptr);
            }
        }
        // Inputs repeated in one node (e.g. mul(x, x)) share one accumulator, so
        // every contribution lands on the same tensor.
        backward_op(n, in_vals, *vals[i], *grads[i], gin);
    }

    GradMap out;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        if (n.op != Op::leaf || !n.trainable) continue;
        if (i < count && grads[i]) {
            out.emplace(NodeId{i}, std::move(*grads[i]));
        } else {
            out.emplace(NodeId{i}, Tensor(n.shape, 0.0));
        }
    }
    return out;
}

double grad_check(const Graph& graph, NodeId root, NodeId leaf, double step) {
    if (!(step > 0.0 && step <= 1e-2)) throw std::invalid_argument("grad_check step must lie in (0, 1e-2]");
    const auto& ln = graph.node(leaf);
    if (ln.op != Op::leaf || !ln.trainable) throw std::invalid_argument("grad_check target must be a trainable leaf");
    const auto grads = graph.backward(root);
    const Tensor& analytic = grads.at(leaf);
    Tensor base = graph.value(leaf);
    double worst = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
        Tensor plus = base, minus = base;
        plus[i] += step;
        minus[i] -= step;
        const double fp = graph.eval(root, {{leaf, plus}}).item();
        const double fm = graph.eval(root, {{leaf, minus}}).item();
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace taplab::ad
