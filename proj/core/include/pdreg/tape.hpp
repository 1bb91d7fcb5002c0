#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "pdreg/tensor.hpp"
#include "pdreg/volume.hpp"

namespace pdreg::ad {

using NodeId = std::int32_t;

/// Reverse-mode tape over dense tensors. Recording is eager: every op
/// computes its value immediately and registers a backward rule. Node ids
/// are topologically ordered by construction; backward() visits them once
/// in reverse. A tape is single-writer during forward recording and
/// single-owner during backward.
class Tape {
public:
    NodeId leaf(Tensor value, bool track = false);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    bool tracked(NodeId id) const { return nodes_[id].track; }
    std::size_t size() const { return nodes_.size(); }

    /// Accumulates d(loss)/d(node) for every tracked node. `loss` must be
    /// scalar. Gradients from a previous backward() call are discarded.
    void backward(NodeId loss);

    /// Gradient of the last backward() loss w.r.t. this node.
    const Tensor& grad(NodeId id) const;

    // -- recording internals (used by op implementations) --
    using BackwardFn = std::function<void(Tape&, NodeId self)>;
    NodeId record(Tensor value, const std::vector<NodeId>& parents, BackwardFn fn);
    Tensor& grad_buffer(NodeId id) { return nodes_[id].grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn backward;
        bool track = false;
    };
    std::vector<Node> nodes_;
};

// ---- elementwise ----
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId divide(Tape& t, NodeId a, NodeId b);
NodeId scalar_mul(Tape& t, NodeId a, double s);
NodeId scalar_add(Tape& t, NodeId a, double s);
NodeId max_scalar(Tape& t, NodeId a, double s);
NodeId tanh(Tape& t, NodeId a);
NodeId exp(Tape& t, NodeId a);
NodeId sqrt(Tape& t, NodeId a);
NodeId leaky_relu(Tape& t, NodeId a, double slope);
/// Elementwise clamp against constant bounds; gradient passes where
/// lo <= x <= hi and is cut where the input was moved onto a bound.
NodeId clamp_const(Tape& t, NodeId a, const Tensor& lo, const Tensor& hi);

// ---- reductions ----
NodeId sum(Tape& t, NodeId a);
NodeId mean(Tape& t, NodeId a);
NodeId sum_axis(Tape& t, NodeId a, int axis);
/// softmax(temperature * x) along `axis`.
NodeId softmax(Tape& t, NodeId a, int axis, double temperature);

// ---- shape ----
NodeId reshape(Tape& t, NodeId a, std::vector<int> shape);
NodeId transpose2d(Tape& t, NodeId a);
NodeId slice(Tape& t, NodeId a, const std::vector<int>& offset, const std::vector<int>& extent);
NodeId concat(Tape& t, const std::vector<NodeId>& xs, int axis);
/// (N, ...) -> (N*times, ...): row r of the output is row r/times of the input.
NodeId repeat_rows(Tape& t, NodeId a, int times);
NodeId gather_rows(Tape& t, NodeId a, std::vector<int> rows);

// ---- linear maps with constant coefficients ----
/// x (R,A) times constant m (A,B) -> (R,B).
NodeId matmul_const(Tape& t, NodeId x, const Tensor& m);

/// CSR-style constant row mixer: out[r] = sum_k w[k] * x[col[k]], rows of x
/// treated as vectors. Used for graph-weighted sums and kernel interpolation.
struct SparseRows {
    std::vector<std::int64_t> ptr; // size rows+1
    std::vector<int> col;
    std::vector<double> w;
    int rows = 0;
    int cols = 0; // number of input rows
};
NodeId sparse_mix(Tape& t, NodeId x, std::shared_ptr<const SparseRows> rows);

// ---- neural ops ----
/// x (Cin,Z,Y,X), w (Cout,Cin,kz,ky,kx), optional bias (Cout); zero padding.
NodeId conv3d(Tape& t, NodeId x, NodeId w, std::optional<NodeId> bias, int stride, int pad);
NodeId avg_pool3d(Tape& t, NodeId x, int k);
/// vol (C,Z,Y,X) sampled at coords (P,3) with rows (x,y,z) -> (P,C).
/// Trilinear with border clamping; gradients flow to both inputs.
NodeId grid_sample(Tape& t, NodeId vol, NodeId coords);

// ---- conversions ----
Tensor volume_to_tensor(const Volume& v);
Volume tensor_to_volume(const Tensor& t);

} // namespace pdreg::ad
