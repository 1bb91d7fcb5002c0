#include "pdreg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pdreg::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b)
{
    throw DataError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                    shape_str(b.shape));
}

void lane_extents(const std::vector<int>& shape, int axis, std::size_t& outer, std::size_t& len,
                  std::size_t& inner)
{
    if (axis < 0 || axis >= static_cast<int>(shape.size()))
        throw DataError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    outer = 1;
    for (int i = 0; i < axis; ++i)
        outer *= shape[i];
    len = shape[axis];
    inner = 1;
    for (int i = axis + 1; i < static_cast<int>(shape.size()); ++i)
        inner *= shape[i];
}

std::vector<std::size_t> row_strides(const std::vector<int>& shape)
{
    std::vector<std::size_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        s[i] = s[i + 1] * shape[i + 1];
    return s;
}

} // namespace

NodeId Tape::leaf(Tensor value, bool track)
{
    Node n;
    n.value = std::move(value);
    n.track = track;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::record(Tensor value, const std::vector<NodeId>& parents, BackwardFn fn)
{
    Node n;
    n.value = std::move(value);
    n.track = false;
    for (NodeId p : parents)
        n.track = n.track || nodes_[p].track;
    if (n.track)
        n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

void Tape::backward(NodeId loss)
{
    if (value(loss).numel() != 1)
        throw DataError("backward: loss must be scalar, got " + shape_str(value(loss).shape));
    if (!nodes_[loss].track)
        throw DataError("backward: loss does not depend on any tracked node");
    for (auto& n : nodes_)
        n.grad = n.track ? Tensor::zeros(n.value.shape) : Tensor();
    nodes_[loss].grad.data[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id)
        if (nodes_[id].track && nodes_[id].backward)
            nodes_[id].backward(*this, id);
}

const Tensor& Tape::grad(NodeId id) const
{
    if (nodes_[id].grad.numel() == 0)
        throw DataError("grad requested for a node without gradient (untracked or no backward run)");
    return nodes_[id].grad;
}

// ---------------------------------------------------------------- elementwise

namespace {

template <class Fwd, class Bwd>
NodeId unary_op(Tape& t, NodeId a, Fwd fwd, Bwd bwd)
{
    const Tensor& av = t.value(a);
    Tensor out = Tensor::zeros(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i)
        out.data[i] = fwd(av.data[i]);
    return t.record(std::move(out), {a}, [a, bwd](Tape& tp, NodeId self) {
        if (!tp.tracked(a))
            return;
        const Tensor& g = tp.grad(self);
        const Tensor& av2 = tp.value(a);
        const Tensor& ov = tp.value(self);
        Tensor& ga = tp.grad_buffer(a);
        for (std::size_t i = 0; i < g.numel(); ++i)
            ga.data[i] += bwd(av2.data[i], ov.data[i]) * g.data[i];
    });
}

} // namespace

NodeId add(Tape& t, NodeId a, NodeId b)
{
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!same_shape(av, bv))
        shape_error("add", av, bv);
    Tensor out = Tensor::zeros(av.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = av.data[i] + bv.data[i];
    return t.record(std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        if (tp.tracked(a)) {
            Tensor& ga = tp.grad_buffer(a);
            for (std::size_t i = 0; i < g.numel(); ++i)
                ga.data[i] += g.data[i];
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buffer(b);
            for (std::size_t i = 0; i < g.numel(); ++i)
                gb.data[i] += g.data[i];
        }
    });
}

NodeId sub(Tape& t, NodeId a, NodeId b)
{
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!same_shape(av, bv))
        shape_error("sub", av, bv);
    Tensor out = Tensor::zeros(av.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = av.data[i] - bv.data[i];
    return t.record(std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        if (tp.tracked(a)) {
            Tensor& ga = tp.grad_buffer(a);
            for (std::size_t i = 0; i < g.numel(); ++i)
                ga.data[i] += g.data[i];
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buffer(b);
            for (std::size_t i = 0; i < g.numel(); ++i)
                gb.data[i] -= g.data[i];
        }
    });
}

NodeId mul(Tape& t, NodeId a, NodeId b)
{
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!same_shape(av, bv))
        shape_error("mul", av, bv);
    Tensor out = Tensor::zeros(av.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = av.data[i] * bv.data[i];
    return t.record(std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        const Tensor& av2 = tp.value(a);
        const Tensor& bv2 = tp.value(b);
        if (tp.tracked(a)) {
            Tensor& ga = tp.grad_buffer(a);
            for (std::size_t i = 0; i < g.numel(); ++i)
                ga.data[i] += bv2.data[i] * g.data[i];
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buffer(b);
            for (std::size_t i = 0; i < g.numel(); ++i)
                gb.data[i] += av2.data[i] * g.data[i];
        }
    });
}

NodeId divide(Tape& t, NodeId a, NodeId b)
{
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!same_shape(av, bv))
        shape_error("divide", av, bv);
    Tensor out = Tensor::zeros(av.shape);
    for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = av.data[i] / bv.data[i];
    return t.record(std::move(out), {a, b}, [a, b](Tape& tp, NodeId self) {
        const Tensor& g = tp.grad(self);
        const Tensor& bv2 = tp.value(b);
        const Tensor& ov = tp.value(self);
        if (tp.tracked(a)) {
            Tensor& ga = tp.grad_buffer(a);
            for (std::size_t i = 0; i < g.numel(); ++i)
                ga.data[i] += g.data[i] / bv2.data[i];
        }
        if (tp.tracked(b)) {
            Tensor& gb = tp.grad_buffer(b);
            for (std::size_t i = 0; i < g.numel(); ++i)
                gb.data[i] -= g.data[i] * ov.data[i] / bv2.data[i];
        }
    });
}

NodeId scalar_mul(Tape& t, NodeId a, double s)
{
    return unary_op(
        t, a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

NodeId scalar_add(Tape& t, NodeId a, double s)
{
    return unary_op(
        t, a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

NodeId max_scalar(Tape& t, NodeId a, double s)
{
    return unary_op(
        t, a, [s](double x) { return std::max(x, s); },
        [s](double x, double) { return x > s ? 1.0 : 0.0; });
}

NodeId tanh(Tape& t, NodeId a)
{
    return unary_op(
        t, a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

NodeId exp(Tape& t, NodeId a)
{
    return unary_op(
        t, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

NodeId sqrt(Tape& t, NodeId a)
{
    return unary_op(
        t, a, [](double x) { return std::sqrt(x); },
        [](double, double y) { return 0.5 / y; });
}

NodeId leaky_relu(Tape& t, NodeId a, double slope)
{
    return unary_op(
        t, a, [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

NodeId clamp_const(Tape& t, NodeId a, const Tensor& lo, const Tensor& hi)
{
    const Tensor& av = t.value(a);
    if (!same_shape(av, lo) || !same_shape(av, hi))
        throw DataError("clamp_const: bound shape mismatch for " + shape_str(av.shape));
    Tensor out = Tensor::zeros(av.shape);
    for (std::size_t i = 0; i < av.numel(); ++i)
        out.data[i] = std::clamp(av.data[i], lo.data[i], hi.data[i]);
    return t.record(std::move(out), {a}, [a, lo, hi](Tape& tp, NodeId self) {
        if (!tp.tracked(a))
            return;
        const Tensor& g = tp.grad(self);
        const Tensor& av2 = tp.value(a);
        Tensor& ga = tp.grad_buffer(a);
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (av2.data[i] >= lo.data[i] && av2.data[i] <= hi.data[i])
                ga.data[i] += g.data[i];
    });
}

// ---------------------------------------------------------------- reductions

NodeId sum(Tape& t, NodeId a)
{
    const Tensor& av = t.value(a);
    double acc = 0.0;
    for (double v : av.data)
        acc += v;
    return t.record(Tensor::scalar(acc), {a}, [a](Tape& tp, NodeId self) {
        if (!tp.tracked(a))
            return;
        const double g = tp.grad(self).data[0];
        Tensor& ga = tp.grad_buffer(a);
        for (double& v : ga.data)
            v += g;
    });
}

NodeId mean(Tape& t, NodeId a)
{
    const Tensor& av = t.value(a);
    double acc = 0.0;
    for (double v : av.data)
        acc += v;
    const double inv = 1.0 / static_cast<double>(av.numel());
    return t.record(Tensor::scalar(acc * inv), {a}, [a, inv](Tape& tp, NodeId self) {
        if (!tp.tracked(a))
            return;
        const double g = tp.grad(self).data[0] * inv;
        Tensor& ga = tp.grad_buffer(a);
        for (double& v : ga.data)
            v += g;
    });
}

NodeId sum_axis(Tape& t, NodeId a, int axis)
{
    const Tensor& av = t.value(a);
    std::size_t outer, len, inner;
    lane_extents(av.shape, axis, outer, len, inner);
    std::vector<int> oshape;
    for (int i = 0; i < av.rank(); ++i)
        if (i != axis)
            oshape.push_back(av.shape[i]);
    if (oshape.empty())
        oshape.push_back(1);
    Tensor out = Tensor::zeros(oshape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t l = 0; l < len; ++l)
            for (std::size_t i = 0; i < inner; ++i)
                out.data[o * inner + i] += av.data[(o * len + l) * inner + i];
    return t.record(std::move(out), {a}, [a, outer, len, inner](Tape& tp, NodeId self) {
        if (!tp.tracked(a))
            return;
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_buffer(a);
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t l = 0; l < len; ++l)
                for (std::size_t i = 0; i < inner; ++i)
                    ga.data[(o * len + l) * inner + i] += g.data[o * inner + i];
    });
}

NodeId softmax(Tape& t, NodeId a, int axis, double temperature)
{
    const Tensor& av = t.value(a);
    std::size_t outer, len, inner;
    lane_extents(av.shape, axis, outer, len, inner);
    Tensor out = Tensor::zeros(av.shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t l = 0; l < len; ++l)
                mx = std::max(mx, temperature * av.data[(o * len + l) * inner + i]);
            double denom = 0.0;
            for (std::size_t l = 0; l < len; ++l) {
                const std::size_t idx = (o * len + l) * inner + i;
                out.data[idx] = std::exp(temperature * av.data[idx] - mx);
                denom += out.data[idx];
            }
            for (std::size_t l = 0; l < len; ++l)
                out.data[(o * len + l) * inner + i] /= denom;
        }
    return t.record(std::move(out), {a},
                    [a, outer, len, inner, temperature](Tape& tp, NodeId self) {
                        if (!tp.tracked(a))
                            return;
                        const Tensor& g = tp.grad(self);
                        const Tensor& y = tp.value(self);
                        Tensor& ga = tp.grad_buffer(a);
                        for (std::size_t o = 0; o < outer; ++o)
                            for (std::size_t i = 0; i < inner; ++i) {
                                double dot = 0.0;
                                for (std::size_t l = 0; l < len; ++l) {
                                    const std::size_t idx = (o * len + l) * inner + i;
                                    dot += g.data[idx] * y.data[idx];
                                }
                                for (std::size_t l = 0; l < len; ++l) {
                                    const std::size_t idx = (o * len + l) * inner + i;
                                    ga.data[idx] +=
                                        temperature * y.data[idx] * (g.data[idx] - dot);
                                }
                            }
                    });
}

// ---------------------------------------------------------------- shape

NodeId reshape(Tape& t, NodeId a, std::vector<int> shape)
{
    const Tensor& av = t.value(a);
    if (shape_numel(shape) != av.numel())
        throw DataError("reshape: cannot view " + shape_str(av.shape) + " as " +
                        shape_str(shape));
    Tensor out(std::move(shape), av.data);
    return t.record(std::move(out), {a}, [a](Tape& tp, NodeId self) {
        if (!tp.tracked(a))
            return;
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_buffer(a);
        for (std::size_t i = 0; i < g.numel(); ++i)
            ga.data[i] += g.data[i];
    });
}

NodeId transpose2d(Tape& t, NodeId a)
{
    const Tensor& av = t.value(a);
    if (av.rank() != 2)
        throw DataError("transpose2d needs rank 2, got " + shape_str(av.shape));
    const int r = av.shape[0], c = av.shape[1];
    Tensor out = Tensor::zeros({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out.data[static_cast<std::size_t>(j) * r + i] =
                av.data[static_cast<std::size_t>(i) * c + j];
    return t.record(std::move(out), {a}, [a, r, c](Tape& tp, NodeId self) {
        if (!tp.tracked(a))
            return;
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_buffer(a);
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
                ga.data[static_cast<std::size_t>(i) * c + j] +=
                    g.data[static_cast<std::size_t>(j) * r + i];
    });
}

NodeId slice(Tape& t, NodeId a, const std::vector<int>& offset, const std::vector<int>& extent)
{
    const Tensor& av = t.value(a);
    const int rank = av.rank();
    if (static_cast<int>(offset.size()) != rank || static_cast<int>(extent.size()) != rank)
        throw DataError("slice: offset/extent rank mismatch for " + shape_str(av.shape));
    for (int i = 0; i < rank; ++i)
        if (offset[i] < 0 || extent[i] <= 0 || offset[i] + extent[i] > av.shape[i])
            throw DataError("slice out of range for " + shape_str(av.shape));
    const auto strides = row_strides(av.shape);
    Tensor out = Tensor::zeros(extent);
    std::vector<int> idx(rank, 0);
    for (std::size_t o = 0; o < out.numel(); ++o) {
        std::size_t src = 0;
        for (int i = 0; i < rank; ++i)
            src += strides[i] * (offset[i] + idx[i]);
        out.data[o] = av.data[src];
        for (int i = rank - 1; i >= 0; --i) {
            if (++idx[i] < extent[i])
                break;
            idx[i] = 0;
        }
    }
    return t.record(std::move(out), {a},
                    [a, offset, extent, strides](Tape& tp, NodeId self) {
                        if (!tp.tracked(a))
                            return;
                        const Tensor& g = tp.grad(self);
                        Tensor& ga = tp.grad_buffer(a);
                        const int rank = static_cast<int>(offset.size());
                        std::vector<int> idx(rank, 0);
                        for (std::size_t o = 0; o < g.numel(); ++o) {
                            std::size_t dst = 0;
                            for (int i = 0; i < rank; ++i)
                                dst += strides[i] * (offset[i] + idx[i]);
                            ga.data[dst] += g.data[o];
                            for (int i = rank - 1; i >= 0; --i) {
                                if (++idx[i] < extent[i])
                                    break;
                                idx[i] = 0;
                            }
                        }
                    });
}

NodeId concat(Tape& t, const std::vector<NodeId>& xs, int axis)
{
    if (xs.empty())
        throw DataError("concat: no inputs");
    const Tensor& first = t.value(xs[0]);
    const int rank = first.rank();
    if (axis < 0 || axis >= rank)
        throw DataError("concat: axis out of range");
    std::vector<int> oshape = first.shape;
    std::vector<int> extents;
    extents.push_back(first.shape[axis]);
    for (std::size_t j = 1; j < xs.size(); ++j) {
        const Tensor& v = t.value(xs[j]);
        if (v.rank() != rank)
            shape_error("concat", first, v);
        for (int i = 0; i < rank; ++i)
            if (i != axis && v.shape[i] != first.shape[i])
                shape_error("concat", first, v);
        oshape[axis] += v.shape[axis];
        extents.push_back(v.shape[axis]);
    }
    std::size_t outer = 1;
    for (int i = 0; i < axis; ++i)
        outer *= first.shape[i];
    std::size_t inner = 1;
    for (int i = axis + 1; i < rank; ++i)
        inner *= first.shape[i];
    Tensor out = Tensor::zeros(oshape);
    const std::size_t ostep = static_cast<std::size_t>(oshape[axis]) * inner;
    std::size_t base = 0;
    for (std::size_t j = 0; j < xs.size(); ++j) {
        const Tensor& v = t.value(xs[j]);
        const std::size_t block = extents[j] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(v.data.begin() + o * block, block,
                        out.data.begin() + o * ostep + base);
        base += block;
    }
    auto xs_copy = xs;
    return t.record(std::move(out), xs,
                    [xs_copy, extents, outer, inner, ostep](Tape& tp, NodeId self) {
                        const Tensor& g = tp.grad(self);
                        std::size_t base = 0;
                        for (std::size_t j = 0; j < xs_copy.size(); ++j) {
                            const std::size_t block = extents[j] * inner;
                            if (tp.tracked(xs_copy[j])) {
                                Tensor& ga = tp.grad_buffer(xs_copy[j]);
                                for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t i = 0; i < block; ++i)
                                        ga.data[o * block + i] += g.data[o * ostep + base + i];
                            }
                            base += block;
                        }
                    });
}

NodeId repeat_rows(Tape& t, NodeId a, int times)
{
    const Tensor& av = t.value(a);
    if (times <= 0)
        throw DataError("repeat_rows: times must be positive");
    const int rows = av.shape[0];
    const std::size_t rowlen = av.numel() / rows;
    std::vector<int> oshape = av.shape;
    oshape[0] = rows * times;
    Tensor out = Tensor::zeros(oshape);
    for (int r = 0; r < rows; ++r)
        for (int k = 0; k < times; ++k)
            std::copy_n(av.data.begin() + static_cast<std::size_t>(r) * rowlen, rowlen,
                        out.data.begin() +
                            (static_cast<std::size_t>(r) * times + k) * rowlen);
    return t.record(std::move(out), {a}, [a, rows, times, rowlen](Tape& tp, NodeId self) {
        if (!tp.tracked(a))
            return;
        const Tensor& g = tp.grad(self);
        Tensor& ga = tp.grad_buffer(a);
        for (int r = 0; r < rows; ++r)
            for (int k = 0; k < times; ++k)
                for (std::size_t i = 0; i < rowlen; ++i)
                    ga.data[static_cast<std::size_t>(r) * rowlen + i] +=
                        g.data[(static_cast<std::size_t>(r) * times + k) * rowlen + i];
    });
}

NodeId gather_rows(Tape& t, NodeId a, std::vector<int> rows)
{
    const Tensor& av = t.value(a);
    const int n = av.shape[0];
    const std::size_t rowlen = av.numel() / n;
    for (int r : rows)
        if (r < 0 || r >= n)
            throw DataError("gather_rows: row index out of range");
    std::vector<int> oshape = av.shape;
    oshape[0] = static_cast<int>(rows.size());
    Tensor out = Tensor::zeros(oshape);
    for (std::size_t j = 0; j < rows.size(); ++j)
        std::copy_n(av.data.begin() + static_cast<std::size_t>(rows[j]) * rowlen, rowlen,
                    out.data.begin() + j * rowlen);
    return t.record(std::move(out), {a},
                    [a, rows = std::move(rows), rowlen](Tape& tp, NodeId self) {
                        if (!tp.tracked(a))
                            return;
                        const Tensor& g = tp.grad(self);
                        Tensor& ga = tp.grad_buffer(a);
                        for (std::size_t j = 0; j < rows.size(); ++j)
                            for (std::size_t i = 0; i < rowlen; ++i)
                                ga.data[static_cast<std::size_t>(rows[j]) * rowlen + i] +=
                                    g.data[j * rowlen + i];
                    });
}

// ------------------------------------------------- constant linear maps

NodeId matmul_const(Tape& t, NodeId x, const Tensor& m)
{
    const Tensor& xv = t.value(x);
    if (xv.rank() != 2 || m.rank() != 2 || xv.shape[1] != m.shape[0])
        throw DataError("matmul_const: incompatible shapes " + shape_str(xv.shape) + " x " +
                        shape_str(m.shape));
    const int R = xv.shape[0], A = xv.shape[1], B = m.shape[1];
    Tensor out = Tensor::zeros({R, B});
    for (int r = 0; r < R; ++r)
        for (int a = 0; a < A; ++a) {
            const double xa = xv.data[static_cast<std::size_t>(r) * A + a];
            if (xa == 0.0)
                continue;
            const double* mr = m.data.data() + static_cast<std::size_t>(a) * B;
            double* orow = out.data.data() + static_cast<std::size_t>(r) * B;
            for (int b = 0; b < B; ++b)
                orow[b] += xa * mr[b];
        }
    return t.record(std::move(out), {x}, [x, m, R, A, B](Tape& tp, NodeId self) {
        if (!tp.tracked(x))
            return;
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_buffer(x);
        for (int r = 0; r < R; ++r)
            for (int a = 0; a < A; ++a) {
                const double* mr = m.data.data() + static_cast<std::size_t>(a) * B;
                const double* grow = g.data.data() + static_cast<std::size_t>(r) * B;
                double acc = 0.0;
                for (int b = 0; b < B; ++b)
                    acc += grow[b] * mr[b];
                gx.data[static_cast<std::size_t>(r) * A + a] += acc;
            }
    });
}

NodeId sparse_mix(Tape& t, NodeId x, std::shared_ptr<const SparseRows> rows)
{
    const Tensor& xv = t.value(x);
    if (xv.shape[0] != rows->cols)
        throw DataError("sparse_mix: input has " + std::to_string(xv.shape[0]) +
                        " rows, mixer expects " + std::to_string(rows->cols));
    const std::size_t rowlen = xv.numel() / xv.shape[0];
    std::vector<int> oshape = xv.shape;
    oshape[0] = rows->rows;
    Tensor out = Tensor::zeros(oshape);
    for (int r = 0; r < rows->rows; ++r)
        for (std::int64_t k = rows->ptr[r]; k < rows->ptr[r + 1]; ++k) {
            const double w = rows->w[k];
            const double* src = xv.data.data() + static_cast<std::size_t>(rows->col[k]) * rowlen;
            double* dst = out.data.data() + static_cast<std::size_t>(r) * rowlen;
            for (std::size_t i = 0; i < rowlen; ++i)
                dst[i] += w * src[i];
        }
    return t.record(std::move(out), {x}, [x, rows, rowlen](Tape& tp, NodeId self) {
        if (!tp.tracked(x))
            return;
        const Tensor& g = tp.grad(self);
        Tensor& gx = tp.grad_buffer(x);
        for (int r = 0; r < rows->rows; ++r)
            for (std::int64_t k = rows->ptr[r]; k < rows->ptr[r + 1]; ++k) {
                const double w = rows->w[k];
                const double* src = g.data.data() + static_cast<std::size_t>(r) * rowlen;
                double* dst = gx.data.data() + static_cast<std::size_t>(rows->col[k]) * rowlen;
                for (std::size_t i = 0; i < rowlen; ++i)
                    dst[i] += w * src[i];
            }
    });
}

// ---------------------------------------------------------------- neural ops

NodeId conv3d(Tape& t, NodeId x, NodeId w, std::optional<NodeId> bias, int stride, int pad)
{
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    if (xv.rank() != 4 || wv.rank() != 5)
        throw DataError("conv3d: input must be (C,Z,Y,X), weight (Co,Ci,kz,ky,kx); got " +
                        shape_str(xv.shape) + " and " + shape_str(wv.shape));
    if (xv.shape[0] != wv.shape[1])
        throw DataError("conv3d: input channels " + std::to_string(xv.shape[0]) +
                        " do not match weight channels " + std::to_string(wv.shape[1]));
    if (stride < 1 || pad < 0)
        throw DataError("conv3d: bad stride/pad");
    const int Ci = xv.shape[0], Z = xv.shape[1], Y = xv.shape[2], X = xv.shape[3];
    const int Co = wv.shape[0], KZ = wv.shape[2], KY = wv.shape[3], KX = wv.shape[4];
    const int Zo = (Z + 2 * pad - KZ) / stride + 1;
    const int Yo = (Y + 2 * pad - KY) / stride + 1;
    const int Xo = (X + 2 * pad - KX) / stride + 1;
    if (Z + 2 * pad < KZ || Y + 2 * pad < KY || X + 2 * pad < KX)
        throw DataError("conv3d: kernel larger than padded input " + shape_str(xv.shape));
    if (bias) {
        const Tensor& bv = t.value(*bias);
        if (bv.rank() != 1 || bv.shape[0] != Co)
            throw DataError("conv3d: bias must be (Co)");
    }

    Tensor out = Tensor::zeros({Co, Zo, Yo, Xo});
    const std::size_t inPlane = static_cast<std::size_t>(Z) * Y * X;
    const std::size_t kVol = static_cast<std::size_t>(Ci) * KZ * KY * KX;
    for (int co = 0; co < Co; ++co) {
        const double b = bias ? t.value(*bias).data[co] : 0.0;
        const double* wc = wv.data.data() + co * kVol;
        double* oc = out.data.data() + static_cast<std::size_t>(co) * Zo * Yo * Xo;
        for (int zo = 0; zo < Zo; ++zo)
            for (int yo = 0; yo < Yo; ++yo)
                for (int xo = 0; xo < Xo; ++xo) {
                    double acc = b;
                    for (int ci = 0; ci < Ci; ++ci) {
                        const double* ic = xv.data.data() + ci * inPlane;
                        const double* wk =
                            wc + static_cast<std::size_t>(ci) * KZ * KY * KX;
                        for (int kz = 0; kz < KZ; ++kz) {
                            const int z = zo * stride - pad + kz;
                            if (z < 0 || z >= Z)
                                continue;
                            for (int ky = 0; ky < KY; ++ky) {
                                const int y = yo * stride - pad + ky;
                                if (y < 0 || y >= Y)
                                    continue;
                                for (int kx = 0; kx < KX; ++kx) {
                                    const int xx = xo * stride - pad + kx;
                                    if (xx < 0 || xx >= X)
                                        continue;
                                    acc += wk[(kz * KY + ky) * KX + kx] *
                                           ic[(static_cast<std::size_t>(z) * Y + y) * X + xx];
                                }
                            }
                        }
                    }
                    oc[(static_cast<std::size_t>(zo) * Yo + yo) * Xo + xo] = acc;
                }
    }

    std::vector<NodeId> parents{x, w};
    if (bias)
        parents.push_back(*bias);
    return t.record(
        std::move(out), parents,
        [x, w, bias, stride, pad, Ci, Z, Y, X, Co, KZ, KY, KX, Zo, Yo, Xo, inPlane,
         kVol](Tape& tp, NodeId self) {
            const Tensor& g = tp.grad(self);
            const Tensor& xv2 = tp.value(x);
            const Tensor& wv2 = tp.value(w);
            const bool needX = tp.tracked(x);
            const bool needW = tp.tracked(w);
            const bool needB = bias && tp.tracked(*bias);
            Tensor* gx = needX ? &tp.grad_buffer(x) : nullptr;
            Tensor* gw = needW ? &tp.grad_buffer(w) : nullptr;
            Tensor* gb = needB ? &tp.grad_buffer(*bias) : nullptr;
            for (int co = 0; co < Co; ++co) {
                const double* wc = wv2.data.data() + co * kVol;
                double* gwc = needW ? gw->data.data() + co * kVol : nullptr;
                const double* gc =
                    g.data.data() + static_cast<std::size_t>(co) * Zo * Yo * Xo;
                for (int zo = 0; zo < Zo; ++zo)
                    for (int yo = 0; yo < Yo; ++yo)
                        for (int xo = 0; xo < Xo; ++xo) {
                            const double go =
                                gc[(static_cast<std::size_t>(zo) * Yo + yo) * Xo + xo];
                            if (go == 0.0)
                                continue;
                            if (needB)
                                gb->data[co] += go;
                            if (!needX && !needW)
                                continue;
                            for (int ci = 0; ci < Ci; ++ci) {
                                const double* ic = xv2.data.data() + ci * inPlane;
                                double* gic =
                                    needX ? gx->data.data() + ci * inPlane : nullptr;
                                const std::size_t wbase =
                                    static_cast<std::size_t>(ci) * KZ * KY * KX;
                                for (int kz = 0; kz < KZ; ++kz) {
                                    const int z = zo * stride - pad + kz;
                                    if (z < 0 || z >= Z)
                                        continue;
                                    for (int ky = 0; ky < KY; ++ky) {
                                        const int y = yo * stride - pad + ky;
                                        if (y < 0 || y >= Y)
                                            continue;
                                        for (int kx = 0; kx < KX; ++kx) {
                                            const int xx = xo * stride - pad + kx;
                                            if (xx < 0 || xx >= X)
                                                continue;
                                            const std::size_t ii =
                                                (static_cast<std::size_t>(z) * Y + y) * X +
                                                xx;
                                            const std::size_t wi =
                                                wbase + (kz * KY + ky) * KX + kx;
                                            if (needW)
                                                gwc[wi] += go * ic[ii];
                                            if (needX)
                                                gic[ii] += go * wc[wi];
                                        }
                                    }
                                }
                            }
                        }
            }
        });
}

NodeId avg_pool3d(Tape& t, NodeId x, int k)
{
    const Tensor& xv = t.value(x);
    if (xv.rank() != 4)
        throw DataError("avg_pool3d: input must be (C,Z,Y,X), got " + shape_str(xv.shape));
    if (k < 1)
        throw DataError("avg_pool3d: kernel must be >= 1");
    const int C = xv.shape[0], Z = xv.shape[1], Y = xv.shape[2], X = xv.shape[3];
    const int Zo = Z / k, Yo = Y / k, Xo = X / k;
    if (Zo == 0 || Yo == 0 || Xo == 0)
        throw DataError("avg_pool3d: input " + shape_str(xv.shape) + " smaller than kernel");
    const double inv = 1.0 / (static_cast<double>(k) * k * k);
    Tensor out = Tensor::zeros({C, Zo, Yo, Xo});
    for (int c = 0; c < C; ++c)
        for (int zo = 0; zo < Zo; ++zo)
            for (int yo = 0; yo < Yo; ++yo)
                for (int xo = 0; xo < Xo; ++xo) {
                    double acc = 0.0;
                    for (int dz = 0; dz < k; ++dz)
                        for (int dy = 0; dy < k; ++dy)
                            for (int dx = 0; dx < k; ++dx)
                                acc += xv.data[((static_cast<std::size_t>(c) * Z + zo * k + dz) *
                                                    Y +
                                                yo * k + dy) *
                                                   X +
                                               xo * k + dx];
                    out.data[((static_cast<std::size_t>(c) * Zo + zo) * Yo + yo) * Xo + xo] =
                        acc * inv;
                }
    return t.record(std::move(out), {x},
                    [x, k, C, Z, Y, X, Zo, Yo, Xo, inv](Tape& tp, NodeId self) {
                        if (!tp.tracked(x))
                            return;
                        const Tensor& g = tp.grad(self);
                        Tensor& gx = tp.grad_buffer(x);
                        for (int c = 0; c < C; ++c)
                            for (int zo = 0; zo < Zo; ++zo)
                                for (int yo = 0; yo < Yo; ++yo)
                                    for (int xo = 0; xo < Xo; ++xo) {
                                        const double go =
                                            g.data[((static_cast<std::size_t>(c) * Zo + zo) *
                                                        Yo +
                                                    yo) *
                                                       Xo +
                                                   xo] *
                                            inv;
                                        for (int dz = 0; dz < k; ++dz)
                                            for (int dy = 0; dy < k; ++dy)
                                                for (int dx = 0; dx < k; ++dx)
                                                    gx.data[((static_cast<std::size_t>(c) * Z +
                                                              zo * k + dz) *
                                                                 Y +
                                                             yo * k + dy) *
                                                                X +
                                                            xo * k + dx] += go;
                                    }
                    });
}

NodeId grid_sample(Tape& t, NodeId vol, NodeId coords)
{
    const Tensor& vv = t.value(vol);
    const Tensor& cv = t.value(coords);
    if (vv.rank() != 4)
        throw DataError("grid_sample: volume must be (C,Z,Y,X), got " + shape_str(vv.shape));
    if (cv.rank() != 2 || cv.shape[1] != 3)
        throw DataError("grid_sample: coords must be (P,3), got " + shape_str(cv.shape));
    const int C = vv.shape[0];
    const std::array<int, 3> dims{vv.shape[3], vv.shape[2], vv.shape[1]}; // nx, ny, nz
    const std::size_t plane = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    const int P = cv.shape[0];
    Tensor out = Tensor::zeros({P, C});
    for (int p = 0; p < P; ++p) {
        const TrilinearStencil s = trilinear_stencil(dims, cv.data[3 * p], cv.data[3 * p + 1],
                                                     cv.data[3 * p + 2]);
        for (int c = 0; c < C; ++c) {
            const double* ch = vv.data.data() + plane * c;
            double acc = 0.0;
            for (int i = 0; i < 8; ++i)
                acc += s.w[i] * ch[s.corner[i]];
            out.data[static_cast<std::size_t>(p) * C + c] = acc;
        }
    }
    return t.record(std::move(out), {vol, coords},
                    [vol, coords, C, dims, plane, P](Tape& tp, NodeId self) {
                        const Tensor& g = tp.grad(self);
                        const Tensor& vv2 = tp.value(vol);
                        const Tensor& cv2 = tp.value(coords);
                        const bool needV = tp.tracked(vol);
                        const bool needC = tp.tracked(coords);
                        Tensor* gv = needV ? &tp.grad_buffer(vol) : nullptr;
                        Tensor* gc = needC ? &tp.grad_buffer(coords) : nullptr;
                        for (int p = 0; p < P; ++p) {
                            const TrilinearStencil s =
                                trilinear_stencil(dims, cv2.data[3 * p], cv2.data[3 * p + 1],
                                                  cv2.data[3 * p + 2]);
                            for (int c = 0; c < C; ++c) {
                                const double go = g.data[static_cast<std::size_t>(p) * C + c];
                                if (go == 0.0)
                                    continue;
                                const double* ch = vv2.data.data() + plane * c;
                                if (needV)
                                    for (int i = 0; i < 8; ++i)
                                        gv->data[plane * c + s.corner[i]] += go * s.w[i];
                                if (needC)
                                    for (int a = 0; a < 3; ++a) {
                                        double acc = 0.0;
                                        for (int i = 0; i < 8; ++i)
                                            acc += s.dw[a][i] * ch[s.corner[i]];
                                        gc->data[3 * p + a] += go * acc;
                                    }
                            }
                        }
                    });
}

// ---------------------------------------------------------------- conversions

Tensor volume_to_tensor(const Volume& v)
{
    return Tensor({v.channels, v.dims[2], v.dims[1], v.dims[0]}, v.data);
}

Volume tensor_to_volume(const Tensor& t)
{
    if (t.rank() == 4)
        return Volume({t.shape[3], t.shape[2], t.shape[1]}, t.shape[0], t.data);
    if (t.rank() == 3)
        return Volume({t.shape[2], t.shape[1], t.shape[0]}, 1, t.data);
    throw DataError("tensor_to_volume: need rank 3 or 4, got " + shape_str(t.shape));
}

} // namespace pdreg::ad
