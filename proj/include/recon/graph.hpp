#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "recon/tensor.hpp"

namespace recon::ad {

// Reverse-mode autodiff over a closed primitive set: add, mul, matmul,
// convolution (2d/3d, incl. the transposed variant), bilinear interpolation
// (and its coordinate derivatives), softmax, exp/log, clamp, sum reduction,
// gather and flat concat. Everything else in the project composes from these.
enum class Op : uint8_t {
    kLeaf,
    kConst,
    kAdd,
    kAddScalar,
    kMul,
    kScale,
    kMatmul,
    kConv2d,
    kConvT2d,
    kConv3d,
    kBilinear,
    kBilinearDu,
    kBilinearDv,
    kSoftmaxRows,
    kExp,
    kLog,
    kClamp,
    kSumAll,
    kGather,
    kConcat,
    kReshape,
};

const char* op_name(Op op);

class Graph;

// Lightweight handle to a node in a Graph.
struct Value {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

struct Node {
    Op op = Op::kLeaf;
    std::vector<int32_t> inputs;
    Tensor value;
    Tensor grad;  // allocated during backward
    bool requires_grad = false;
    double s0 = 0.0, s1 = 0.0;                             // scalar / clamp bounds
    int64_t i0 = 0, i1 = 0;                                // stride / pad
    std::shared_ptr<const std::vector<int64_t>> indices;   // gather map (-1 selects zero)
};

// Nodes evaluate eagerly at construction and are topologically ordered by
// insertion, so backward is a single reverse sweep. Leaves can be re-bound
// (set_leaf) followed by forward() to re-evaluate the whole graph; this is
// what makes finite-difference probing cheap.
class Graph {
public:
    Value leaf(Tensor t, bool requires_grad = true);
    Value constant(Tensor t);

    Value add(Value a, Value b);
    Value add_scalar(Value a, double c);
    Value mul(Value a, Value b);
    Value scale(Value a, double c);
    Value matmul(Value a, Value b);
    Value conv2d(Value x, Value w, int64_t stride, int64_t pad);
    Value conv_transpose2d(Value x, Value w, int64_t stride, int64_t pad);
    Value conv3d(Value x, Value w, int64_t pad);
    // plane [C,N,N], uv [P,2] with coordinates in [-1,1] (clamped into range).
    Value bilinear(Value plane, Value uv);
    // d(bilinear)/du and /dv w.r.t. the normalized coordinate; uv must not
    // require grad (these exist to build exact spatial-gradient programs).
    Value bilinear_du(Value plane, Value uv);
    Value bilinear_dv(Value plane, Value uv);
    Value softmax_rows(Value a);
    Value exp(Value a);
    Value log(Value a);
    Value clamp(Value a, double lo, double hi);
    Value sum_all(Value a);
    Value gather(Value a, std::shared_ptr<const std::vector<int64_t>> idx, std::vector<int64_t> out_shape);
    Value concat(const std::vector<Value>& parts, std::vector<int64_t> out_shape);
    Value reshape(Value a, std::vector<int64_t> new_shape);

    const Tensor& value(Value v) const;
    const Tensor& grad(Value v) const;
    bool requires_grad(Value v) const { return node(v).requires_grad; }
    const std::vector<int64_t>& shape(Value v) const { return node(v).value.shape; }

    // Re-binds a leaf/const and marks the graph stale until forward() runs.
    void set_leaf(Value v, const Tensor& t);
    void forward();
    // Seeds d(out)/d(out) = 1 (out must be a scalar) and sweeps in reverse.
    void backward(Value out);

    size_t size() const { return nodes_.size(); }
    bool dirty() const { return dirty_; }

private:
    Node& node(Value v);
    const Node& node(Value v) const;
    Value push(Node n);
    void eval(Node& n, int32_t id);
    void backprop(int32_t id);
    void check_finite(const Node& n, int32_t id) const;

    std::vector<Node> nodes_;
    bool dirty_ = false;
    bool backward_ready_ = true;  // false after set_leaf until forward()
};

// ---- composition helpers (no new primitives) ------------------------------

Value neg(Graph& g, Value a);
Value sub(Graph& g, Value a, Value b);
Value square(Graph& g, Value a);
Value abs_val(Graph& g, Value a);                    // clamp(x,0,inf) + clamp(-x,0,inf)
Value mean_all(Graph& g, Value a);
Value sum_sq(Graph& g, Value a);
Value l1_mean(Graph& g, Value a);                    // mean |x|
Value softplus(Graph& g, Value a);                   // stable log(1+exp(x))
Value sigmoid(Graph& g, Value a);                    // exp(-softplus(-x))
Value log_pos(Graph& g, Value a, double floor);      // log(clamp(x, floor, inf))
Value reciprocal_pos(Graph& g, Value a, double floor);
Value sqrt_pos(Graph& g, Value a, double floor);
Value div_pos(Graph& g, Value num, Value den, double floor);
// x [n,k] @ w [k,m] + broadcast bias [1,m] (via ones-column matmul)
Value linear(Graph& g, Value x, Value w, Value b);
// scaled softplus activation: softplus(beta*x)/beta (smooth ReLU)
Value act_softplus(Graph& g, Value a, double beta);
// derivative of act_softplus: sigmoid(beta*x)
Value act_softplus_deriv(Graph& g, Value a, double beta);
// row vector [1,n] of ones as a constant
Value ones_const(Graph& g, std::vector<int64_t> shape);
Value zeros_const(Graph& g, std::vector<int64_t> shape);
// mean over one axis of an arbitrary-rank tensor (permute+matmul composition)
Value mean_over_axis(Graph& g, Value a, int axis);
// transpose of a 2-D value via gather
Value transpose2d(Graph& g, Value a);
// stack k same-length column vectors [n] (or [n,1]) into [n,k]
Value stack_cols(Graph& g, const std::vector<Value>& cols);
// slice rows [r0,r1) of a 2-D value
Value slice_rows(Graph& g, Value a, int64_t r0, int64_t r1);

// Central finite-difference gradient of `loss` w.r.t. entry `index` of leaf
// `param` (rebinds the leaf, runs forward twice, restores).
double fd_grad_entry(Graph& g, Value loss, Value param, int64_t index, double h);

}  // namespace recon::ad
