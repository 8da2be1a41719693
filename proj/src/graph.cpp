#include "recon/graph.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "recon/threadpool.hpp"

namespace recon::ad {

const char* op_name(Op op) {
    switch (op) {
        case Op::kLeaf: return "leaf";
        case Op::kConst: return "const";
        case Op::kAdd: return "add";
        case Op::kAddScalar: return "add_scalar";
        case Op::kMul: return "mul";
        case Op::kScale: return "scale";
        case Op::kMatmul: return "matmul";
        case Op::kConv2d: return "conv2d";
        case Op::kConvT2d: return "conv_transpose2d";
        case Op::kConv3d: return "conv3d";
        case Op::kBilinear: return "bilinear";
        case Op::kBilinearDu: return "bilinear_du";
        case Op::kBilinearDv: return "bilinear_dv";
        case Op::kSoftmaxRows: return "softmax_rows";
        case Op::kExp: return "exp";
        case Op::kLog: return "log";
        case Op::kClamp: return "clamp";
        case Op::kSumAll: return "sum_all";
        case Op::kGather: return "gather";
        case Op::kConcat: return "concat";
        case Op::kReshape: return "reshape";
    }
    return "?";
}

namespace {

[[noreturn]] void fail(int32_t id, Op op, const std::string& msg) {
    throw std::runtime_error("graph node " + std::to_string(id) + " (" + op_name(op) + "): " + msg);
}

struct BilinearCorner {
    int64_t x0, y0;
    double fx, fy;
    bool interior_x, interior_y;  // true when the grid coordinate is strictly inside (0, N-1)
};

BilinearCorner locate(double u, double v, int64_t n) {
    BilinearCorner c{};
    double gx = (u + 1.0) * 0.5 * static_cast<double>(n - 1);
    double gy = (v + 1.0) * 0.5 * static_cast<double>(n - 1);
    c.interior_x = gx > 0.0 && gx < static_cast<double>(n - 1);
    c.interior_y = gy > 0.0 && gy < static_cast<double>(n - 1);
    gx = std::min(std::max(gx, 0.0), static_cast<double>(n - 1));
    gy = std::min(std::max(gy, 0.0), static_cast<double>(n - 1));
    c.x0 = std::min(static_cast<int64_t>(gx), n - 2);
    c.y0 = std::min(static_cast<int64_t>(gy), n - 2);
    if (c.x0 < 0) c.x0 = 0;
    if (c.y0 < 0) c.y0 = 0;
    c.fx = gx - static_cast<double>(c.x0);
    c.fy = gy - static_cast<double>(c.y0);
    return c;
}

}  // namespace

Node& Graph::node(Value v) {
    if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
        throw std::runtime_error("invalid graph value handle");
    return nodes_[static_cast<size_t>(v.id)];
}

const Node& Graph::node(Value v) const {
    if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
        throw std::runtime_error("invalid graph value handle");
    return nodes_[static_cast<size_t>(v.id)];
}

Value Graph::push(Node n) {
    for (int32_t in : n.inputs)
        if (in < 0 || in >= static_cast<int32_t>(nodes_.size()))
            fail(static_cast<int32_t>(nodes_.size()), n.op, "input precedes node violated");
    if (n.op != Op::kLeaf && n.op != Op::kConst) {
        for (int32_t in : n.inputs) n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(in)].requires_grad;
        eval(n, static_cast<int32_t>(nodes_.size()));
    }
    nodes_.push_back(std::move(n));
    return Value{static_cast<int32_t>(nodes_.size() - 1)};
}

Value Graph::leaf(Tensor t, bool requires_grad) {
    Node n;
    n.op = Op::kLeaf;
    n.requires_grad = requires_grad;
    n.value = std::move(t);
    return push(std::move(n));
}

Value Graph::constant(Tensor t) {
    Node n;
    n.op = Op::kConst;
    n.value = std::move(t);
    return push(std::move(n));
}

Value Graph::add(Value a, Value b) {
    if (!node(a).value.same_shape(node(b).value))
        fail(static_cast<int32_t>(nodes_.size()), Op::kAdd,
             "shape mismatch " + shape_str(node(a).value.shape) + " vs " + shape_str(node(b).value.shape));
    Node n;
    n.op = Op::kAdd;
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Value Graph::add_scalar(Value a, double c) {
    Node n;
    n.op = Op::kAddScalar;
    n.inputs = {a.id};
    n.s0 = c;
    return push(std::move(n));
}

Value Graph::mul(Value a, Value b) {
    if (!node(a).value.same_shape(node(b).value))
        fail(static_cast<int32_t>(nodes_.size()), Op::kMul,
             "shape mismatch " + shape_str(node(a).value.shape) + " vs " + shape_str(node(b).value.shape));
    Node n;
    n.op = Op::kMul;
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Value Graph::scale(Value a, double c) {
    Node n;
    n.op = Op::kScale;
    n.inputs = {a.id};
    n.s0 = c;
    return push(std::move(n));
}

Value Graph::matmul(Value a, Value b) {
    const auto& sa = node(a).value.shape;
    const auto& sb = node(b).value.shape;
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        fail(static_cast<int32_t>(nodes_.size()), Op::kMatmul,
             "incompatible shapes " + shape_str(sa) + " @ " + shape_str(sb));
    Node n;
    n.op = Op::kMatmul;
    n.inputs = {a.id, b.id};
    return push(std::move(n));
}

Value Graph::conv2d(Value x, Value w, int64_t stride, int64_t pad) {
    const auto& sx = node(x).value.shape;
    const auto& sw = node(w).value.shape;
    if (sx.size() != 3 || sw.size() != 4 || sx[0] != sw[1])
        fail(static_cast<int32_t>(nodes_.size()), Op::kConv2d,
             "expects x[Ci,H,W], w[Co,Ci,kh,kw]; got " + shape_str(sx) + ", " + shape_str(sw));
    if (stride < 1) fail(static_cast<int32_t>(nodes_.size()), Op::kConv2d, "stride must be >= 1");
    Node n;
    n.op = Op::kConv2d;
    n.inputs = {x.id, w.id};
    n.i0 = stride;
    n.i1 = pad;
    return push(std::move(n));
}

Value Graph::conv_transpose2d(Value x, Value w, int64_t stride, int64_t pad) {
    const auto& sx = node(x).value.shape;
    const auto& sw = node(w).value.shape;
    if (sx.size() != 3 || sw.size() != 4 || sx[0] != sw[0])
        fail(static_cast<int32_t>(nodes_.size()), Op::kConvT2d,
             "expects x[Ci,H,W], w[Ci,Co,kh,kw]; got " + shape_str(sx) + ", " + shape_str(sw));
    if (stride < 1) fail(static_cast<int32_t>(nodes_.size()), Op::kConvT2d, "stride must be >= 1");
    Node n;
    n.op = Op::kConvT2d;
    n.inputs = {x.id, w.id};
    n.i0 = stride;
    n.i1 = pad;
    return push(std::move(n));
}

Value Graph::conv3d(Value x, Value w, int64_t pad) {
    const auto& sx = node(x).value.shape;
    const auto& sw = node(w).value.shape;
    if (sx.size() != 4 || sw.size() != 5 || sx[0] != sw[1])
        fail(static_cast<int32_t>(nodes_.size()), Op::kConv3d,
             "expects x[Ci,D,H,W], w[Co,Ci,kd,kh,kw]; got " + shape_str(sx) + ", " + shape_str(sw));
    Node n;
    n.op = Op::kConv3d;
    n.inputs = {x.id, w.id};
    n.i1 = pad;
    return push(std::move(n));
}

Value Graph::bilinear(Value plane, Value uv) {
    const auto& sp = node(plane).value.shape;
    const auto& su = node(uv).value.shape;
    if (sp.size() != 3 || sp[1] != sp[2] || sp[1] < 2)
        fail(static_cast<int32_t>(nodes_.size()), Op::kBilinear, "plane must be [C,N,N] with N>=2, got " + shape_str(sp));
    if (su.size() != 2 || su[1] != 2)
        fail(static_cast<int32_t>(nodes_.size()), Op::kBilinear, "uv must be [P,2], got " + shape_str(su));
    Node n;
    n.op = Op::kBilinear;
    n.inputs = {plane.id, uv.id};
    return push(std::move(n));
}

Value Graph::bilinear_du(Value plane, Value uv) {
    if (node(uv).requires_grad)
        fail(static_cast<int32_t>(nodes_.size()), Op::kBilinearDu, "uv must not require grad");
    Node n;
    n.op = Op::kBilinearDu;
    n.inputs = {plane.id, uv.id};
    return push(std::move(n));
}

Value Graph::bilinear_dv(Value plane, Value uv) {
    if (node(uv).requires_grad)
        fail(static_cast<int32_t>(nodes_.size()), Op::kBilinearDv, "uv must not require grad");
    Node n;
    n.op = Op::kBilinearDv;
    n.inputs = {plane.id, uv.id};
    return push(std::move(n));
}

Value Graph::softmax_rows(Value a) {
    if (node(a).value.ndim() != 2)
        fail(static_cast<int32_t>(nodes_.size()), Op::kSoftmaxRows, "expects [n,m]");
    Node n;
    n.op = Op::kSoftmaxRows;
    n.inputs = {a.id};
    return push(std::move(n));
}

Value Graph::exp(Value a) {
    Node n;
    n.op = Op::kExp;
    n.inputs = {a.id};
    return push(std::move(n));
}

Value Graph::log(Value a) {
    Node n;
    n.op = Op::kLog;
    n.inputs = {a.id};
    return push(std::move(n));
}

Value Graph::clamp(Value a, double lo, double hi) {
    if (lo > hi) fail(static_cast<int32_t>(nodes_.size()), Op::kClamp, "lo > hi");
    Node n;
    n.op = Op::kClamp;
    n.inputs = {a.id};
    n.s0 = lo;
    n.s1 = hi;
    return push(std::move(n));
}

Value Graph::sum_all(Value a) {
    Node n;
    n.op = Op::kSumAll;
    n.inputs = {a.id};
    return push(std::move(n));
}

Value Graph::gather(Value a, std::shared_ptr<const std::vector<int64_t>> idx, std::vector<int64_t> out_shape) {
    if (!idx) fail(static_cast<int32_t>(nodes_.size()), Op::kGather, "null index map");
    if (shape_numel(out_shape) != static_cast<int64_t>(idx->size()))
        fail(static_cast<int32_t>(nodes_.size()), Op::kGather, "index map length != output numel");
    int64_t in_n = node(a).value.numel();
    for (int64_t i : *idx)
        if (i >= in_n) fail(static_cast<int32_t>(nodes_.size()), Op::kGather, "index out of range");
    Node n;
    n.op = Op::kGather;
    n.inputs = {a.id};
    n.indices = std::move(idx);
    n.value.shape = std::move(out_shape);  // eval fills data
    return push(std::move(n));
}

Value Graph::concat(const std::vector<Value>& parts, std::vector<int64_t> out_shape) {
    if (parts.empty()) fail(static_cast<int32_t>(nodes_.size()), Op::kConcat, "no inputs");
    int64_t total = 0;
    Node n;
    n.op = Op::kConcat;
    for (Value p : parts) {
        total += node(p).value.numel();
        n.inputs.push_back(p.id);
    }
    if (total != shape_numel(out_shape))
        fail(static_cast<int32_t>(nodes_.size()), Op::kConcat, "inputs total " + std::to_string(total) +
             " != output numel for " + shape_str(out_shape));
    n.value.shape = std::move(out_shape);
    return push(std::move(n));
}

Value Graph::reshape(Value a, std::vector<int64_t> new_shape) {
    if (shape_numel(new_shape) != node(a).value.numel())
        fail(static_cast<int32_t>(nodes_.size()), Op::kReshape, "numel mismatch");
    Node n;
    n.op = Op::kReshape;
    n.inputs = {a.id};
    n.value.shape = std::move(new_shape);
    return push(std::move(n));
}

const Tensor& Graph::value(Value v) const {
    if (dirty_) throw std::runtime_error("graph is stale: call forward() after set_leaf()");
    return node(v).value;
}

const Tensor& Graph::grad(Value v) const {
    const Node& n = node(v);
    if (n.grad.data.empty()) throw std::runtime_error("no gradient recorded for node " + std::to_string(v.id));
    return n.grad;
}

void Graph::set_leaf(Value v, const Tensor& t) {
    Node& n = node(v);
    if (n.op != Op::kLeaf && n.op != Op::kConst)
        throw std::runtime_error("set_leaf on non-leaf node " + std::to_string(v.id));
    if (!n.value.same_shape(t))
        throw std::runtime_error("set_leaf shape mismatch on node " + std::to_string(v.id) + ": expected " +
                                 shape_str(n.value.shape) + " got " + shape_str(t.shape));
    n.value.data = t.data;
    dirty_ = true;
    backward_ready_ = false;
}

void Graph::forward() {
    for (size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (n.op == Op::kLeaf || n.op == Op::kConst) continue;
        eval(n, static_cast<int32_t>(i));
    }
    dirty_ = false;
    backward_ready_ = true;
}

void Graph::check_finite(const Node& n, int32_t id) const {
    for (double x : n.value.data)
        if (!std::isfinite(x)) fail(id, n.op, "non-finite output");
}

void Graph::eval(Node& n, int32_t id) {
    auto in = [&](int i) -> const Tensor& { return nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(i)])].value; };
    switch (n.op) {
        case Op::kLeaf:
        case Op::kConst:
            return;
        case Op::kAdd: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            n.value.shape = a.shape;
            n.value.data.resize(a.data.size());
            for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] + b.data[i];
            return;
        }
        case Op::kAddScalar: {
            const Tensor& a = in(0);
            n.value.shape = a.shape;
            n.value.data.resize(a.data.size());
            for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] + n.s0;
            return;
        }
        case Op::kMul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            n.value.shape = a.shape;
            n.value.data.resize(a.data.size());
            for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] * b.data[i];
            return;
        }
        case Op::kScale: {
            const Tensor& a = in(0);
            n.value.shape = a.shape;
            n.value.data.resize(a.data.size());
            for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = a.data[i] * n.s0;
            return;
        }
        case Op::kMatmul: {
            const Tensor& a = in(0);
            const Tensor& b = in(1);
            int64_t rows = a.shape[0], k = a.shape[1], cols = b.shape[1];
            n.value.shape = {rows, cols};
            n.value.data.assign(static_cast<size_t>(rows * cols), 0.0);
            const double* pa = a.data.data();
            const double* pb = b.data.data();
            double* pc = n.value.data.data();
            auto body = [&](int64_t r0, int64_t r1) {
                for (int64_t i = r0; i < r1; ++i) {
                    double* ci = pc + i * cols;
                    const double* ai = pa + i * k;
                    for (int64_t kk = 0; kk < k; ++kk) {
                        double av = ai[kk];
                        const double* bk = pb + kk * cols;
                        for (int64_t j = 0; j < cols; ++j) ci[j] += av * bk[j];
                    }
                }
            };
            if (rows * cols * k > (1 << 20))
                parallel_for(rows, body);
            else
                body(0, rows);
            return;
        }
        case Op::kConv2d: {
            const Tensor& x = in(0);
            const Tensor& w = in(1);
            int64_t ci = x.shape[0], h = x.shape[1], wd = x.shape[2];
            int64_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
            int64_t s = n.i0, p = n.i1;
            int64_t ho = (h + 2 * p - kh) / s + 1, wo = (wd + 2 * p - kw) / s + 1;
            if (ho < 1 || wo < 1) fail(id, n.op, "kernel larger than padded input");
            n.value.shape = {co, ho, wo};
            n.value.data.assign(static_cast<size_t>(co * ho * wo), 0.0);
            for (int64_t oc = 0; oc < co; ++oc)
                for (int64_t ic = 0; ic < ci; ++ic)
                    for (int64_t ky = 0; ky < kh; ++ky)
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            double wv = w(oc, ic, ky, kx);
                            if (wv == 0.0) continue;
                            for (int64_t oy = 0; oy < ho; ++oy) {
                                int64_t iy = oy * s + ky - p;
                                if (iy < 0 || iy >= h) continue;
                                for (int64_t ox = 0; ox < wo; ++ox) {
                                    int64_t ix = ox * s + kx - p;
                                    if (ix < 0 || ix >= wd) continue;
                                    n.value.data[static_cast<size_t>((oc * ho + oy) * wo + ox)] += wv * x(ic, iy, ix);
                                }
                            }
                        }
            return;
        }
        case Op::kConvT2d: {
            const Tensor& x = in(0);
            const Tensor& w = in(1);
            int64_t ci = x.shape[0], h = x.shape[1], wd = x.shape[2];
            int64_t co = w.shape[1], kh = w.shape[2], kw = w.shape[3];
            int64_t s = n.i0, p = n.i1;
            int64_t ho = (h - 1) * s + kh - 2 * p, wo = (wd - 1) * s + kw - 2 * p;
            if (ho < 1 || wo < 1) fail(id, n.op, "degenerate output size");
            n.value.shape = {co, ho, wo};
            n.value.data.assign(static_cast<size_t>(co * ho * wo), 0.0);
            for (int64_t ic = 0; ic < ci; ++ic)
                for (int64_t oc = 0; oc < co; ++oc)
                    for (int64_t ky = 0; ky < kh; ++ky)
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            double wv = w(ic, oc, ky, kx);
                            if (wv == 0.0) continue;
                            for (int64_t iy = 0; iy < h; ++iy) {
                                int64_t oy = iy * s + ky - p;
                                if (oy < 0 || oy >= ho) continue;
                                for (int64_t ix = 0; ix < wd; ++ix) {
                                    int64_t ox = ix * s + kx - p;
                                    if (ox < 0 || ox >= wo) continue;
                                    n.value.data[static_cast<size_t>((oc * ho + oy) * wo + ox)] += wv * x(ic, iy, ix);
                                }
                            }
                        }
            return;
        }
        case Op::kConv3d: {
            const Tensor& x = in(0);
            const Tensor& w = in(1);
            int64_t ci = x.shape[0], d = x.shape[1], h = x.shape[2], wd = x.shape[3];
            int64_t co = w.shape[0], kd = w.shape[2], kh = w.shape[3], kw = w.shape[4];
            int64_t p = n.i1;
            int64_t dd = d + 2 * p - kd + 1, ho = h + 2 * p - kh + 1, wo = wd + 2 * p - kw + 1;
            if (dd < 1 || ho < 1 || wo < 1) fail(id, n.op, "kernel larger than padded input");
            n.value.shape = {co, dd, ho, wo};
            n.value.data.assign(static_cast<size_t>(co * dd * ho * wo), 0.0);
            for (int64_t oc = 0; oc < co; ++oc)
                for (int64_t ic = 0; ic < ci; ++ic)
                    for (int64_t kz = 0; kz < kd; ++kz)
                        for (int64_t ky = 0; ky < kh; ++ky)
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                double wv = w.data[static_cast<size_t>((((oc * ci + ic) * kd + kz) * kh + ky) * kw + kx)];
                                if (wv == 0.0) continue;
                                for (int64_t oz = 0; oz < dd; ++oz) {
                                    int64_t iz = oz + kz - p;
                                    if (iz < 0 || iz >= d) continue;
                                    for (int64_t oy = 0; oy < ho; ++oy) {
                                        int64_t iy = oy + ky - p;
                                        if (iy < 0 || iy >= h) continue;
                                        for (int64_t ox = 0; ox < wo; ++ox) {
                                            int64_t ix = ox + kx - p;
                                            if (ix < 0 || ix >= wd) continue;
                                            n.value.data[static_cast<size_t>(((oc * dd + oz) * ho + oy) * wo + ox)] +=
                                                wv * x.data[static_cast<size_t>(((ic * d + iz) * h + iy) * wd + ix)];
                                        }
                                    }
                                }
                            }
            return;
        }
        case Op::kBilinear:
        case Op::kBilinearDu:
        case Op::kBilinearDv: {
            const Tensor& plane = in(0);
            const Tensor& uv = in(1);
            int64_t c = plane.shape[0], N = plane.shape[1], pts = uv.shape[0];
            n.value.shape = {pts, c};
            n.value.data.resize(static_cast<size_t>(pts * c));
            double half = 0.5 * static_cast<double>(N - 1);
            for (int64_t pidx = 0; pidx < pts; ++pidx) {
                BilinearCorner bc = locate(uv(pidx, 0), uv(pidx, 1), N);
                for (int64_t ch = 0; ch < c; ++ch) {
                    double f00 = plane(ch, bc.y0, bc.x0);
                    double f01 = plane(ch, bc.y0, bc.x0 + 1);
                    double f10 = plane(ch, bc.y0 + 1, bc.x0);
                    double f11 = plane(ch, bc.y0 + 1, bc.x0 + 1);
                    double out;
                    if (n.op == Op::kBilinear) {
                        out = (1 - bc.fy) * ((1 - bc.fx) * f00 + bc.fx * f01) +
                              bc.fy * ((1 - bc.fx) * f10 + bc.fx * f11);
                    } else if (n.op == Op::kBilinearDu) {
                        out = bc.interior_x ? ((1 - bc.fy) * (f01 - f00) + bc.fy * (f11 - f10)) * half : 0.0;
                    } else {
                        out = bc.interior_y ? ((1 - bc.fx) * (f10 - f00) + bc.fx * (f11 - f01)) * half : 0.0;
                    }
                    n.value.data[static_cast<size_t>(pidx * c + ch)] = out;
                }
            }
            return;
        }
        case Op::kSoftmaxRows: {
            const Tensor& a = in(0);
            int64_t rows = a.shape[0], cols = a.shape[1];
            n.value.shape = a.shape;
            n.value.data.resize(a.data.size());
            for (int64_t i = 0; i < rows; ++i) {
                double mx = -1e300;
                for (int64_t j = 0; j < cols; ++j) mx = std::max(mx, a(i, j));
                double sum = 0;
                for (int64_t j = 0; j < cols; ++j) {
                    double e = std::exp(a(i, j) - mx);
                    n.value.data[static_cast<size_t>(i * cols + j)] = e;
                    sum += e;
                }
                for (int64_t j = 0; j < cols; ++j) n.value.data[static_cast<size_t>(i * cols + j)] /= sum;
            }
            return;
        }
        case Op::kExp: {
            const Tensor& a = in(0);
            n.value.shape = a.shape;
            n.value.data.resize(a.data.size());
            for (size_t i = 0; i < a.data.size(); ++i) {
                if (a.data[i] > 709.0) fail(id, n.op, "exp overflow; clamp the argument first");
                n.value.data[i] = std::exp(a.data[i]);
            }
            return;
        }
        case Op::kLog: {
            const Tensor& a = in(0);
            n.value.shape = a.shape;
            n.value.data.resize(a.data.size());
            for (size_t i = 0; i < a.data.size(); ++i) {
                if (!(a.data[i] > 0.0)) fail(id, n.op, "log of non-positive value");
                n.value.data[i] = std::log(a.data[i]);
            }
            return;
        }
        case Op::kClamp: {
            const Tensor& a = in(0);
            n.value.shape = a.shape;
            n.value.data.resize(a.data.size());
            for (size_t i = 0; i < a.data.size(); ++i) n.value.data[i] = std::min(std::max(a.data[i], n.s0), n.s1);
            return;
        }
        case Op::kSumAll: {
            const Tensor& a = in(0);
            double s = 0;
            for (double x : a.data) s += x;
            n.value.shape = {1};
            n.value.data = {s};
            return;
        }
        case Op::kGather: {
            const Tensor& a = in(0);
            const auto& idx = *n.indices;
            n.value.data.resize(idx.size());
            for (size_t i = 0; i < idx.size(); ++i) n.value.data[i] = idx[i] < 0 ? 0.0 : a.data[static_cast<size_t>(idx[i])];
            return;
        }
        case Op::kConcat: {
            n.value.data.resize(static_cast<size_t>(shape_numel(n.value.shape)));
            size_t off = 0;
            for (size_t i = 0; i < n.inputs.size(); ++i) {
                const Tensor& a = nodes_[static_cast<size_t>(n.inputs[i])].value;
                std::memcpy(n.value.data.data() + off, a.data.data(), a.data.size() * sizeof(double));
                off += a.data.size();
            }
            return;
        }
        case Op::kReshape: {
            const Tensor& a = in(0);
            n.value.data = a.data;
            return;
        }
    }
}

void Graph::backward(Value out) {
    if (!backward_ready_ || dirty_)
        throw std::runtime_error("backward before forward: graph is stale (re-run forward() after set_leaf)");
    Node& o = node(out);
    if (o.value.numel() != 1) throw std::runtime_error("backward expects a scalar output node");
    if (!o.requires_grad) throw std::runtime_error("output does not depend on any differentiable leaf");
    for (Node& n : nodes_) {
        if (n.requires_grad) {
            n.grad.shape = n.value.shape;
            n.grad.data.assign(n.value.data.size(), 0.0);
        } else {
            n.grad = Tensor();
        }
    }
    o.grad.data[0] = 1.0;
    for (int32_t id = out.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || n.op == Op::kLeaf || n.op == Op::kConst) continue;
        if (n.grad.data.empty()) continue;
        backprop(id);
    }
}

void Graph::backprop(int32_t id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    auto input = [&](int i) -> Node& { return nodes_[static_cast<size_t>(n.inputs[static_cast<size_t>(i)])]; };
    auto wants = [&](int i) { return input(i).requires_grad; };
    const Tensor& g = n.grad;
    switch (n.op) {
        case Op::kLeaf:
        case Op::kConst:
            return;
        case Op::kAdd: {
            for (int i = 0; i < 2; ++i)
                if (wants(i)) {
                    Tensor& gi = input(i).grad;
                    for (size_t k = 0; k < g.data.size(); ++k) gi.data[k] += g.data[k];
                }
            return;
        }
        case Op::kAddScalar:
        case Op::kReshape: {
            if (wants(0)) {
                Tensor& gi = input(0).grad;
                for (size_t k = 0; k < g.data.size(); ++k) gi.data[k] += g.data[k];
            }
            return;
        }
        case Op::kMul: {
            const Tensor& a = input(0).value;
            const Tensor& b = input(1).value;
            if (wants(0)) {
                Tensor& ga = input(0).grad;
                for (size_t k = 0; k < g.data.size(); ++k) ga.data[k] += g.data[k] * b.data[k];
            }
            if (wants(1)) {
                Tensor& gb = input(1).grad;
                for (size_t k = 0; k < g.data.size(); ++k) gb.data[k] += g.data[k] * a.data[k];
            }
            return;
        }
        case Op::kScale: {
            if (wants(0)) {
                Tensor& gi = input(0).grad;
                for (size_t k = 0; k < g.data.size(); ++k) gi.data[k] += g.data[k] * n.s0;
            }
            return;
        }
        case Op::kMatmul: {
            const Tensor& a = input(0).value;
            const Tensor& b = input(1).value;
            int64_t rows = a.shape[0], k = a.shape[1], cols = b.shape[1];
            if (wants(0)) {  // gA = g @ B^T
                Tensor& ga = input(0).grad;
                const double* pg = g.data.data();
                const double* pb = b.data.data();
                double* pga = ga.data.data();
                auto body = [&](int64_t r0, int64_t r1) {
                    for (int64_t i = r0; i < r1; ++i)
                        for (int64_t kk = 0; kk < k; ++kk) {
                            double s = 0;
                            const double* gi = pg + i * cols;
                            const double* bk = pb + kk * cols;
                            for (int64_t j = 0; j < cols; ++j) s += gi[j] * bk[j];
                            pga[i * k + kk] += s;
                        }
                };
                if (rows * cols * k > (1 << 20))
                    parallel_for(rows, body);
                else
                    body(0, rows);
            }
            if (wants(1)) {  // gB = A^T @ g
                Tensor& gb = input(1).grad;
                const double* pg = g.data.data();
                const double* pa = a.data.data();
                double* pgb = gb.data.data();
                auto body = [&](int64_t k0, int64_t k1) {
                    for (int64_t kk = k0; kk < k1; ++kk) {
                        double* gbk = pgb + kk * cols;
                        for (int64_t i = 0; i < rows; ++i) {
                            double av = pa[i * k + kk];
                            if (av == 0.0) continue;
                            const double* gi = pg + i * cols;
                            for (int64_t j = 0; j < cols; ++j) gbk[j] += av * gi[j];
                        }
                    }
                };
                if (rows * cols * k > (1 << 20))
                    parallel_for(k, body);
                else
                    body(0, k);
            }
            return;
        }
        case Op::kConv2d: {
            const Tensor& x = input(0).value;
            const Tensor& w = input(1).value;
            int64_t ci = x.shape[0], h = x.shape[1], wd = x.shape[2];
            int64_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
            int64_t s = n.i0, p = n.i1;
            int64_t ho = n.value.shape[1], wo = n.value.shape[2];
            bool gx = wants(0), gw = wants(1);
            for (int64_t oc = 0; oc < co; ++oc)
                for (int64_t ic = 0; ic < ci; ++ic)
                    for (int64_t ky = 0; ky < kh; ++ky)
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            double wv = w(oc, ic, ky, kx);
                            double acc = 0;
                            for (int64_t oy = 0; oy < ho; ++oy) {
                                int64_t iy = oy * s + ky - p;
                                if (iy < 0 || iy >= h) continue;
                                for (int64_t ox = 0; ox < wo; ++ox) {
                                    int64_t ix = ox * s + kx - p;
                                    if (ix < 0 || ix >= wd) continue;
                                    double gv = g.data[static_cast<size_t>((oc * ho + oy) * wo + ox)];
                                    if (gx) input(0).grad(ic, iy, ix) += gv * wv;
                                    if (gw) acc += gv * x(ic, iy, ix);
                                }
                            }
                            if (gw) input(1).grad(oc, ic, ky, kx) += acc;
                        }
            return;
        }
        case Op::kConvT2d: {
            const Tensor& x = input(0).value;
            const Tensor& w = input(1).value;
            int64_t ci = x.shape[0], h = x.shape[1], wd = x.shape[2];
            int64_t co = w.shape[1], kh = w.shape[2], kw = w.shape[3];
            int64_t s = n.i0, p = n.i1;
            int64_t ho = n.value.shape[1], wo = n.value.shape[2];
            bool gx = wants(0), gw = wants(1);
            for (int64_t ic = 0; ic < ci; ++ic)
                for (int64_t oc = 0; oc < co; ++oc)
                    for (int64_t ky = 0; ky < kh; ++ky)
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            double wv = w(ic, oc, ky, kx);
                            double acc = 0;
                            for (int64_t iy = 0; iy < h; ++iy) {
                                int64_t oy = iy * s + ky - p;
                                if (oy < 0 || oy >= ho) continue;
                                for (int64_t ix = 0; ix < wd; ++ix) {
                                    int64_t ox = ix * s + kx - p;
                                    if (ox < 0 || ox >= wo) continue;
                                    double gv = g.data[static_cast<size_t>((oc * ho + oy) * wo + ox)];
                                    if (gx) input(0).grad(ic, iy, ix) += gv * wv;
                                    if (gw) acc += gv * x(ic, iy, ix);
                                }
                            }
                            if (gw) input(1).grad(ic, oc, ky, kx) += acc;
                        }
            return;
        }
        case Op::kConv3d: {
            const Tensor& x = input(0).value;
            const Tensor& w = input(1).value;
            int64_t ci = x.shape[0], d = x.shape[1], h = x.shape[2], wd = x.shape[3];
            int64_t co = w.shape[0], kd = w.shape[2], kh = w.shape[3], kw = w.shape[4];
            int64_t p = n.i1;
            int64_t dd = n.value.shape[1], ho = n.value.shape[2], wo = n.value.shape[3];
            bool gx = wants(0), gw = wants(1);
            for (int64_t oc = 0; oc < co; ++oc)
                for (int64_t ic = 0; ic < ci; ++ic)
                    for (int64_t kz = 0; kz < kd; ++kz)
                        for (int64_t ky = 0; ky < kh; ++ky)
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                size_t wi = static_cast<size_t>((((oc * ci + ic) * kd + kz) * kh + ky) * kw + kx);
                                double wv = w.data[wi];
                                double acc = 0;
                                for (int64_t oz = 0; oz < dd; ++oz) {
                                    int64_t iz = oz + kz - p;
                                    if (iz < 0 || iz >= d) continue;
                                    for (int64_t oy = 0; oy < ho; ++oy) {
                                        int64_t iy = oy + ky - p;
                                        if (iy < 0 || iy >= h) continue;
                                        for (int64_t ox = 0; ox < wo; ++ox) {
                                            int64_t ix = ox + kx - p;
                                            if (ix < 0 || ix >= wd) continue;
                                            double gv = g.data[static_cast<size_t>(((oc * dd + oz) * ho + oy) * wo + ox)];
                                            size_t xi = static_cast<size_t>(((ic * d + iz) * h + iy) * wd + ix);
                                            if (gx) input(0).grad.data[xi] += gv * wv;
                                            if (gw) acc += gv * x.data[xi];
                                        }
                                    }
                                }
                                if (gw) input(1).grad.data[wi] += acc;
                            }
            return;
        }
        case Op::kBilinear: {
            const Tensor& plane = input(0).value;
            const Tensor& uv = input(1).value;
            int64_t c = plane.shape[0], N = plane.shape[1], pts = uv.shape[0];
            double half = 0.5 * static_cast<double>(N - 1);
            bool gp = wants(0), gu = wants(1);
            for (int64_t pidx = 0; pidx < pts; ++pidx) {
                BilinearCorner bc = locate(uv(pidx, 0), uv(pidx, 1), N);
                double du_acc = 0, dv_acc = 0;
                for (int64_t ch = 0; ch < c; ++ch) {
                    double gv = g.data[static_cast<size_t>(pidx * c + ch)];
                    if (gv == 0.0 && !gu) continue;
                    if (gp) {
                        input(0).grad(ch, bc.y0, bc.x0) += gv * (1 - bc.fy) * (1 - bc.fx);
                        input(0).grad(ch, bc.y0, bc.x0 + 1) += gv * (1 - bc.fy) * bc.fx;
                        input(0).grad(ch, bc.y0 + 1, bc.x0) += gv * bc.fy * (1 - bc.fx);
                        input(0).grad(ch, bc.y0 + 1, bc.x0 + 1) += gv * bc.fy * bc.fx;
                    }
                    if (gu) {
                        double f00 = plane(ch, bc.y0, bc.x0);
                        double f01 = plane(ch, bc.y0, bc.x0 + 1);
                        double f10 = plane(ch, bc.y0 + 1, bc.x0);
                        double f11 = plane(ch, bc.y0 + 1, bc.x0 + 1);
                        du_acc += gv * ((1 - bc.fy) * (f01 - f00) + bc.fy * (f11 - f10));
                        dv_acc += gv * ((1 - bc.fx) * (f10 - f00) + bc.fx * (f11 - f01));
                    }
                }
                if (gu) {
                    if (bc.interior_x) input(1).grad(pidx, 0) += du_acc * half;
                    if (bc.interior_y) input(1).grad(pidx, 1) += dv_acc * half;
                }
            }
            return;
        }
        case Op::kBilinearDu:
        case Op::kBilinearDv: {
            const Tensor& plane = input(0).value;
            const Tensor& uv = input(1).value;
            int64_t c = plane.shape[0], N = plane.shape[1], pts = uv.shape[0];
            double half = 0.5 * static_cast<double>(N - 1);
            if (!wants(0)) return;
            for (int64_t pidx = 0; pidx < pts; ++pidx) {
                BilinearCorner bc = locate(uv(pidx, 0), uv(pidx, 1), N);
                for (int64_t ch = 0; ch < c; ++ch) {
                    double gv = g.data[static_cast<size_t>(pidx * c + ch)];
                    if (gv == 0.0) continue;
                    if (n.op == Op::kBilinearDu) {
                        if (!bc.interior_x) continue;
                        input(0).grad(ch, bc.y0, bc.x0) += gv * -(1 - bc.fy) * half;
                        input(0).grad(ch, bc.y0, bc.x0 + 1) += gv * (1 - bc.fy) * half;
                        input(0).grad(ch, bc.y0 + 1, bc.x0) += gv * -bc.fy * half;
                        input(0).grad(ch, bc.y0 + 1, bc.x0 + 1) += gv * bc.fy * half;
                    } else {
                        if (!bc.interior_y) continue;
                        input(0).grad(ch, bc.y0, bc.x0) += gv * -(1 - bc.fx) * half;
                        input(0).grad(ch, bc.y0 + 1, bc.x0) += gv * (1 - bc.fx) * half;
                        input(0).grad(ch, bc.y0, bc.x0 + 1) += gv * -bc.fx * half;
                        input(0).grad(ch, bc.y0 + 1, bc.x0 + 1) += gv * bc.fx * half;
                    }
                }
            }
            return;
        }
        case Op::kSoftmaxRows: {
            if (!wants(0)) return;
            const Tensor& y = n.value;
            int64_t rows = y.shape[0], cols = y.shape[1];
            Tensor& gi = input(0).grad;
            for (int64_t i = 0; i < rows; ++i) {
                double dot = 0;
                for (int64_t j = 0; j < cols; ++j) dot += g(i, j) * y(i, j);
                for (int64_t j = 0; j < cols; ++j) gi(i, j) += y(i, j) * (g(i, j) - dot);
            }
            return;
        }
        case Op::kExp: {
            if (!wants(0)) return;
            Tensor& gi = input(0).grad;
            for (size_t k = 0; k < g.data.size(); ++k) gi.data[k] += g.data[k] * n.value.data[k];
            return;
        }
        case Op::kLog: {
            if (!wants(0)) return;
            const Tensor& a = input(0).value;
            Tensor& gi = input(0).grad;
            for (size_t k = 0; k < g.data.size(); ++k) gi.data[k] += g.data[k] / a.data[k];
            return;
        }
        case Op::kClamp: {
            if (!wants(0)) return;
            const Tensor& a = input(0).value;
            Tensor& gi = input(0).grad;
            for (size_t k = 0; k < g.data.size(); ++k)
                if (a.data[k] > n.s0 && a.data[k] < n.s1) gi.data[k] += g.data[k];
            return;
        }
        case Op::kSumAll: {
            if (!wants(0)) return;
            Tensor& gi = input(0).grad;
            double gv = g.data[0];
            for (double& x : gi.data) x += gv;
            return;
        }
        case Op::kGather: {
            if (!wants(0)) return;
            Tensor& gi = input(0).grad;
            const auto& idx = *n.indices;
            for (size_t i = 0; i < idx.size(); ++i)
                if (idx[i] >= 0) gi.data[static_cast<size_t>(idx[i])] += g.data[i];
            return;
        }
        case Op::kConcat: {
            size_t off = 0;
            for (size_t i = 0; i < n.inputs.size(); ++i) {
                Node& ni = nodes_[static_cast<size_t>(n.inputs[i])];
                size_t len = ni.value.data.size();
                if (ni.requires_grad)
                    for (size_t k = 0; k < len; ++k) ni.grad.data[k] += g.data[off + k];
                off += len;
            }
            return;
        }
    }
}

// ---- composition helpers ---------------------------------------------------

Value neg(Graph& g, Value a) { return g.scale(a, -1.0); }

Value sub(Graph& g, Value a, Value b) { return g.add(a, g.scale(b, -1.0)); }

Value square(Graph& g, Value a) { return g.mul(a, a); }

Value abs_val(Graph& g, Value a) {
    constexpr double kInf = 1e300;
    return g.add(g.clamp(a, 0.0, kInf), g.clamp(g.scale(a, -1.0), 0.0, kInf));
}

Value mean_all(Graph& g, Value a) {
    int64_t n = g.shape(a).empty() ? 1 : shape_numel(g.shape(a));
    return g.scale(g.sum_all(a), 1.0 / static_cast<double>(n));
}

Value sum_sq(Graph& g, Value a) { return g.sum_all(g.mul(a, a)); }

Value l1_mean(Graph& g, Value a) { return mean_all(g, abs_val(g, a)); }

Value softplus(Graph& g, Value a) {
    // max(x,0) + log(1 + exp(-|x|)), exact and overflow-free
    Value pos = g.clamp(a, 0.0, 1e300);
    Value absx = abs_val(g, a);
    Value inner = g.log(g.add_scalar(g.exp(g.scale(absx, -1.0)), 1.0));
    return g.add(pos, inner);
}

Value sigmoid(Graph& g, Value a) { return g.exp(g.scale(softplus(g, g.scale(a, -1.0)), -1.0)); }

Value log_pos(Graph& g, Value a, double floor) { return g.log(g.clamp(a, floor, 1e300)); }

Value reciprocal_pos(Graph& g, Value a, double floor) { return g.exp(g.scale(log_pos(g, a, floor), -1.0)); }

Value sqrt_pos(Graph& g, Value a, double floor) { return g.exp(g.scale(log_pos(g, a, floor), 0.5)); }

Value div_pos(Graph& g, Value num, Value den, double floor) { return g.mul(num, reciprocal_pos(g, den, floor)); }

Value linear(Graph& g, Value x, Value w, Value b) {
    Value y = g.matmul(x, w);
    int64_t rows = g.shape(y)[0];
    Value ones = g.constant(Tensor::full({rows, 1}, 1.0));
    return g.add(y, g.matmul(ones, b));
}

Value act_softplus(Graph& g, Value a, double beta) {
    return g.scale(softplus(g, g.scale(a, beta)), 1.0 / beta);
}

Value act_softplus_deriv(Graph& g, Value a, double beta) { return sigmoid(g, g.scale(a, beta)); }

Value ones_const(Graph& g, std::vector<int64_t> shape) { return g.constant(Tensor::full(std::move(shape), 1.0)); }

Value zeros_const(Graph& g, std::vector<int64_t> shape) { return g.constant(Tensor::zeros(std::move(shape))); }

Value mean_over_axis(Graph& g, Value a, int axis) {
    const std::vector<int64_t> s = g.shape(a);  // by value: pushes may reallocate node storage
    int nd = static_cast<int>(s.size());
    if (axis < 0 || axis >= nd) throw std::runtime_error("mean_over_axis: bad axis");
    int64_t len = s[static_cast<size_t>(axis)];
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= s[static_cast<size_t>(i)];
    // permute to [len, outer*inner] then mean via ones row
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>(len * outer * inner));
    for (int64_t k = 0; k < len; ++k)
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < inner; ++i) idx->push_back((o * len + k) * inner + i);
    Value perm = g.gather(a, idx, {len, outer * inner});
    Value onesrow = g.constant(Tensor::full({1, len}, 1.0 / static_cast<double>(len)));
    Value pooled = g.matmul(onesrow, perm);
    std::vector<int64_t> out_shape;
    for (int i = 0; i < nd; ++i)
        if (i != axis) out_shape.push_back(s[static_cast<size_t>(i)]);
    if (out_shape.empty()) out_shape.push_back(1);
    return g.reshape(pooled, out_shape);
}

Value transpose2d(Graph& g, Value a) {
    const std::vector<int64_t> s = g.shape(a);
    if (s.size() != 2) throw std::runtime_error("transpose2d expects [n,m]");
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>(s[0] * s[1]));
    for (int64_t j = 0; j < s[1]; ++j)
        for (int64_t i = 0; i < s[0]; ++i) idx->push_back(i * s[1] + j);
    return g.gather(a, idx, {s[1], s[0]});
}

Value stack_cols(Graph& g, const std::vector<Value>& cols) {
    if (cols.empty()) throw std::runtime_error("stack_cols: empty");
    int64_t n = shape_numel(g.shape(cols[0]));
    int64_t k = static_cast<int64_t>(cols.size());
    Value flat = g.concat(cols, {k, n});
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>(n * k));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < k; ++j) idx->push_back(j * n + i);
    return g.gather(flat, idx, {n, k});
}

Value slice_rows(Graph& g, Value a, int64_t r0, int64_t r1) {
    const std::vector<int64_t> s = g.shape(a);
    if (s.size() != 2 || r0 < 0 || r1 > s[0] || r0 >= r1) throw std::runtime_error("slice_rows: bad range");
    auto idx = std::make_shared<std::vector<int64_t>>();
    idx->reserve(static_cast<size_t>((r1 - r0) * s[1]));
    for (int64_t i = r0; i < r1; ++i)
        for (int64_t j = 0; j < s[1]; ++j) idx->push_back(i * s[1] + j);
    return g.gather(a, idx, {r1 - r0, s[1]});
}

double fd_grad_entry(Graph& g, Value loss, Value param, int64_t index, double h) {
    Tensor saved = g.value(param);
    Tensor probe = saved;
    probe.data[static_cast<size_t>(index)] = saved.data[static_cast<size_t>(index)] + h;
    g.set_leaf(param, probe);
    g.forward();
    double fp = g.value(loss).data[0];
    probe.data[static_cast<size_t>(index)] = saved.data[static_cast<size_t>(index)] - h;
    g.set_leaf(param, probe);
    g.forward();
    double fm = g.value(loss).data[0];
    g.set_leaf(param, saved);
    g.forward();
    return (fp - fm) / (2.0 * h);
}

}  // namespace recon::ad
