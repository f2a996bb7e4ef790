#pragma once

// A small reverse-mode tape over 4-D tensors. Nodes are appended in evaluation
// order; backward() walks them in reverse and each node pushes its gradient
// into its inputs.

#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mesr/image.hpp"
#include "mesr/splat_pool.hpp"
#include "mesr/tensor.hpp"

namespace mesr::ad {

using Id = int;

template <class Real>
class Tape {
public:
    using Backward = std::function<void(Tape&, Id self)>;

    Id leaf(Tensor<Real> value, bool requires_grad = false)
    {
        nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
        return static_cast<Id>(nodes_.size()) - 1;
    }

    /// Appends an op result. The closure is kept only when some input needs a gradient.
    Id push(Tensor<Real> value, const std::vector<Id>& inputs, Backward backward)
    {
        bool rg = false;
        for (Id i : inputs) rg = rg || requires_grad(i);
        nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(backward) : Backward{}});
        return static_cast<Id>(nodes_.size()) - 1;
    }

    const Tensor<Real>& value(Id id) const { return node(id).value; }
    bool requires_grad(Id id) const { return node(id).requires_grad; }

    /// Gradient buffer of a node, zero-filled on first access.
    Tensor<Real>& grad(Id id)
    {
        Node& n = node(id);
        if (n.grad.v.empty() && !n.value.v.empty()) {
            const Tensor<Real>& v = n.value;
            n.grad = Tensor<Real>(v.n, v.c, v.h, v.w);
        }
        return n.grad;
    }

    /// Gradient if one was accumulated, else an empty tensor.
    const Tensor<Real>& grad_or_empty(Id id) const { return node(id).grad; }

    void backward(Id root)
    {
        if (value(root).size() != 1) throw ShapeError("Tape::backward: root must be a scalar, got " + value(root).shape_str());
        grad(root).v[0] = Real(1);
        for (Id id = root; id >= 0; --id) {
            Node& n = node(id);
            if (n.requires_grad && n.backward && !n.grad.v.empty()) n.backward(*this, id);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor<Real> value;
        Tensor<Real> grad;
        bool requires_grad = false;
        Backward backward;
    };

    Node& node(Id id)
    {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw Error("Tape: bad node id " + std::to_string(id));
        return nodes_[static_cast<std::size_t>(id)];
    }
    const Node& node(Id id) const { return const_cast<Tape*>(this)->node(id); }

    std::deque<Node> nodes_;
};

namespace detail {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::vector<int> reflect_table(int n, int pad)
{
    std::vector<int> t(static_cast<std::size_t>(n + 2 * pad));
    for (int i = 0; i < n + 2 * pad; ++i) t[static_cast<std::size_t>(i)] = reflect_index(i - pad, n);
    return t;
}

// col[(c*k + ky)*k + kx][y*W + x] = img[c][refl(y+ky-p)][refl(x+kx-p)]
template <class Real>
void im2col(const Real* img, int C, int H, int W, int k, const std::vector<int>& ry, const std::vector<int>& rx, Real* col)
{
    const std::size_t HW = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                Real* dst = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * HW;
                const Real* src = img + static_cast<std::size_t>(c) * HW;
                const int* xt = rx.data() + kx;
                for (int y = 0; y < H; ++y, dst += W) {
                    const Real* row = src + static_cast<std::size_t>(ry[y + ky]) * W;
                    for (int x = 0; x < W; ++x) dst[x] = row[xt[x]];
                }
            }
}

template <class Real>
void col2im_add(const Real* col, int C, int H, int W, int k, const std::vector<int>& ry, const std::vector<int>& rx, Real* img)
{
    const std::size_t HW = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const Real* src = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * HW;
                Real* dst = img + static_cast<std::size_t>(c) * HW;
                const int* xt = rx.data() + kx;
                for (int y = 0; y < H; ++y, src += W) {
                    Real* row = dst + static_cast<std::size_t>(ry[y + ky]) * W;
                    for (int x = 0; x < W; ++x) row[xt[x]] += src[x];
                }
            }
}

template <class Real>
void add_into(Tensor<Real>& dst, const Tensor<Real>& src)
{
    for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

} // namespace detail

/// Cross-correlation with a [Co, Ci, k, k] weight and optional bias of Co entries (pass -1 for none);
/// reflection padding of k/2, stride 1.
template <class Real>
Id conv2d(Tape<Real>& tape, Id x, Id weight, Id bias = -1)
{
    const Tensor<Real>& X = tape.value(x);
    const Tensor<Real>& Wt = tape.value(weight);
    const int Co = Wt.n, Ci = Wt.c, k = Wt.h;
    if (Wt.h != Wt.w || k % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd, got " + Wt.shape_str());
    if (X.c != Ci) throw ShapeError("conv2d: input " + X.shape_str() + " vs weight " + Wt.shape_str());
    if (bias >= 0 && tape.value(bias).size() != static_cast<std::size_t>(Co))
        throw ShapeError("conv2d: bias " + tape.value(bias).shape_str() + " for " + std::to_string(Co) + " outputs");
    const int p = k / 2, H = X.h, W = X.w;
    if (p >= H || p >= W) throw ShapeError("conv2d: padding " + std::to_string(p) + " too large for " + X.shape_str());

    using Mat = detail::RowMat<Real>;
    const auto ry = detail::reflect_table(H, p), rx = detail::reflect_table(W, p);
    const int K = Ci * k * k;
    const auto HW = static_cast<Eigen::Index>(X.plane());
    Tensor<Real> out(X.n, Co, H, W);
    std::vector<Real> col(static_cast<std::size_t>(K) * static_cast<std::size_t>(HW));
    {
        Eigen::Map<const Mat> Wm(Wt.v.data(), Co, K);
        for (int b = 0; b < X.n; ++b) {
            detail::im2col(X.plane_ptr(b, 0), Ci, H, W, k, ry, rx, col.data());
            Eigen::Map<const Mat> C(col.data(), K, HW);
            Eigen::Map<Mat> O(out.plane_ptr(b, 0), Co, HW);
            O.noalias() = Wm * C;
            if (bias >= 0) {
                const Real* bv = tape.value(bias).v.data();
                for (int o = 0; o < Co; ++o) O.row(o).array() += bv[o];
            }
        }
    }

    std::vector<Id> inputs{x, weight};
    if (bias >= 0) inputs.push_back(bias);
    return tape.push(std::move(out), inputs, [=](Tape<Real>& t, Id self) {
        const Tensor<Real>& Xv = t.value(x);
        const Tensor<Real>& Wv = t.value(weight);
        const Tensor<Real>& G = t.grad(self);
        Eigen::Map<const Mat> Wm(Wv.v.data(), Co, K);
        std::vector<Real> colb(static_cast<std::size_t>(K) * static_cast<std::size_t>(HW));
        const bool gx = t.requires_grad(x), gw = t.requires_grad(weight), gb = bias >= 0 && t.requires_grad(bias);
        for (int b = 0; b < Xv.n; ++b) {
            Eigen::Map<const Mat> Gm(G.plane_ptr(b, 0), Co, HW);
            if (gw) {
                detail::im2col(Xv.plane_ptr(b, 0), Ci, H, W, k, ry, rx, colb.data());
                Eigen::Map<const Mat> C(colb.data(), K, HW);
                Eigen::Map<Mat> GW(t.grad(weight).v.data(), Co, K);
                GW.noalias() += Gm * C.transpose();
            }
            if (gb) {
                Real* gbv = t.grad(bias).v.data();
                for (int o = 0; o < Co; ++o) gbv[o] += Gm.row(o).sum();
            }
            if (gx) {
                Eigen::Map<Mat> GC(colb.data(), K, HW);
                GC.noalias() = Wm.transpose() * Gm;
                detail::col2im_add(colb.data(), Ci, H, W, k, ry, rx, t.grad(x).plane_ptr(b, 0));
            }
        }
    });
}

template <class Real>
Id relu(Tape<Real>& tape, Id x)
{
    Tensor<Real> out = tape.value(x);
    for (auto& v : out.v) v = v > Real(0) ? v : Real(0);
    return tape.push(std::move(out), {x}, [x](Tape<Real>& t, Id self) {
        const auto& X = t.value(x);
        const auto& G = t.grad(self);
        auto& GX = t.grad(x);
        for (std::size_t i = 0; i < G.v.size(); ++i)
            if (X.v[i] > Real(0)) GX.v[i] += G.v[i];
    });
}

template <class Real>
Id add(Tape<Real>& tape, Id a, Id b)
{
    require_same_shape(tape.value(a), tape.value(b), "add");
    Tensor<Real> out = tape.value(a);
    detail::add_into(out, tape.value(b));
    return tape.push(std::move(out), {a, b}, [a, b](Tape<Real>& t, Id self) {
        const Tensor<Real>& G = t.grad(self);
        if (t.requires_grad(a)) detail::add_into(t.grad(a), G);
        if (t.requires_grad(b)) detail::add_into(t.grad(b), G);
    });
}

template <class Real>
Id scale(Tape<Real>& tape, Id x, double factor)
{
    Tensor<Real> out = tape.value(x);
    const Real f = static_cast<Real>(factor);
    for (auto& v : out.v) v *= f;
    return tape.push(std::move(out), {x}, [x, f](Tape<Real>& t, Id self) {
        const auto& G = t.grad(self);
        auto& GX = t.grad(x);
        for (std::size_t i = 0; i < G.v.size(); ++i) GX.v[i] += f * G.v[i];
    });
}

/// Concatenates along channels; all inputs share n, h, w.
template <class Real>
Id concat_channels(Tape<Real>& tape, const std::vector<Id>& xs)
{
    if (xs.empty()) throw Error("concat_channels: no inputs");
    const Tensor<Real>& first = tape.value(xs[0]);
    int C = 0;
    for (Id id : xs) {
        const auto& v = tape.value(id);
        if (v.n != first.n || v.h != first.h || v.w != first.w)
            throw ShapeError("concat_channels: " + v.shape_str() + " vs " + first.shape_str());
        C += v.c;
    }
    Tensor<Real> out(first.n, C, first.h, first.w);
    for (int b = 0; b < first.n; ++b) {
        int ch = 0;
        for (Id id : xs) {
            const auto& v = tape.value(id);
            std::copy_n(v.plane_ptr(b, 0), v.plane() * v.c, out.plane_ptr(b, ch));
            ch += v.c;
        }
    }
    return tape.push(std::move(out), xs, [xs](Tape<Real>& t, Id self) {
        const Tensor<Real>& G = t.grad(self);
        for (int b = 0; b < G.n; ++b) {
            int ch = 0;
            for (Id id : xs) {
                const int c = t.value(id).c;
                if (t.requires_grad(id)) {
                    Real* dst = t.grad(id).plane_ptr(b, 0);
                    const Real* src = G.plane_ptr(b, ch);
                    for (std::size_t i = 0; i < G.plane() * c; ++i) dst[i] += src[i];
                }
                ch += c;
            }
        }
    });
}

/// Origin-aligned bilinear zoom by s (HR u samples LR u / s, mirrored past the edge), per plane.
template <class Real>
Id bilinear_zoom(Tape<Real>& tape, Id x, int s)
{
    if (s < 1) throw Error("bilinear_zoom: factor must be >= 1");
    const Tensor<Real>& X = tape.value(x);
    const int H = X.h, W = X.w, SH = s * H, SW = s * W;
    struct Tap { int i0, i1; Real t; };
    auto taps = [s](int n_hr, int n_lr) {
        std::vector<Tap> out(static_cast<std::size_t>(n_hr));
        for (int u = 0; u < n_hr; ++u) {
            const int i0 = u / s;
            const int i1 = reflect_index(i0 + 1, n_lr);
            out[static_cast<std::size_t>(u)] = {i0, i1, static_cast<Real>(static_cast<double>(u % s) / s)};
        }
        return out;
    };
    const auto tx = taps(SW, W), ty = taps(SH, H);
    Tensor<Real> out(X.n, X.c, SH, SW);
    for (int b = 0; b < X.n; ++b)
        for (int c = 0; c < X.c; ++c) {
            const Real* src = X.plane_ptr(b, c);
            Real* dst = out.plane_ptr(b, c);
            for (int v = 0; v < SH; ++v) {
                const Tap& a = ty[static_cast<std::size_t>(v)];
                for (int u = 0; u < SW; ++u) {
                    const Tap& e = tx[static_cast<std::size_t>(u)];
                    const Real top = (1 - e.t) * src[a.i0 * W + e.i0] + e.t * src[a.i0 * W + e.i1];
                    const Real bot = (1 - e.t) * src[a.i1 * W + e.i0] + e.t * src[a.i1 * W + e.i1];
                    dst[v * SW + u] = (1 - a.t) * top + a.t * bot;
                }
            }
        }
    return tape.push(std::move(out), {x}, [x, tx, ty, W, SH, SW](Tape<Real>& t, Id self) {
        const Tensor<Real>& G = t.grad(self);
        Tensor<Real>& GX = t.grad(x);
        for (int b = 0; b < G.n; ++b)
            for (int c = 0; c < G.c; ++c) {
                const Real* g = G.plane_ptr(b, c);
                Real* d = GX.plane_ptr(b, c);
                for (int v = 0; v < SH; ++v) {
                    const Tap& a = ty[static_cast<std::size_t>(v)];
                    for (int u = 0; u < SW; ++u) {
                        const Tap& e = tx[static_cast<std::size_t>(u)];
                        const Real gv = g[v * SW + u];
                        d[a.i0 * W + e.i0] += (1 - a.t) * (1 - e.t) * gv;
                        d[a.i0 * W + e.i1] += (1 - a.t) * e.t * gv;
                        d[a.i1 * W + e.i0] += a.t * (1 - e.t) * gv;
                        d[a.i1 * W + e.i1] += a.t * e.t * gv;
                    }
                }
            }
    });
}

/// Keeps pixels (phase_x + s i, phase_y + s j).
template <class Real>
Id subsample(Tape<Real>& tape, Id x, int s, int phase_x = 0, int phase_y = 0)
{
    const Tensor<Real>& X = tape.value(x);
    if (s < 1 || phase_x < 0 || phase_y < 0 || phase_x >= s || phase_y >= s)
        throw Error("subsample: need s >= 1 and 0 <= phase < s");
    if (X.h % s != 0 || X.w % s != 0) throw ShapeError("subsample: " + X.shape_str() + " not divisible by " + std::to_string(s));
    const int H = X.h / s, W = X.w / s;
    Tensor<Real> out(X.n, X.c, H, W);
    for (int b = 0; b < X.n; ++b)
        for (int c = 0; c < X.c; ++c)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx) out(b, c, y, xx) = X(b, c, phase_y + s * y, phase_x + s * xx);
    return tape.push(std::move(out), {x}, [x, s, phase_x, phase_y](Tape<Real>& t, Id self) {
        const Tensor<Real>& G = t.grad(self);
        Tensor<Real>& GX = t.grad(x);
        for (int b = 0; b < G.n; ++b)
            for (int c = 0; c < G.c; ++c)
                for (int y = 0; y < G.h; ++y)
                    for (int xx = 0; xx < G.w; ++xx) GX(b, c, phase_y + s * y, phase_x + s * xx) += G(b, c, y, xx);
    });
}

/// Same data viewed with another shape of equal size.
template <class Real>
Id reshape(Tape<Real>& tape, Id x, int n, int c, int h, int w)
{
    Tensor<Real> out(n, c, h, w);
    if (out.size() != tape.value(x).size())
        throw ShapeError("reshape: " + tape.value(x).shape_str() + " to " + out.shape_str());
    out.v = tape.value(x).v;
    return tape.push(std::move(out), {x}, [x](Tape<Real>& t, Id self) { detail::add_into(t.grad(x), t.grad(self)); });
}

/// True convolution of every plane with a fixed kernel, mirror boundaries (matches mesr::convolve).
template <class Real>
Id blur(Tape<Real>& tape, Id x, const Kernel& k)
{
    if (k.radius == 0 && k.taps[0] == 1.0) return x;
    const Tensor<Real> X = tape.value(x);
    const int r = k.radius, side = k.side();
    Tensor<Real> wt(1, 1, side, side);
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) wt(0, 0, dy + r, dx + r) = static_cast<Real>(k.tap(-dx, -dy));
    // Depthwise: fold channels into the batch axis.
    const Id flat = reshape(tape, x, X.n * X.c, 1, X.h, X.w);
    const Id y = conv2d(tape, flat, tape.leaf(std::move(wt)));
    return reshape(tape, y, X.n, X.c, X.h, X.w);
}

/// Mean absolute difference to a fixed target over all planes, excluding `border` pixels per side.
template <class Real>
Id l1_mean(Tape<Real>& tape, Id x, const Tensor<Real>& target, int border = 0)
{
    const Tensor<Real>& X = tape.value(x);
    require_same_shape(X, target, "l1_mean");
    if (border < 0 || 2 * border >= X.h || 2 * border >= X.w)
        throw ShapeError("l1_mean: border " + std::to_string(border) + " leaves no pixels in " + X.shape_str());
    const double count = static_cast<double>(X.n) * X.c * (X.h - 2 * border) * (X.w - 2 * border);
    double acc = 0.0;
    for (int b = 0; b < X.n; ++b)
        for (int c = 0; c < X.c; ++c)
            for (int y = border; y < X.h - border; ++y)
                for (int xx = border; xx < X.w - border; ++xx)
                    acc += std::abs(static_cast<double>(X(b, c, y, xx)) - target(b, c, y, xx));
    Tensor<Real> out(1, 1, 1, 1, static_cast<Real>(acc / count));
    return tape.push(std::move(out), {x}, [x, target, border, count](Tape<Real>& t, Id self) {
        const Real g = static_cast<Real>(t.grad(self).v[0] / count);
        const Tensor<Real>& Xv = t.value(x);
        Tensor<Real>& GX = t.grad(x);
        for (int b = 0; b < Xv.n; ++b)
            for (int c = 0; c < Xv.c; ++c)
                for (int y = border; y < Xv.h - border; ++y)
                    for (int xx = border; xx < Xv.w - border; ++xx) {
                        const Real d = Xv(b, c, y, xx) - target(b, c, y, xx);
                        if (d > 0) GX(b, c, y, xx) += g;
                        else if (d < 0) GX(b, c, y, xx) -= g;
                    }
    });
}

struct SplatIds {
    Id values;
    Id weights;
};

/// SPMC splat as two tape nodes: the splatted values and the splat weights.
template <class Real>
SplatIds splat(Tape<Real>& tape, Id stack, Id flows, int s)
{
    SplatResult<Real> r = spmc_splat(tape.value(stack), tape.value(flows), s);
    const Id vals = tape.push(std::move(r.values), {stack, flows}, [stack, flows, s](Tape<Real>& t, Id self) {
        auto g = spmc_backward(t.value(stack), t.value(flows), s, t.grad(self), Tensor<Real>{});
        if (t.requires_grad(stack)) detail::add_into(t.grad(stack), g.stack);
        if (t.requires_grad(flows)) detail::add_into(t.grad(flows), g.flows);
    });
    const Id wts = tape.push(std::move(r.weights), {flows}, [stack, flows, s](Tape<Real>& t, Id self) {
        auto g = spmc_backward(t.value(stack), t.value(flows), s, Tensor<Real>{}, t.grad(self));
        detail::add_into(t.grad(flows), g.flows);
    });
    return {vals, wts};
}

/// Temporal pooling followed by concatenation of the selected statistics and the aggregation weight.
template <class Real>
Id pool_concat(Tape<Real>& tape, SplatIds sp, const PoolMode& mode)
{
    const SplatResult<Real> in{tape.value(sp.values), tape.value(sp.weights)};
    Tensor<Real> out = concat_pooled(pool(in), mode);
    const int N = in.values.c;
    return tape.push(std::move(out), {sp.values, sp.weights}, [sp, mode, N](Tape<Real>& t, Id self) {
        const SplatResult<Real> in{t.value(sp.values), t.value(sp.weights)};
        const SplatResult<Real> g = pool_backward(in, split_pooled_grad(t.grad(self), mode, N));
        if (t.requires_grad(sp.values)) detail::add_into(t.grad(sp.values), g.values);
        if (t.requires_grad(sp.weights)) detail::add_into(t.grad(sp.weights), g.weights);
    });
}

} // namespace mesr::ad
