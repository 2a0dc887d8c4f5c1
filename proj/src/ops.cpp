#include "nafrssr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "nafrssr/simd.hpp"

namespace nafrssr::ops {

namespace {

[[noreturn]] void fail(const std::string& op, const std::string& what) {
    throw std::invalid_argument(op + ": " + what);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) fail(op, "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

// dst[c * rows + r] = src[r * ld + c]
void transpose(const double* src, std::size_t rows, std::size_t cols, std::size_t ld, double* dst) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * ld + c];
}

struct ConvGeometry {
    int cin_g, cout_g, groups;
    int in_h, in_w, kh, kw, out_h, out_w, stride, pad;
    std::size_t k() const { return static_cast<std::size_t>(cin_g) * kh * kw; }
    std::size_t p() const { return static_cast<std::size_t>(out_h) * out_w; }
    bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Unfolds cin_g input planes into a (cin_g*kh*kw) x (out_h*out_w) matrix;
// rows run over (channel, ky, kx) in that order.
void im2col(const double* x, const ConvGeometry& g, double* col) {
    const std::size_t p = g.p();
    for (int ic = 0; ic < g.cin_g; ++ic) {
        const double* plane = x + static_cast<std::size_t>(ic) * g.in_h * g.in_w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((static_cast<std::size_t>(ic) * g.kh + ky) * g.kw + kx) * p;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    double* dst = row + static_cast<std::size_t>(oy) * g.out_w;
                    if (iy < 0 || iy >= g.in_h) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
    const std::size_t p = g.p();
    for (int ic = 0; ic < g.cin_g; ++ic) {
        double* plane = x + static_cast<std::size_t>(ic) * g.in_h * g.in_w;
        for (int ky = 0; ky < g.kh; ++ky) {
            for (int kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((static_cast<std::size_t>(ic) * g.kh + ky) * g.kw + kx) * p;
                for (int oy = 0; oy < g.out_h; ++oy) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    const double* src = row + static_cast<std::size_t>(oy) * g.out_w;
                    double* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

bool depthwise(const ConvGeometry& g) { return g.cin_g == 1 && g.cout_g == 1 && g.stride == 1; }

// Valid output columns [lo, hi) for kernel column kx, so that the input
// column ox - pad + kx stays inside the row.
std::pair<int, int> valid_columns(const ConvGeometry& g, int kx) {
    const int lo = std::max(0, g.pad - kx);
    const int hi = std::min(g.out_w, g.in_w + g.pad - kx);
    return {lo, std::max(lo, hi)};
}

// One channel, stride 1: out += sum over taps of w[tap] * shifted input,
// taps visited in (ky, kx) order as in the im2col path.
void depthwise_forward(const double* x, const double* w, const ConvGeometry& g, double* out, const simd::Kernels& kern) {
    for (int ky = 0; ky < g.kh; ++ky)
        for (int kx = 0; kx < g.kw; ++kx) {
            const double wk = w[ky * g.kw + kx];
            const auto [lo, hi] = valid_columns(g, kx);
            if (lo >= hi) continue;
            for (int oy = 0; oy < g.out_h; ++oy) {
                const int iy = oy - g.pad + ky;
                if (iy < 0 || iy >= g.in_h) continue;
                const double* src = x + static_cast<std::size_t>(iy) * g.in_w + (lo - g.pad + kx);
                kern.axpy(static_cast<std::size_t>(hi - lo), wk, src, out + static_cast<std::size_t>(oy) * g.out_w + lo);
            }
        }
}

void depthwise_backward(const double* x, const double* w, const double* go, const ConvGeometry& g, double* gx, double* gw,
                        const simd::Kernels& kern) {
    for (int ky = 0; ky < g.kh; ++ky)
        for (int kx = 0; kx < g.kw; ++kx) {
            const auto [lo, hi] = valid_columns(g, kx);
            if (lo >= hi) continue;
            double acc = 0.0;
            for (int oy = 0; oy < g.out_h; ++oy) {
                const int iy = oy - g.pad + ky;
                if (iy < 0 || iy >= g.in_h) continue;
                const std::size_t in_off = static_cast<std::size_t>(iy) * g.in_w + (lo - g.pad + kx);
                const double* grow = go + static_cast<std::size_t>(oy) * g.out_w + lo;
                if (gw)
                    for (int i = 0; i < hi - lo; ++i) acc += x[in_off + i] * grow[i];
                if (gx) kern.axpy(static_cast<std::size_t>(hi - lo), w[ky * g.kw + kx], grow, gx + in_off);
            }
            if (gw) gw[ky * g.kw + kx] += acc;
        }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dOptions options) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const int groups = options.groups;
    if (groups < 1 || options.stride < 1 || options.padding < 0) fail("conv2d", "invalid stride/padding/groups");
    if (xs.c % groups != 0 || ws.n % groups != 0)
        fail("conv2d", "channels " + std::to_string(xs.c) + "->" + std::to_string(ws.n) +
                           " not divisible by groups " + std::to_string(groups));
    if (ws.c != xs.c / groups)
        fail("conv2d", "weight " + ws.str() + " expects " + std::to_string(ws.c * groups) + " input channels, got " +
                           std::to_string(xs.c));
    if (bias.defined() && bias.shape() != Shape{1, ws.n, 1, 1}) fail("conv2d", "bias shape " + bias.shape().str());
    const int padded_h = xs.h + 2 * options.padding;
    const int padded_w = xs.w + 2 * options.padding;
    if (ws.h > padded_h || ws.w > padded_w) fail("conv2d", "kernel larger than padded input");

    ConvGeometry g{xs.c / groups,
                   ws.n / groups,
                   groups,
                   xs.h,
                   xs.w,
                   ws.h,
                   ws.w,
                   (padded_h - ws.h) / options.stride + 1,
                   (padded_w - ws.w) / options.stride + 1,
                   options.stride,
                   options.padding};
    const Shape os{xs.n, ws.n, g.out_h, g.out_w};
    const std::size_t kdim = g.k();
    const std::size_t pdim = g.p();
    const std::size_t in_plane = xs.plane();
    const auto& kern = simd::active();

    std::vector<double> out(os.numel(), 0.0);
    std::vector<double> col(g.pointwise() || depthwise(g) ? 0 : kdim * pdim);
    const double* xd = x.data().data();
    const double* wd = weight.data().data();
    for (int n = 0; n < xs.n; ++n) {
        for (int grp = 0; grp < groups; ++grp) {
            const double* xg = xd + xs.offset(n, grp * g.cin_g, 0, 0);
            double* og = out.data() + os.offset(n, grp * g.cout_g, 0, 0);
            if (bias.defined()) {
                for (int oc = 0; oc < g.cout_g; ++oc)
                    std::fill_n(og + oc * pdim, pdim, bias.data()[grp * g.cout_g + oc]);
            }
            if (depthwise(g)) {
                depthwise_forward(xg, wd + grp * kdim, g, og, kern);
                continue;
            }
            const double* b = xg;
            if (!g.pointwise()) {
                im2col(xg, g, col.data());
                b = col.data();
            }
            kern.gemm_acc(g.cout_g, pdim, kdim, wd + grp * g.cout_g * kdim, kdim, b, pdim, og, pdim);
        }
    }

    return detail::make_result(os, std::move(out), {x, weight, bias}, "conv2d", [g, xs, os, in_plane](detail::Node& self) {
        const auto& kern = simd::active();
        const detail::Node& xn = *self.inputs[0];
        const detail::Node& wn = *self.inputs[1];
        double* gx = self.input_grad(0);
        double* gw = self.input_grad(1);
        double* gb = self.input_grad(2);
        const std::size_t kdim = g.k();
        const std::size_t pdim = g.p();
        const double* go = self.grad.data();
        const bool direct = depthwise(g);
        std::vector<double> col(g.pointwise() || direct ? 0 : kdim * pdim);
        std::vector<double> go_t(gw && !direct ? pdim * g.cout_g : 0);
        std::vector<double> tmp(gw && !direct ? kdim * g.cout_g : 0);
        std::vector<double> w_t(gx && !direct ? kdim * g.cout_g : 0);
        std::vector<double> gcol(gx && !g.pointwise() && !direct ? kdim * pdim : 0);
        for (int n = 0; n < xs.n; ++n) {
            for (int grp = 0; grp < g.groups; ++grp) {
                const double* gog = go + os.offset(n, grp * g.cout_g, 0, 0);
                if (gb) {
                    for (int oc = 0; oc < g.cout_g; ++oc) {
                        double s = 0.0;
                        const double* row = gog + oc * pdim;
                        for (std::size_t i = 0; i < pdim; ++i) s += row[i];
                        gb[grp * g.cout_g + oc] += s;
                    }
                }
                const double* xg = xn.data.data() + xs.offset(n, grp * g.cin_g, 0, 0);
                if (depthwise(g)) {
                    depthwise_backward(xg, wn.data.data() + grp * kdim, gog, g, gx ? gx + xs.offset(n, grp, 0, 0) : nullptr,
                                       gw ? gw + grp * kdim : nullptr, kern);
                    continue;
                }
                const double* cols = xg;
                if (!g.pointwise() && gw) {
                    im2col(xg, g, col.data());
                    cols = col.data();
                }
                if (gw) {
                    // dW^T (K x cout_g) = col (K x P) * dOut^T (P x cout_g)
                    transpose(gog, g.cout_g, pdim, pdim, go_t.data());
                    std::fill(tmp.begin(), tmp.end(), 0.0);
                    kern.gemm_acc(kdim, g.cout_g, pdim, cols, pdim, go_t.data(), g.cout_g, tmp.data(), g.cout_g);
                    double* gwg = gw + grp * g.cout_g * kdim;
                    for (int oc = 0; oc < g.cout_g; ++oc)
                        for (std::size_t q = 0; q < kdim; ++q) gwg[oc * kdim + q] += tmp[q * g.cout_g + oc];
                }
                if (gx) {
                    transpose(wn.data.data() + grp * g.cout_g * kdim, g.cout_g, kdim, kdim, w_t.data());
                    double* gxg = gx + xs.offset(n, grp * g.cin_g, 0, 0);
                    if (g.pointwise()) {
                        kern.gemm_acc(kdim, pdim, g.cout_g, w_t.data(), g.cout_g, gog, pdim, gxg, in_plane);
                    } else {
                        std::fill(gcol.begin(), gcol.end(), 0.0);
                        kern.gemm_acc(kdim, pdim, g.cout_g, w_t.data(), g.cout_g, gog, pdim, gcol.data(), pdim);
                        col2im_add(gcol.data(), g, gxg);
                    }
                }
            }
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& scale, const Tensor& shift, double eps) {
    const Shape xs = x.shape();
    const Shape ps{1, xs.c, 1, 1};
    if (scale.shape() != ps || shift.shape() != ps)
        fail("layer_norm", "scale/shift must be " + ps.str() + ", got " + scale.shape().str() + "/" +
                               shift.shape().str());
    if (!(eps > 0.0)) fail("layer_norm", "eps must be positive");
    const std::size_t plane = xs.plane();
    const bool record = detail::should_record({&x, &scale, &shift});

    std::vector<double> out(xs.numel());
    std::vector<double> xhat(xs.numel());
    std::vector<double> rstd(static_cast<std::size_t>(xs.n) * plane);
    std::vector<double> mu(plane), var(plane);
    const double inv_c = 1.0 / xs.c;
    const double* xd = x.data().data();
    const double* sc = scale.data().data();
    const double* sh = shift.data().data();
    for (int n = 0; n < xs.n; ++n) {
        const double* xn = xd + xs.offset(n, 0, 0, 0);
        std::fill(mu.begin(), mu.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        for (int c = 0; c < xs.c; ++c) {
            const double* row = xn + c * plane;
            for (std::size_t i = 0; i < plane; ++i) mu[i] += row[i];
        }
        for (std::size_t i = 0; i < plane; ++i) mu[i] *= inv_c;
        for (int c = 0; c < xs.c; ++c) {
            const double* row = xn + c * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = row[i] - mu[i];
                var[i] += d * d;
            }
        }
        double* rs = rstd.data() + n * plane;
        for (std::size_t i = 0; i < plane; ++i) rs[i] = 1.0 / std::sqrt(var[i] * inv_c + eps);
        for (int c = 0; c < xs.c; ++c) {
            const std::size_t base = xs.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                const double xh = (xd[base + i] - mu[i]) * rs[i];
                xhat[base + i] = xh;
                out[base + i] = xh * sc[c] + sh[c];
            }
        }
    }
    if (!record) return detail::make_result(xs, std::move(out), {}, "layer_norm", nullptr);

    return detail::make_result(
        xs, std::move(out), {x, scale, shift}, "layer_norm",
        [xs, plane, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
            double* gx = self.input_grad(0);
            double* gscale = self.input_grad(1);
            double* gshift = self.input_grad(2);
            const double* go = self.grad.data();
            const double* sc = self.inputs[1]->data.data();
            const double inv_c = 1.0 / xs.c;
            std::vector<double> mean_g(plane), mean_gx(plane);
            for (int n = 0; n < xs.n; ++n) {
                if (gx) {
                    std::fill(mean_g.begin(), mean_g.end(), 0.0);
                    std::fill(mean_gx.begin(), mean_gx.end(), 0.0);
                    for (int c = 0; c < xs.c; ++c) {
                        const std::size_t base = xs.offset(n, c, 0, 0);
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double gh = go[base + i] * sc[c];
                            mean_g[i] += gh;
                            mean_gx[i] += gh * xhat[base + i];
                        }
                    }
                    for (std::size_t i = 0; i < plane; ++i) {
                        mean_g[i] *= inv_c;
                        mean_gx[i] *= inv_c;
                    }
                    const double* rs = rstd.data() + n * plane;
                    for (int c = 0; c < xs.c; ++c) {
                        const std::size_t base = xs.offset(n, c, 0, 0);
                        for (std::size_t i = 0; i < plane; ++i) {
                            const double gh = go[base + i] * sc[c];
                            gx[base + i] += rs[i] * (gh - mean_g[i] - xhat[base + i] * mean_gx[i]);
                        }
                    }
                }
                for (int c = 0; c < xs.c; ++c) {
                    const std::size_t base = xs.offset(n, c, 0, 0);
                    double s_scale = 0.0;
                    double s_shift = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) {
                        s_scale += go[base + i] * xhat[base + i];
                        s_shift += go[base + i];
                    }
                    if (gscale) gscale[c] += s_scale;
                    if (gshift) gshift[c] += s_shift;
                }
            }
        });
}

namespace {

// In-place numerically stable softmax of one row.
void softmax_inplace(double* row, std::size_t len) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
        row[j] = std::exp(row[j] - mx);
        total += row[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < len; ++j) row[j] *= inv;
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
    const Shape xs = x.shape();
    const std::size_t len = static_cast<std::size_t>(xs.w);
    const std::size_t rows = xs.numel() / len;
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t r = 0; r < rows; ++r) softmax_inplace(out.data() + r * len, len);

    return detail::make_result(xs, std::move(out), {x}, "softmax_rows", [len, rows](detail::Node& self) {
        double* gx = self.input_grad(0);
        if (!gx) return;
        const double* y = self.data.data();
        const double* go = self.grad.data();
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * len;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) dot += go[base + j] * y[base + j];
            for (std::size_t j = 0; j < len; ++j) gx[base + j] += y[base + j] * (go[base + j] - dot);
        }
    });
}

Tensor row_attention(const Tensor& q_left, const Tensor& q_right, const Tensor& v) {
    const Shape s = q_left.shape();
    if (q_right.shape() != s || v.shape() != s)
        fail("row_attention", "shape mismatch " + s.str() + " / " + q_right.shape().str() + " / " + v.shape().str());
    const std::size_t w = static_cast<std::size_t>(s.w);
    const std::size_t c = static_cast<std::size_t>(s.c);
    const std::size_t hw = s.plane();
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(s.c));
    const bool record = detail::should_record({&q_left, &q_right, &v});
    const auto& kern = simd::active();

    std::vector<double> out(s.numel(), 0.0);
    // Attention matrices, one w x w block per (n, h), kept for backward.
    std::vector<double> saved(record ? static_cast<std::size_t>(s.n) * s.h * w * w : 0);
    std::vector<double> ql_t(w * c), attn(w * w), attn_t(w * w);
    const double* ql = q_left.data().data();
    const double* qr = q_right.data().data();
    const double* vd = v.data().data();
    for (int n = 0; n < s.n; ++n) {
        for (int h = 0; h < s.h; ++h) {
            const std::size_t row0 = s.offset(n, 0, h, 0);
            transpose(ql + row0, c, w, hw, ql_t.data());
            std::fill(attn.begin(), attn.end(), 0.0);
            kern.gemm_acc(w, w, c, ql_t.data(), c, qr + row0, hw, attn.data(), w);
            for (std::size_t i = 0; i < w; ++i) {
                double* row = attn.data() + i * w;
                for (std::size_t j = 0; j < w; ++j) row[j] *= inv_sqrt_c;
                softmax_inplace(row, w);
            }
            transpose(attn.data(), w, w, w, attn_t.data());
            kern.gemm_acc(c, w, w, vd + row0, hw, attn_t.data(), w, out.data() + row0, hw);
            if (record) std::copy(attn.begin(), attn.end(), saved.begin() + (static_cast<std::size_t>(n) * s.h + h) * w * w);
        }
    }
    if (!record) return detail::make_result(s, std::move(out), {}, "row_attention", nullptr);

    return detail::make_result(
        s, std::move(out), {q_left, q_right, v}, "row_attention",
        [s, w, c, hw, inv_sqrt_c, saved = std::move(saved)](detail::Node& self) {
            const auto& kern = simd::active();
            double* gql = self.input_grad(0);
            double* gqr = self.input_grad(1);
            double* gv = self.input_grad(2);
            const double* ql = self.inputs[0]->data.data();
            const double* qr = self.inputs[1]->data.data();
            const double* vd = self.inputs[2]->data.data();
            const double* go = self.grad.data();
            std::vector<double> go_t(w * c), dattn(w * w), dscore(w * w), dscore_t(w * w);
            for (int n = 0; n < s.n; ++n) {
                for (int h = 0; h < s.h; ++h) {
                    const std::size_t row0 = s.offset(n, 0, h, 0);
                    const double* attn = saved.data() + (static_cast<std::size_t>(n) * s.h + h) * w * w;
                    // dV = dO * A
                    if (gv) kern.gemm_acc(c, w, w, go + row0, hw, attn, w, gv + row0, hw);
                    if (!gql && !gqr) continue;
                    // dA = dO^T * V
                    transpose(go + row0, c, w, hw, go_t.data());
                    std::fill(dattn.begin(), dattn.end(), 0.0);
                    kern.gemm_acc(w, w, c, go_t.data(), c, vd + row0, hw, dattn.data(), w);
                    for (std::size_t i = 0; i < w; ++i) {
                        const double* a = attn + i * w;
                        const double* da = dattn.data() + i * w;
                        double dot = 0.0;
                        for (std::size_t j = 0; j < w; ++j) dot += a[j] * da[j];
                        double* ds = dscore.data() + i * w;
                        for (std::size_t j = 0; j < w; ++j) ds[j] = a[j] * (da[j] - dot) * inv_sqrt_c;
                    }
                    // dQl = Qr * dS^T ; dQr = Ql * dS
                    if (gql) {
                        transpose(dscore.data(), w, w, w, dscore_t.data());
                        kern.gemm_acc(c, w, w, qr + row0, hw, dscore_t.data(), w, gql + row0, hw);
                    }
                    if (gqr) kern.gemm_acc(c, w, w, ql + row0, hw, dscore.data(), w, gqr + row0, hw);
                }
            }
        });
}

Tensor pixel_shuffle(const Tensor& x, int r) {
    const Shape xs = x.shape();
    if (r < 1 || xs.c % (r * r) != 0)
        fail("pixel_shuffle", "channels " + std::to_string(xs.c) + " not divisible by r^2 = " + std::to_string(r * r));
    const Shape os{xs.n, xs.c / (r * r), xs.h * r, xs.w * r};
    std::vector<double> out(os.numel());
    const double* xd = x.data().data();
    for (int n = 0; n < os.n; ++n)
        for (int k = 0; k < os.c; ++k)
            for (int a = 0; a < r; ++a)
                for (int b = 0; b < r; ++b)
                    for (int i = 0; i < xs.h; ++i)
                        for (int j = 0; j < xs.w; ++j)
                            out[os.offset(n, k, r * i + a, r * j + b)] = xd[xs.offset(n, k * r * r + a * r + b, i, j)];

    return detail::make_result(os, std::move(out), {x}, "pixel_shuffle", [xs, os, r](detail::Node& self) {
        double* gx = self.input_grad(0);
        if (!gx) return;
        const double* go = self.grad.data();
        for (int n = 0; n < os.n; ++n)
            for (int k = 0; k < os.c; ++k)
                for (int a = 0; a < r; ++a)
                    for (int b = 0; b < r; ++b)
                        for (int i = 0; i < xs.h; ++i)
                            for (int j = 0; j < xs.w; ++j)
                                gx[xs.offset(n, k * r * r + a * r + b, i, j)] += go[os.offset(n, k, r * i + a, r * j + b)];
    });
}

Tensor pixel_unshuffle(const Tensor& x, int r) {
    const Shape xs = x.shape();
    if (r < 1 || xs.h % r != 0 || xs.w % r != 0) fail("pixel_unshuffle", "spatial size not divisible by r");
    const Shape os{xs.n, xs.c * r * r, xs.h / r, xs.w / r};
    std::vector<double> out(os.numel());
    const double* xd = x.data().data();
    for (int n = 0; n < xs.n; ++n)
        for (int k = 0; k < xs.c; ++k)
            for (int a = 0; a < r; ++a)
                for (int b = 0; b < r; ++b)
                    for (int i = 0; i < os.h; ++i)
                        for (int j = 0; j < os.w; ++j)
                            out[os.offset(n, k * r * r + a * r + b, i, j)] = xd[xs.offset(n, k, r * i + a, r * j + b)];

    return detail::make_result(os, std::move(out), {x}, "pixel_unshuffle", [xs, os, r](detail::Node& self) {
        double* gx = self.input_grad(0);
        if (!gx) return;
        const double* go = self.grad.data();
        for (int n = 0; n < xs.n; ++n)
            for (int k = 0; k < xs.c; ++k)
                for (int a = 0; a < r; ++a)
                    for (int b = 0; b < r; ++b)
                        for (int i = 0; i < os.h; ++i)
                            for (int j = 0; j < os.w; ++j)
                                gx[xs.offset(n, k, r * i + a, r * j + b)] += go[os.offset(n, k * r * r + a * r + b, i, j)];
    });
}

Tensor global_avg_pool(const Tensor& x) {
    const Shape xs = x.shape();
    const Shape os{xs.n, xs.c, 1, 1};
    const std::size_t plane = xs.plane();
    std::vector<double> out(os.numel());
    const double* xd = x.data().data();
    for (std::size_t nc = 0; nc < out.size(); ++nc) {
        double s = 0.0;
        const double* p = xd + nc * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        out[nc] = s / static_cast<double>(plane);
    }
    return detail::make_result(os, std::move(out), {x}, "global_avg_pool", [plane](detail::Node& self) {
        double* gx = self.input_grad(0);
        if (!gx) return;
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
            const double g = self.grad[nc] * inv;
            for (std::size_t i = 0; i < plane; ++i) gx[nc * plane + i] += g;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.numel());
    simd::active().add(out.size(), a.data().data(), b.data().data(), out.data());
    return detail::make_result(a.shape(), std::move(out), {a, b}, "add", [](detail::Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (double* g = self.input_grad(k)) simd::active().add(self.grad.size(), g, self.grad.data(), g);
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.numel());
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, "sub", [](detail::Node& self) {
        if (double* g = self.input_grad(0)) simd::active().add(self.grad.size(), g, self.grad.data(), g);
        if (double* g = self.input_grad(1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.numel());
    simd::active().mul(out.size(), a.data().data(), b.data().data(), out.data());
    return detail::make_result(a.shape(), std::move(out), {a, b}, "mul", [](detail::Node& self) {
        const double* ad = self.inputs[0]->data.data();
        const double* bd = self.inputs[1]->data.data();
        const double* go = self.grad.data();
        if (double* g = self.input_grad(0))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += go[i] * bd[i];
        if (double* g = self.input_grad(1))
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += go[i] * ad[i];
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (double& v : out) v *= factor;
    return detail::make_result(a.shape(), std::move(out), {a}, "scale", [factor](detail::Node& self) {
        if (double* g = self.input_grad(0)) simd::active().axpy(self.grad.size(), factor, self.grad.data(), g);
    });
}

Tensor mul_broadcast(const Tensor& x, const Tensor& s) {
    const Shape xs = x.shape();
    const Shape ss = s.shape();
    if (ss.h != 1 || ss.w != 1 || (ss.n != 1 && ss.n != xs.n) || (ss.c != 1 && ss.c != xs.c))
        fail("mul_broadcast", "cannot broadcast " + ss.str() + " over " + xs.str());
    const std::size_t plane = xs.plane();
    auto factor_index = [ss](int n, int c) {
        return static_cast<std::size_t>(ss.n == 1 ? 0 : n) * ss.c + (ss.c == 1 ? 0 : c);
    };
    std::vector<double> out(xs.numel());
    const double* xd = x.data().data();
    const double* sd = s.data().data();
    for (int n = 0; n < xs.n; ++n)
        for (int c = 0; c < xs.c; ++c) {
            const double f = sd[factor_index(n, c)];
            const std::size_t base = xs.offset(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) out[base + i] = xd[base + i] * f;
        }
    return detail::make_result(xs, std::move(out), {x, s}, "mul_broadcast", [xs, plane, factor_index](detail::Node& self) {
        const double* xd = self.inputs[0]->data.data();
        const double* sd = self.inputs[1]->data.data();
        const double* go = self.grad.data();
        double* gx = self.input_grad(0);
        double* gs = self.input_grad(1);
        for (int n = 0; n < xs.n; ++n)
            for (int c = 0; c < xs.c; ++c) {
                const std::size_t fi = factor_index(n, c);
                const std::size_t base = xs.offset(n, c, 0, 0);
                if (gx) simd::active().axpy(plane, sd[fi], go + base, gx + base);
                if (gs) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += go[base + i] * xd[base + i];
                    gs[fi] += acc;
                }
            }
    });
}

Tensor channel_slice(const Tensor& x, int begin, int count) {
    const Shape xs = x.shape();
    if (begin < 0 || count < 1 || begin + count > xs.c) fail("channel_slice", "range out of bounds for " + xs.str());
    const Shape os{xs.n, count, xs.h, xs.w};
    const std::size_t block = static_cast<std::size_t>(count) * xs.plane();
    std::vector<double> out(os.numel());
    for (int n = 0; n < xs.n; ++n) {
        const double* src = x.data().data() + xs.offset(n, begin, 0, 0);
        std::copy(src, src + block, out.begin() + n * block);
    }
    return detail::make_result(os, std::move(out), {x}, "channel_slice", [xs, begin, block](detail::Node& self) {
        double* gx = self.input_grad(0);
        if (!gx) return;
        for (int n = 0; n < xs.n; ++n) {
            double* dst = gx + xs.offset(n, begin, 0, 0);
            simd::active().add(block, dst, self.grad.data() + n * block, dst);
        }
    });
}

Tensor tile_batch(const Tensor& x, int count) {
    if (count < 1) fail("tile_batch", "count must be >= 1");
    const Shape xs = x.shape();
    const Shape os{xs.n * count, xs.c, xs.h, xs.w};
    std::vector<double> out;
    out.reserve(os.numel());
    for (int k = 0; k < count; ++k) out.insert(out.end(), x.data().begin(), x.data().end());
    return detail::make_result(os, std::move(out), {x}, "tile_batch", [count](detail::Node& self) {
        double* gx = self.input_grad(0);
        if (!gx) return;
        const std::size_t block = self.inputs[0]->data.size();
        for (int k = 0; k < count; ++k) simd::active().add(block, gx, self.grad.data() + k * block, gx);
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::make_result(Shape{}, {s}, {x}, "sum", [](detail::Node& self) {
        double* gx = self.input_grad(0);
        if (!gx) return;
        const double g = self.grad[0];
        const std::size_t n = self.inputs[0]->data.size();
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor squared_error_sum(const Tensor& a, const Tensor& b) {
    require_same_shape("squared_error_sum", a, b);
    const double* ad = a.data().data();
    const double* bd = b.data().data();
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = ad[i] - bd[i];
        s += d * d;
    }
    return detail::make_result(Shape{}, {s}, {a, b}, "squared_error_sum", [](detail::Node& self) {
        const double* ad = self.inputs[0]->data.data();
        const double* bd = self.inputs[1]->data.data();
        const double g2 = 2.0 * self.grad[0];
        const std::size_t n = self.inputs[0]->data.size();
        if (double* ga = self.input_grad(0))
            for (std::size_t i = 0; i < n; ++i) ga[i] += g2 * (ad[i] - bd[i]);
        if (double* gb = self.input_grad(1))
            for (std::size_t i = 0; i < n; ++i) gb[i] -= g2 * (ad[i] - bd[i]);
    });
}

}  // namespace nafrssr::ops
