#include "aerodiff/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "aerodiff/error.hpp"

namespace aerodiff::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Eigen::Index;

Index idx(std::size_t v) { return static_cast<Index>(v); }

void check(bool ok, const std::string& what) { require(ok, ErrorKind::Config, what); }

// Row-wise numerically stable softmax in place.
void softmax_rows(RowMat& s) {
    for (Index r = 0; r < s.rows(); ++r) {
        auto row = s.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a.value(), b.value(), "add");
    return make_result(a.value() + b.value(), {a, b}, [a, b](const Tensor& g) {
        if (Tensor* ga = grad_sink(a)) *ga += g;
        if (Tensor* gb = grad_sink(b)) *gb += g;
    });
}

Var scale(const Var& a, double s) {
    return make_result(a.value() * s, {a}, [a, s](const Tensor& g) {
        if (Tensor* ga = grad_sink(a))
            for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
    });
}

Var add_channel_bias(const Var& x, const Var& v) {
    const Tensor& xv = x.value();
    check(xv.rank() == 4 && v.value().rank() == 2 && v.dim(0) == xv.dim(0) && v.dim(1) == xv.dim(1),
          "add_channel_bias: shape mismatch " + shape_string(xv.shape()) + " vs " + shape_string(v.shape()));
    const std::size_t bc = xv.dim(0) * xv.dim(1), plane = xv.dim(2) * xv.dim(3);
    Tensor out = xv;
    for (std::size_t i = 0; i < bc; ++i)
        for (std::size_t p = 0; p < plane; ++p) out[i * plane + p] += v.value()[i];
    return make_result(std::move(out), {x, v}, [x, v, bc, plane](const Tensor& g) {
        if (Tensor* gx = grad_sink(x)) *gx += g;
        if (Tensor* gv = grad_sink(v))
            for (std::size_t i = 0; i < bc; ++i) {
                double s = 0.0;
                for (std::size_t p = 0; p < plane; ++p) s += g[i * plane + p];
                (*gv)[i] += s;
            }
    });
}

Var add_row_embedding(const Var& x, const Var& p) {
    const Tensor& xv = x.value();
    check(xv.rank() == 3 && p.value().rank() == 2 && p.dim(0) == xv.dim(1) && p.dim(1) == xv.dim(2),
          "positional embedding " + shape_string(p.shape()) + " does not match tokens " + shape_string(xv.shape()));
    const std::size_t batch = xv.dim(0), row = p.value().size();
    Tensor out = xv;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < row; ++i) out[b * row + i] += p.value()[i];
    return make_result(std::move(out), {x, p}, [x, p, batch, row](const Tensor& g) {
        if (Tensor* gx = grad_sink(x)) *gx += g;
        if (Tensor* gp = grad_sink(p))
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t i = 0; i < row; ++i) (*gp)[i] += g[b * row + i];
    });
}

Var modulate(const Var& x, const Var& shift, const Var& scale_v) {
    const Tensor& xv = x.value();
    check(xv.rank() == 3 && shift.shape() == Shape{xv.dim(0), xv.dim(2)} && scale_v.shape() == shift.shape(),
          "modulate: shape mismatch");
    const std::size_t B = xv.dim(0), N = xv.dim(1), M = xv.dim(2);
    Tensor out(xv.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t m = 0; m < M; ++m) {
                const std::size_t i = (b * N + n) * M + m;
                out[i] = xv[i] * (1.0 + scale_v.value()[b * M + m]) + shift.value()[b * M + m];
            }
    return make_result(std::move(out), {x, shift, scale_v}, [x, shift, scale_v, B, N, M](const Tensor& g) {
        Tensor* gx = grad_sink(x);
        Tensor* gsh = grad_sink(shift);
        Tensor* gsc = grad_sink(scale_v);
        const Tensor& xv = x.value();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t m = 0; m < M; ++m) {
                    const std::size_t i = (b * N + n) * M + m, j = b * M + m;
                    if (gx) (*gx)[i] += g[i] * (1.0 + scale_v.value()[j]);
                    if (gsh) (*gsh)[j] += g[i];
                    if (gsc) (*gsc)[j] += g[i] * xv[i];
                }
    });
}

Var gated_residual(const Var& x, const Var& gate, const Var& y) {
    const Tensor& xv = x.value();
    require_same_shape(xv, y.value(), "gated_residual");
    check(xv.rank() == 3 && gate.shape() == Shape{xv.dim(0), xv.dim(2)}, "gated_residual: gate shape mismatch");
    const std::size_t B = xv.dim(0), N = xv.dim(1), M = xv.dim(2);
    Tensor out = xv;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t m = 0; m < M; ++m) {
                const std::size_t i = (b * N + n) * M + m;
                out[i] += gate.value()[b * M + m] * y.value()[i];
            }
    return make_result(std::move(out), {x, gate, y}, [x, gate, y, B, N, M](const Tensor& g) {
        if (Tensor* gx = grad_sink(x)) *gx += g;
        Tensor* gg = grad_sink(gate);
        Tensor* gy = grad_sink(y);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t m = 0; m < M; ++m) {
                    const std::size_t i = (b * N + n) * M + m, j = b * M + m;
                    if (gg) (*gg)[j] += g[i] * y.value()[i];
                    if (gy) (*gy)[i] += g[i] * gate.value()[j];
                }
    });
}

Var slice_columns(const Var& x, std::size_t begin, std::size_t width) {
    check(x.value().rank() == 2 && begin + width <= x.dim(1), "slice_columns out of range");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    Tensor out({rows, width});
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.value().data() + r * cols + begin, width, out.data() + r * width);
    return make_result(std::move(out), {x}, [x, begin, width, rows, cols](const Tensor& g) {
        if (Tensor* gx = grad_sink(x))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < width; ++c) (*gx)[r * cols + begin + c] += g[r * width + c];
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& xv = x.value();
    const std::size_t out_f = weight.dim(0), in_f = weight.dim(1);
    check(xv.rank() >= 1 && xv.shape().back() == in_f,
          "linear: input " + shape_string(xv.shape()) + " vs weight " + shape_string(weight.shape()));
    const std::size_t rows = xv.size() / in_f;
    Shape out_shape = xv.shape();
    out_shape.back() = out_f;
    Tensor out(out_shape);
    {
        ConstMatMap X(xv.data(), idx(rows), idx(in_f));
        ConstMatMap W(weight.value().data(), idx(out_f), idx(in_f));
        MatMap Y(out.data(), idx(rows), idx(out_f));
        Y.noalias() = X * W.transpose();
        if (bias.defined()) {
            Eigen::Map<const Eigen::RowVectorXd> bv(bias.value().data(), idx(out_f));
            Y.rowwise() += bv;
        }
    }
    return make_result(std::move(out), {x, weight, bias}, [x, weight, bias, rows, in_f, out_f](const Tensor& g) {
        ConstMatMap dY(g.data(), idx(rows), idx(out_f));
        if (Tensor* gx = grad_sink(x)) {
            MatMap dX(gx->data(), idx(rows), idx(in_f));
            dX.noalias() += dY * ConstMatMap(weight.value().data(), idx(out_f), idx(in_f));
        }
        if (Tensor* gw = grad_sink(weight)) {
            MatMap dW(gw->data(), idx(out_f), idx(in_f));
            dW.noalias() += dY.transpose() * ConstMatMap(x.value().data(), idx(rows), idx(in_f));
        }
        if (bias.defined())
            if (Tensor* gb = grad_sink(bias)) {
                Eigen::Map<Eigen::RowVectorXd> db(gb->data(), idx(out_f));
                db += dY.colwise().sum();
            }
    });
}

namespace {

struct ConvGeometry {
    std::size_t batch, in_c, h, w, out_c, k, stride, pad, out_h, out_w;
    std::size_t col_rows() const { return in_c * k * k; }
    std::size_t col_cols() const { return out_h * out_w; }
    bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

void im2col(const double* x, const ConvGeometry& g, double* cols) {
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t ky = 0; ky < g.k; ++ky)
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                double* row = cols + ((c * g.k + ky) * g.k + kx) * g.col_cols();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                            ix < static_cast<std::ptrdiff_t>(g.w);
                        row[oy * g.out_w + ox] =
                            inside ? x[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)]
                                   : 0.0;
                    }
                }
            }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
    for (std::size_t c = 0; c < g.in_c; ++c)
        for (std::size_t ky = 0; ky < g.k; ++ky)
            for (std::size_t kx = 0; kx < g.k; ++kx) {
                const double* row = cols + ((c * g.k + ky) * g.k + kx) * g.col_cols();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        dx[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                            row[oy * g.out_w + ox];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t stride, std::size_t padding) {
    const Tensor& xv = x.value();
    check(xv.rank() == 4 && weight.value().rank() == 4 && weight.dim(1) == xv.dim(1) && weight.dim(2) == weight.dim(3),
          "conv2d: input " + shape_string(xv.shape()) + " vs weight " + shape_string(weight.shape()));
    ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), weight.dim(0), weight.dim(2), stride, padding, 0, 0};
    check(g.h + 2 * padding >= g.k && g.w + 2 * padding >= g.k, "conv2d: kernel larger than padded input");
    g.out_h = (g.h + 2 * padding - g.k) / stride + 1;
    g.out_w = (g.w + 2 * padding - g.k) / stride + 1;

    Tensor out({g.batch, g.out_c, g.out_h, g.out_w});
    std::vector<double> cols(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
    ConstMatMap W(weight.value().data(), idx(g.out_c), idx(g.col_rows()));
    for (std::size_t b = 0; b < g.batch; ++b) {
        const double* xb = xv.data() + b * g.in_c * g.h * g.w;
        if (!g.pointwise()) im2col(xb, g, cols.data());
        ConstMatMap C(g.pointwise() ? xb : cols.data(), idx(g.col_rows()), idx(g.col_cols()));
        MatMap Y(out.data() + b * g.out_c * g.col_cols(), idx(g.out_c), idx(g.col_cols()));
        Y.noalias() = W * C;
        if (bias.defined()) Y.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), idx(g.out_c));
    }
    return make_result(std::move(out), {x, weight, bias}, [x, weight, bias, g](const Tensor& grad) {
        Tensor* gx = grad_sink(x);
        Tensor* gw = grad_sink(weight);
        Tensor* gb = bias.defined() ? grad_sink(bias) : nullptr;
        std::vector<double> cols(g.pointwise() ? 0 : g.col_rows() * g.col_cols());
        std::vector<double> dcols(gx && !g.pointwise() ? g.col_rows() * g.col_cols() : 0);
        ConstMatMap W(weight.value().data(), idx(g.out_c), idx(g.col_rows()));
        for (std::size_t b = 0; b < g.batch; ++b) {
            ConstMatMap dY(grad.data() + b * g.out_c * g.col_cols(), idx(g.out_c), idx(g.col_cols()));
            const double* xb = x.value().data() + b * g.in_c * g.h * g.w;
            if (gw) {
                if (!g.pointwise()) im2col(xb, g, cols.data());
                ConstMatMap C(g.pointwise() ? xb : cols.data(), idx(g.col_rows()), idx(g.col_cols()));
                MatMap dW(gw->data(), idx(g.out_c), idx(g.col_rows()));
                dW.noalias() += dY * C.transpose();
            }
            if (gb) Eigen::Map<Eigen::VectorXd>(gb->data(), idx(g.out_c)) += dY.rowwise().sum();
            if (gx) {
                double* dxb = gx->data() + b * g.in_c * g.h * g.w;
                if (g.pointwise()) {
                    MatMap dX(dxb, idx(g.col_rows()), idx(g.col_cols()));
                    dX.noalias() += W.transpose() * dY;
                } else {
                    MatMap dC(dcols.data(), idx(g.col_rows()), idx(g.col_cols()));
                    dC.noalias() = W.transpose() * dY;
                    col2im_add(dcols.data(), g, dxb);
                }
            }
        }
    });
}

Var conv_transpose2x2(const Var& x, const Var& weight, const Var& bias) {
    const Tensor& xv = x.value();
    check(xv.rank() == 4 && weight.value().rank() == 4 && weight.dim(0) == xv.dim(1) && weight.dim(2) == 2 &&
              weight.dim(3) == 2,
          "conv_transpose2x2: input " + shape_string(xv.shape()) + " vs weight " + shape_string(weight.shape()));
    const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3), O = weight.dim(1);
    const std::size_t hw = H * W;
    Tensor out({B, O, 2 * H, 2 * W});
    RowMat Yt(idx(O * 4), idx(hw));
    ConstMatMap Wm(weight.value().data(), idx(C), idx(O * 4));
    for (std::size_t b = 0; b < B; ++b) {
        ConstMatMap Xb(xv.data() + b * C * hw, idx(C), idx(hw));
        Yt.noalias() = Wm.transpose() * Xb;
        for (std::size_t o = 0; o < O; ++o) {
            const double bo = bias.defined() ? bias.value()[o] : 0.0;
            for (std::size_t d = 0; d < 4; ++d)
                for (std::size_t i = 0; i < H; ++i)
                    for (std::size_t j = 0; j < W; ++j)
                        out.at(b, o, 2 * i + d / 2, 2 * j + d % 2) = Yt(idx(o * 4 + d), idx(i * W + j)) + bo;
        }
    }
    return make_result(std::move(out), {x, weight, bias}, [x, weight, bias, B, C, H, W, O, hw](const Tensor& g) {
        Tensor* gx = grad_sink(x);
        Tensor* gw = grad_sink(weight);
        Tensor* gb = bias.defined() ? grad_sink(bias) : nullptr;
        RowMat dYt(idx(O * 4), idx(hw));
        ConstMatMap Wm(weight.value().data(), idx(C), idx(O * 4));
        const std::size_t ow = 2 * W, oplane = 4 * hw;
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t o = 0; o < O; ++o)
                for (std::size_t d = 0; d < 4; ++d)
                    for (std::size_t i = 0; i < H; ++i)
                        for (std::size_t j = 0; j < W; ++j)
                            dYt(idx(o * 4 + d), idx(i * W + j)) =
                                g[(b * O + o) * oplane + (2 * i + d / 2) * ow + 2 * j + d % 2];
            if (gb)
                for (std::size_t o = 0; o < O; ++o) (*gb)[o] += dYt.middleRows(idx(o * 4), 4).sum();
            if (gx) {
                MatMap dX(gx->data() + b * C * hw, idx(C), idx(hw));
                dX.noalias() += Wm * dYt;
            }
            if (gw) {
                MatMap dW(gw->data(), idx(C), idx(O * 4));
                dW.noalias() += ConstMatMap(x.value().data() + b * C * hw, idx(C), idx(hw)) * dYt.transpose();
            }
        }
    });
}

Var group_norm(const Var& x, std::size_t groups, const Var& gamma, const Var& beta, double eps) {
    const Tensor& xv = x.value();
    check(xv.rank() == 4 && groups > 0 && xv.dim(1) % groups == 0 && gamma.value().size() == xv.dim(1) &&
              beta.value().size() == xv.dim(1),
          "group_norm: " + std::to_string(xv.rank() == 4 ? xv.dim(1) : 0) + " channels not divisible into " +
              std::to_string(groups) + " groups");
    const std::size_t B = xv.dim(0), C = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
    const std::size_t cpg = C / groups, count = cpg * plane;
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(B * groups);
    Tensor out(xv.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t gi = 0; gi < groups; ++gi) {
            const std::size_t base = (b * C + gi * cpg) * plane;
            double mean = 0.0;
            for (std::size_t i = 0; i < count; ++i) mean += xv[base + i];
            mean /= static_cast<double>(count);
            double var = 0.0;
            for (std::size_t i = 0; i < count; ++i) var += (xv[base + i] - mean) * (xv[base + i] - mean);
            var /= static_cast<double>(count);
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[b * groups + gi] = is;
            for (std::size_t i = 0; i < count; ++i) {
                const double h = (xv[base + i] - mean) * is;
                const std::size_t c = gi * cpg + i / plane;
                xhat[base + i] = h;
                out[base + i] = h * gamma.value()[c] + beta.value()[c];
            }
        }
    return make_result(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, plane, groups, cpg,
                        count](const Tensor& g) {
                           Tensor* gx = grad_sink(x);
                           Tensor* gg = grad_sink(gamma);
                           Tensor* gbeta = grad_sink(beta);
                           for (std::size_t b = 0; b < B; ++b)
                               for (std::size_t gi = 0; gi < groups; ++gi) {
                                   const std::size_t base = (b * C + gi * cpg) * plane;
                                   double sum_d = 0.0, sum_dh = 0.0;
                                   for (std::size_t i = 0; i < count; ++i) {
                                       const std::size_t c = gi * cpg + i / plane;
                                       const double gi_v = g[base + i];
                                       const double dh = gi_v * gamma.value()[c];
                                       sum_d += dh;
                                       sum_dh += dh * xhat[base + i];
                                       if (gg) (*gg)[c] += gi_v * xhat[base + i];
                                       if (gbeta) (*gbeta)[c] += gi_v;
                                   }
                                   if (!gx) continue;
                                   const double is = inv_std[b * groups + gi];
                                   const double n = static_cast<double>(count);
                                   for (std::size_t i = 0; i < count; ++i) {
                                       const std::size_t c = gi * cpg + i / plane;
                                       const double dh = g[base + i] * gamma.value()[c];
                                       (*gx)[base + i] += is * (dh - sum_d / n - xhat[base + i] * sum_dh / n);
                                   }
                               }
                       });
}

Var layer_norm(const Var& x, double eps) {
    const Tensor& xv = x.value();
    const std::size_t M = xv.shape().back(), rows = xv.size() / M;
    Tensor xhat(xv.shape());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * M;
        double mean = 0.0;
        for (std::size_t m = 0; m < M; ++m) mean += xr[m];
        mean /= static_cast<double>(M);
        double var = 0.0;
        for (std::size_t m = 0; m < M; ++m) var += (xr[m] - mean) * (xr[m] - mean);
        var /= static_cast<double>(M);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t m = 0; m < M; ++m) xhat[r * M + m] = (xr[m] - mean) * inv_std[r];
    }
    Tensor out = xhat;
    return make_result(std::move(out), {x}, [x, xhat = std::move(xhat), inv_std = std::move(inv_std), M, rows](const Tensor& g) {
        Tensor* gx = grad_sink(x);
        if (!gx) return;
        const double n = static_cast<double>(M);
        for (std::size_t r = 0; r < rows; ++r) {
            double sum_d = 0.0, sum_dh = 0.0;
            for (std::size_t m = 0; m < M; ++m) {
                sum_d += g[r * M + m];
                sum_dh += g[r * M + m] * xhat[r * M + m];
            }
            for (std::size_t m = 0; m < M; ++m)
                (*gx)[r * M + m] += inv_std[r] * (g[r * M + m] - sum_d / n - xhat[r * M + m] * sum_dh / n);
        }
    });
}

Var gelu(const Var& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.value()[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    }
    return make_result(std::move(out), {x}, [x](const Tensor& g) {
        Tensor* gx = grad_sink(x);
        if (!gx) return;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = x.value()[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            (*gx)[i] += g[i] * (cdf + v * pdf);
        }
    });
}

Var silu(const Var& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.value()[i];
        out[i] = v / (1.0 + std::exp(-v));
    }
    return make_result(std::move(out), {x}, [x](const Tensor& g) {
        Tensor* gx = grad_sink(x);
        if (!gx) return;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = x.value()[i];
            const double s = 1.0 / (1.0 + std::exp(-v));
            (*gx)[i] += g[i] * s * (1.0 + v * (1.0 - s));
        }
    });
}

namespace {

struct AttentionShape {
    std::size_t B, N, M, heads, d;
};

AttentionShape attention_shape(const Tensor& qkv, std::size_t heads) {
    check(qkv.rank() == 3 && qkv.dim(2) % 3 == 0, "attention: qkv must be [B, N, 3M], got " + shape_string(qkv.shape()));
    const std::size_t M = qkv.dim(2) / 3;
    check(heads > 0 && M % heads == 0,
          "attention: width " + std::to_string(M) + " not divisible by " + std::to_string(heads) + " heads");
    return {qkv.dim(0), qkv.dim(1), M, heads, M / heads};
}

// Copies the (b, h) head slice of q, k or v (part 0/1/2) into an [N, d] matrix.
RowMat head_slice(const Tensor& qkv, const AttentionShape& s, std::size_t b, std::size_t h, std::size_t part) {
    RowMat out(idx(s.N), idx(s.d));
    for (std::size_t n = 0; n < s.N; ++n)
        for (std::size_t j = 0; j < s.d; ++j) out(idx(n), idx(j)) = qkv[(b * s.N + n) * 3 * s.M + part * s.M + h * s.d + j];
    return out;
}

RowMat head_probabilities(const RowMat& q, const RowMat& k, double scale_factor) {
    RowMat p = (q * k.transpose()) * scale_factor;
    softmax_rows(p);
    return p;
}

}  // namespace

Tensor attention_probabilities(const Tensor& qkv, std::size_t heads) {
    const AttentionShape s = attention_shape(qkv, heads);
    const double sf = 1.0 / std::sqrt(static_cast<double>(s.d));
    Tensor out({s.B, s.heads, s.N, s.N});
    for (std::size_t b = 0; b < s.B; ++b)
        for (std::size_t h = 0; h < s.heads; ++h) {
            const RowMat p = head_probabilities(head_slice(qkv, s, b, h, 0), head_slice(qkv, s, b, h, 1), sf);
            std::copy_n(p.data(), s.N * s.N, out.data() + (b * s.heads + h) * s.N * s.N);
        }
    return out;
}

Var attention(const Var& qkv, std::size_t heads) {
    const AttentionShape s = attention_shape(qkv.value(), heads);
    const double sf = 1.0 / std::sqrt(static_cast<double>(s.d));
    Tensor out({s.B, s.N, s.M});
    for (std::size_t b = 0; b < s.B; ++b)
        for (std::size_t h = 0; h < s.heads; ++h) {
            const RowMat q = head_slice(qkv.value(), s, b, h, 0);
            const RowMat k = head_slice(qkv.value(), s, b, h, 1);
            const RowMat v = head_slice(qkv.value(), s, b, h, 2);
            const RowMat o = head_probabilities(q, k, sf) * v;
            for (std::size_t n = 0; n < s.N; ++n)
                for (std::size_t j = 0; j < s.d; ++j) out[(b * s.N + n) * s.M + h * s.d + j] = o(idx(n), idx(j));
        }
    // Probabilities are recomputed in the backward pass to keep memory at O(N * d).
    return make_result(std::move(out), {qkv}, [qkv, s, sf](const Tensor& g) {
        Tensor* gq = grad_sink(qkv);
        if (!gq) return;
        RowMat dO(idx(s.N), idx(s.d));
        for (std::size_t b = 0; b < s.B; ++b)
            for (std::size_t h = 0; h < s.heads; ++h) {
                const RowMat q = head_slice(qkv.value(), s, b, h, 0);
                const RowMat k = head_slice(qkv.value(), s, b, h, 1);
                const RowMat v = head_slice(qkv.value(), s, b, h, 2);
                const RowMat p = head_probabilities(q, k, sf);
                for (std::size_t n = 0; n < s.N; ++n)
                    for (std::size_t j = 0; j < s.d; ++j) dO(idx(n), idx(j)) = g[(b * s.N + n) * s.M + h * s.d + j];
                const RowMat dV = p.transpose() * dO;
                const RowMat dP = dO * v.transpose();
                RowMat dS = p.cwiseProduct(dP);
                const Eigen::VectorXd row_dot = dS.rowwise().sum();
                dS -= p.cwiseProduct(row_dot.replicate(1, idx(s.N)));
                dS *= sf;
                const RowMat dQ = dS * k;
                const RowMat dK = dS.transpose() * q;
                for (std::size_t n = 0; n < s.N; ++n)
                    for (std::size_t j = 0; j < s.d; ++j) {
                        const std::size_t base = (b * s.N + n) * 3 * s.M + h * s.d + j;
                        (*gq)[base] += dQ(idx(n), idx(j));
                        (*gq)[base + s.M] += dK(idx(n), idx(j));
                        (*gq)[base + 2 * s.M] += dV(idx(n), idx(j));
                    }
            }
    });
}

namespace {

// Source index in the NCHW tensor for every token element, in token order.
std::vector<std::size_t> patch_index(std::size_t B, std::size_t C, std::size_t H, std::size_t W, std::size_t p) {
    const std::size_t hp = H / p, wp = W / p, feat = C * p * p;
    std::vector<std::size_t> index(B * C * H * W);
    std::size_t o = 0;
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t ty = 0; ty < hp; ++ty)
            for (std::size_t tx = 0; tx < wp; ++tx)
                for (std::size_t f = 0; f < feat; ++f) {
                    const std::size_t c = f / (p * p), dy = (f / p) % p, dx = f % p;
                    index[o++] = ((b * C + c) * H + ty * p + dy) * W + tx * p + dx;
                }
    return index;
}

}  // namespace

Var patchify(const Var& x, std::size_t patch) {
    const Tensor& xv = x.value();
    check(xv.rank() == 4 && patch > 0 && xv.dim(2) % patch == 0 && xv.dim(3) % patch == 0,
          "patchify: spatial size " + shape_string(xv.shape()) + " not divisible by patch " + std::to_string(patch));
    const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    auto index = patch_index(B, C, H, W, patch);
    Tensor out({B, (H / patch) * (W / patch), C * patch * patch});
    for (std::size_t i = 0; i < index.size(); ++i) out[i] = xv[index[i]];
    return make_result(std::move(out), {x}, [x, index = std::move(index)](const Tensor& g) {
        if (Tensor* gx = grad_sink(x))
            for (std::size_t i = 0; i < index.size(); ++i) (*gx)[index[i]] += g[i];
    });
}

Var unpatchify(const Var& tokens, std::size_t channels, std::size_t height, std::size_t width, std::size_t patch) {
    const Tensor& tv = tokens.value();
    check(tv.rank() == 3 && height % patch == 0 && width % patch == 0 &&
              tv.dim(1) == (height / patch) * (width / patch) && tv.dim(2) == channels * patch * patch,
          "unpatchify: tokens " + shape_string(tv.shape()) + " do not tile " + std::to_string(channels) + "x" +
              std::to_string(height) + "x" + std::to_string(width));
    const std::size_t B = tv.dim(0);
    auto index = patch_index(B, channels, height, width, patch);
    Tensor out({B, channels, height, width});
    for (std::size_t i = 0; i < index.size(); ++i) out[index[i]] = tv[i];
    return make_result(std::move(out), {tokens}, [tokens, index = std::move(index)](const Tensor& g) {
        if (Tensor* gt = grad_sink(tokens))
            for (std::size_t i = 0; i < index.size(); ++i) (*gt)[i] += g[index[i]];
    });
}

Var concat_last(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    check(av.rank() == bv.rank() && av.rank() >= 1 && av.size() / av.shape().back() == bv.size() / bv.shape().back(),
          "concat_last: incompatible " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
    const std::size_t ma = av.shape().back(), mb = bv.shape().back(), rows = av.size() / ma;
    Shape s = av.shape();
    s.back() = ma + mb;
    Tensor out(s);
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(av.data() + r * ma, ma, out.data() + r * (ma + mb));
        std::copy_n(bv.data() + r * mb, mb, out.data() + r * (ma + mb) + ma);
    }
    return make_result(std::move(out), {a, b}, [a, b, ma, mb, rows](const Tensor& g) {
        Tensor* ga = grad_sink(a);
        Tensor* gb = grad_sink(b);
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; ga && j < ma; ++j) (*ga)[r * ma + j] += g[r * (ma + mb) + j];
            for (std::size_t j = 0; gb && j < mb; ++j) (*gb)[r * mb + j] += g[r * (ma + mb) + ma + j];
        }
    });
}

Var concat_channels(const Var& a, const Var& b) {
    Tensor out = aerodiff::concat_channels(a.value(), b.value());
    const std::size_t n = a.dim(0), sa = a.value().size() / n, sb = b.value().size() / n;
    return make_result(std::move(out), {a, b}, [a, b, n, sa, sb](const Tensor& g) {
        Tensor* ga = grad_sink(a);
        Tensor* gb = grad_sink(b);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; ga && j < sa; ++j) (*ga)[i * sa + j] += g[i * (sa + sb) + j];
            for (std::size_t j = 0; gb && j < sb; ++j) (*gb)[i * sb + j] += g[i * (sa + sb) + sa + j];
        }
    });
}

Var spatial_mean(const Var& x) {
    const Tensor& xv = x.value();
    check(xv.rank() == 4, "spatial_mean expects [B, C, H, W]");
    const std::size_t bc = xv.dim(0) * xv.dim(1), plane = xv.dim(2) * xv.dim(3);
    Tensor out({xv.dim(0), xv.dim(1)});
    for (std::size_t i = 0; i < bc; ++i) {
        double s = 0.0;
        for (std::size_t p = 0; p < plane; ++p) s += xv[i * plane + p];
        out[i] = s / static_cast<double>(plane);
    }
    return make_result(std::move(out), {x}, [x, bc, plane](const Tensor& g) {
        if (Tensor* gx = grad_sink(x))
            for (std::size_t i = 0; i < bc; ++i)
                for (std::size_t p = 0; p < plane; ++p) (*gx)[i * plane + p] += g[i] / static_cast<double>(plane);
    });
}

Var mse_loss(const Var& prediction, const Tensor& target) {
    require_same_shape(prediction.value(), target, "mse_loss");
    const std::size_t n = target.size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = prediction.value()[i] - target[i];
        s += d * d;
    }
    Tensor out({1}, s / static_cast<double>(n));
    return make_result(std::move(out), {prediction}, [prediction, target, n](const Tensor& g) {
        if (Tensor* gp = grad_sink(prediction)) {
            const double k = 2.0 * g[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) (*gp)[i] += k * (prediction.value()[i] - target[i]);
        }
    });
}

}  // namespace aerodiff::nn
