#include "tdet/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tdet {

namespace {

template <typename T>
using Impl = detail::TensorImpl<T>;
template <typename T>
using ImplPtr = std::shared_ptr<Impl<T>>;

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

// Wraps a freshly computed value into a tensor, attaching a backward node when
// any parent participates in the graph.
template <typename T, typename Fn>
BasicTensor<T> record(Shape shape, AlignedVector<T> data, std::vector<ImplPtr<T>> parents, Fn&& fn) {
  auto out = BasicTensor<T>::from_storage(std::move(shape), std::move(data));
  if (!grad_mode_enabled()) return out;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const ImplPtr<T>& p) { return p->requires_grad; });
  if (!any) return out;
  auto& impl = *out.impl();
  impl.requires_grad = true;
  impl.parents = std::move(parents);
  impl.backward_fn = std::forward<Fn>(fn);
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void require_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <typename T>
std::size_t last_dim(const BasicTensor<T>& a, const char* op) {
  require(a.rank() >= 1, std::string(op) + ": needs rank >= 1");
  return a.shape().back();
}

template <typename T>
std::size_t row_size(const BasicTensor<T>& a, const char* op) {
  require(a.rank() >= 1 && a.dim(0) > 0, std::string(op) + ": needs at least one row");
  return a.numel() / a.dim(0);
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "add");
  AlignedVector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return record<T>(a.shape(), std::move(out), {a.impl(), b.impl()}, [](Impl<T>& o) {
    for (auto& p : o.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "sub");
  AlignedVector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return record<T>(a.shape(), std::move(out), {a.impl(), b.impl()}, [](Impl<T>& o) {
    const T sign[2] = {T(1), T(-1)};
    for (std::size_t k = 0; k < 2; ++k) {
      auto& p = o.parents[k];
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += sign[k] * o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a, b, "mul");
  AlignedVector<T> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return record<T>(a.shape(), std::move(out), {a.impl(), b.impl()}, [](Impl<T>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * pa.data[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  AlignedVector<T> out(a.values().begin(), a.values().end());
  for (T& v : out) v *= factor;
  return record<T>(a.shape(), std::move(out), {a.impl()}, [factor](Impl<T>& o) {
    T* g = o.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += factor * o.grad[i];
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T total = T(0);
  for (T v : a.values()) total += v;
  return record<T>(Shape{}, {total}, {a.impl()}, [](Impl<T>& o) {
    auto& p = *o.parents[0];
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < p.data.size(); ++i) g[i] += o.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  AlignedVector<T> out(a.values().begin(), a.values().end());
  return record<T>(std::move(shape), std::move(out), {a.impl()}, [](Impl<T>& o) {
    T* g = o.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: operands must be 2-D");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
  AlignedVector<T> out(m * n);
  MapR<T>(out.data(), m, n).noalias() =
      CMapR<T>(a.values().data(), m, k) * CMapR<T>(b.values().data(), k, n);
  return record<T>(Shape{m, n}, std::move(out), {a.impl(), b.impl()}, [m, k, n](Impl<T>& o) {
    auto& pa = *o.parents[0];
    auto& pb = *o.parents[1];
    CMapR<T> dy(o.grad.data(), m, n);
    if (pa.requires_grad) {
      MapR<T>(pa.grad_buffer(), m, k).noalias() += dy * CMapR<T>(pb.data.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MapR<T>(pb.grad_buffer(), k, n).noalias() += CMapR<T>(pa.data.data(), m, k).transpose() * dy;
    }
  });
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require(a.rank() == 2, "transpose: operand must be 2-D");
  const std::size_t m = a.dim(0), n = a.dim(1);
  AlignedVector<T> out(m * n);
  MapR<T>(out.data(), n, m) = CMapR<T>(a.values().data(), m, n).transpose();
  return record<T>(Shape{n, m}, std::move(out), {a.impl()}, [m, n](Impl<T>& o) {
    MapR<T>(o.parents[0]->grad_buffer(), m, n) += CMapR<T>(o.grad.data(), n, m).transpose();
  });
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  require(input.rank() == 2 && weight.rank() == 2 && bias.rank() == 1,
          "linear: expects input [N,d_in], weight [d_in,d_out], bias [d_out]");
  const std::size_t rows = input.dim(0), d_in = input.dim(1), d_out = weight.dim(1);
  require(weight.dim(0) == d_in && bias.dim(0) == d_out,
          "linear: dimension mismatch input " + shape_str(input.shape()) + " weight " +
              shape_str(weight.shape()) + " bias " + shape_str(bias.shape()));
  AlignedVector<T> out(rows * d_out);
  MapR<T> y(out.data(), rows, d_out);
  y.noalias() = CMapR<T>(input.values().data(), rows, d_in) *
                CMapR<T>(weight.values().data(), d_in, d_out);
  y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.values().data(), d_out);
  return record<T>(
      Shape{rows, d_out}, std::move(out), {input.impl(), weight.impl(), bias.impl()},
      [rows, d_in, d_out](Impl<T>& o) {
        auto& px = *o.parents[0];
        auto& pw = *o.parents[1];
        auto& pb = *o.parents[2];
        CMapR<T> dy(o.grad.data(), rows, d_out);
        if (px.requires_grad) {
          MapR<T>(px.grad_buffer(), rows, d_in).noalias() +=
              dy * CMapR<T>(pw.data.data(), d_in, d_out).transpose();
        }
        if (pw.requires_grad) {
          MapR<T>(pw.grad_buffer(), d_in, d_out).noalias() +=
              CMapR<T>(px.data.data(), rows, d_in).transpose() * dy;
        }
        if (pb.requires_grad) {
          MapR<T>(pb.grad_buffer(), 1, d_out) += dy.colwise().sum();
        }
      });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding) {
  require(input.rank() == 4 && weight.rank() == 4 && bias.rank() == 1,
          "conv2d: expects input [N,C,H,W], weight [C_out,C_in,kH,kW], bias [C_out]");
  require(stride >= 1, "conv2d: stride must be >= 1");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t co = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  require(weight.dim(1) == c, "conv2d: input has " + std::to_string(c) +
                                  " channels, weight expects " + std::to_string(weight.dim(1)));
  require(bias.dim(0) == co, "conv2d: bias size does not match output channels");
  require(kh <= h + 2 * padding && kw <= w + 2 * padding,
          "conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  const std::size_t k = c * kh * kw;
  const std::size_t p = ho * wo;

  AlignedVector<T> cols(n * k * p);
  auto x = input.values();
  for (std::size_t b = 0; b < n; ++b) {
    const T* xb = x.data() + b * c * h * w;
    T* col = cols.data() + b * k * p;
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t ki = 0; ki < kh; ++ki) {
        for (std::size_t kj = 0; kj < kw; ++kj) {
          T* row = col + ((ci * kh + ki) * kw + kj) * p;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                      static_cast<std::ptrdiff_t>(padding);
            T* dst = row + oy * wo;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            const T* src = xb + (ci * h + static_cast<std::size_t>(iy)) * w;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                        static_cast<std::ptrdiff_t>(padding);
              dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w))
                            ? T(0)
                            : src[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }

  AlignedVector<T> out(n * co * p);
  CMapR<T> wmat(weight.values().data(), co, k);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bvec(bias.values().data(), co);
  for (std::size_t b = 0; b < n; ++b) {
    MapR<T> y(out.data() + b * co * p, co, p);
    y.noalias() = wmat * CMapR<T>(cols.data() + b * k * p, k, p);
    y.colwise() += bvec;
  }

  return record<T>(
      Shape{n, co, ho, wo}, std::move(out), {input.impl(), weight.impl(), bias.impl()},
      [cols = std::move(cols), n, c, h, w, co, kh, kw, ho, wo, k, p, stride,
       padding](Impl<T>& o) {
        auto& px = *o.parents[0];
        auto& pw = *o.parents[1];
        auto& pb = *o.parents[2];
        CMapR<T> wmat(pw.data.data(), co, k);
        MatR<T> dcol;
        for (std::size_t b = 0; b < n; ++b) {
          CMapR<T> dy(o.grad.data() + b * co * p, co, p);
          CMapR<T> col(cols.data() + b * k * p, k, p);
          if (pw.requires_grad) MapR<T>(pw.grad_buffer(), co, k).noalias() += dy * col.transpose();
          if (pb.requires_grad) MapR<T>(pb.grad_buffer(), co, 1) += dy.rowwise().sum();
          if (!px.requires_grad) continue;
          dcol.noalias() = wmat.transpose() * dy;
          T* gx = px.grad_buffer() + b * c * h * w;
          for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t ki = 0; ki < kh; ++ki) {
              for (std::size_t kj = 0; kj < kw; ++kj) {
                const T* row = dcol.data() + ((ci * kh + ki) * kw + kj) * p;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                                            static_cast<std::ptrdiff_t>(padding);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                  T* dst = gx + (ci * h + static_cast<std::size_t>(iy)) * w;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                                              static_cast<std::ptrdiff_t>(padding);
                    if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) {
                      dst[static_cast<std::size_t>(ix)] += row[oy * wo + ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  AlignedVector<T> out(a.values().begin(), a.values().end());
  for (T& v : out) v = v > T(0) ? v : T(0);
  return record<T>(a.shape(), std::move(out), {a.impl()}, [](Impl<T>& o) {
    T* g = o.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (o.data[i] > T(0)) g[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  AlignedVector<T> out(a.values().begin(), a.values().end());
  for (T& v : out) v = T(1) / (T(1) + std::exp(-v));
  return record<T>(a.shape(), std::move(out), {a.impl()}, [](Impl<T>& o) {
    T* g = o.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      g[i] += o.grad[i] * o.data[i] * (T(1) - o.data[i]);
    }
  });
}

template <typename T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& a) {
  const std::size_t d = last_dim(a, "softmax_lastdim");
  require(d > 0, "softmax_lastdim: empty last dimension");
  const std::size_t rows = a.numel() / d;
  AlignedVector<T> out(a.values().begin(), a.values().end());
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * d;
    const T mx = *std::max_element(row, row + d);
    T total = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      row[j] = std::exp(row[j] - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) row[j] /= total;
  }
  return record<T>(a.shape(), std::move(out), {a.impl()}, [rows, d](Impl<T>& o) {
    T* g = o.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = o.data.data() + r * d;
      const T* dy = o.grad.data() + r * d;
      T dot = T(0);
      for (std::size_t j = 0; j < d; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < d; ++j) g[r * d + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& a, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return relu(a);
    case Activation::sigmoid:
      return sigmoid(a);
    case Activation::softmax_lastdim:
      return softmax_lastdim(a);
  }
  throw std::invalid_argument("activation: unknown kind");
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
  const std::size_t d = last_dim(input, "layer_norm");
  require(d >= 1, "layer_norm: d must be >= 1");
  require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
          "layer_norm: gamma/beta must have shape [" + std::to_string(d) + "]");
  const std::size_t rows = input.numel() / d;
  auto x = input.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  AlignedVector<T> xhat(input.numel());
  AlignedVector<T> rstd(rows);
  AlignedVector<T> out(input.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    T mu = T(0);
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * rstd[r];
      out[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
    }
  }
  return record<T>(
      input.shape(), std::move(out), {input.impl(), gamma.impl(), beta.impl()},
      [xhat = std::move(xhat), rstd = std::move(rstd), rows, d](Impl<T>& o) {
        auto& px = *o.parents[0];
        auto& pg = *o.parents[1];
        auto& pb = *o.parents[2];
        for (std::size_t r = 0; r < rows; ++r) {
          const T* dy = o.grad.data() + r * d;
          const T* xh = xhat.data() + r * d;
          if (pg.requires_grad) {
            T* gg = pg.grad_buffer();
            for (std::size_t j = 0; j < d; ++j) gg[j] += dy[j] * xh[j];
          }
          if (pb.requires_grad) {
            T* gb = pb.grad_buffer();
            for (std::size_t j = 0; j < d; ++j) gb[j] += dy[j];
          }
          if (px.requires_grad) {
            T mean_dxh = T(0), mean_dxh_xh = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const T dxh = dy[j] * pg.data[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh[j];
            }
            mean_dxh /= static_cast<T>(d);
            mean_dxh_xh /= static_cast<T>(d);
            T* gx = px.grad_buffer() + r * d;
            for (std::size_t j = 0; j < d; ++j) {
              gx[j] += rstd[r] * (dy[j] * pg.data[j] - mean_dxh - xh[j] * mean_dxh_xh);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> adaptive_max_pool2d(const BasicTensor<T>& input, std::size_t out_h,
                                   std::size_t out_w) {
  require(out_h >= 1 && out_w >= 1, "adaptive_max_pool2d: output size must be >= 1");
  require(input.rank() == 3, "adaptive_max_pool2d: expects input [C,h,w]");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(h >= 1 && w >= 1, "adaptive_max_pool2d: empty spatial extent");
  auto x = input.values();
  AlignedVector<T> out(c * out_h * out_w);
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* plane = x.data() + ch * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const std::size_t y0 = (i * h) / out_h;
      const std::size_t y1 = ((i + 1) * h + out_h - 1) / out_h;
      for (std::size_t j = 0; j < out_w; ++j) {
        const std::size_t x0 = (j * w) / out_w;
        const std::size_t x1 = ((j + 1) * w + out_w - 1) / out_w;
        std::size_t best = y0 * w + x0;
        for (std::size_t yy = y0; yy < y1; ++yy) {
          for (std::size_t xx = x0; xx < x1; ++xx) {
            if (plane[yy * w + xx] > plane[best]) best = yy * w + xx;
          }
        }
        const std::size_t o = (ch * out_h + i) * out_w + j;
        out[o] = plane[best];
        argmax[o] = ch * h * w + best;
      }
    }
  }
  return record<T>(Shape{c, out_h, out_w}, std::move(out), {input.impl()},
                   [argmax = std::move(argmax)](Impl<T>& o) {
                     T* g = o.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += o.grad[i];
                   });
}

template <typename T>
BasicTensor<T> crop2d(const BasicTensor<T>& input, std::size_t y0, std::size_t y1, std::size_t x0,
                      std::size_t x1) {
  require(input.rank() == 3, "crop2d: expects input [C,H,W]");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(y0 < y1 && y1 <= h && x0 < x1 && x1 <= w, "crop2d: window out of range");
  const std::size_t ch_ = y1 - y0, cw = x1 - x0;
  auto x = input.values();
  AlignedVector<T> out(c * ch_ * cw);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t yy = 0; yy < ch_; ++yy) {
      const T* src = x.data() + (k * h + y0 + yy) * w + x0;
      std::copy(src, src + cw, out.data() + (k * ch_ + yy) * cw);
    }
  }
  return record<T>(Shape{c, ch_, cw}, std::move(out), {input.impl()},
                   [c, h, w, y0, x0, ch_, cw](Impl<T>& o) {
                     T* g = o.parents[0]->grad_buffer();
                     for (std::size_t k = 0; k < c; ++k) {
                       for (std::size_t yy = 0; yy < ch_; ++yy) {
                         T* dst = g + (k * h + y0 + yy) * w + x0;
                         const T* src = o.grad.data() + (k * ch_ + yy) * cw;
                         for (std::size_t xx = 0; xx < cw; ++xx) dst[xx] += src[xx];
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> l2_normalize(const BasicTensor<T>& v, T eps) {
  const std::size_t d = last_dim(v, "l2_normalize");
  require(d > 0, "l2_normalize: empty last dimension");
  const std::size_t rows = v.numel() / d;
  auto x = v.values();
  AlignedVector<T> out(v.numel());
  AlignedVector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = T(0);
    for (std::size_t j = 0; j < d; ++j) sq += x[r * d + j] * x[r * d + j];
    norms[r] = std::sqrt(sq);
    const T denom = std::max(norms[r], eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] / denom;
  }
  return record<T>(v.shape(), std::move(out), {v.impl()},
                   [norms = std::move(norms), rows, d, eps](Impl<T>& o) {
                     T* g = o.parents[0]->grad_buffer();
                     for (std::size_t r = 0; r < rows; ++r) {
                       const T* y = o.data.data() + r * d;
                       const T* dy = o.grad.data() + r * d;
                       if (norms[r] > eps) {
                         T dot = T(0);
                         for (std::size_t j = 0; j < d; ++j) dot += y[j] * dy[j];
                         for (std::size_t j = 0; j < d; ++j) {
                           g[r * d + j] += (dy[j] - y[j] * dot) / norms[r];
                         }
                       } else {
                         for (std::size_t j = 0; j < d; ++j) g[r * d + j] += dy[j] / eps;
                       }
                     }
                   });
}

template <typename T>
BasicTensor<T> select_rows(const BasicTensor<T>& a, std::span<const std::size_t> rows) {
  const std::size_t rs = row_size(a, "select_rows");
  const std::size_t n = a.dim(0);
  for (std::size_t r : rows) {
    require(r < n, "select_rows: row " + std::to_string(r) + " out of range " + std::to_string(n));
  }
  Shape shape = a.shape();
  shape[0] = rows.size();
  AlignedVector<T> out(rows.size() * rs);
  auto x = a.values();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.data() + rows[i] * rs, rs, out.data() + i * rs);
  }
  return record<T>(std::move(shape), std::move(out), {a.impl()},
                   [idx = std::vector<std::size_t>(rows.begin(), rows.end()), rs](Impl<T>& o) {
                     T* g = o.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < idx.size(); ++i) {
                       for (std::size_t j = 0; j < rs; ++j) g[idx[i] * rs + j] += o.grad[i * rs + j];
                     }
                   });
}

template <typename T>
BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t n = parts[0].rank() == 2 ? parts[0].dim(0) : 0;
  std::vector<std::size_t> widths;
  std::vector<ImplPtr<T>> parents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.dim(0) == n, "concat_cols: inputs must be [N,*] with equal N");
    widths.push_back(p.dim(1));
    total += p.dim(1);
    parents.push_back(p.impl());
  }
  AlignedVector<T> out(n * total);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      std::copy_n(parts[k].values().data() + r * widths[k], widths[k], out.data() + r * total + off);
      off += widths[k];
    }
  }
  return record<T>(Shape{n, total}, std::move(out), std::move(parents),
                   [widths = std::move(widths), n, total](Impl<T>& o) {
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < widths.size(); ++k) {
                       auto& p = *o.parents[k];
                       if (p.requires_grad) {
                         T* g = p.grad_buffer();
                         for (std::size_t r = 0; r < n; ++r) {
                           for (std::size_t j = 0; j < widths[k]; ++j) {
                             g[r * widths[k] + j] += o.grad[r * total + off + j];
                           }
                         }
                       }
                       off += widths[k];
                     }
                   });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t start, std::size_t len) {
  require(a.rank() == 2, "slice_cols: expects a 2-D input");
  const std::size_t n = a.dim(0), d = a.dim(1);
  require(start + len <= d && len > 0, "slice_cols: range out of bounds");
  AlignedVector<T> out(n * len);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(a.values().data() + r * d + start, len, out.data() + r * len);
  }
  return record<T>(Shape{n, len}, std::move(out), {a.impl()}, [n, d, start, len](Impl<T>& o) {
    T* g = o.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < len; ++j) g[r * d + start + j] += o.grad[r * len + j];
    }
  });
}

template <typename T>
BasicTensor<T> stack(const std::vector<BasicTensor<T>>& parts) {
  require(!parts.empty(), "stack: no inputs");
  const Shape& inner = parts[0].shape();
  const std::size_t sz = parts[0].numel();
  Shape shape{parts.size()};
  shape.insert(shape.end(), inner.begin(), inner.end());
  AlignedVector<T> out(parts.size() * sz);
  std::vector<ImplPtr<T>> parents;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    require(parts[k].shape() == inner, "stack: inputs must share a shape");
    std::copy_n(parts[k].values().data(), sz, out.data() + k * sz);
    parents.push_back(parts[k].impl());
  }
  return record<T>(std::move(shape), std::move(out), std::move(parents), [sz](Impl<T>& o) {
    for (std::size_t k = 0; k < o.parents.size(); ++k) {
      auto& p = *o.parents[k];
      if (!p.requires_grad) continue;
      T* g = p.grad_buffer();
      for (std::size_t j = 0; j < sz; ++j) g[j] += o.grad[k * sz + j];
    }
  });
}

template <typename T>
BasicTensor<T> binary_cross_entropy(const BasicTensor<T>& probs, std::span<const T> labels) {
  require(probs.numel() == labels.size() && !labels.empty(),
          "binary_cross_entropy: needs equal, non-zero numbers of predictions and labels");
  const T lo = T(kProbabilityClamp), hi = T(1) - T(kProbabilityClamp);
  const T inv_n = T(1) / static_cast<T>(labels.size());
  auto p = probs.values();
  T total = T(0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const T pc = std::clamp(p[i], lo, hi);
    total -= labels[i] * std::log(pc) + (T(1) - labels[i]) * std::log(T(1) - pc);
  }
  return record<T>(Shape{}, {total * inv_n}, {probs.impl()},
                   [y = std::vector<T>(labels.begin(), labels.end()), lo, hi, inv_n](Impl<T>& o) {
                     auto& pp = *o.parents[0];
                     T* g = pp.grad_buffer();
                     for (std::size_t i = 0; i < y.size(); ++i) {
                       const T pc = std::clamp(pp.data[i], lo, hi);
                       g[i] += o.grad[0] * inv_n * (-(y[i] / pc) + (T(1) - y[i]) / (T(1) - pc));
                     }
                   });
}

template <typename T>
T smooth_l1(T x) {
  const T ax = std::abs(x);
  return ax < T(1) ? T(0.5) * x * x : ax - T(0.5);
}

template <typename T>
BasicTensor<T> smooth_l1_loss(const BasicTensor<T>& pred, std::span<const T> target) {
  require(pred.numel() == target.size(), "smooth_l1_loss: prediction/target size mismatch");
  auto p = pred.values();
  T total = T(0);
  for (std::size_t i = 0; i < target.size(); ++i) total += smooth_l1(p[i] - target[i]);
  return record<T>(Shape{}, {total}, {pred.impl()},
                   [t = std::vector<T>(target.begin(), target.end())](Impl<T>& o) {
                     auto& pp = *o.parents[0];
                     T* g = pp.grad_buffer();
                     for (std::size_t i = 0; i < t.size(); ++i) {
                       const T d = pp.data[i] - t[i];
                       const T dd = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
                       g[i] += o.grad[0] * dd;
                     }
                   });
}

#define TDET_INSTANTIATE_OPS(T)                                                                  \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                       \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                            \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                           \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                 \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                      \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&);                                         \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&, std::size_t, std::size_t);               \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                           \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                        \
  template BasicTensor<T> softmax_lastdim(const BasicTensor<T>&);                                \
  template BasicTensor<T> activation(const BasicTensor<T>&, Activation);                         \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&, T);                                  \
  template BasicTensor<T> adaptive_max_pool2d(const BasicTensor<T>&, std::size_t, std::size_t);  \
  template BasicTensor<T> crop2d(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t,   \
                                 std::size_t);                                                   \
  template BasicTensor<T> l2_normalize(const BasicTensor<T>&, T);                                \
  template BasicTensor<T> select_rows(const BasicTensor<T>&, std::span<const std::size_t>);      \
  template BasicTensor<T> concat_cols(const std::vector<BasicTensor<T>>&);                       \
  template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);           \
  template BasicTensor<T> stack(const std::vector<BasicTensor<T>>&);                             \
  template BasicTensor<T> binary_cross_entropy(const BasicTensor<T>&, std::span<const T>);       \
  template T smooth_l1(T);                                                                       \
  template BasicTensor<T> smooth_l1_loss(const BasicTensor<T>&, std::span<const T>);

TDET_INSTANTIATE_OPS(float)
TDET_INSTANTIATE_OPS(double)

#undef TDET_INSTANTIATE_OPS

}  // namespace tdet
