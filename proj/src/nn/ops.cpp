#include "geco/nn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace geco::nn {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

template <class T>
Node<T>* parent(Node<T>& self, std::size_t i) {
  Node<T>* p = self.parents[i].get();
  if (p && p->requires_grad) {
    p->ensure_grad();
    return p;
  }
  return nullptr;
}

std::int64_t conv_out(std::int64_t in, const Conv2dGeometry& g) {
  return (in + 2 * g.padding - g.kernel) / g.stride + 1;
}

// cols[(c*k*k + ki*k + kj), oh*wo + ow] = img[c, oh*s - p + ki, ow*s - p + kj]
template <class T>
void im2col(const T* img, std::int64_t channels, std::int64_t h, std::int64_t w,
            const Conv2dGeometry& g, std::int64_t ho, std::int64_t wo, T* cols) {
  const std::int64_t k = g.kernel;
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t ki = 0; ki < k; ++ki)
      for (std::int64_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + ki;
          T* out = row + oh * wo;
          if (ih < 0 || ih >= h) {
            std::fill(out, out + wo, T(0));
            continue;
          }
          const T* src = img + (c * h + ih) * w;
          for (std::int64_t ow = 0; ow < wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + kj;
            out[ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* cols, std::int64_t channels, std::int64_t h, std::int64_t w,
            const Conv2dGeometry& g, std::int64_t ho, std::int64_t wo, T* img) {
  const std::int64_t k = g.kernel;
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t ki = 0; ki < k; ++ki)
      for (std::int64_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= h) continue;
          T* dst = img + (c * h + ih) * w;
          const T* in = row + oh * wo;
          for (std::int64_t ow = 0; ow < wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + kj;
            if (iw >= 0 && iw < w) dst[iw] += in[ow];
          }
        }
      }
}

template <class T, class F, class G>
Var<T> unary(const Var<T>& x, F forward, G derivative) {
  auto out = make_result<T>(x.shape(), {&x});
  const auto in = x.data();
  for (std::size_t i = 0; i < in.size(); ++i) out->value[i] = forward(in[i]);
  if (out->requires_grad) {
    out->backward = [derivative](Node<T>& self) {
      Node<T>* px = parent(self, 0);
      if (!px) return;
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        px->grad[i] += self.grad[i] * derivative(px->value[i], self.value[i]);
    };
  }
  return Var<T>(out);
}

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dGeometry g) {
  require(x.shape().size() == 4, "conv2d", "input must be NCHW, got " + shape_str(x.shape()));
  require(weight.shape().size() == 4 && weight.dim(1) == x.dim(1) && weight.dim(2) == g.kernel &&
              weight.dim(3) == g.kernel,
          "conv2d", "weight " + shape_str(weight.shape()) + " incompatible with input " +
                        shape_str(x.shape()));
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t o = weight.dim(0);
  const std::int64_t ho = conv_out(h, g), wo = conv_out(w, g);
  require(ho > 0 && wo > 0, "conv2d", "input " + shape_str(x.shape()) + " too small for kernel");
  require(!bias.defined() || bias.size() == o, "conv2d", "bias size mismatch");
  const std::int64_t ckk = c * g.kernel * g.kernel, hw = ho * wo;

  auto out = make_result<T>({n, o, ho, wo}, {&x, &weight, &bias});
  Buffer<T> cols(static_cast<std::size_t>(ckk * hw));
  CMapR<T> wm(weight.data().data(), o, ckk);
  for (std::int64_t s = 0; s < n; ++s) {
    im2col(x.data().data() + s * c * h * w, c, h, w, g, ho, wo, cols.data());
    MapR<T> y(out->value.data() + s * o * hw, o, hw);
    y.noalias() = wm * CMapR<T>(cols.data(), ckk, hw);
    if (bias.defined())
      for (std::int64_t oc = 0; oc < o; ++oc) y.row(oc).array() += bias.data()[oc];
  }

  if (out->requires_grad) {
    out->backward = [=](Node<T>& self) {
      Node<T>* px = parent(self, 0);
      Node<T>* pw = parent(self, 1);
      Node<T>* pb = self.parents[2] ? parent(self, 2) : nullptr;
      const Node<T>& xin = *self.parents[0];
      const Node<T>& win = *self.parents[1];
      Buffer<T> buf(static_cast<std::size_t>(ckk * hw));
      CMapR<T> wmat(win.value.data(), o, ckk);
      for (std::int64_t s = 0; s < n; ++s) {
        CMapR<T> dy(self.grad.data() + s * o * hw, o, hw);
        if (pb)
          for (std::int64_t oc = 0; oc < o; ++oc) pb->grad[oc] += dy.row(oc).sum();
        if (pw) {
          im2col(xin.value.data() + s * c * h * w, c, h, w, g, ho, wo, buf.data());
          MapR<T>(pw->grad.data(), o, ckk).noalias() += dy * CMapR<T>(buf.data(), ckk, hw).transpose();
        }
        if (px) {
          MapR<T>(buf.data(), ckk, hw).noalias() = wmat.transpose() * dy;
          col2im(buf.data(), c, h, w, g, ho, wo, px->grad.data() + s * c * h * w);
        }
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        Conv2dGeometry g) {
  require(x.shape().size() == 4, "conv_transpose2d", "input must be NCHW");
  require(weight.shape().size() == 4 && weight.dim(0) == x.dim(1) && weight.dim(2) == g.kernel &&
              weight.dim(3) == g.kernel,
          "conv_transpose2d", "weight " + shape_str(weight.shape()) + " incompatible with input " +
                                  shape_str(x.shape()));
  const std::int64_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t co = weight.dim(1);
  const std::int64_t ho = (h - 1) * g.stride - 2 * g.padding + g.kernel;
  const std::int64_t wo = (w - 1) * g.stride - 2 * g.padding + g.kernel;
  require(ho > 0 && wo > 0, "conv_transpose2d", "non-positive output extent");
  require(!bias.defined() || bias.size() == co, "conv_transpose2d", "bias size mismatch");
  const std::int64_t cokk = co * g.kernel * g.kernel, hw = h * w, ohw = ho * wo;

  auto out = make_result<T>({n, co, ho, wo}, {&x, &weight, &bias});
  Buffer<T> cols(static_cast<std::size_t>(cokk * hw));
  CMapR<T> wm(weight.data().data(), ci, cokk);
  for (std::int64_t s = 0; s < n; ++s) {
    MapR<T>(cols.data(), cokk, hw).noalias() =
        wm.transpose() * CMapR<T>(x.data().data() + s * ci * hw, ci, hw);
    T* y = out->value.data() + s * co * ohw;
    col2im(cols.data(), co, ho, wo, g, h, w, y);
    if (bias.defined())
      for (std::int64_t oc = 0; oc < co; ++oc)
        for (std::int64_t i = 0; i < ohw; ++i) y[oc * ohw + i] += bias.data()[oc];
  }

  if (out->requires_grad) {
    out->backward = [=](Node<T>& self) {
      Node<T>* px = parent(self, 0);
      Node<T>* pw = parent(self, 1);
      Node<T>* pb = self.parents[2] ? parent(self, 2) : nullptr;
      const Node<T>& xin = *self.parents[0];
      const Node<T>& win = *self.parents[1];
      Buffer<T> buf(static_cast<std::size_t>(cokk * hw));
      CMapR<T> wmat(win.value.data(), ci, cokk);
      for (std::int64_t s = 0; s < n; ++s) {
        const T* dy = self.grad.data() + s * co * ohw;
        if (pb)
          for (std::int64_t oc = 0; oc < co; ++oc) {
            T acc = 0;
            for (std::int64_t i = 0; i < ohw; ++i) acc += dy[oc * ohw + i];
            pb->grad[oc] += acc;
          }
        if (!px && !pw) continue;
        im2col(dy, co, ho, wo, g, h, w, buf.data());
        CMapR<T> dcols(buf.data(), cokk, hw);
        if (px) MapR<T>(px->grad.data() + s * ci * hw, ci, hw).noalias() += wmat * dcols;
        if (pw)
          MapR<T>(pw->grad.data(), ci, cokk).noalias() +=
              CMapR<T>(xin.value.data() + s * ci * hw, ci, hw) * dcols.transpose();
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  require(x.shape().size() == 4, "instance_norm", "input must be NCHW");
  const std::int64_t groups = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  auto out = make_result<T>(x.shape(), {&x});
  std::vector<T> inv_std(static_cast<std::size_t>(groups));
  for (std::int64_t gi = 0; gi < groups; ++gi) {
    const T* in = x.data().data() + gi * hw;
    T* y = out->value.data() + gi * hw;
    T mu = 0;
    for (std::int64_t i = 0; i < hw; ++i) mu += in[i];
    mu /= T(hw);
    T var = 0;
    for (std::int64_t i = 0; i < hw; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= T(hw);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[gi] = is;
    for (std::int64_t i = 0; i < hw; ++i) y[i] = (in[i] - mu) * is;
  }
  if (out->requires_grad) {
    out->backward = [groups, hw, inv_std](Node<T>& self) {
      Node<T>* px = parent(self, 0);
      if (!px) return;
      for (std::int64_t gi = 0; gi < groups; ++gi) {
        const T* dy = self.grad.data() + gi * hw;
        const T* xh = self.value.data() + gi * hw;
        T mdy = 0, mdyx = 0;
        for (std::int64_t i = 0; i < hw; ++i) {
          mdy += dy[i];
          mdyx += dy[i] * xh[i];
        }
        mdy /= T(hw);
        mdyx /= T(hw);
        T* dx = px->grad.data() + gi * hw;
        for (std::int64_t i = 0; i < hw; ++i) dx[i] += inv_std[gi] * (dy[i] - mdy - xh[i] * mdyx);
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState& state,
                  bool training, double momentum, T eps) {
  require(x.shape().size() == 4, "batch_norm", "input must be NCHW");
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require(gamma.size() == c && beta.size() == c, "batch_norm", "affine size mismatch");
  if (state.running_mean.empty()) {
    state.running_mean.assign(c, 0.0);
    state.running_var.assign(c, 1.0);
  }
  const std::int64_t count = n * hw;
  std::vector<T> mean_c(c), inv_std(c);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    if (training) {
      T mu = 0;
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t i = 0; i < hw; ++i) mu += x.data()[(s * c + ch) * hw + i];
      mu /= T(count);
      T var = 0;
      for (std::int64_t s = 0; s < n; ++s)
        for (std::int64_t i = 0; i < hw; ++i) {
          const T d = x.data()[(s * c + ch) * hw + i] - mu;
          var += d * d;
        }
      var /= T(count);
      mean_c[ch] = mu;
      inv_std[ch] = T(1) / std::sqrt(var + eps);
      const double unbiased = count > 1 ? double(var) * count / (count - 1) : double(var);
      state.running_mean[ch] = (1 - momentum) * state.running_mean[ch] + momentum * double(mu);
      state.running_var[ch] = (1 - momentum) * state.running_var[ch] + momentum * unbiased;
    } else {
      mean_c[ch] = T(state.running_mean[ch]);
      inv_std[ch] = T(1) / std::sqrt(T(state.running_var[ch]) + eps);
    }
  }
  auto out = make_result<T>(x.shape(), {&x, &gamma, &beta});
  Buffer<T> xhat(x.data().size());
  for (std::int64_t s = 0; s < n; ++s)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < hw; ++i) {
        const std::int64_t idx = (s * c + ch) * hw + i;
        xhat[idx] = (x.data()[idx] - mean_c[ch]) * inv_std[ch];
        out->value[idx] = gamma.data()[ch] * xhat[idx] + beta.data()[ch];
      }
  if (out->requires_grad) {
    out->backward = [=, xhat = std::move(xhat)](Node<T>& self) {
      Node<T>* px = parent(self, 0);
      Node<T>* pg = parent(self, 1);
      Node<T>* pb = parent(self, 2);
      const Node<T>& g = *self.parents[1];
      for (std::int64_t ch = 0; ch < c; ++ch) {
        T sdy = 0, sdyx = 0;
        for (std::int64_t s = 0; s < n; ++s)
          for (std::int64_t i = 0; i < hw; ++i) {
            const std::int64_t idx = (s * c + ch) * hw + i;
            sdy += self.grad[idx];
            sdyx += self.grad[idx] * xhat[idx];
          }
        if (pg) pg->grad[ch] += sdyx;
        if (pb) pb->grad[ch] += sdy;
        if (!px) continue;
        const T gm = g.value[ch];
        for (std::int64_t s = 0; s < n; ++s)
          for (std::int64_t i = 0; i < hw; ++i) {
            const std::int64_t idx = (s * c + ch) * hw + i;
            if (training)
              px->grad[idx] += gm * inv_std[ch] *
                               (self.grad[idx] - sdy / T(count) - xhat[idx] * sdyx / T(count));
            else
              px->grad[idx] += gm * inv_std[ch] * self.grad[idx];
          }
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T in, T) { return in > T(0) ? T(1) : slope; });
}

template <class T>
Var<T> tanh(const Var<T>& x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  return unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var<T> softplus(const Var<T>& x) {
  return unary(
      x, [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
      [](T in, T) { return T(1) / (T(1) + std::exp(-in)); });
}

template <class T>
Var<T> max_pool2d(const Var<T>& x, Conv2dGeometry g) {
  require(x.shape().size() == 4, "max_pool2d", "input must be NCHW");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = conv_out(h, g), wo = conv_out(w, g);
  auto out = make_result<T>({n, c, ho, wo}, {&x});
  std::vector<std::int64_t> arg(out->value.size());
  for (std::int64_t p = 0; p < n * c; ++p) {
    const T* in = x.data().data() + p * h * w;
    for (std::int64_t oh = 0; oh < ho; ++oh)
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t ki = 0; ki < g.kernel; ++ki)
          for (std::int64_t kj = 0; kj < g.kernel; ++kj) {
            const std::int64_t ih = oh * g.stride - g.padding + ki;
            const std::int64_t iw = ow * g.stride - g.padding + kj;
            if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
            if (in[ih * w + iw] > best) {
              best = in[ih * w + iw];
              best_idx = p * h * w + ih * w + iw;
            }
          }
        const std::int64_t o = (p * ho + oh) * wo + ow;
        out->value[o] = best;
        arg[o] = best_idx;
      }
  }
  if (out->requires_grad) {
    out->backward = [arg = std::move(arg)](Node<T>& self) {
      Node<T>* px = parent(self, 0);
      if (!px) return;
      for (std::size_t i = 0; i < arg.size(); ++i) px->grad[arg[i]] += self.grad[i];
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  require(x.shape().size() == 4, "global_avg_pool", "input must be NCHW");
  const std::int64_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  auto out = make_result<T>({x.dim(0), x.dim(1)}, {&x});
  for (std::int64_t p = 0; p < nc; ++p) {
    T acc = 0;
    for (std::int64_t i = 0; i < hw; ++i) acc += x.data()[p * hw + i];
    out->value[p] = acc / T(hw);
  }
  if (out->requires_grad) {
    out->backward = [nc, hw](Node<T>& self) {
      Node<T>* px = parent(self, 0);
      if (!px) return;
      for (std::int64_t p = 0; p < nc; ++p)
        for (std::int64_t i = 0; i < hw; ++i) px->grad[p * hw + i] += self.grad[p] / T(hw);
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = make_result<T>(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] + b.data()[i];
  if (out->requires_grad) {
    out->backward = [](Node<T>& self) {
      for (std::size_t k = 0; k < 2; ++k)
        if (Node<T>* p = parent(self, k))
          for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "sub", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = make_result<T>(a.shape(), {&a, &b});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = a.data()[i] - b.data()[i];
  if (out->requires_grad) {
    out->backward = [](Node<T>& self) {
      if (Node<T>* p = parent(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
      if (Node<T>* p = parent(self, 1))
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] -= self.grad[i];
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  auto out = make_result<T>(x.shape(), {&x});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = x.data()[i] * factor;
  if (out->requires_grad) {
    out->backward = [factor](Node<T>& self) {
      if (Node<T>* p = parent(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * factor;
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> mask_mul(const Var<T>& x, std::span<const T> mask) {
  require(static_cast<std::int64_t>(mask.size()) == x.size(), "mask_mul", "mask size mismatch");
  auto out = make_result<T>(x.shape(), {&x});
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = x.data()[i] * mask[i];
  if (out->requires_grad) {
    out->backward = [m = std::vector<T>(mask.begin(), mask.end())](Node<T>& self) {
      if (Node<T>* p = parent(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * m[i];
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> concat1(const Var<T>& a, const Var<T>& b) {
  require(a.shape().size() >= 2 && a.shape().size() == b.shape().size() && a.dim(0) == b.dim(0),
          "concat1", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::int64_t inner = 1;
  for (std::size_t d = 2; d < a.shape().size(); ++d) {
    require(a.dim(d) == b.dim(d), "concat1", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    inner *= a.dim(d);
  }
  Shape shape = a.shape();
  shape[1] = a.dim(1) + b.dim(1);
  const std::int64_t n = a.dim(0), sa = a.dim(1) * inner, sb = b.dim(1) * inner;
  auto out = make_result<T>(shape, {&a, &b});
  for (std::int64_t s = 0; s < n; ++s) {
    std::copy_n(a.data().data() + s * sa, sa, out->value.data() + s * (sa + sb));
    std::copy_n(b.data().data() + s * sb, sb, out->value.data() + s * (sa + sb) + sa);
  }
  if (out->requires_grad) {
    out->backward = [n, sa, sb](Node<T>& self) {
      Node<T>* pa = parent(self, 0);
      Node<T>* pb = parent(self, 1);
      for (std::int64_t s = 0; s < n; ++s) {
        const T* g = self.grad.data() + s * (sa + sb);
        if (pa)
          for (std::int64_t i = 0; i < sa; ++i) pa->grad[s * sa + i] += g[i];
        if (pb)
          for (std::int64_t i = 0; i < sb; ++i) pb->grad[s * sb + i] += g[sa + i];
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> broadcast_spatial(const Var<T>& z, std::int64_t height, std::int64_t width) {
  require(z.shape().size() == 2, "broadcast_spatial", "expects [N,D]");
  const std::int64_t n = z.dim(0), d = z.dim(1), hw = height * width;
  auto out = make_result<T>({n, d, height, width}, {&z});
  for (std::int64_t p = 0; p < n * d; ++p)
    std::fill_n(out->value.data() + p * hw, hw, z.data()[p]);
  if (out->requires_grad) {
    out->backward = [n, d, hw](Node<T>& self) {
      Node<T>* pz = parent(self, 0);
      if (!pz) return;
      for (std::int64_t p = 0; p < n * d; ++p) {
        T acc = 0;
        for (std::int64_t i = 0; i < hw; ++i) acc += self.grad[p * hw + i];
        pz->grad[p] += acc;
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> slice0(const Var<T>& x, std::int64_t begin, std::int64_t count) {
  require(begin >= 0 && count >= 0 && begin + count <= x.dim(0), "slice0", "range out of bounds");
  const std::int64_t row = x.size() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = count;
  auto out = make_result<T>(shape, {&x});
  std::copy_n(x.data().data() + begin * row, count * row, out->value.data());
  if (out->requires_grad) {
    out->backward = [begin, row](Node<T>& self) {
      if (Node<T>* p = parent(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[begin * row + i] += self.grad[i];
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  auto out = make_result<T>(std::move(shape), {&x});
  std::copy(x.data().begin(), x.data().end(), out->value.begin());
  if (out->requires_grad) {
    out->backward = [](Node<T>& self) {
      if (Node<T>* p = parent(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require(x.shape().size() == 2 && weight.shape().size() == 2 && weight.dim(1) == x.dim(1),
          "linear", shape_str(x.shape()) + " x " + shape_str(weight.shape()));
  const std::int64_t n = x.dim(0), in = x.dim(1), o = weight.dim(0);
  require(!bias.defined() || bias.size() == o, "linear", "bias size mismatch");
  auto out = make_result<T>({n, o}, {&x, &weight, &bias});
  MapR<T> y(out->value.data(), n, o);
  y.noalias() = CMapR<T>(x.data().data(), n, in) * CMapR<T>(weight.data().data(), o, in).transpose();
  if (bias.defined())
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t c = 0; c < o; ++c) y(r, c) += bias.data()[c];
  if (out->requires_grad) {
    out->backward = [n, in, o](Node<T>& self) {
      Node<T>* px = parent(self, 0);
      Node<T>* pw = parent(self, 1);
      Node<T>* pb = self.parents[2] ? parent(self, 2) : nullptr;
      CMapR<T> dy(self.grad.data(), n, o);
      if (px)
        MapR<T>(px->grad.data(), n, in).noalias() +=
            dy * CMapR<T>(self.parents[1]->value.data(), o, in);
      if (pw)
        MapR<T>(pw->grad.data(), o, in).noalias() +=
            dy.transpose() * CMapR<T>(self.parents[0]->value.data(), n, in);
      if (pb)
        for (std::int64_t c = 0; c < o; ++c) pb->grad[c] += dy.col(c).sum();
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(1) == b.dim(1), "matmul_nt",
          shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::int64_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  auto out = make_result<T>({n, m}, {&a, &b});
  MapR<T>(out->value.data(), n, m).noalias() =
      CMapR<T>(a.data().data(), n, d) * CMapR<T>(b.data().data(), m, d).transpose();
  if (out->requires_grad) {
    out->backward = [n, m, d](Node<T>& self) {
      CMapR<T> g(self.grad.data(), n, m);
      if (Node<T>* pa = parent(self, 0))
        MapR<T>(pa->grad.data(), n, d).noalias() += g * CMapR<T>(self.parents[1]->value.data(), m, d);
      if (Node<T>* pb = parent(self, 1))
        MapR<T>(pb->grad.data(), m, d).noalias() +=
            g.transpose() * CMapR<T>(self.parents[0]->value.data(), n, d);
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> rowdot(const Var<T>& a, const Var<T>& b) {
  require(a.shape().size() == 2 && a.shape() == b.shape(), "rowdot",
          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::int64_t n = a.dim(0), d = a.dim(1);
  auto out = make_result<T>({n}, {&a, &b});
  for (std::int64_t r = 0; r < n; ++r) {
    T acc = 0;
    for (std::int64_t i = 0; i < d; ++i) acc += a.data()[r * d + i] * b.data()[r * d + i];
    out->value[r] = acc;
  }
  if (out->requires_grad) {
    out->backward = [n, d](Node<T>& self) {
      const auto& av = self.parents[0]->value;
      const auto& bv = self.parents[1]->value;
      Node<T>* pa = parent(self, 0);
      Node<T>* pb = parent(self, 1);
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t i = 0; i < d; ++i) {
          if (pa) pa->grad[r * d + i] += self.grad[r] * bv[r * d + i];
          if (pb) pb->grad[r * d + i] += self.grad[r] * av[r * d + i];
        }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> sum(const Var<T>& x) {
  auto out = make_result<T>({}, {&x});
  T acc = 0;
  for (T v : x.data()) acc += v;
  out->value[0] = acc;
  if (out->requires_grad) {
    out->backward = [](Node<T>& self) {
      if (Node<T>* p = parent(self, 0))
        for (auto& g : p->grad) g += self.grad[0];
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> mean(const Var<T>& x) {
  require(x.size() > 0, "mean", "empty input");
  return scale(sum(x), T(1) / T(x.size()));
}

template <class T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "l1_mean", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto out = make_result<T>({}, {&a, &b});
  T acc = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  const T count = T(a.size());
  out->value[0] = acc / count;
  if (out->requires_grad) {
    out->backward = [count](Node<T>& self) {
      const auto& av = self.parents[0]->value;
      const auto& bv = self.parents[1]->value;
      Node<T>* pa = parent(self, 0);
      Node<T>* pb = parent(self, 1);
      const T g = self.grad[0] / count;
      for (std::size_t i = 0; i < av.size(); ++i) {
        const T diff = av[i] - bv[i];
        const T sgn = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
        if (pa) pa->grad[i] += g * sgn;
        if (pb) pb->grad[i] -= g * sgn;
      }
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> l2_norm(std::span<const Var<T>> xs) {
  auto out = std::make_shared<Node<T>>();
  out->shape = {};
  out->value.assign(1, T(0));
  T acc = 0;
  bool any_grad = false;
  for (const auto& x : xs) {
    for (T v : x.data()) acc += v * v;
    any_grad = any_grad || x.requires_grad();
  }
  const T norm = std::sqrt(acc);
  out->value[0] = norm;
  if (grad_enabled() && any_grad) {
    out->requires_grad = true;
    for (const auto& x : xs) out->parents.push_back(x.ptr());
    out->backward = [norm](Node<T>& self) {
      if (norm == T(0)) return;
      for (std::size_t k = 0; k < self.parents.size(); ++k)
        if (Node<T>* p = parent(self, k))
          for (std::size_t i = 0; i < p->value.size(); ++i)
            p->grad[i] += self.grad[0] * p->value[i] / norm;
    };
  }
  return Var<T>(out);
}

template <class T>
Var<T> softmax_xent_rows(const Var<T>& scores, std::span<const std::int64_t> positive_col, T tau,
                         T prefactor) {
  require(scores.shape().size() == 2, "softmax_xent_rows", "expects [N,K]");
  require(tau > T(0), "softmax_xent_rows", "temperature must be positive");
  const std::int64_t n = scores.dim(0), k = scores.dim(1);
  require(static_cast<std::int64_t>(positive_col.size()) == n, "softmax_xent_rows",
          "one positive column per row required");
  auto out = make_result<T>({n}, {&scores});
  Buffer<T> probs(static_cast<std::size_t>(n * k));
  std::vector<std::int64_t> pos(positive_col.begin(), positive_col.end());
  for (std::int64_t r = 0; r < n; ++r) {
    require(pos[r] >= 0 && pos[r] < k, "softmax_xent_rows", "positive column out of range");
    const T* s = scores.data().data() + r * k;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t c = 0; c < k; ++c) mx = std::max(mx, s[c] / tau);
    T z = 0;
    for (std::int64_t c = 0; c < k; ++c) z += std::exp(s[c] / tau - mx);
    const T lse = mx + std::log(z);
    for (std::int64_t c = 0; c < k; ++c) probs[r * k + c] = std::exp(s[c] / tau - lse);
    out->value[r] = prefactor * (lse - s[pos[r]] / tau);
  }
  if (out->requires_grad) {
    out->backward = [n, k, tau, prefactor, probs = std::move(probs), pos = std::move(pos)](Node<T>& self) {
      Node<T>* ps = parent(self, 0);
      if (!ps) return;
      for (std::int64_t r = 0; r < n; ++r) {
        const T g = self.grad[r] * prefactor / tau;
        for (std::int64_t c = 0; c < k; ++c)
          ps->grad[r * k + c] += g * (probs[r * k + c] - (c == pos[r] ? T(1) : T(0)));
      }
    };
  }
  return Var<T>(out);
}

#define GECO_INSTANTIATE(T)                                                                      \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, Conv2dGeometry);           \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const Var<T>&, Conv2dGeometry); \
  template Var<T> instance_norm(const Var<T>&, T);                                               \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormState&, bool, \
                             double, T);                                                         \
  template Var<T> relu(const Var<T>&);                                                           \
  template Var<T> leaky_relu(const Var<T>&, T);                                                  \
  template Var<T> tanh(const Var<T>&);                                                           \
  template Var<T> sigmoid(const Var<T>&);                                                        \
  template Var<T> softplus(const Var<T>&);                                                       \
  template Var<T> max_pool2d(const Var<T>&, Conv2dGeometry);                                     \
  template Var<T> global_avg_pool(const Var<T>&);                                                \
  template Var<T> add(const Var<T>&, const Var<T>&);                                             \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                             \
  template Var<T> scale(const Var<T>&, T);                                                       \
  template Var<T> mask_mul(const Var<T>&, std::span<const T>);                                   \
  template Var<T> concat1(const Var<T>&, const Var<T>&);                                         \
  template Var<T> broadcast_spatial(const Var<T>&, std::int64_t, std::int64_t);                  \
  template Var<T> slice0(const Var<T>&, std::int64_t, std::int64_t);                             \
  template Var<T> reshape(const Var<T>&, Shape);                                                 \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                           \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                       \
  template Var<T> rowdot(const Var<T>&, const Var<T>&);                                          \
  template Var<T> mean(const Var<T>&);                                                           \
  template Var<T> sum(const Var<T>&);                                                            \
  template Var<T> l1_mean(const Var<T>&, const Var<T>&);                                         \
  template Var<T> l2_norm(std::span<const Var<T>>);                                              \
  template Var<T> softmax_xent_rows(const Var<T>&, std::span<const std::int64_t>, T, T);

GECO_INSTANTIATE(float)
GECO_INSTANTIATE(double)

#undef GECO_INSTANTIATE

}  // namespace geco::nn
