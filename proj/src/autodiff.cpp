#include "difattack/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Core>

namespace difattack {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

template <typename T>
void require_same_shape(const char* op, BasicVar<T> a, BasicVar<T> b) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                      shape_string(b.shape()));
}

struct ConvGeometry {
  int batch, in_ch, height, width;
  int out_ch, kh, kw, stride, pad;
  int out_h, out_w;
  int k() const { return in_ch * kh * kw; }
  int n() const { return batch * out_h * out_w; }
};

// col[(c*kh + i)*kw + j, (b*out_h + oh)*out_w + ow] = x[b, c, oh*s - p + i, ow*s - p + j]
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const int plane = g.out_h * g.out_w;
  const int ncols = g.n();
  for (int c = 0; c < g.in_ch; ++c) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        T* row = col + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * ncols;
        for (int b = 0; b < g.batch; ++b) {
          const T* src = x + (static_cast<std::size_t>(b) * g.in_ch + c) * g.height * g.width;
          T* dst = row + static_cast<std::size_t>(b) * plane;
          for (int oh = 0; oh < g.out_h; ++oh) {
            const int ih = oh * g.stride - g.pad + i;
            T* drow = dst + oh * g.out_w;
            if (ih < 0 || ih >= g.height) {
              std::fill(drow, drow + g.out_w, T(0));
              continue;
            }
            const T* srow = src + ih * g.width;
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad + j;
              drow[ow] = (iw < 0 || iw >= g.width) ? T(0) : srow[iw];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
  const int plane = g.out_h * g.out_w;
  const int ncols = g.n();
  for (int c = 0; c < g.in_ch; ++c) {
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const T* row = col + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * ncols;
        for (int b = 0; b < g.batch; ++b) {
          T* dst = dx + (static_cast<std::size_t>(b) * g.in_ch + c) * g.height * g.width;
          const T* src = row + static_cast<std::size_t>(b) * plane;
          for (int oh = 0; oh < g.out_h; ++oh) {
            const int ih = oh * g.stride - g.pad + i;
            if (ih < 0 || ih >= g.height) continue;
            T* drow = dst + ih * g.width;
            const T* srow = src + oh * g.out_w;
            for (int ow = 0; ow < g.out_w; ++ow) {
              const int iw = ow * g.stride - g.pad + j;
              if (iw >= 0 && iw < g.width) drow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
}

// [B, C, P] <-> [C, B*P]
template <typename T>
void nchw_to_cn(const T* src, T* dst, int batch, int channels, int plane) {
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      std::copy_n(src + (static_cast<std::size_t>(b) * channels + c) * plane, plane,
                  dst + (static_cast<std::size_t>(c) * batch + b) * plane);
}

template <typename T>
void cn_to_nchw(const T* src, T* dst, int batch, int channels, int plane) {
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      std::copy_n(src + (static_cast<std::size_t>(c) * batch + b) * plane, plane,
                  dst + (static_cast<std::size_t>(b) * channels + c) * plane);
}

}  // namespace

// ---------------------------------------------------------------------------
// tape

template <typename T>
BasicVar<T> BasicTape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return BasicVar<T>(this, nodes_.size() - 1);
}

template <typename T>
void BasicTape<T>::check_owned(BasicVar<T> v) const {
  if (v.tape() != this) throw AutodiffError("Var belongs to a different tape");
}

template <typename T>
BasicVar<T> BasicTape<T>::constant(BasicTensor<T> value) {
  Node n;
  n.op = "constant";
  n.owned = std::move(value);
  return push(std::move(n));
}

template <typename T>
BasicVar<T> BasicTape<T>::constant_ref(const BasicTensor<T>& value) {
  Node n;
  n.op = "constant";
  n.borrowed = &value;
  return push(std::move(n));
}

template <typename T>
BasicVar<T> BasicTape<T>::input(BasicTensor<T> value) {
  Node n;
  n.op = "input";
  n.owned = std::move(value);
  n.requires_grad = recording_;
  return push(std::move(n));
}

template <typename T>
BasicVar<T> BasicTape<T>::parameter(const Parameter& p, bool trainable)
  requires std::is_same_v<T, float>
{
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return BasicVar<T>(this, it->second);
  Node n;
  n.op = "parameter";
  n.borrowed = &p.value;
  n.requires_grad = recording_ && trainable;
  n.param = trainable ? &p : nullptr;
  BasicVar<T> v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

template <typename T>
BasicVar<T> BasicTape<T>::record(const char* op, BasicTensor<T> value, std::initializer_list<BasicVar<T>> parents, BackwardFn fn) {
  Node n;
  n.op = op;
  n.owned = std::move(value);
  if (recording_) {
    for (BasicVar<T> p : parents) {
      check_owned(p);
      n.requires_grad = n.requires_grad || p.requires_grad();
    }
    if (n.requires_grad) n.backward = std::move(fn);
  }
  return push(std::move(n));
}

template <typename T>
const BasicTensor<T>& BasicTape<T>::value(std::size_t id) const { return nodes_.at(id).value(); }

template <typename T>
std::span<T> BasicTape<T>::grad_of(BasicVar<T> v) {
  check_owned(v);
  Node& n = nodes_.at(v.id());
  if (n.grad.numel() != n.value().numel()) n.grad = BasicTensor<T>(n.value().shape());
  return n.grad.data();
}

template <typename T>
std::map<std::string, BasicTensor<T>> BasicTape<T>::backward(BasicVar<T> loss) {
  if (!loss.valid()) throw AutodiffError("backward on an unbound Var");
  check_owned(loss);
  if (!recording_) throw AutodiffError("backward on a tape that records no gradients");
  if (loss.value().numel() != 1) {
    throw AutodiffError("backward needs a single-element loss, got shape " + shape_string(loss.shape()));
  }
  for (Node& n : nodes_) n.grad = BasicTensor<T>();
  backward_visits_ = 0;

  grad_of(loss)[0] = T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.numel() == 0) continue;
    // The closure writes only into parents' grads, which precede this node.
    BasicTensor<T> g = std::move(n.grad);
    n.backward(*this, g);
    nodes_[i].grad = std::move(g);
    ++backward_visits_;
  }

  std::map<std::string, BasicTensor<T>> grads;
  for (const Node& n : nodes_) {
    if (!n.param) continue;
    if (n.grad.numel() == n.value().numel()) {
      grads[n.param->name] = n.grad;
    } else {
      grads[n.param->name] = BasicTensor<T>(n.value().shape());
    }
  }
  return grads;
}

template <typename T>
BasicTensor<T> BasicTape<T>::grad(BasicVar<T> v) const {
  check_owned(v);
  const Node& n = nodes_.at(v.id());
  if (n.grad.numel() == n.value().numel()) return n.grad;
  return BasicTensor<T>(n.value().shape());
}

template class BasicTape<float>;
template class BasicTape<double>;

// ---------------------------------------------------------------------------
// ops

namespace ops {

template <typename T>
V<T> conv2d(V<T> x, V<T> weight, V<T> bias, int stride, int padding) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 4, "conv2d: input must be NCHW, got " + shape_string(xs));
  require(ws.size() == 4, "conv2d: weight must be [out, in, kh, kw], got " + shape_string(ws));
  require(ws[1] == xs[1], "conv2d: weight expects " + std::to_string(ws[1]) + " input channels, input has " +
                              std::to_string(xs[1]));
  require(bias.shape() == Shape{ws[0]}, "conv2d: bias shape " + shape_string(bias.shape()));
  require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");

  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], ws[3], stride, padding, 0, 0};
  g.out_h = (g.height + 2 * padding - g.kh) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kw) / stride + 1;
  require(g.out_h > 0 && g.out_w > 0, "conv2d: kernel larger than padded input");

  const int plane = g.out_h * g.out_w;
  AlignedVector<T> col(static_cast<std::size_t>(g.k()) * g.n());
  im2col(g, x.value().ptr(), col.data());
  MatRM<T> out_cn = CMapRM<T>(weight.value().ptr(), g.out_ch, g.k()) * CMapRM<T>(col.data(), g.k(), g.n());
  const T* b = bias.value().ptr();
  for (int c = 0; c < g.out_ch; ++c) out_cn.row(c).array() += b[c];

  BasicTensor<T> out(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
  cn_to_nchw(out_cn.data(), out.ptr(), g.batch, g.out_ch, plane);

  return x.tape()->record("conv2d", std::move(out), {x, weight, bias}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    AlignedVector<T> go_cn(go.numel());
    nchw_to_cn(go.ptr(), go_cn.data(), g.batch, g.out_ch, plane);
    CMapRM<T> dO(go_cn.data(), g.out_ch, g.n());
    AlignedVector<T> cols(static_cast<std::size_t>(g.k()) * g.n());
    if (weight.requires_grad() || x.requires_grad()) im2col(g, x.value().ptr(), cols.data());
    if (weight.requires_grad()) {
      MapRM<T> dW(t.grad_of(weight).data(), g.out_ch, g.k());
      dW.noalias() += dO * CMapRM<T>(cols.data(), g.k(), g.n()).transpose();
    }
    if (bias.requires_grad()) {
      auto db = t.grad_of(bias);
      for (int c = 0; c < g.out_ch; ++c) db[c] += dO.row(c).sum();
    }
    if (x.requires_grad()) {
      MapRM<T> dcol(cols.data(), g.k(), g.n());
      dcol.noalias() = CMapRM<T>(weight.value().ptr(), g.out_ch, g.k()).transpose() * dO;
      col2im_add(g, cols.data(), t.grad_of(x).data());
    }
  });
}

template <typename T>
V<T> upsample_nearest(V<T> x, int factor) {
  const Shape& s = x.shape();
  require(s.size() == 4, "upsample_nearest: input must be NCHW, got " + shape_string(s));
  require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int planes = s[0] * s[1], h = s[2], w = s[3];
  const int oh = h * factor, ow = w * factor;
  BasicTensor<T> out(Shape{s[0], s[1], oh, ow});
  const T* in = x.value().ptr();
  T* o = out.ptr();
  for (int p = 0; p < planes; ++p)
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j)
        o[(static_cast<std::size_t>(p) * oh + i) * ow + j] = in[(static_cast<std::size_t>(p) * h + i / factor) * w + j / factor];

  return x.tape()->record("upsample_nearest", std::move(out), {x}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    auto dx = t.grad_of(x);
    const T* g = go.ptr();
    for (int p = 0; p < planes; ++p)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
          dx[(static_cast<std::size_t>(p) * h + i / factor) * w + j / factor] += g[(static_cast<std::size_t>(p) * oh + i) * ow + j];
  });
}

template <typename T>
V<T> linear(V<T> x, V<T> weight, V<T> bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 2, "linear: input must be [B, in], got " + shape_string(xs));
  require(ws.size() == 2 && ws[1] == xs[1], "linear: weight " + shape_string(ws) + " incompatible with input " +
                                                shape_string(xs));
  require(bias.shape() == Shape{ws[0]}, "linear: bias shape " + shape_string(bias.shape()));
  const int batch = xs[0], in = xs[1], outf = ws[0];
  BasicTensor<T> out(Shape{batch, outf});
  MapRM<T> o(out.ptr(), batch, outf);
  o.noalias() = CMapRM<T>(x.value().ptr(), batch, in) * CMapRM<T>(weight.value().ptr(), outf, in).transpose();
  o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().ptr(), outf);

  return x.tape()->record("linear", std::move(out), {x, weight, bias}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    CMapRM<T> dO(go.ptr(), batch, outf);
    if (x.requires_grad()) {
      MapRM<T> dx(t.grad_of(x).data(), batch, in);
      dx.noalias() += dO * CMapRM<T>(weight.value().ptr(), outf, in);
    }
    if (weight.requires_grad()) {
      MapRM<T> dW(t.grad_of(weight).data(), outf, in);
      dW.noalias() += dO.transpose() * CMapRM<T>(x.value().ptr(), batch, in);
    }
    if (bias.requires_grad()) {
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(t.grad_of(bias).data(), outf);
      db += dO.colwise().sum();
    }
  });
}

namespace {

// Elementwise op whose derivative is expressed through its output.
template <typename T, typename Fwd, typename DerivFromOut>
V<T> pointwise(const char* op, V<T> x, Fwd fwd, DerivFromOut deriv) {
  BasicTensor<T> out(x.shape());
  const auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(in[i]);
  BasicTape<T>* tape = x.tape();
  const std::size_t id = tape->size();
  return tape->record(op, std::move(out), {x}, [x, deriv, id](BasicTape<T>& t, const BasicTensor<T>& go) {
    const auto y = t.value(id).data();
    auto dx = t.grad_of(x);
    const auto g = go.data();
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * deriv(y[i]);
  });
}

}  // namespace

template <typename T>
V<T> relu(V<T> x) {
  // Subgradient 0 at the kink.
  return pointwise("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                   [](T y) { return y > T(0) ? T(1) : T(0); });
}

template <typename T>
V<T> tanh(V<T> x) {
  return pointwise("tanh", x, [](T v) { return std::tanh(v); }, [](T y) { return T(1) - y * y; });
}

template <typename T>
V<T> sigmoid(V<T> x) {
  return pointwise("sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                   [](T y) { return y * (T(1) - y); });
}

template <typename T>
V<T> softmax(V<T> logits) {
  const Shape& s = logits.shape();
  require(s.size() == 2, "softmax: expects [B, C], got " + shape_string(s));
  const int rows = s[0], cols = s[1];
  BasicTensor<T> out(s);
  const T* in = logits.value().ptr();
  T* o = out.ptr();
  for (int r = 0; r < rows; ++r) {
    const T* a = in + static_cast<std::size_t>(r) * cols;
    T* y = o + static_cast<std::size_t>(r) * cols;
    const T m = *std::max_element(a, a + cols);
    T z = T(0);
    for (int c = 0; c < cols; ++c) z += (y[c] = std::exp(a[c] - m));
    for (int c = 0; c < cols; ++c) y[c] /= z;
  }
  BasicTape<T>* tape = logits.tape();
  const std::size_t id = tape->size();
  return tape->record("softmax", std::move(out), {logits}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    const T* y = t.value(id).ptr();
    const T* g = go.ptr();
    auto dx = t.grad_of(logits);
    for (int r = 0; r < rows; ++r) {
      const std::size_t off = static_cast<std::size_t>(r) * cols;
      T dot = T(0);
      for (int c = 0; c < cols; ++c) dot += g[off + c] * y[off + c];
      for (int c = 0; c < cols; ++c) dx[off + c] += y[off + c] * (g[off + c] - dot);
    }
  });
}

template <typename T>
V<T> softmax_cross_entropy(V<T> logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  require(s.size() == 2, "softmax_cross_entropy: expects [B, C], got " + shape_string(s));
  const int rows = s[0], cols = s[1];
  require(static_cast<int>(labels.size()) == rows, "softmax_cross_entropy: label count mismatch");
  require(rows > 0, "softmax_cross_entropy: empty batch");
  AlignedVector<T> probs(static_cast<std::size_t>(rows) * cols);
  std::vector<int> ys(labels.begin(), labels.end());
  const T* in = logits.value().ptr();
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    require(ys[r] >= 0 && ys[r] < cols, "softmax_cross_entropy: label out of range");
    const T* a = in + static_cast<std::size_t>(r) * cols;
    T* p = probs.data() + static_cast<std::size_t>(r) * cols;
    const T m = *std::max_element(a, a + cols);
    T z = T(0);
    for (int c = 0; c < cols; ++c) z += (p[c] = std::exp(a[c] - m));
    for (int c = 0; c < cols; ++c) p[c] /= z;
    loss += -(static_cast<double>(a[ys[r]]) - m - std::log(static_cast<double>(z)));
  }
  return logits.tape()->record(
      "softmax_cross_entropy", BasicTensor<T>::scalar(static_cast<T>(loss / rows)), {logits},
      [=, probs = std::move(probs)](BasicTape<T>& t, const BasicTensor<T>& go) {
        const T g = go[0] / static_cast<T>(rows);
        auto dx = t.grad_of(logits);
        for (int r = 0; r < rows; ++r) {
          const std::size_t off = static_cast<std::size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) dx[off + c] += g * (probs[off + c] - (c == ys[r] ? T(1) : T(0)));
        }
      });
}

template <typename T>
V<T> add(V<T> a, V<T> b) {
  require_same_shape("add", a, b);
  BasicTensor<T> out(a.shape());
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return a.tape()->record("add", std::move(out), {a, b}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    const auto g = go.data();
    if (a.requires_grad()) {
      auto d = t.grad_of(a);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (b.requires_grad()) {
      auto d = t.grad_of(b);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

template <typename T>
V<T> sub(V<T> a, V<T> b) {
  require_same_shape("sub", a, b);
  BasicTensor<T> out(a.shape());
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  return a.tape()->record("sub", std::move(out), {a, b}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    const auto g = go.data();
    if (a.requires_grad()) {
      auto d = t.grad_of(a);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (b.requires_grad()) {
      auto d = t.grad_of(b);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

template <typename T>
V<T> mul(V<T> a, V<T> b) {
  require_same_shape("mul", a, b);
  BasicTensor<T> out(a.shape());
  const auto x = a.value().data(), y = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return a.tape()->record("mul", std::move(out), {a, b}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    const auto g = go.data();
    const auto av = a.value().data(), bv = b.value().data();
    if (a.requires_grad()) {
      auto d = t.grad_of(a);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto d = t.grad_of(b);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

template <typename T>
V<T> scale(V<T> x, std::type_identity_t<T> factor) {
  BasicTensor<T> out(x.shape());
  const auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * factor;
  return x.tape()->record("scale", std::move(out), {x}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    auto d = t.grad_of(x);
    const auto g = go.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
  });
}

template <typename T>
V<T> concat_channels(V<T> a, V<T> b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  require(as.size() == 4 && bs.size() == 4 && as[0] == bs[0] && as[2] == bs[2] && as[3] == bs[3],
          "concat_channels: incompatible shapes " + shape_string(as) + " and " + shape_string(bs));
  const int batch = as[0], ca = as[1], cb = bs[1], plane = as[2] * as[3];
  BasicTensor<T> out(Shape{batch, ca + cb, as[2], as[3]});
  const T* pa = a.value().ptr();
  const T* pb = b.value().ptr();
  T* o = out.ptr();
  const std::size_t na = static_cast<std::size_t>(ca) * plane, nb = static_cast<std::size_t>(cb) * plane;
  for (int n = 0; n < batch; ++n) {
    std::copy_n(pa + n * na, na, o + n * (na + nb));
    std::copy_n(pb + n * nb, nb, o + n * (na + nb) + na);
  }
  return a.tape()->record("concat_channels", std::move(out), {a, b}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    const T* g = go.ptr();
    if (a.requires_grad()) {
      auto d = t.grad_of(a);
      for (int n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < na; ++i) d[n * na + i] += g[n * (na + nb) + i];
    }
    if (b.requires_grad()) {
      auto d = t.grad_of(b);
      for (int n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < nb; ++i) d[n * nb + i] += g[n * (na + nb) + na + i];
    }
  });
}

template <typename T>
V<T> gather_channels(V<T> x, std::vector<int> channels) {
  const Shape& s = x.shape();
  require(s.size() == 4, "gather_channels: input must be NCHW, got " + shape_string(s));
  for (int c : channels) require(c >= 0 && c < s[1], "gather_channels: channel index out of range");
  const int batch = s[0], cin = s[1], plane = s[2] * s[3];
  const int cout = static_cast<int>(channels.size());
  BasicTensor<T> out(Shape{batch, cout, s[2], s[3]});
  const T* in = x.value().ptr();
  T* o = out.ptr();
  for (int n = 0; n < batch; ++n)
    for (int c = 0; c < cout; ++c)
      std::copy_n(in + (static_cast<std::size_t>(n) * cin + channels[c]) * plane, plane,
                  o + (static_cast<std::size_t>(n) * cout + c) * plane);
  return x.tape()->record("gather_channels", std::move(out), {x},
                          [=, channels = std::move(channels)](BasicTape<T>& t, const BasicTensor<T>& go) {
                            auto d = t.grad_of(x);
                            const T* g = go.ptr();
                            for (int n = 0; n < batch; ++n)
                              for (int c = 0; c < cout; ++c) {
                                T* dst = d.data() + (static_cast<std::size_t>(n) * cin + channels[c]) * plane;
                                const T* src = g + (static_cast<std::size_t>(n) * cout + c) * plane;
                                for (int p = 0; p < plane; ++p) dst[p] += src[p];
                              }
                          });
}

template <typename T>
V<T> reshape(V<T> x, Shape shape) {
  BasicTensor<T> out = x.value().reshaped(std::move(shape));
  return x.tape()->record("reshape", std::move(out), {x}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    auto d = t.grad_of(x);
    const auto g = go.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

template <typename T>
V<T> flatten(V<T> x) {
  const Shape& s = x.shape();
  require(!s.empty(), "flatten: rank-0 input");
  const int batch = s[0];
  const int rest = batch == 0 ? 0 : static_cast<int>(x.value().numel() / static_cast<std::size_t>(batch));
  return reshape(x, Shape{batch, rest});
}

template <typename T>
V<T> l2_norm_rows(V<T> x) {
  const Shape& s = x.shape();
  require(!s.empty(), "l2_norm_rows: rank-0 input");
  const int batch = s[0];
  const std::size_t per = batch == 0 ? 0 : x.value().numel() / static_cast<std::size_t>(batch);
  BasicTensor<T> out(Shape{batch});
  const T* in = x.value().ptr();
  for (int n = 0; n < batch; ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += static_cast<double>(in[n * per + i]) * in[n * per + i];
    out[n] = static_cast<T>(std::sqrt(acc));
  }
  BasicTape<T>* tape = x.tape();
  const std::size_t id = tape->size();
  return tape->record("l2_norm_rows", std::move(out), {x}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    const BasicTensor<T>& norms = t.value(id);
    const T* xv = x.value().ptr();
    auto d = t.grad_of(x);
    for (int n = 0; n < batch; ++n) {
      // Subgradient 0 at the origin.
      if (norms[n] == T(0)) continue;
      const T k = go[n] / norms[n];
      for (std::size_t i = 0; i < per; ++i) d[n * per + i] += k * xv[n * per + i];
    }
  });
}

template <typename T>
V<T> sum(V<T> x) {
  double acc = 0.0;
  for (T v : x.value().data()) acc += v;
  return x.tape()->record("sum", BasicTensor<T>::scalar(static_cast<T>(acc)), {x}, [=](BasicTape<T>& t, const BasicTensor<T>& go) {
    auto d = t.grad_of(x);
    for (T& v : d) v += go[0];
  });
}

template <typename T>
V<T> mean(V<T> x) {
  const std::size_t n = x.value().numel();
  require(n > 0, "mean: empty input");
  double acc = 0.0;
  for (T v : x.value().data()) acc += v;
  return x.tape()->record("mean", BasicTensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {x},
                          [=](BasicTape<T>& t, const BasicTensor<T>& go) {
                            auto d = t.grad_of(x);
                            const T g = go[0] / static_cast<T>(n);
                            for (T& v : d) v += g;
                          });
}

#define DIFATTACK_INSTANTIATE_OPS(T)                                                     \
  template V<T> conv2d(V<T>, V<T>, V<T>, int, int);                                    \
  template V<T> upsample_nearest(V<T>, int);                                           \
  template V<T> linear(V<T>, V<T>, V<T>);                                              \
  template V<T> relu(V<T>);                                                            \
  template V<T> tanh(V<T>);                                                            \
  template V<T> sigmoid(V<T>);                                                         \
  template V<T> softmax(V<T>);                                                         \
  template V<T> softmax_cross_entropy(V<T>, std::span<const int>);                     \
  template V<T> add(V<T>, V<T>);                                                       \
  template V<T> sub(V<T>, V<T>);                                                       \
  template V<T> mul(V<T>, V<T>);                                                       \
  template V<T> scale(V<T>, std::type_identity_t<T>);                                  \
  template V<T> concat_channels(V<T>, V<T>);                                           \
  template V<T> gather_channels(V<T>, std::vector<int>);                               \
  template V<T> reshape(V<T>, Shape);                                                  \
  template V<T> flatten(V<T>);                                                         \
  template V<T> l2_norm_rows(V<T>);                                                    \
  template V<T> sum(V<T>);                                                             \
  template V<T> mean(V<T>);

DIFATTACK_INSTANTIATE_OPS(float)
DIFATTACK_INSTANTIATE_OPS(double)
#undef DIFATTACK_INSTANTIATE_OPS

}  // namespace ops

}  // namespace difattack
