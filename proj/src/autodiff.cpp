#include "sarl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Core>

#include "sarl/core.hpp"
#include "sarl/fft.hpp"
#include "sarl/sampling.hpp"
#include "sarl/wavelet.hpp"

namespace sarl::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using Eigen::Index;

Index ix(std::size_t v) { return static_cast<Index>(v); }

Tape& same_tape(Var a, Var b) {
  if (!a.valid() || !b.valid()) throw UsageError("operation on an unbound variable");
  if (a.tape() != b.tape()) throw UsageError("operands recorded on different tapes");
  return *a.tape();
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw UsageError("operation on an unbound variable");
  return *a.tape();
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape())
    throw UsageError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

struct Hwc {
  std::size_t h, w, c;
};

Hwc as_hwc(const char* op, const Shape& s) {
  if (s.size() == 2) return {s[0], s[1], 1};
  if (s.size() == 3) return {s[0], s[1], s[2]};
  throw UsageError(std::string(op) + ": expected H x W or H x W x C, got " + shape_str(s));
}

Shape with_hw(const Shape& s, std::size_t h, std::size_t w) {
  Shape out = s;
  out[0] = h;
  out[1] = w;
  return out;
}

std::vector<double> to_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

void axpy(std::span<double> dst, std::span<const double> src, double a = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
}

// Real-coefficient spectral maps applied to one real component.
std::vector<double> crop_real(std::span<const double> x, Hwc in, std::size_t h1, std::size_t w1,
                              double factor) {
  const auto z = fft::to_complex(x);
  return fft::real_part(sampling::spectral_crop(z, in.h, in.w, in.c, h1, w1, factor));
}

std::vector<double> embed_real(std::span<const double> x, Hwc in, std::size_t h2, std::size_t w2,
                               double factor) {
  const auto z = fft::to_complex(x);
  return fft::real_part(sampling::spectral_embed(z, in.h, in.w, in.c, h2, w2, factor));
}

Var crop_component(Var x, std::size_t h1, std::size_t w1, double factor) {
  Tape& t = tape_of(x);
  const Hwc in = as_hwc("spectral_crop", x.shape());
  if (h1 > in.h || w1 > in.w) throw UsageError("spectral_crop: target larger than input");
  const std::size_t xid = x.id();
  return t.record("spectral_crop", with_hw(x.shape(), h1, w1), crop_real(x.value(), in, h1, w1, factor),
                  x.requires_grad(), [xid, in, h1, w1, factor](Tape& tp, std::size_t self) {
                    auto acc = tp.accumulator(xid);
                    if (acc.empty()) return;
                    axpy(acc, embed_real(tp.grad(self), {h1, w1, in.c}, in.h, in.w, factor));
                  });
}

Var embed_component(Var x, std::size_t h2, std::size_t w2, double factor) {
  Tape& t = tape_of(x);
  const Hwc in = as_hwc("spectral_embed", x.shape());
  if (h2 < in.h || w2 < in.w) throw UsageError("spectral_embed: target smaller than input");
  const std::size_t xid = x.id();
  return t.record("spectral_embed", with_hw(x.shape(), h2, w2),
                  embed_real(x.value(), in, h2, w2, factor), x.requires_grad(),
                  [xid, in, h2, w2, factor](Tape& tp, std::size_t self) {
                    auto acc = tp.accumulator(xid);
                    if (acc.empty()) return;
                    axpy(acc, crop_real(tp.grad(self), {h2, w2, in.c}, in.h, in.w, factor));
                  });
}

// Shared implementation of fft2/ifft2. `inverse` selects the transform; the
// backward pass applies its adjoint: F^H = HW * ifft, (ifft)^H = fft / HW.
CVar dft2(CVar x, bool inverse) {
  Tape& t = same_tape(x.re, x.im);
  require_same_shape(inverse ? "ifft2" : "fft2", x.re, x.im);
  const Hwc d = as_hwc(inverse ? "ifft2" : "fft2", x.re.shape());
  auto z = fft::to_complex(x.re.value(), x.im.value());
  if (inverse)
    fft::inverse2(z, d.h, d.w, d.c);
  else
    fft::forward2(z, d.h, d.w, d.c);

  const std::size_t rid = x.re.id(), iid = x.im.id();
  const bool rg = x.re.requires_grad() || x.im.requires_grad();
  const double hw = static_cast<double>(d.h * d.w);
  auto adjoint = [d, inverse, hw](std::vector<fft::cplx>& g) {
    if (inverse) {
      fft::forward2(g, d.h, d.w, d.c);
      for (auto& v : g) v /= hw;
    } else {
      fft::inverse2(g, d.h, d.w, d.c);
      for (auto& v : g) v *= hw;
    }
  };
  auto make_backward = [rid, iid, adjoint](bool imag_output) {
    return [rid, iid, adjoint, imag_output](Tape& tp, std::size_t self) {
      const auto up = tp.grad(self);
      std::vector<fft::cplx> g(up.size());
      for (std::size_t i = 0; i < up.size(); ++i)
        g[i] = imag_output ? fft::cplx(0.0, up[i]) : fft::cplx(up[i], 0.0);
      adjoint(g);
      if (auto acc = tp.accumulator(rid); !acc.empty())
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i].real();
      if (auto acc = tp.accumulator(iid); !acc.empty())
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i].imag();
    };
  };
  const char* name = inverse ? "ifft2" : "fft2";
  Var re = t.record(name, x.re.shape(), fft::real_part(z), rg, make_backward(false));
  Var im = t.record(name, x.re.shape(), fft::imag_part(z), rg, make_backward(true));
  return {re, im};
}

}  // namespace

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream o;
  o << '[';
  for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "x" : "") << s[i];
  o << ']';
  return o.str();
}

const Shape& Var::shape() const { return tape_->shape(id_); }
std::size_t Var::numel() const { return tape_->value(id_).size(); }
std::span<const double> Var::value() const { return tape_->value(id_); }
std::span<const double> Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Shape shape, std::vector<double> value) {
  return record("constant", std::move(shape), std::move(value), false, nullptr);
}

Var Tape::variable(Shape shape, std::vector<double> value) {
  return record("variable", std::move(shape), std::move(value), true, nullptr);
}

Var Tape::record(const char* op, Shape shape, std::vector<double> value, bool requires_grad,
                 Backward backward) {
  if (consumed_) throw UsageError("tape already consumed by backward()");
  if (numel(shape) != value.size())
    throw UsageError(std::string(op) + ": value size does not match shape " + shape_str(shape));
  if (check_finite_) {
    for (double v : value)
      if (!std::isfinite(v))
        throw NumericalError(std::string("non-finite value produced by op '") + op +
                             "' at tape node " + std::to_string(nodes_.size()));
  }
  nodes_.push_back({op, std::move(shape), std::move(value), {}, requires_grad,
                    requires_grad ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::accumulator(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw UsageError("backward: loss is not recorded on this tape");
  if (consumed_) throw UsageError("backward: tape already consumed");
  if (loss.numel() != 1)
    throw UsageError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  consumed_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  accumulator(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("add", a, b);
  std::vector<double> v = to_vec(a.value());
  axpy(v, b.value());
  const std::size_t ai = a.id(), bi = b.id();
  return t.record("add", a.shape(), std::move(v), a.requires_grad() || b.requires_grad(),
                  [ai, bi](Tape& tp, std::size_t self) {
                    const auto g = tp.grad(self);
                    if (auto acc = tp.accumulator(ai); !acc.empty()) axpy(acc, g);
                    if (auto acc = tp.accumulator(bi); !acc.empty()) axpy(acc, g);
                  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("sub", a, b);
  std::vector<double> v = to_vec(a.value());
  axpy(v, b.value(), -1.0);
  const std::size_t ai = a.id(), bi = b.id();
  return t.record("sub", a.shape(), std::move(v), a.requires_grad() || b.requires_grad(),
                  [ai, bi](Tape& tp, std::size_t self) {
                    const auto g = tp.grad(self);
                    if (auto acc = tp.accumulator(ai); !acc.empty()) axpy(acc, g);
                    if (auto acc = tp.accumulator(bi); !acc.empty()) axpy(acc, g, -1.0);
                  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  require_same_shape("mul", a, b);
  const auto av = a.value(), bv = b.value();
  std::vector<double> v(av.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = av[i] * bv[i];
  const std::size_t ai = a.id(), bi = b.id();
  return t.record("mul", a.shape(), std::move(v), a.requires_grad() || b.requires_grad(),
                  [ai, bi](Tape& tp, std::size_t self) {
                    const auto g = tp.grad(self);
                    const auto av = tp.value(ai), bv = tp.value(bi);
                    if (auto acc = tp.accumulator(ai); !acc.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * bv[i];
                    if (auto acc = tp.accumulator(bi); !acc.empty())
                      for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * av[i];
                  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  std::vector<double> v = to_vec(a.value());
  for (double& x : v) x *= factor;
  const std::size_t ai = a.id();
  return t.record("scale", a.shape(), std::move(v), a.requires_grad(),
                  [ai, factor](Tape& tp, std::size_t self) {
                    if (auto acc = tp.accumulator(ai); !acc.empty()) axpy(acc, tp.grad(self), factor);
                  });
}

Var add_constant(Var a, std::span<const double> c) {
  Tape& t = tape_of(a);
  if (c.size() != a.numel()) throw UsageError("add_constant: size mismatch");
  std::vector<double> v = to_vec(a.value());
  axpy(v, c);
  const std::size_t ai = a.id();
  return t.record("add_constant", a.shape(), std::move(v), a.requires_grad(),
                  [ai](Tape& tp, std::size_t self) {
                    if (auto acc = tp.accumulator(ai); !acc.empty()) axpy(acc, tp.grad(self));
                  });
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw UsageError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> v(m * n);
  MapMat(v.data(), ix(m), ix(n)).noalias() =
      MapConstMat(a.value().data(), ix(m), ix(k)) * MapConstMat(b.value().data(), ix(k), ix(n));
  const std::size_t ai = a.id(), bi = b.id();
  return t.record("matmul", {m, n}, std::move(v), a.requires_grad() || b.requires_grad(),
                  [ai, bi, m, k, n](Tape& tp, std::size_t self) {
                    MapConstMat g(tp.grad(self).data(), ix(m), ix(n));
                    if (auto acc = tp.accumulator(ai); !acc.empty())
                      MapMat(acc.data(), ix(m), ix(k)).noalias() +=
                          g * MapConstMat(tp.value(bi).data(), ix(k), ix(n)).transpose();
                    if (auto acc = tp.accumulator(bi); !acc.empty())
                      MapMat(acc.data(), ix(k), ix(n)).noalias() +=
                          MapConstMat(tp.value(ai).data(), ix(m), ix(k)).transpose() * g;
                  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = same_tape(x, weight);
  same_tape(x, bias);
  if (x.shape().size() != 2 || weight.shape().size() != 2 || bias.shape().size() != 1 ||
      x.shape()[1] != weight.shape()[0] || weight.shape()[1] != bias.shape()[0])
    throw UsageError("linear: incompatible shapes " + shape_str(x.shape()) + ", " +
                     shape_str(weight.shape()) + ", " + shape_str(bias.shape()));
  const std::size_t p = x.shape()[0], in = x.shape()[1], out = weight.shape()[1];
  std::vector<double> v(p * out);
  MapMat y(v.data(), ix(p), ix(out));
  y.noalias() = MapConstMat(x.value().data(), ix(p), ix(in)) *
                MapConstMat(weight.value().data(), ix(in), ix(out));
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), ix(out));
  const std::size_t xi = x.id(), wi = weight.id(), bi = bias.id();
  const bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  return t.record("linear", {p, out}, std::move(v), rg,
                  [xi, wi, bi, p, in, out](Tape& tp, std::size_t self) {
                    MapConstMat g(tp.grad(self).data(), ix(p), ix(out));
                    if (auto acc = tp.accumulator(xi); !acc.empty())
                      MapMat(acc.data(), ix(p), ix(in)).noalias() +=
                          g * MapConstMat(tp.value(wi).data(), ix(in), ix(out)).transpose();
                    if (auto acc = tp.accumulator(wi); !acc.empty())
                      MapMat(acc.data(), ix(in), ix(out)).noalias() +=
                          MapConstMat(tp.value(xi).data(), ix(p), ix(in)).transpose() * g;
                    if (auto acc = tp.accumulator(bi); !acc.empty())
                      Eigen::Map<Eigen::RowVectorXd>(acc.data(), ix(out)) += g.colwise().sum();
                  });
}

Var relu(Var x) {
  Tape& t = tape_of(x);
  std::vector<double> v = to_vec(x.value());
  for (double& e : v) e = e > 0.0 ? e : 0.0;
  const std::size_t xi = x.id();
  return t.record("relu", x.shape(), std::move(v), x.requires_grad(),
                  [xi](Tape& tp, std::size_t self) {
                    auto acc = tp.accumulator(xi);
                    const auto g = tp.grad(self);
                    const auto xv = tp.value(xi);
                    for (std::size_t i = 0; i < g.size(); ++i)
                      if (xv[i] > 0.0) acc[i] += g[i];
                  });
}

Var reshape(Var x, Shape shape) {
  Tape& t = tape_of(x);
  if (numel(shape) != x.numel())
    throw UsageError("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
  const std::size_t xi = x.id();
  return t.record("reshape", std::move(shape), to_vec(x.value()), x.requires_grad(),
                  [xi](Tape& tp, std::size_t self) { axpy(tp.accumulator(xi), tp.grad(self)); });
}

Var concat_last(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin()))
    throw UsageError("concat_last: incompatible shapes " + shape_str(sa) + " and " +
                     shape_str(sb));
  const std::size_t na = sa.back(), nb = sb.back(), rows = a.numel() / na;
  Shape so = sa;
  so.back() = na + nb;
  std::vector<double> v(rows * (na + nb));
  const auto av = a.value(), bv = b.value();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(r * na), na, v.begin() + static_cast<std::ptrdiff_t>(r * (na + nb)));
    std::copy_n(bv.begin() + static_cast<std::ptrdiff_t>(r * nb), nb,
                v.begin() + static_cast<std::ptrdiff_t>(r * (na + nb) + na));
  }
  const std::size_t ai = a.id(), bi = b.id();
  return t.record("concat_last", std::move(so), std::move(v),
                  a.requires_grad() || b.requires_grad(),
                  [ai, bi, na, nb, rows](Tape& tp, std::size_t self) {
                    const auto g = tp.grad(self);
                    auto ga = tp.accumulator(ai);
                    auto gb = tp.accumulator(bi);
                    for (std::size_t r = 0; r < rows; ++r) {
                      if (!ga.empty())
                        for (std::size_t j = 0; j < na; ++j) ga[r * na + j] += g[r * (na + nb) + j];
                      if (!gb.empty())
                        for (std::size_t j = 0; j < nb; ++j)
                          gb[r * nb + j] += g[r * (na + nb) + na + j];
                    }
                  });
}

Var repeat_axis(Var x, std::size_t axis, std::size_t count) {
  Tape& t = tape_of(x);
  const Shape& s = x.shape();
  if (axis > s.size() || count == 0) throw UsageError("repeat_axis: bad axis or count");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis; i < s.size(); ++i) inner *= s[i];
  Shape so = s;
  so.insert(so.begin() + static_cast<std::ptrdiff_t>(axis), count);
  std::vector<double> v(outer * count * inner);
  const auto xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < count; ++r)
      std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  v.begin() + static_cast<std::ptrdiff_t>((o * count + r) * inner));
  const std::size_t xi = x.id();
  return t.record("repeat_axis", std::move(so), std::move(v), x.requires_grad(),
                  [xi, outer, count, inner](Tape& tp, std::size_t self) {
                    const auto g = tp.grad(self);
                    auto acc = tp.accumulator(xi);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t r = 0; r < count; ++r)
                        for (std::size_t i = 0; i < inner; ++i)
                          acc[o * inner + i] += g[(o * count + r) * inner + i];
                  });
}

Var take(Var x, std::size_t axis, std::size_t at) {
  Tape& t = tape_of(x);
  const Shape& s = x.shape();
  if (axis >= s.size() || at >= s[axis]) throw UsageError("take: axis or index out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Shape so = s;
  so.erase(so.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> v(outer * inner);
  const auto xv = x.value();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * n + at) * inner), inner,
                v.begin() + static_cast<std::ptrdiff_t>(o * inner));
  const std::size_t xi = x.id();
  return t.record("take", std::move(so), std::move(v), x.requires_grad(),
                  [xi, outer, inner, n, at](Tape& tp, std::size_t self) {
                    const auto g = tp.grad(self);
                    auto acc = tp.accumulator(xi);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t i = 0; i < inner; ++i)
                        acc[(o * n + at) * inner + i] += g[o * inner + i];
                  });
}

Var conv3d(Var x, Var weight, Var bias) {
  Tape& t = same_tape(x, weight);
  same_tape(x, bias);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 5 || bias.shape().size() != 1)
    throw UsageError("conv3d: expected x[D0,D1,D2,C], w[k,k,k,Cin,Cout], b[Cout]");
  const std::size_t k = ws[0];
  if ((k != 1 && k != 3) || ws[1] != k || ws[2] != k)
    throw UsageError("conv3d: kernel must be 1x1x1 or 3x3x3");
  const std::size_t cin = ws[3], cout = ws[4];
  if (xs[3] != cin || bias.shape()[0] != cout)
    throw UsageError("conv3d: channel mismatch, x " + shape_str(xs) + " w " + shape_str(ws));
  const std::size_t d0 = xs[0], d1 = xs[1], d2 = xs[2];
  const std::size_t p = d0 * d1 * d2;
  const std::size_t kk = k * k * k * cin;

  // im2col: row = output voxel, column = (kernel offset, input channel).
  std::vector<double> cols;
  const auto xv = x.value();
  if (k == 3) {
    cols.assign(p * kk, 0.0);
    const long n0 = static_cast<long>(d0), n1 = static_cast<long>(d1), n2 = static_cast<long>(d2);
    for (long i = 0; i < n0; ++i)
      for (long j = 0; j < n1; ++j)
        for (long l = 0; l < n2; ++l) {
          double* row = &cols[static_cast<std::size_t>((i * n1 + j) * n2 + l) * kk];
          std::size_t off = 0;
          for (long a = -1; a <= 1; ++a)
            for (long b = -1; b <= 1; ++b)
              for (long c = -1; c <= 1; ++c, off += cin) {
                const long ii = i + a, jj = j + b, ll = l + c;
                if (ii < 0 || ii >= n0 || jj < 0 || jj >= n1 || ll < 0 || ll >= n2) continue;
                const double* src = &xv[static_cast<std::size_t>((ii * n1 + jj) * n2 + ll) * cin];
                std::copy_n(src, cin, row + off);
              }
        }
  }
  const double* colp = k == 3 ? cols.data() : xv.data();

  std::vector<double> v(p * cout);
  MapMat y(v.data(), ix(p), ix(cout));
  y.noalias() = MapConstMat(colp, ix(p), ix(kk)) * MapConstMat(weight.value().data(), ix(kk), ix(cout));
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), ix(cout));

  const std::size_t xi = x.id(), wi = weight.id(), bi = bias.id();
  const bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  return t.record(
      "conv3d", {d0, d1, d2, cout}, std::move(v), rg,
      [xi, wi, bi, k, cin, cout, d0, d1, d2, p, kk, cols = std::move(cols)](Tape& tp,
                                                                          std::size_t self) {
        MapConstMat g(tp.grad(self).data(), ix(p), ix(cout));
        const double* colp = k == 3 ? cols.data() : tp.value(xi).data();
        if (auto acc = tp.accumulator(wi); !acc.empty())
          MapMat(acc.data(), ix(kk), ix(cout)).noalias() +=
              MapConstMat(colp, ix(p), ix(kk)).transpose() * g;
        if (auto acc = tp.accumulator(bi); !acc.empty())
          Eigen::Map<Eigen::RowVectorXd>(acc.data(), ix(cout)) += g.colwise().sum();
        auto gx = tp.accumulator(xi);
        if (gx.empty()) return;
        const MapConstMat w(tp.value(wi).data(), ix(kk), ix(cout));
        if (k == 1) {
          MapMat(gx.data(), ix(p), ix(cin)).noalias() += g * w.transpose();
          return;
        }
        RowMat gcols = g * w.transpose();
        const long n0 = static_cast<long>(d0), n1 = static_cast<long>(d1), n2 = static_cast<long>(d2);
        for (long i = 0; i < n0; ++i)
          for (long j = 0; j < n1; ++j)
            for (long l = 0; l < n2; ++l) {
              const double* row = gcols.data() + static_cast<std::size_t>((i * n1 + j) * n2 + l) * kk;
              std::size_t off = 0;
              for (long a = -1; a <= 1; ++a)
                for (long b = -1; b <= 1; ++b)
                  for (long c = -1; c <= 1; ++c, off += cin) {
                    const long ii = i + a, jj = j + b, ll = l + c;
                    if (ii < 0 || ii >= n0 || jj < 0 || jj >= n1 || ll < 0 || ll >= n2) continue;
                    double* dst = &gx[static_cast<std::size_t>((ii * n1 + jj) * n2 + ll) * cin];
                    for (std::size_t ch = 0; ch < cin; ++ch) dst[ch] += row[off + ch];
                  }
            }
      });
}

Var bilinear_sample(Var fmap, std::span<const double> coords, std::size_t slice) {
  Tape& t = tape_of(fmap);
  const Shape& s = fmap.shape();
  if (s.size() != 4) throw UsageError("bilinear_sample: feature map must be H x W x Z x C");
  if (coords.size() % 2 != 0) throw UsageError("bilinear_sample: coordinates must be P x 2");
  const std::size_t h = s[0], w = s[1], z = s[2], c = s[3];
  if (slice >= z) throw UsageError("bilinear_sample: slice out of range");
  const std::size_t p = coords.size() / 2;

  struct Tap {
    std::size_t idx[4];
    double wt[4];
  };
  auto axis = [](double coord, std::size_t n, std::size_t& i0, double& frac) {
    double u = std::clamp(coord_to_index(coord, n), 0.0, static_cast<double>(n - 1));
    if (n == 1) {
      i0 = 0;
      frac = 0.0;
      return;
    }
    i0 = std::min(static_cast<std::size_t>(std::floor(u)), n - 2);
    frac = u - static_cast<double>(i0);
  };
  std::vector<Tap> taps(p);
  for (std::size_t q = 0; q < p; ++q) {
    std::size_t i0, j0;
    double fy, fx;
    axis(coords[2 * q], h, i0, fy);
    axis(coords[2 * q + 1], w, j0, fx);
    const std::size_t i1 = std::min(i0 + 1, h - 1), j1 = std::min(j0 + 1, w - 1);
    auto at = [&](std::size_t i, std::size_t j) { return ((i * w + j) * z + slice) * c; };
    taps[q] = {{at(i0, j0), at(i0, j1), at(i1, j0), at(i1, j1)},
               {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx}};
  }
  std::vector<double> v(p * c, 0.0);
  const auto fv = fmap.value();
  for (std::size_t q = 0; q < p; ++q)
    for (int n = 0; n < 4; ++n) {
      const double wt = taps[q].wt[n];
      if (wt == 0.0) continue;
      const double* src = &fv[taps[q].idx[n]];
      for (std::size_t ch = 0; ch < c; ++ch) v[q * c + ch] += wt * src[ch];
    }
  const std::size_t fi = fmap.id();
  return t.record("bilinear_sample", {p, c}, std::move(v), fmap.requires_grad(),
                  [fi, c, taps = std::move(taps)](Tape& tp, std::size_t self) {
                    const auto g = tp.grad(self);
                    auto acc = tp.accumulator(fi);
                    for (std::size_t q = 0; q < taps.size(); ++q)
                      for (int n = 0; n < 4; ++n) {
                        const double wt = taps[q].wt[n];
                        if (wt == 0.0) continue;
                        double* dst = &acc[taps[q].idx[n]];
                        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += wt * g[q * c + ch];
                      }
                  });
}

CVar fft2(CVar x) { return dft2(x, false); }
CVar ifft2(CVar x) { return dft2(x, true); }

CVar complex_from_real(Var re) {
  Tape& t = tape_of(re);
  return {re, t.constant(re.shape(), std::vector<double>(re.numel(), 0.0))};
}

CVar spectral_crop(CVar x, std::size_t h1, std::size_t w1, double factor) {
  return {crop_component(x.re, h1, w1, factor), crop_component(x.im, h1, w1, factor)};
}

CVar spectral_embed(CVar x, std::size_t h2, std::size_t w2, double factor) {
  return {embed_component(x.re, h2, w2, factor), embed_component(x.im, h2, w2, factor)};
}

Var dwt2(Var x, std::size_t levels) {
  Tape& t = tape_of(x);
  const Hwc d = as_hwc("dwt2", x.shape());
  const std::size_t xi = x.id();
  return t.record("dwt2", x.shape(), wavelet::dwt2_packed(x.value(), d.h, d.w, d.c, levels),
                  x.requires_grad(), [xi, d, levels](Tape& tp, std::size_t self) {
                    axpy(tp.accumulator(xi),
                         wavelet::idwt2_packed(tp.grad(self), d.h, d.w, d.c, levels));
                  });
}

Var sum(Var x) {
  Tape& t = tape_of(x);
  double s = 0.0;
  for (double v : x.value()) s += v;
  const std::size_t xi = x.id();
  return t.record("sum", {1}, {s}, x.requires_grad(), [xi](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (double& a : tp.accumulator(xi)) a += g;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Var l1_loss(Var x, std::span<const double> target) {
  const std::vector<double> wts(x.numel(), 1.0 / static_cast<double>(x.numel()));
  return weighted_l1(x, target, wts);
}

Var weighted_l1(Var x, std::span<const double> target, std::span<const double> weights) {
  Tape& t = tape_of(x);
  if (target.size() != x.numel() || weights.size() != x.numel())
    throw UsageError("weighted_l1: target/weight size does not match input");
  const auto xv = x.value();
  double s = 0.0;
  std::vector<double> dir(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = xv[i] - target[i];
    s += weights[i] * std::abs(d);
    dir[i] = d > 0.0 ? weights[i] : (d < 0.0 ? -weights[i] : 0.0);
  }
  const std::size_t xi = x.id();
  return t.record("weighted_l1", {1}, {s}, x.requires_grad(),
                  [xi, dir = std::move(dir)](Tape& tp, std::size_t self) {
                    axpy(tp.accumulator(xi), dir, tp.grad(self)[0]);
                  });
}

Var weighted_sum(Var x, std::span<const double> weights) {
  Tape& t = tape_of(x);
  if (weights.size() != x.numel()) throw UsageError("weighted_sum: size mismatch");
  double s = 0.0;
  const auto xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) s += weights[i] * xv[i];
  const std::size_t xi = x.id();
  return t.record("weighted_sum", {1}, {s}, x.requires_grad(),
                  [xi, w = to_vec(weights)](Tape& tp, std::size_t self) {
                    axpy(tp.accumulator(xi), w, tp.grad(self)[0]);
                  });
}

}  // namespace sarl::ad
