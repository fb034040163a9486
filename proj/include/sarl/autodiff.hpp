#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sarl/errors.hpp"

// Reverse-mode automatic differentiation over dense, row-major double arrays.
//
// Every operation appends a node to a Tape; Tape::backward walks the nodes in
// reverse recording order, so the tape is a valid topological order by
// construction. A tape supports exactly one backward pass.
namespace sarl::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

class Var {
 public:
  Var() = default;

  const Shape& shape() const;
  std::size_t numel() const;
  std::span<const double> value() const;
  // Empty until backward has reached this node.
  std::span<const double> grad() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Complex arrays travel as a (real, imaginary) pair of real arrays.
struct CVar {
  Var re;
  Var im;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Shape shape, std::vector<double> value);
  Var variable(Shape shape, std::vector<double> value);

  // Used by operation implementations.
  Var record(const char* op, Shape shape, std::vector<double> value, bool requires_grad,
             Backward backward);

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const double> value(std::size_t id) const { return nodes_[id].value; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op(std::size_t id) const { return nodes_[id].op; }

  // Gradient accumulator of an input node; empty span when the input does
  // not require a gradient.
  std::span<double> accumulator(std::size_t id);

 private:
  struct Node {
    const char* op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool check_finite_;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Operations. Inputs must live on the same tape.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double factor);
Var add_constant(Var a, std::span<const double> c);  // a + c, c has a's size

// (M x K) . (K x N)
Var matmul(Var a, Var b);
// x: P x in, weight: in x out, bias: out
Var linear(Var x, Var weight, Var bias);
Var relu(Var x);
Var reshape(Var x, Shape shape);
// Concatenate along the last axis; leading dimensions must agree.
Var concat_last(Var a, Var b);
// Insert a new axis at `axis` holding `count` copies (backward sums them).
Var repeat_axis(Var x, std::size_t axis, std::size_t count);
// Select index `at` of axis `axis`, dropping that axis.
Var take(Var x, std::size_t axis, std::size_t at);

// x: D0 x D1 x D2 x Cin, weight: k x k x k x Cin x Cout, bias: Cout.
// Stride 1, zero padding (k-1)/2 on every spatial axis; k in {1, 3}.
Var conv3d(Var x, Var weight, Var bias);

// fmap: H x W x Z x C. Samples plane `slice` bilinearly at normalized
// coordinates (P x 2, pixel-center convention, clamped to the lattice).
// Result: P x C.
Var bilinear_sample(Var fmap, std::span<const double> coords, std::size_t slice);

// 2-D DFT over the two leading axes of H x W x C arrays (unnormalized
// forward, 1/(HW) inverse). Backward applies the adjoint transform.
CVar fft2(CVar x);
CVar ifft2(CVar x);
// Wrap a real array as complex with a constant zero imaginary part.
CVar complex_from_real(Var re);

// Centered spectrum crop (H2 x W2 x C -> H1 x W1 x C) and embed, with the
// same Nyquist convention and scaling as sampling::spectral_crop/embed.
CVar spectral_crop(CVar x, std::size_t h1, std::size_t w1, double factor);
CVar spectral_embed(CVar x, std::size_t h2, std::size_t w2, double factor);

// Packed periodic db4 transform of every channel of an H x W x C array.
Var dwt2(Var x, std::size_t levels);

Var sum(Var x);
Var mean(Var x);
// mean |x - target|
Var l1_loss(Var x, std::span<const double> target);
// sum w_i |x_i - target_i|
Var weighted_l1(Var x, std::span<const double> target, std::span<const double> weights);
// sum w_i x_i
Var weighted_sum(Var x, std::span<const double> weights);

}  // namespace sarl::ad
