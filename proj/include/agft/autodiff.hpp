#pragma once

// Tape-based reverse-mode differentiation over dense double tensors.
//
// A Tape records every operation of one forward pass in insertion order.
// grad() walks the tape backwards exactly once, summing the contributions of
// all consumers of a node. A Tape is confined to one thread and is not reused
// across batches: build a fresh one per forward pass.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "agft/tensor.hpp"

namespace agft {

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  // Accumulates `upstream` (the gradient of this node's output) into the
  // gradient buffers of the node's inputs.
  using Backward = std::function<void(Tape& tape, std::span<const double> upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var leaf(Tensor value, std::string name = {});
  // Input that never receives a gradient.
  Var constant(Tensor value);

  Var record(Tensor value, std::vector<std::size_t> inputs, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& name(std::size_t id) const { return nodes_.at(id).name; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // Gradient buffer of node `id`, allocated (zeroed) on first use.
  std::span<double> grad_buffer(std::size_t id);

  void reset();

 private:
  friend std::vector<Tensor> grad(Var loss, std::span<const Var> wrt);

  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    Backward backward;
    bool requires_grad = false;
    std::string name;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// d(loss)/d(w) for every w in `wrt`. `loss` must have shape []. The tape is
// consumed: a second call on the same tape throws. A `wrt` node that the
// loss does not depend on gets a zero gradient; a node from another tape (or
// recorded after the loss) is an error naming it.
std::vector<Tensor> grad(Var loss, std::span<const Var> wrt);
inline std::vector<Tensor> grad(Var loss, std::initializer_list<Var> wrt) {
  return grad(loss, std::span<const Var>(wrt.begin(), wrt.size()));
}

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double h);

// ---- operations -----------------------------------------------------------

Var matmul(Var a, Var b);  // [n, k] x [k, m]
Var transpose(Var a);      // rank 2
Var add(Var a, Var b);     // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);           // elementwise
Var add_bias(Var a, Var bias);   // [n, m] + [m], bias added to every row
Var scale(Var a, double factor);
Var add_scalar(Var a, double value);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sum(Var a);   // -> []
Var mean(Var a);  // -> []

// Divides each row by (its l2 norm + epsilon).
inline constexpr double kNormEpsilon = 1e-12;
Var row_l2_normalize(Var a);

// Row-wise log-softmax with max subtraction.
Var log_softmax_rows(Var logits);

// out[i] = a[i, index[i]].
Var pick(Var a, std::span<const std::size_t> index);
// out[i] = max over j != index[i] of a[i, j]; lowest j wins ties.
Var row_max_except(Var a, std::span<const std::size_t> index);

// out[i, c] = a[i, source[c]] when source[c] >= 0, else 0.
Var remap_columns(Var a, std::span<const std::ptrdiff_t> source);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return scale(a, -1.0); }

// Plain matrix product on values, shared by the forward passes.
void matmul_into(std::span<const double> a, std::span<const double> b, std::span<double> out,
                 std::size_t n, std::size_t k, std::size_t m);

}  // namespace agft
