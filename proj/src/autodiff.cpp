#include "agft/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "agft/error.hpp"

namespace agft {

const Tensor& Var::value() const {
  if (tape == nullptr) throw ContractViolation("use of an unbound Var");
  return tape->value(id);
}

Var Tape::leaf(Tensor value, std::string name) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, true, std::move(name)});
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs, Backward backward) {
  bool needs = false;
  for (std::size_t in : inputs) needs = needs || nodes_.at(in).requires_grad;
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{std::move(value), {}, std::move(inputs), std::move(backward), needs, {}});
  return Var{this, nodes_.size() - 1};
}

std::span<double> Tape::grad_buffer(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

std::vector<Tensor> grad(Var loss, std::span<const Var> wrt) {
  if (loss.tape == nullptr) throw ContractViolation("grad of an unbound Var");
  Tape& tape = *loss.tape;
  if (tape.consumed_) throw ContractViolation("tape already consumed by a previous grad()");
  const Tensor& lv = tape.value(loss.id);
  if (lv.rank() != 0) {
    throw ContractViolation("grad() needs a scalar loss of shape [], got " +
                            shape_string(lv.shape()));
  }
  for (const Var& w : wrt) {
    if (w.tape != loss.tape || w.id > loss.id) {
      std::string label = (w.tape != nullptr && w.id < w.tape->size() && !w.tape->name(w.id).empty())
                              ? "'" + w.tape->name(w.id) + "'"
                              : "#" + std::to_string(w.id);
      throw ContractViolation("tensor " + label + " is not part of the graph producing the loss");
    }
  }

  if (tape.nodes_[loss.id].requires_grad) {
    tape.grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Tape::Node& node = tape.nodes_[id];
      if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
      node.backward(tape, node.grad);
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& w : wrt) {
    const Tape::Node& node = tape.nodes_[w.id];
    if (node.grad.empty()) {
      out.emplace_back(node.value.shape(), 0.0);
    } else {
      out.emplace_back(node.value.shape(), node.grad);
    }
  }
  tape.consumed_ = true;
  return out;
}

Tensor finite_difference_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                              double h) {
  if (!(h > 0.0)) throw ContractViolation("finite difference step must be positive");
  Tensor out(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericalError("finite_difference_grad: function returned a non-finite value at "
                           "coordinate " + std::to_string(i));
    }
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

void matmul_into(std::span<const double> a, std::span<const double> b, std::span<double> out,
                 std::size_t n, std::size_t k, std::size_t m) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    const double* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
}

namespace {

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw ContractViolation(std::string(op) + ": operands live on different tapes");
  }
}

void require_same_shape(Var a, Var b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
  }
}

void require_rank2(Var a, const char* op) {
  if (a.value().rank() != 2) {
    throw ContractViolation(std::string(op) + ": expected a matrix, got " +
                            shape_string(a.shape()));
  }
}

// Applies fn(i) and accumulates into the input's gradient when it needs one.
template <typename Fn>
void accumulate(Tape& t, std::size_t id, Fn&& fn) {
  if (!t.requires_grad(id)) return;
  std::span<double> g = t.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += fn(i);
}

template <typename Forward, typename Derivative>
Var unary(Var a, Forward forward, Derivative derivative) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = forward(av[i]);
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia},
                        [ia, derivative](Tape& t, std::span<const double> up) {
                          const Tensor& x = t.value(ia);
                          accumulate(t, ia, [&](std::size_t i) { return up[i] * derivative(x[i]); });
                        });
}

}  // namespace

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.value().rows(), k = a.value().cols(), m = b.value().cols();
  if (b.value().rows() != k) {
    throw ContractViolation("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                            shape_string(b.shape()));
  }
  Tensor out(Shape{n, m});
  matmul_into(a.value().data(), b.value().data(), out.data(), n, k, m);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib},
                        [ia, ib, n, k, m](Tape& t, std::span<const double> up) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      // dA = dY B^T
      std::span<double> ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          const double* brow = bv.data().data() + p * m;
          const double* urow = up.data() + i * m;
          for (std::size_t j = 0; j < m; ++j) s += urow[j] * brow[j];
          ga[i * k + p] += s;
        }
      }
    }
    if (t.requires_grad(ib)) {
      // dB = A^T dY
      std::span<double> gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i) {
        const double* urow = up.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
          const double av_ip = av[i * k + p];
          if (av_ip == 0.0) continue;
          double* grow = gb.data() + p * m;
          for (std::size_t j = 0; j < m; ++j) grow[j] += av_ip * urow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  require_rank2(a, "transpose");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = a.value()[i * m + j];
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, n, m](Tape& t, std::span<const double> up) {
    accumulate(t, ia, [&](std::size_t idx) { return up[(idx % m) * n + idx / m]; });
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::span<const double> up) {
    accumulate(t, ia, [&](std::size_t i) { return up[i]; });
    accumulate(t, ib, [&](std::size_t i) { return up[i]; });
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::span<const double> up) {
    accumulate(t, ia, [&](std::size_t i) { return up[i]; });
    accumulate(t, ib, [&](std::size_t i) { return -up[i]; });
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::span<const double> up) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    accumulate(t, ia, [&](std::size_t i) { return up[i] * bv[i]; });
    accumulate(t, ib, [&](std::size_t i) { return up[i] * av[i]; });
  });
}

Var add_bias(Var a, Var bias) {
  require_same_tape(a, bias, "add_bias");
  require_rank2(a, "add_bias");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  if (bias.value().rank() != 1 || bias.value().size() != m) {
    throw ContractViolation("add_bias: bias shape " + shape_string(bias.shape()) +
                            " does not match " + shape_string(a.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bias.value()[j];
  const std::size_t ia = a.id, ib = bias.id;
  return a.tape->record(std::move(out), {ia, ib}, [ia, ib, n, m](Tape& t, std::span<const double> up) {
    accumulate(t, ia, [&](std::size_t i) { return up[i]; });
    if (t.requires_grad(ib)) {
      std::span<double> gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb[j] += up[i * m + j];
    }
  });
}

Var scale(Var a, double factor) {
  return unary(a, [factor](double x) { return x * factor; },
               [factor](double) { return factor; });
}

Var add_scalar(Var a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double) { return 1.0; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id;
  return a.tape->record(Tensor::scalar(s), {ia}, [ia](Tape& t, std::span<const double> up) {
    accumulate(t, ia, [&](std::size_t) { return up[0]; });
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ContractViolation("mean of an empty tensor");
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  const std::size_t ia = a.id;
  const double inv = 1.0 / static_cast<double>(n);
  return a.tape->record(Tensor::scalar(s * inv), {ia}, [ia, inv](Tape& t, std::span<const double> up) {
    accumulate(t, ia, [&](std::size_t) { return up[0] * inv; });
  });
}

Var row_l2_normalize(Var a) {
  require_rank2(a, "row_l2_normalize");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  Tensor out = a.value();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += out[i * m + j] * out[i * m + j];
    norms[i] = std::sqrt(s);
    const double denom = norms[i] + kNormEpsilon;
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= denom;
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, n, m, norms](Tape& t, std::span<const double> up) {
    if (!t.requires_grad(ia)) return;
    const Tensor& av = t.value(ia);
    std::span<double> ga = t.grad_buffer(ia);
    // y = a / (|a| + e);  dy/da = I/(|a|+e) - a a^T / (|a| (|a|+e)^2)
    for (std::size_t i = 0; i < n; ++i) {
      const double denom = norms[i] + kNormEpsilon;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += av[i * m + j] * up[i * m + j];
      const double coef = norms[i] > 0.0 ? dot / (norms[i] * denom * denom) : 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        ga[i * m + j] += up[i * m + j] / denom - av[i * m + j] * coef;
      }
    }
  });
}

Var log_softmax_rows(Var logits) {
  require_rank2(logits, "log_softmax_rows");
  const std::size_t n = logits.value().rows(), m = logits.value().cols();
  Tensor out = logits.value();
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> r = out.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double s = 0.0;
    for (double v : r) s += std::exp(v - mx);
    const double lse = mx + std::log(s);
    for (double& v : r) v -= lse;
  }
  const std::size_t il = logits.id;
  const std::size_t self = logits.tape->size();
  return logits.tape->record(std::move(out), {il}, [il, self, n, m](Tape& t, std::span<const double> up) {
    if (!t.requires_grad(il)) return;
    const Tensor& lp = t.value(self);
    std::span<double> g = t.grad_buffer(il);
    // dz = dy - softmax * sum(dy)
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += up[i * m + j];
      for (std::size_t j = 0; j < m; ++j) {
        g[i * m + j] += up[i * m + j] - std::exp(lp[i * m + j]) * s;
      }
    }
  });
}

Var pick(Var a, std::span<const std::size_t> index) {
  require_rank2(a, "pick");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  if (index.size() != n) throw ContractViolation("pick: index count does not match rows");
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    if (idx[i] >= m) throw ContractViolation("pick: index " + std::to_string(idx[i]) + " out of range");
    out[i] = a.value()[i * m + idx[i]];
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, idx, m](Tape& t, std::span<const double> up) {
    if (!t.requires_grad(ia)) return;
    std::span<double> g = t.grad_buffer(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) g[i * m + idx[i]] += up[i];
  });
}

Var row_max_except(Var a, std::span<const std::size_t> index) {
  require_rank2(a, "row_max_except");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  if (index.size() != n) throw ContractViolation("row_max_except: index count does not match rows");
  if (m < 2) throw ContractViolation("row_max_except needs at least two columns");
  std::vector<std::size_t> arg(n);
  Tensor out(Shape{n});
  for (std::size_t i = 0; i < n; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_j = index[i] == 0 ? 1 : 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == index[i]) continue;
      if (a.value()[i * m + j] > best) {
        best = a.value()[i * m + j];
        best_j = j;
      }
    }
    arg[i] = best_j;
    out[i] = a.value()[i * m + best_j];
  }
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, arg, m](Tape& t, std::span<const double> up) {
    if (!t.requires_grad(ia)) return;
    std::span<double> g = t.grad_buffer(ia);
    for (std::size_t i = 0; i < arg.size(); ++i) g[i * m + arg[i]] += up[i];
  });
}

Var remap_columns(Var a, std::span<const std::ptrdiff_t> source) {
  require_rank2(a, "remap_columns");
  const std::size_t n = a.value().rows(), m = a.value().cols();
  if (source.size() != m) throw ContractViolation("remap_columns: map size does not match columns");
  std::vector<std::ptrdiff_t> src(source.begin(), source.end());
  for (std::ptrdiff_t s : src) {
    if (s >= static_cast<std::ptrdiff_t>(m)) throw ContractViolation("remap_columns: source out of range");
  }
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < m; ++c)
      if (src[c] >= 0) out[i * m + c] = a.value()[i * m + static_cast<std::size_t>(src[c])];
  const std::size_t ia = a.id;
  return a.tape->record(std::move(out), {ia}, [ia, src, n, m](Tape& t, std::span<const double> up) {
    if (!t.requires_grad(ia)) return;
    std::span<double> g = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < m; ++c)
        if (src[c] >= 0) g[i * m + static_cast<std::size_t>(src[c])] += up[i * m + c];
  });
}

}  // namespace agft
