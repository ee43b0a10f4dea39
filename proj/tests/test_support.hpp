#pragma once

// Helpers shared by the unit tests: random tensors, small models, and
// reference implementations written without the autodiff engine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "agft/dataset.hpp"
#include "agft/model.hpp"
#include "agft/tensor.hpp"

namespace agft::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline Tensor random_unit_rows(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor t({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (double& v : t.row(i)) {
      v = g(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : t.row(i)) v /= norm;
  }
  return t;
}

inline std::vector<std::size_t> random_labels(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> u(0, k - 1);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = u(rng);
  return y;
}

inline Tensor random_stochastic(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Tensor t({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double& v : t.row(i)) s += (v = u(rng));
    for (double& v : t.row(i)) v /= s;
  }
  return t;
}

// A small model for fast tests: 36 inputs (6x6 layout), 12 hidden, d = 8, K = 4.
inline DualEncoder tiny_model(std::uint64_t seed, std::size_t k = 4, double tau = 0.1) {
  ModelSpec spec;
  spec.input_dim = 36;
  spec.hidden = {12};
  spec.embed_dim = 8;
  spec.num_classes = k;
  spec.tau = tau;
  return make_dual_encoder(spec, seed);
}

// Straight-line forward pass: nested loops, no tape.
inline Tensor reference_encode(const DualEncoder& m, const Tensor& x) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::vector<double> h(x.row(i).begin(), x.row(i).end());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const Tensor& w = m.layers[l].weight;
      std::vector<double> out(w.cols(), 0.0);
      for (std::size_t o = 0; o < w.cols(); ++o) {
        double acc = m.layers[l].bias[o];
        for (std::size_t in = 0; in < w.rows(); ++in) acc += h[in] * w.at(in, o);
        out[o] = (l + 1 < m.layers.size()) ? std::max(0.0, acc) : acc;
      }
      h = std::move(out);
    }
    double norm = 0.0;
    for (double v : h) norm += v * v;
    norm = std::sqrt(norm) + kNormEpsilon;
    for (double& v : h) v /= norm;
    rows.push_back(std::move(h));
  }
  Tensor out({x.rows(), rows.empty() ? 0 : rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), out.row(i).begin());
  }
  return out;
}

// Nearest class mean fitted on `train`.
inline double nearest_centroid_accuracy(const Dataset& train, const Dataset& test) {
  const std::size_t k = train.num_classes, d = train.input_dim();
  std::vector<std::vector<double>> mean(k, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(k, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    ++count[train.labels[i]];
    for (std::size_t j = 0; j < d; ++j) mean[train.labels[i]][j] += train.inputs.at(i, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    for (double& v : mean[c]) v /= static_cast<double>(std::max<std::size_t>(1, count[c]));
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < k; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = test.inputs.at(i, j) - mean[c][j];
        dist += diff * diff;
      }
      if (dist < best_d) best_d = dist, best = c;
    }
    hit += best == test.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(test.size());
}

// Multinomial logistic regression by plain batch gradient descent.
inline double logistic_regression_accuracy(const Dataset& train, const Dataset& test,
                                           std::size_t iters = 300, double lr = 0.5) {
  const std::size_t k = train.num_classes, d = train.input_dim(), n = train.size();
  std::vector<double> w(k * d, 0.0), b(k, 0.0);
  std::vector<double> logits(k);
  auto scores = [&](std::span<const double> x) {
    for (std::size_t c = 0; c < k; ++c) {
      double s = b[c];
      for (std::size_t j = 0; j < d; ++j) s += w[c * d + j] * x[j];
      logits[c] = s;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& v : logits) z += (v = std::exp(v - mx));
    for (double& v : logits) v /= z;
  };
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<double> gw(k * d, 0.0), gb(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      scores(train.inputs.row(i));
      for (std::size_t c = 0; c < k; ++c) {
        const double e = logits[c] - (c == train.labels[i] ? 1.0 : 0.0);
        gb[c] += e;
        for (std::size_t j = 0; j < d; ++j) gw[c * d + j] += e * train.inputs.at(i, j);
      }
    }
    for (std::size_t q = 0; q < w.size(); ++q) w[q] -= lr * gw[q] / static_cast<double>(n);
    for (std::size_t c = 0; c < k; ++c) b[c] -= lr * gb[c] / static_cast<double>(n);
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    scores(test.inputs.row(i));
    hit += static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin()) ==
           test.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(test.size());
}

// Relative error with a 1e-3 floor on the scale, so entries that are
// numerically zero are compared absolutely.
inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({1e-3, std::abs(a), std::abs(b)});
}

inline double max_rel_error(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], b[i]));
  return worst;
}

}  // namespace agft::testing
