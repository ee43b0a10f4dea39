#include "agft/attack.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "agft/error.hpp"

namespace agft {

std::string to_string(AttackFamily family) {
  switch (family) {
    case AttackFamily::pgd: return "pgd";
    case AttackFamily::mi: return "mi";
    case AttackFamily::ni: return "ni";
    case AttackFamily::di2: return "di2";
    case AttackFamily::ti: return "ti";
    case AttackFamily::cw: return "cw";
  }
  return "unknown";
}

AttackFamily parse_attack_family(const std::string& name) {
  for (AttackFamily f : {AttackFamily::pgd, AttackFamily::mi, AttackFamily::ni, AttackFamily::di2,
                         AttackFamily::ti, AttackFamily::cw}) {
    if (to_string(f) == name) return f;
  }
  throw ConfigError("unknown attack family '" + name + "'");
}

std::string to_string(TargetStrategy strategy) {
  return strategy == TargetStrategy::random ? "random" : "least_likely";
}

TargetStrategy parse_target_strategy(const std::string& name) {
  if (name == "random") return TargetStrategy::random;
  if (name == "least_likely") return TargetStrategy::least_likely;
  throw ConfigError("unknown target strategy '" + name + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw ContractViolation("attack epsilon must be >= 0");
  if (steps < 1) throw ContractViolation("attack needs at least one step");
  if (!(alpha > 0.0)) throw ContractViolation("attack step size must be positive");
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ContractViolation("TI kernel size must be odd");
  }
  if (!(transform_prob >= 0.0 && transform_prob <= 1.0)) {
    throw ContractViolation("DI2 transform probability must lie in [0, 1]");
  }
  if (!(momentum_decay >= 0.0)) throw ContractViolation("momentum decay must be >= 0");
  if (!(lo < hi)) throw ContractViolation("attack input range must satisfy lo < hi");
}

std::string AttackConfig::describe() const {
  std::string s = fmt::format("{}(eps={:g},alpha={:g},steps={}", to_string(family), epsilon,
                              alpha, steps);
  switch (family) {
    case AttackFamily::pgd:
    case AttackFamily::cw: s += fmt::format(",init={}", random_init ? 1 : 0); break;
    case AttackFamily::mi:
    case AttackFamily::ni: s += fmt::format(",mu={:g}", momentum_decay); break;
    case AttackFamily::di2: s += fmt::format(",p={:g}", transform_prob); break;
    case AttackFamily::ti: s += fmt::format(",k={}", kernel_size); break;
  }
  if (targeted) s += ",target=" + to_string(targeted->strategy);
  return s + ")";
}

Tensor project_linf(const Tensor& candidate, const Tensor& origin, double epsilon, double lo,
                    double hi) {
  if (candidate.shape() != origin.shape()) {
    throw ContractViolation("project_linf: shape mismatch");
  }
  if (!(lo < hi)) throw ContractViolation("project_linf: lo must be below hi");
  Tensor out = candidate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double v = std::clamp(out[i], origin[i] - epsilon, origin[i] + epsilon);
    out[i] = std::clamp(v, lo, hi);
  }
  return out;
}

std::optional<std::size_t> square_side(std::size_t input_dim) {
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(input_dim))));
  if (side * side != input_dim) return std::nullopt;
  return side;
}

std::vector<double> ti_kernel_1d(std::size_t size) {
  if (size == 0 || size % 2 == 0) throw ContractViolation("TI kernel size must be odd");
  if (size == 1) return {1.0};
  // Gaussian sampled on [-3, 3].
  std::vector<double> k(size);
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = -3.0 + 6.0 * static_cast<double>(i) / static_cast<double>(size - 1);
    k[i] = std::exp(-0.5 * x * x);
    s += k[i];
  }
  for (double& v : k) v /= s;
  return k;
}

namespace {

struct Variant {
  bool momentum = false;  // MI / NI accumulator
  bool nesterov = false;
  bool diverse = false;
  bool smooth = false;
};

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Random resize (nearest) to r in [ceil(0.9 s), s] followed by zero padding
// back to s x s at a random offset.
std::vector<std::ptrdiff_t> diversity_map(std::size_t side, std::mt19937_64& rng) {
  const auto min_side = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(side)));
  std::uniform_int_distribution<std::size_t> pick_side(min_side, side);
  const std::size_t r = pick_side(rng);
  std::uniform_int_distribution<std::size_t> pick_off(0, side - r);
  const std::size_t top = pick_off(rng);
  const std::size_t left = pick_off(rng);
  std::vector<std::ptrdiff_t> map(side * side, -1);
  for (std::size_t a = 0; a < r; ++a) {
    for (std::size_t b = 0; b < r; ++b) {
      const std::size_t sr = a * side / r, sc = b * side / r;
      map[(top + a) * side + (left + b)] = static_cast<std::ptrdiff_t>(sr * side + sc);
    }
  }
  return map;
}

void smooth_row(std::span<double> g, std::size_t side, const std::vector<double>& k1) {
  const std::size_t k = k1.size();
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(k / 2);
  const auto s = static_cast<std::ptrdiff_t>(side);
  std::vector<double> src(g.begin(), g.end());
  for (std::ptrdiff_t r = 0; r < s; ++r) {
    for (std::ptrdiff_t c = 0; c < s; ++c) {
      double acc = 0.0;
      for (std::size_t a = 0; a < k; ++a) {
        const std::ptrdiff_t rr = r + static_cast<std::ptrdiff_t>(a) - h;
        if (rr < 0 || rr >= s) continue;
        for (std::size_t b = 0; b < k; ++b) {
          const std::ptrdiff_t cc = c + static_cast<std::ptrdiff_t>(b) - h;
          if (cc < 0 || cc >= s) continue;
          acc += k1[a] * k1[b] * src[static_cast<std::size_t>(rr * s + cc)];
        }
      }
      g[static_cast<std::size_t>(r * s + c)] = acc;
    }
  }
}

double evaluate_loss(const AttackLoss& loss, const Tensor& x) {
  Tape tape;
  return loss(tape, tape.constant(x)).value().item();
}

AdversarialBatch iterate(const AttackLoss& loss, const Tensor& x, const AttackConfig& cfg,
                         Variant variant, bool random_start, double direction) {
  cfg.validate();
  if (x.rank() != 2) throw ContractViolation("attack input must be a [N, D] batch");
  const std::size_t n = x.rows(), m = x.cols();
  std::size_t side = 0;
  if (variant.diverse || variant.smooth) {
    auto sq = square_side(m);
    if (!sq) {
      throw ContractViolation(to_string(cfg.family) + " needs a square spatial layout; input width " +
                              std::to_string(m) + " is not a perfect square");
    }
    side = *sq;
  }
  const std::vector<double> kernel = variant.smooth ? ti_kernel_1d(cfg.kernel_size)
                                                    : std::vector<double>{};
  std::mt19937_64 rng(cfg.seed);

  AdversarialBatch out;
  Tensor cur = x;
  if (random_start && cfg.epsilon > 0.0) {
    std::uniform_real_distribution<double> noise(-cfg.epsilon, cfg.epsilon);
    for (double& v : cur.data()) v += noise(rng);
    cur = project_linf(cur, x, cfg.epsilon, cfg.lo, cfg.hi);
  }

  Tensor accum(x.shape());
  std::vector<bool> alive(n, true);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Tensor point = cur;
    if (variant.nesterov) {
      for (std::size_t i = 0; i < point.size(); ++i) {
        point[i] += cfg.alpha * cfg.momentum_decay * accum[i];
      }
    }
    Tape tape;
    Var xv = tape.leaf(std::move(point), "x");
    Var input = xv;
    if (variant.diverse && coin(rng) < cfg.transform_prob) {
      input = remap_columns(xv, diversity_map(side, rng));
    }
    Var l = loss(tape, input);
    out.loss_trace.push_back(l.value().item());
    Tensor g = std::move(grad(l, {xv})[0]);

    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      std::span<double> gi = g.row(i);
      if (!std::all_of(gi.begin(), gi.end(), [](double v) { return std::isfinite(v); })) {
        alive[i] = false;
        out.aborted.push_back(i);
        std::span<const double> xi = x.row(i);
        std::copy(xi.begin(), xi.end(), cur.row(i).begin());
        spdlog::warn("attack: non-finite gradient for sample {} at step {}, sample left clean", i,
                     step);
        continue;
      }
      if (variant.smooth) smooth_row(gi, side, kernel);
      std::span<double> dir = gi;
      if (variant.momentum) {
        double l1 = 0.0;
        for (double v : gi) l1 += std::abs(v);
        std::span<double> acc = accum.row(i);
        for (std::size_t c = 0; c < m; ++c) {
          acc[c] = cfg.momentum_decay * acc[c] + (l1 > 0.0 ? gi[c] / l1 : 0.0);
        }
        dir = acc;
      }
      std::span<double> ci = cur.row(i);
      std::span<const double> xi = x.row(i);
      for (std::size_t c = 0; c < m; ++c) {
        const double moved = ci[c] + direction * cfg.alpha * sign(dir[c]);
        ci[c] = std::clamp(std::clamp(moved, xi[c] - cfg.epsilon, xi[c] + cfg.epsilon), cfg.lo,
                           cfg.hi);
      }
    }
  }
  out.loss_trace.push_back(evaluate_loss(loss, cur));
  out.perturbation = cur;
  for (std::size_t i = 0; i < cur.size(); ++i) out.perturbation[i] -= x[i];
  out.x_adv = std::move(cur);
  return out;
}

}  // namespace

AdversarialBatch pgd_attack(const AttackLoss& loss, const Tensor& x, const AttackConfig& cfg) {
  if (cfg.family != AttackFamily::pgd) {
    throw ContractViolation("pgd_attack called with family " + to_string(cfg.family));
  }
  return iterate(loss, x, cfg, Variant{}, cfg.random_init, cfg.targeted ? -1.0 : 1.0);
}

AdversarialBatch fgsm_family_attack(const AttackLoss& loss, const Tensor& x,
                                    const AttackConfig& cfg) {
  Variant v;
  switch (cfg.family) {
    case AttackFamily::mi: v.momentum = true; break;
    case AttackFamily::ni: v.momentum = v.nesterov = true; break;
    case AttackFamily::di2: v.diverse = true; break;
    case AttackFamily::ti: v.smooth = true; break;
    default:
      throw ContractViolation("fgsm_family_attack called with family " + to_string(cfg.family));
  }
  return iterate(loss, x, cfg, v, false, cfg.targeted ? -1.0 : 1.0);
}

AdversarialBatch cw_linf_attack(const DualEncoder& model, const Tensor& x,
                                std::span<const std::size_t> labels, const AttackConfig& cfg,
                                double tau) {
  if (cfg.family != AttackFamily::cw) {
    throw ContractViolation("cw_linf_attack called with family " + to_string(cfg.family));
  }
  if (labels.size() != x.rows()) throw ContractViolation("one label per sample required");
  if (!(tau > 0.0)) throw ContractViolation("tau must be positive");
  std::vector<std::size_t> y(labels.begin(), labels.end());
  const bool targeted = cfg.targeted.has_value();
  AttackLoss margin = [&model, y, targeted, tau](Tape& tape, Var xv) {
    EncoderVars params = bind_parameters(tape, model, false);
    Var z = scale(similarity_matrix(encode_image(params, xv), model.text_prototypes), 1.0 / tau);
    Var m = targeted ? pick(z, y) - row_max_except(z, y) : row_max_except(z, y) - pick(z, y);
    return mean(m);
  };
  return iterate(margin, x, cfg, Variant{}, cfg.random_init, 1.0);
}

std::vector<std::size_t> choose_target(const DualEncoder& model, const Tensor& x_clean,
                                       std::span<const std::size_t> true_labels,
                                       TargetStrategy strategy, std::uint64_t seed) {
  const std::size_t k = model.num_classes();
  if (k < 2) throw ContractViolation("targeted attack needs at least two classes");
  if (true_labels.size() != x_clean.rows()) throw ContractViolation("one label per sample required");
  if (strategy == TargetStrategy::least_likely) {
    return argmin_rows(predict_distribution(model, x_clean).distribution);
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_other(0, k - 2);
  std::vector<std::size_t> out(true_labels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (true_labels[i] >= k) throw ContractViolation("label outside the class range");
    const std::size_t d = pick_other(rng);
    out[i] = d >= true_labels[i] ? d + 1 : d;
  }
  return out;
}

AttackLoss label_ce_loss(const DualEncoder& model, std::vector<std::size_t> labels, double tau) {
  return payload_loss(model, SupervisionPayload::hard(std::move(labels)), tau);
}

AttackLoss payload_loss(const DualEncoder& model, SupervisionPayload payload, double tau) {
  payload.validate(model.num_classes());
  return [&model, payload = std::move(payload), tau](Tape& tape, Var xv) {
    EncoderVars params = bind_parameters(tape, model, false);
    Var lp = class_log_probs(similarity_matrix(encode_image(params, xv), model.text_prototypes), tau);
    return supervised_loss(lp, payload);
  };
}

AdversarialBatch run_attack(const DualEncoder& model, const Tensor& x,
                            std::span<const std::size_t> labels, const AttackConfig& cfg) {
  std::vector<std::size_t> supervision(labels.begin(), labels.end());
  if (cfg.targeted) {
    supervision = choose_target(model, x, labels, cfg.targeted->strategy, cfg.targeted->seed);
  }
  switch (cfg.family) {
    case AttackFamily::pgd:
      return pgd_attack(label_ce_loss(model, std::move(supervision), model.tau), x, cfg);
    case AttackFamily::cw:
      return cw_linf_attack(model, x, supervision, cfg, model.tau);
    default:
      return fgsm_family_attack(label_ce_loss(model, std::move(supervision), model.tau), x, cfg);
  }
}

}  // namespace agft
