#include "agft/objectives.hpp"

#include <cmath>

#include "agft/error.hpp"

namespace agft {

void CalibrationConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ContractViolation("calibration gamma must lie in (0, 1], got " + std::to_string(gamma));
  }
  if (!(tau > 0.0)) throw ContractViolation("calibration tau must be positive");
}

SupervisionPayload SupervisionPayload::hard(std::vector<std::size_t> labels) {
  SupervisionPayload p;
  p.kind = Kind::hard_labels;
  p.labels = std::move(labels);
  return p;
}

SupervisionPayload SupervisionPayload::soft(Tensor target) {
  SupervisionPayload p;
  p.kind = Kind::soft_distribution;
  p.target = std::move(target);
  return p;
}

void SupervisionPayload::validate(std::size_t num_classes) const {
  if (kind == Kind::hard_labels) {
    for (std::size_t y : labels) {
      if (y >= num_classes) {
        throw ContractViolation("label " + std::to_string(y) + " outside [0, " +
                                std::to_string(num_classes) + ")");
      }
    }
    return;
  }
  if (target.rank() != 2 || target.cols() != num_classes) {
    throw ContractViolation("soft target shape " + shape_string(target.shape()) +
                            " does not match " + std::to_string(num_classes) + " classes");
  }
  check_row_stochastic(target, 1e-9);
}

namespace {

Var infonce_rows(Var rows_emb, Var cols_emb, double tau) {
  const std::size_t n = rows_emb.value().rows();
  if (n == 0) throw ContractViolation("InfoNCE loss over an empty batch");
  if (cols_emb.value().rows() != n) {
    throw ContractViolation("InfoNCE needs one text embedding per image");
  }
  Var logits = scale(matmul(rows_emb, transpose(cols_emb)), 1.0 / tau);
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i;
  return -sum(pick(log_softmax_rows(logits), diag));
}

}  // namespace

Var infonce_i2t_loss(Var img_emb, Var txt_emb, double tau) {
  if (!(tau > 0.0)) throw ContractViolation("tau must be positive");
  return infonce_rows(img_emb, txt_emb, tau);
}

Var infonce_t2i_loss(Var img_emb, Var txt_emb, double tau) {
  if (!(tau > 0.0)) throw ContractViolation("tau must be positive");
  return infonce_rows(txt_emb, img_emb, tau);
}

double infonce_i2t_loss(const Tensor& img_emb, const Tensor& txt_emb, double tau) {
  Tape tape;
  return infonce_i2t_loss(tape.constant(img_emb), tape.constant(txt_emb), tau).value().item();
}

Var hard_label_ce(Var log_probs, std::span<const std::size_t> labels) {
  return -mean(pick(log_probs, labels));
}

Var soft_ce(Var log_probs, const Tensor& target) {
  if (target.shape() != log_probs.shape()) {
    throw ContractViolation("soft_ce: target shape " + shape_string(target.shape()) +
                            " vs predictions " + shape_string(log_probs.shape()));
  }
  const double n = static_cast<double>(target.rows());
  return scale(sum(mul(log_probs, log_probs.tape->constant(target))), -1.0 / n);
}

Var supervised_loss(Var log_probs, const SupervisionPayload& payload) {
  if (payload.kind == SupervisionPayload::Kind::hard_labels) {
    return hard_label_ce(log_probs, payload.labels);
  }
  return soft_ce(log_probs, payload.target);
}

double hard_label_ce_loss(const DualEncoder& model, const Tensor& x,
                          std::span<const std::size_t> labels, double tau) {
  if (labels.size() != x.rows()) throw ContractViolation("one label per sample required");
  Tape tape;
  EncoderVars params = bind_parameters(tape, model, false);
  Var lp = class_log_probs(
      similarity_matrix(encode_image(params, tape.constant(x)), model.text_prototypes), tau);
  return hard_label_ce(lp, labels).value().item();
}

double agft_soft_loss(const DualEncoder& model, const Tensor& x, const Tensor& target, double tau) {
  check_row_stochastic(target, 1e-6);
  Tape tape;
  EncoderVars params = bind_parameters(tape, model, false);
  Var lp = class_log_probs(
      similarity_matrix(encode_image(params, tape.constant(x)), model.text_prototypes), tau);
  return soft_ce(lp, target).value().item();
}

Tensor soft_target_orig(const DualEncoder& teacher, const Tensor& x_clean, double tau) {
  return predict_distribution(teacher, x_clean, tau).distribution;
}

Tensor calibrated_target(const DualEncoder& teacher, const Tensor& x_clean,
                         const CalibrationConfig& cfg) {
  cfg.validate();
  return predict_distribution(teacher, x_clean, cfg.calibrated_tau()).distribution;
}

void check_row_stochastic(const Tensor& m, double tol) {
  if (m.rank() != 2) throw ContractViolation("distribution must be a matrix");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (double v : m.row(i)) {
      if (!(v >= 0.0)) {
        throw ContractViolation("distribution row " + std::to_string(i) + " has a negative entry");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > tol) {
      throw ContractViolation("distribution row " + std::to_string(i) + " sums to " +
                              std::to_string(s) + ", not 1");
    }
  }
}

std::vector<double> row_entropy(const Tensor& distribution) {
  std::vector<double> out(distribution.rows(), 0.0);
  for (std::size_t i = 0; i < distribution.rows(); ++i) {
    for (double p : distribution.row(i)) {
      if (p > 0.0) out[i] -= p * std::log(p);
    }
  }
  return out;
}

double mean_row_entropy(const Tensor& distribution) {
  std::vector<double> h = row_entropy(distribution);
  double s = 0.0;
  for (double v : h) s += v;
  return h.empty() ? 0.0 : s / static_cast<double>(h.size());
}

}  // namespace agft
