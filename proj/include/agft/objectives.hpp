#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "agft/autodiff.hpp"
#include "agft/model.hpp"

namespace agft {

// Temperature used to soften the frozen teacher's targets: tau / gamma.
struct CalibrationConfig {
  double gamma = 0.4;
  double tau = 1.0 / 180.0;

  void validate() const;
  double calibrated_tau() const { return tau / gamma; }
};

// What a training or attack loss is supervised by.
struct SupervisionPayload {
  enum class Kind { hard_labels, soft_distribution };

  Kind kind = Kind::hard_labels;
  std::vector<std::size_t> labels;  // hard
  Tensor target;                    // soft, [N, K] row-stochastic

  static SupervisionPayload hard(std::vector<std::size_t> labels);
  static SupervisionPayload soft(Tensor target);

  std::size_t size() const { return kind == Kind::hard_labels ? labels.size() : target.rows(); }
  void validate(std::size_t num_classes) const;
};

// Image-to-text InfoNCE: -sum_i log softmax_j(<img_i, txt_j> / tau)[i].
// Summed over the batch, not averaged.
Var infonce_i2t_loss(Var img_emb, Var txt_emb, double tau);
// Text-to-image twin: rows and columns of the similarity matrix swapped.
Var infonce_t2i_loss(Var img_emb, Var txt_emb, double tau);
double infonce_i2t_loss(const Tensor& img_emb, const Tensor& txt_emb, double tau);

// mean_i -log_probs[i, labels[i]]
Var hard_label_ce(Var log_probs, std::span<const std::size_t> labels);
// mean_i -sum_j target[i, j] log_probs[i, j]
Var soft_ce(Var log_probs, const Tensor& target);
Var supervised_loss(Var log_probs, const SupervisionPayload& payload);

// Cross-entropy of the model's tau-distribution at x against hard labels.
double hard_label_ce_loss(const DualEncoder& model, const Tensor& x,
                          std::span<const std::size_t> labels, double tau);

// Soft cross-entropy of the model's tau-distribution at x against `target`.
// Rejects targets whose rows are more than 1e-6 from stochastic.
double agft_soft_loss(const DualEncoder& model, const Tensor& x, const Tensor& target, double tau);

// Teacher distribution on clean inputs at temperature tau. Detached.
Tensor soft_target_orig(const DualEncoder& teacher, const Tensor& x_clean, double tau);

// Teacher distribution on clean inputs at the calibrated temperature tau/gamma.
Tensor calibrated_target(const DualEncoder& teacher, const Tensor& x_clean,
                         const CalibrationConfig& cfg);

// Row-stochastic within `tol`, entries non-negative.
void check_row_stochastic(const Tensor& m, double tol);

std::vector<double> row_entropy(const Tensor& distribution);
double mean_row_entropy(const Tensor& distribution);

}  // namespace agft
