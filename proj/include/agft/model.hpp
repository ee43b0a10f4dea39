#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "agft/autodiff.hpp"
#include "agft/tensor.hpp"

namespace agft {

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

// CLIP-style dual encoder at desk scale: a trainable MLP image encoder and a
// frozen matrix of unit-norm text prototypes, one row per class.
struct DualEncoder {
  std::vector<Linear> layers;
  Tensor text_prototypes;  // [K, d]
  double tau = 0.01;
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return layers.front().weight.rows(); }
  std::size_t embed_dim() const { return text_prototypes.cols(); }
  std::size_t num_classes() const { return text_prototypes.rows(); }

  // Flattened trainable parameters: weight0, bias0, weight1, ...
  std::vector<Tensor> parameters() const;
  void set_parameters(std::vector<Tensor> params);
};

struct ModelSpec {
  std::size_t input_dim = 256;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t embed_dim = 16;
  std::size_t num_classes = 8;
  double tau = 0.01;
};

// He-initialised weights, zero biases, orthonormal text prototypes (when
// K <= d; otherwise independent unit rows), all drawn from `seed`.
DualEncoder make_dual_encoder(const ModelSpec& spec, std::uint64_t seed);

// Throws ContractViolation when a structural invariant does not hold.
void validate(const DualEncoder& model);

// Model parameters bound to a tape.
struct EncoderVars {
  std::vector<Var> weights;
  std::vector<Var> biases;

  std::vector<Var> all() const;
};

EncoderVars bind_parameters(Tape& tape, const DualEncoder& model, bool trainable);

// MLP forward with ReLU between layers, then per-row l2 normalisation.
Var encode_image(const EncoderVars& params, Var batch);
Tensor encode_image(const DualEncoder& model, const Tensor& batch);

// S(i, j) = <img[i], txt[j]>.
Var similarity_matrix(Var img_emb, const Tensor& txt_emb);
Tensor similarity_matrix(const Tensor& img_emb, const Tensor& txt_emb);

// log softmax(S / tau) per row.
Var class_log_probs(Var similarities, double tau);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& logits);

// Per-row argmax; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& m);
std::vector<std::size_t> argmin_rows(const Tensor& m);

struct Prediction {
  Tensor similarities;  // [N, K]
  Tensor distribution;  // [N, K]
  std::vector<std::size_t> top_class;
};

Prediction predict_distribution(const DualEncoder& model, const Tensor& batch, double tau);
inline Prediction predict_distribution(const DualEncoder& model, const Tensor& batch) {
  return predict_distribution(model, batch, model.tau);
}

// S(i, j) / sum_k S(i, k) for one similarity row; nullopt when the row sum
// is within 1e-6 of zero.
std::optional<std::vector<double>> relative_similarity_shares(std::span<const double> row);

// FNV-1a over every parameter and prototype bit, plus tau.
std::uint64_t parameter_checksum(const DualEncoder& model);

}  // namespace agft
