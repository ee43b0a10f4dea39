#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agft/attack.hpp"
#include "agft/dataset.hpp"
#include "agft/model.hpp"

namespace agft {

enum class ContractionCase { common, other, degenerate };
std::string to_string(ContractionCase c);

struct ContractionResult {
  std::optional<double> rho;          // <rob, beta> / <orig, beta>
  std::optional<double> lower_bound;  // 1 - |orig - rob|_2 / <orig, beta>, common case only
  double shift_norm = 0.0;            // |orig - rob|_2
  ContractionCase case_tag = ContractionCase::degenerate;
};

// Similarity contraction of a fine-tuned embedding against a prototype,
// with the Cauchy-Schwarz lower bound when <orig, beta> > 0 and
// <rob, beta> <= <orig, beta>.
ContractionResult contraction_bound_check(std::span<const double> emb_orig,
                                          std::span<const double> emb_rob,
                                          std::span<const double> prototype);

struct RhoStats {
  double mean = 0.0;  // over samples with a defined rho
  double min = 0.0;
  double common_fraction = 0.0;
  std::size_t violations = 0;  // common-case samples with rho < bound, plus |<d, beta>| > |d|
  std::size_t samples = 0;
};

struct MetricsRecord {
  std::string model_id;
  std::string dataset_id;
  std::string attack = "clean";
  double accuracy = 0.0;
  double top5_iou = 0.0;
  double conf = 0.0;
  double s_max = 0.0;
  double s_mean = 0.0;
  RhoStats rho;
};

// x_adv for the whole dataset, attacked in batches with per-batch seeds
// derived from attack.seed.
Tensor adversarial_inputs(const DualEncoder& model, const Dataset& data, const AttackConfig& attack,
                          std::size_t batch_size = 200);

double accuracy(const DualEncoder& model, const Dataset& data, const AttackConfig* attack = nullptr);

// Indices of the k largest entries; ties go to the lower index.
std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k);
double set_iou(std::span<const std::size_t> a, std::span<const std::size_t> b);

// Mean per-sample IoU between Top-k(model_ft on x or x_adv) and
// Top-k(model_orig on clean x).
double topk_iou(const DualEncoder& model_ft, const DualEncoder& model_orig, const Dataset& data,
                std::size_t k, const AttackConfig* attack = nullptr);

struct ConfidenceStats {
  double conf = 0.0;    // mean max probability
  double s_max = 0.0;   // mean per-sample max cosine similarity
  double s_mean = 0.0;  // mean cosine similarity over samples and prototypes
};

ConfidenceStats confidence_similarity_stats(const DualEncoder& model, const Dataset& data,
                                            const AttackConfig* attack = nullptr);
ConfidenceStats confidence_similarity_stats(const Prediction& prediction);

// rho of the fine-tuned embedding (of x or x_adv) vs. the original clean
// embedding, against the original model's top-1 prototype.
RhoStats rho_statistics(const DualEncoder& model_ft, const DualEncoder& model_orig,
                        const Dataset& data, const Tensor& ft_inputs);

struct EvaluationRequest {
  std::string model_id;
  std::string dataset_id;
  std::optional<AttackConfig> attack;
  std::size_t top_k = 5;
};

// All metrics for one (model, dataset, attack); x_adv is generated once.
MetricsRecord evaluate(const DualEncoder& model, const DualEncoder& model_orig, const Dataset& data,
                       const EvaluationRequest& request);

std::string to_jsonl(const MetricsRecord& record);
std::string csv_header();
// conf / s_max / s_mean are scaled by 100 in the CSV summary.
std::string to_csv_row(const MetricsRecord& record);

}  // namespace agft
