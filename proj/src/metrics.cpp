#include "agft/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include <spdlog/fmt/fmt.h>

#include "agft/error.hpp"
#include "agft/seed.hpp"

namespace agft {

std::string to_string(ContractionCase c) {
  switch (c) {
    case ContractionCase::common: return "common";
    case ContractionCase::other: return "other";
    case ContractionCase::degenerate: return "degenerate";
  }
  return "unknown";
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void require_unit(std::span<const double> v, const char* what) {
  if (std::abs(std::sqrt(dot(v, v)) - 1.0) > 1e-9) {
    throw ContractViolation(std::string("contraction_bound_check: ") + what + " is not unit norm");
  }
}

void require_nonempty(const Dataset& data) {
  if (data.size() == 0) throw ContractViolation("empty dataset");
}

}  // namespace

ContractionResult contraction_bound_check(std::span<const double> emb_orig,
                                          std::span<const double> emb_rob,
                                          std::span<const double> prototype) {
  if (emb_orig.size() != emb_rob.size() || emb_orig.size() != prototype.size()) {
    throw ContractViolation("contraction_bound_check: dimension mismatch");
  }
  require_unit(emb_orig, "original embedding");
  require_unit(emb_rob, "robust embedding");
  require_unit(prototype, "prototype");

  ContractionResult r;
  double shift = 0.0;
  for (std::size_t i = 0; i < emb_orig.size(); ++i) {
    const double d = emb_orig[i] - emb_rob[i];
    shift += d * d;
  }
  r.shift_norm = std::sqrt(shift);
  const double s_orig = dot(emb_orig, prototype);
  const double s_rob = dot(emb_rob, prototype);
  if (std::abs(s_orig) <= 1e-9) {
    r.case_tag = ContractionCase::degenerate;
    return r;
  }
  r.rho = s_rob / s_orig;
  if (s_orig > 0.0 && s_rob <= s_orig) {
    r.case_tag = ContractionCase::common;
    r.lower_bound = 1.0 - r.shift_norm / s_orig;
  } else {
    r.case_tag = ContractionCase::other;
  }
  return r;
}

Tensor adversarial_inputs(const DualEncoder& model, const Dataset& data, const AttackConfig& attack,
                          std::size_t batch_size) {
  require_nonempty(data);
  Tensor out(data.inputs.shape());
  const std::size_t n = data.size();
  for (std::size_t begin = 0, b = 0; begin < n; begin += batch_size, ++b) {
    const std::size_t end = std::min(n, begin + batch_size);
    AttackConfig cfg = attack;
    cfg.seed = derive_seed(attack.seed, b);
    if (cfg.targeted) cfg.targeted->seed = derive_seed(attack.targeted->seed, b);
    AdversarialBatch adv =
        run_attack(model, data.inputs.slice_rows(begin, end), data.labels_as_index(begin, end), cfg);
    std::copy(adv.x_adv.data().begin(), adv.x_adv.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(begin * data.input_dim()));
  }
  return out;
}

namespace {

double accuracy_on(const DualEncoder& model, const Dataset& data, const Tensor& inputs) {
  std::vector<std::size_t> pred = predict_distribution(model, inputs).top_class;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double topk_iou_on(const DualEncoder& model_ft, const DualEncoder& model_orig, const Dataset& data,
                   std::size_t k, const Tensor& ft_inputs) {
  const Prediction ft = predict_distribution(model_ft, ft_inputs);
  const Prediction orig = predict_distribution(model_orig, data.inputs);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total += set_iou(topk_indices(ft.distribution.row(i), k),
                     topk_indices(orig.distribution.row(i), k));
  }
  return total / static_cast<double>(data.size());
}

void check_k(std::size_t k, std::size_t num_classes) {
  if (k == 0 || k > num_classes) {
    throw ContractViolation("top-k with k = " + std::to_string(k) + " over " +
                            std::to_string(num_classes) + " classes");
  }
}

}  // namespace

double accuracy(const DualEncoder& model, const Dataset& data, const AttackConfig* attack) {
  require_nonempty(data);
  return accuracy_on(model, data, attack ? adversarial_inputs(model, data, *attack) : data.inputs);
}

std::vector<std::size_t> topk_indices(std::span<const double> row, std::size_t k) {
  if (k > row.size()) throw ContractViolation("top-k larger than the row");
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&row](std::size_t a, std::size_t b) { return row[a] > row[b]; });
  idx.resize(k);
  return idx;
}

double set_iou(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::vector<std::size_t> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
  sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
  std::vector<std::size_t> inter;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  const std::size_t uni = sa.size() + sb.size() - inter.size();
  return uni == 0 ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni);
}

double topk_iou(const DualEncoder& model_ft, const DualEncoder& model_orig, const Dataset& data,
                std::size_t k, const AttackConfig* attack) {
  require_nonempty(data);
  if (model_ft.num_classes() != model_orig.num_classes()) {
    throw ContractViolation("topk_iou: models disagree on the class count");
  }
  check_k(k, model_ft.num_classes());
  return topk_iou_on(model_ft, model_orig, data, k,
                     attack ? adversarial_inputs(model_ft, data, *attack) : data.inputs);
}

ConfidenceStats confidence_similarity_stats(const Prediction& p) {
  ConfidenceStats s;
  const std::size_t n = p.distribution.rows();
  const std::size_t k = p.distribution.cols();
  double total_sim = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> d = p.distribution.row(i);
    std::span<const double> sim = p.similarities.row(i);
    s.conf += *std::max_element(d.begin(), d.end());
    s.s_max += *std::max_element(sim.begin(), sim.end());
    for (double v : sim) total_sim += v;
  }
  s.conf /= static_cast<double>(n);
  s.s_max /= static_cast<double>(n);
  s.s_mean = total_sim / static_cast<double>(n * k);
  return s;
}

ConfidenceStats confidence_similarity_stats(const DualEncoder& model, const Dataset& data,
                                            const AttackConfig* attack) {
  require_nonempty(data);
  return confidence_similarity_stats(predict_distribution(
      model, attack ? adversarial_inputs(model, data, *attack) : data.inputs));
}

RhoStats rho_statistics(const DualEncoder& model_ft, const DualEncoder& model_orig,
                        const Dataset& data, const Tensor& ft_inputs) {
  const Tensor emb_ft = encode_image(model_ft, ft_inputs);
  const Tensor emb_orig = encode_image(model_orig, data.inputs);
  const std::vector<std::size_t> top = predict_distribution(model_orig, data.inputs).top_class;
  RhoStats st;
  st.min = std::numeric_limits<double>::infinity();
  std::size_t defined = 0, common = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::span<const double> beta = model_orig.text_prototypes.row(top[i]);
    ContractionResult r = contraction_bound_check(emb_orig.row(i), emb_ft.row(i), beta);
    const double gap = std::abs(dot(emb_orig.row(i), beta) - dot(emb_ft.row(i), beta));
    if (gap > r.shift_norm + 1e-12) ++st.violations;
    if (!r.rho) continue;
    ++defined;
    total += *r.rho;
    st.min = std::min(st.min, *r.rho);
    if (r.case_tag == ContractionCase::common) {
      ++common;
      if (*r.rho < *r.lower_bound - 1e-12) ++st.violations;
    }
  }
  st.samples = data.size();
  st.mean = defined ? total / static_cast<double>(defined) : 0.0;
  if (!defined) st.min = 0.0;
  st.common_fraction = static_cast<double>(common) / static_cast<double>(data.size());
  return st;
}

MetricsRecord evaluate(const DualEncoder& model, const DualEncoder& model_orig, const Dataset& data,
                       const EvaluationRequest& request) {
  require_nonempty(data);
  check_k(request.top_k, model.num_classes());
  const Tensor inputs =
      request.attack ? adversarial_inputs(model, data, *request.attack) : data.inputs;
  MetricsRecord rec;
  rec.model_id = request.model_id;
  rec.dataset_id = request.dataset_id;
  rec.attack = request.attack ? request.attack->describe() : "clean";
  const Prediction pred = predict_distribution(model, inputs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hit += pred.top_class[i] == data.labels[i];
  rec.accuracy = static_cast<double>(hit) / static_cast<double>(data.size());
  rec.top5_iou = topk_iou_on(model, model_orig, data, request.top_k, inputs);
  const ConfidenceStats cs = confidence_similarity_stats(pred);
  rec.conf = cs.conf;
  rec.s_max = cs.s_max;
  rec.s_mean = cs.s_mean;
  rec.rho = rho_statistics(model, model_orig, data, inputs);
  return rec;
}

std::string to_jsonl(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["model_id"] = r.model_id;
  j["dataset_id"] = r.dataset_id;
  j["attack"] = r.attack;
  j["accuracy"] = r.accuracy;
  j["top5_iou"] = r.top5_iou;
  j["conf"] = r.conf;
  j["s_max"] = r.s_max;
  j["s_mean"] = r.s_mean;
  j["rho_stats"] = {{"mean", r.rho.mean},
                    {"min", r.rho.min},
                    {"common_fraction", r.rho.common_fraction},
                    {"violations", r.rho.violations},
                    {"samples", r.rho.samples}};
  return j.dump();
}

std::string csv_header() {
  return "model,dataset,attack,accuracy,top5_iou,conf_x100,s_max_x100,s_mean_x100,rho_mean,"
         "rho_min,rho_common_fraction,rho_violations";
}

std::string to_csv_row(const MetricsRecord& r) {
  return fmt::format("{},{},\"{}\",{:.6f},{:.6f},{:.4f},{:.4f},{:.4f},{:.6f},{:.6f},{:.6f},{}",
                     r.model_id, r.dataset_id, r.attack, r.accuracy, r.top5_iou, 100.0 * r.conf,
                     100.0 * r.s_max, 100.0 * r.s_mean, r.rho.mean, r.rho.min,
                     r.rho.common_fraction, r.rho.violations);
}

}  // namespace agft
