#pragma once

// Experiment stages over an output directory:
//
//   data/{train,test,shifted}.agds
//   models/{clean,tecoa,agft}.ckpt  + <name>.jsonl epoch reports
//   adversarial/<model>_<attack>.agds
//   metrics/metrics.jsonl, metrics/summary.csv
//   ablation/ablation.{csv,jsonl}, ablation_matrix.csv, frontier.csv
//   manifest.json
//
// Each stage reads what earlier stages wrote, so stages can be run one at a
// time or chained by run_pipeline.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "agft/config.hpp"
#include "agft/metrics.hpp"

namespace agft {

struct EmitOptions {
  bool jsonl = true;
  bool csv = true;
};

// Thrown when a stage fails; ConfigError passes through untouched.
class StageError : public std::runtime_error {
 public:
  StageError(const std::string& stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct AblationCell {
  double gamma = 0.0;
  double inv_tau = 0.0;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
  bool pareto = false;
};

void stage_gen_data(const ExperimentConfig& config);
void stage_pretrain(const ExperimentConfig& config);
// `method` empty = every configured fine-tune method.
void stage_finetune(const ExperimentConfig& config, std::optional<TrainMethod> method = {});
// Writes adversarial test sets for the given model (empty = all present).
void stage_attack(const ExperimentConfig& config, const std::string& model = {});
std::vector<MetricsRecord> stage_evaluate(const ExperimentConfig& config, const EmitOptions& emit,
                                          const std::string& model = {});
std::vector<AblationCell> stage_ablate(const ExperimentConfig& config, const EmitOptions& emit);

// Every stage in order; the manifest is refreshed after each one.
void run_pipeline(const ExperimentConfig& config, const EmitOptions& emit);

// Lists config hash, seeds, completed stages and artifact hashes.
void write_manifest(const ExperimentConfig& config, const std::vector<std::string>& stages);

// Marks cells not dominated in (clean, robust) accuracy.
void mark_pareto(std::vector<AblationCell>& cells);

std::string ablation_csv(const std::vector<AblationCell>& cells);
std::string ablation_matrix_csv(const ExperimentConfig& config,
                                const std::vector<AblationCell>& cells);

}  // namespace agft
