#pragma once

// Experiment configuration: line-oriented `key = value` text with dotted
// section prefixes, e.g.
//
//   seed = 7
//   finetune.attack.epsilon = 8/255
//   eval.attacks = pgd20, cw20
//   eval.attack.pgd20.steps = 20
//
// '#' starts a comment. Numeric values accept a plain literal or a ratio
// "a/b". Unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "agft/attack.hpp"
#include "agft/dataset.hpp"
#include "agft/model.hpp"
#include "agft/trainer.hpp"

namespace agft {

struct NamedAttack {
  std::string name;
  AttackConfig config;
};

struct ExperimentConfig {
  std::filesystem::path output_dir = "agft-out";
  std::uint64_t seed = 0;

  ModelSpec model;
  SyntheticSpec data;  // num_classes, input_dim and seed follow model / seed

  TrainConfig pretrain;  // method = clean
  TrainConfig finetune;  // attack, tau and gamma shared by tecoa and agft
  std::vector<TrainMethod> finetune_methods = {TrainMethod::tecoa, TrainMethod::agft};

  std::size_t top_k = 5;
  std::vector<NamedAttack> eval_attacks;

  std::vector<double> ablate_gammas = {1.0, 0.8, 0.6, 0.4, 0.2};
  std::vector<double> ablate_inv_taus = {100, 140, 180, 220};
  std::string ablate_attack;      // eval attack used for robust accuracy; empty = first
  std::size_t ablate_epochs = 0;  // 0 = finetune.epochs
  std::size_t ablate_workers = 1;

  // Component seeds, all derived from `seed`.
  std::uint64_t data_seed() const;
  std::uint64_t model_seed() const;
  std::uint64_t pretrain_seed() const;
  std::uint64_t finetune_seed(TrainMethod method) const;
  std::uint64_t attack_seed(const std::string& name) const;

  // Fully resolved training configs (seeds, calibration, teacher path).
  TrainConfig pretrain_config() const;
  TrainConfig finetune_config(TrainMethod method) const;
  SyntheticSpec synthetic_spec() const;
  // Evaluation attacks with their derived seeds.
  std::vector<NamedAttack> resolved_eval_attacks() const;
  const NamedAttack& ablation_attack() const;

  void validate() const;
};

ExperimentConfig default_experiment_config();

// Throws ConfigError with the offending line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical form; parse_config(serialize_config(c)) reproduces c.
std::string serialize_config(const ExperimentConfig& config);

// Applies one `key = value` assignment on top of an existing config.
void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value);

// FNV-1a 64 of the canonical form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

std::string format_double(double v);

}  // namespace agft
