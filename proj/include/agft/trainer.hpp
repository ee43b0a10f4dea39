#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "agft/attack.hpp"
#include "agft/dataset.hpp"
#include "agft/model.hpp"
#include "agft/objectives.hpp"

namespace agft {

enum class TrainMethod { clean, tecoa, agft };
std::string to_string(TrainMethod method);
TrainMethod parse_train_method(const std::string& name);

struct TrainConfig {
  TrainMethod method = TrainMethod::clean;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-2;
  double momentum = 0.9;
  // Temperature shared by the student loss and the calibrated target.
  // 0 keeps the initial model's tau.
  double tau = 0.0;
  AttackConfig attack;                           // inner maximisation
  std::optional<CalibrationConfig> calibration;  // agft only
  std::uint64_t seed = 0;
  std::filesystem::path teacher_checkpoint;      // agft, when no teacher is passed in
  std::size_t probe_size = 64;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double clean_accuracy = 0.0;
  double robust_accuracy = 0.0;
  double lr = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::filesystem::path checkpoint_path;
  double wall_seconds = 0.0;
};

struct TrainResult {
  DualEncoder model;
  TrainReport report;
};

// One outer-minimisation step, exposed for inspection in tests.
struct BatchTrace {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  const Tensor* x_clean = nullptr;
  const AdversarialBatch* adversarial = nullptr;  // null when no inner max ran
  const SupervisionPayload* supervision = nullptr;
  double loss = 0.0;  // training loss at the attacked inputs, before the update
};
using BatchObserver = std::function<void(const BatchTrace&)>;

// Hard-label cross-entropy on clean data from `init`.
TrainResult pretrain_clean(const TrainConfig& config, const Dataset& train, DualEncoder init,
                           const Dataset* probe = nullptr, const BatchObserver& observer = {});

// Min-max fine-tuning from `init`: per batch, build the supervision (labels
// or calibrated teacher targets on clean inputs), maximise the training loss
// with the configured attack, then take one optimiser step at the attacked
// inputs. method = clean skips the inner max.
TrainResult adversarial_finetune(const TrainConfig& config, const Dataset& train, DualEncoder init,
                                 const DualEncoder* teacher, const Dataset* probe = nullptr,
                                 const BatchObserver& observer = {});

// One JSON object per epoch.
std::string report_jsonl(const TrainReport& report);
void write_report_jsonl(const TrainReport& report, const std::filesystem::path& path);

// Inner-max attack for a training supervision payload.
AdversarialBatch training_attack(const DualEncoder& model, const Tensor& x,
                                 const SupervisionPayload& supervision, const AttackConfig& cfg,
                                 double tau);

}  // namespace agft
