#include "agft/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "agft/checkpoint.hpp"
#include "agft/error.hpp"
#include "agft/optim.hpp"
#include "agft/seed.hpp"

namespace agft {

std::string to_string(TrainMethod method) {
  switch (method) {
    case TrainMethod::clean: return "clean";
    case TrainMethod::tecoa: return "tecoa";
    case TrainMethod::agft: return "agft";
  }
  return "unknown";
}

TrainMethod parse_train_method(const std::string& name) {
  if (name == "clean") return TrainMethod::clean;
  if (name == "tecoa") return TrainMethod::tecoa;
  if (name == "agft") return TrainMethod::agft;
  throw ConfigError("unknown training method '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractViolation("training needs at least one epoch");
  if (batch_size < 1) throw ContractViolation("batch size must be at least 1");
  if (!(lr >= 0.0)) throw ContractViolation("learning rate must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractViolation("momentum must lie in [0, 1)");
  if (tau < 0.0) throw ContractViolation("tau must be positive (or 0 to inherit)");
  if (method != TrainMethod::clean) {
    attack.validate();
    if (attack.targeted) throw ContractViolation("training attacks must be untargeted");
  }
  if (method == TrainMethod::agft) {
    if (!calibration) throw ContractViolation("agft training requires a calibration config");
    calibration->validate();
    if (tau > 0.0 && calibration->tau != tau) {
      throw ContractViolation("agft: calibration tau must equal the training tau");
    }
  }
}

AdversarialBatch training_attack(const DualEncoder& model, const Tensor& x,
                                 const SupervisionPayload& supervision, const AttackConfig& cfg,
                                 double tau) {
  switch (cfg.family) {
    case AttackFamily::pgd:
      return pgd_attack(payload_loss(model, supervision, tau), x, cfg);
    case AttackFamily::cw: {
      std::vector<std::size_t> labels = supervision.kind == SupervisionPayload::Kind::hard_labels
                                            ? supervision.labels
                                            : argmax_rows(supervision.target);
      return cw_linf_attack(model, x, labels, cfg, tau);
    }
    default:
      return fgsm_family_attack(payload_loss(model, supervision, tau), x, cfg);
  }
}

namespace {

double probe_accuracy(const DualEncoder& model, const Tensor& x, std::span<const std::size_t> y,
                      const AttackConfig* attack) {
  Tensor input = attack ? run_attack(model, x, y, *attack).x_adv : x;
  std::vector<std::size_t> pred = predict_distribution(model, input).top_class;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i];
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

TrainResult run_training(const TrainConfig& cfg, const Dataset& data, DualEncoder model,
                         const DualEncoder* teacher, const Dataset* probe,
                         const BatchObserver& observer) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  data.validate();
  validate(model);
  if (data.num_classes != model.num_classes()) {
    throw ContractViolation("dataset has " + std::to_string(data.num_classes) +
                            " classes but the model has " + std::to_string(model.num_classes()));
  }
  if (data.input_dim() != model.input_dim()) {
    throw ContractViolation("dataset input width does not match the model");
  }
  if (cfg.tau > 0.0) model.tau = cfg.tau;
  const double tau = model.tau;

  std::optional<CalibrationConfig> calibration;
  if (cfg.method == TrainMethod::agft) {
    if (teacher == nullptr) throw ContractViolation("agft training requires a teacher model");
    if (teacher->num_classes() != model.num_classes()) {
      throw ContractViolation("teacher and student disagree on the class count");
    }
    calibration = CalibrationConfig{cfg.calibration->gamma, tau};
  }
  const std::uint64_t teacher_sum = teacher ? parameter_checksum(*teacher) : 0;

  const Dataset& probe_set = probe ? *probe : data;
  const std::size_t probe_n = std::min(cfg.probe_size, probe_set.size());
  const Tensor probe_x = probe_set.inputs.slice_rows(0, probe_n);
  const std::vector<std::size_t> probe_y = probe_set.labels_as_index(0, probe_n);
  AttackConfig probe_attack = cfg.attack;
  probe_attack.targeted.reset();
  probe_attack.seed = derive_seed(cfg.seed, 0xfeed);

  const std::size_t n = data.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<Tensor> params = model.parameters();
  OptimizerState state = OptimizerState::for_params(params, cfg.momentum, cfg.lr, cfg.epochs * batches);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainReport report;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = cosine_lr(state.step_index, state.total_steps, state.base_lr);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t begin = b * cfg.batch_size;
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor xb = data.inputs.gather_rows(idx);
      std::vector<std::size_t> yb(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = data.labels[idx[i]];

      const SupervisionPayload supervision =
          cfg.method == TrainMethod::agft
              ? SupervisionPayload::soft(calibrated_target(*teacher, xb, *calibration))
              : SupervisionPayload::hard(yb);

      std::optional<AdversarialBatch> adv;
      if (cfg.method != TrainMethod::clean) {
        AttackConfig atk = cfg.attack;
        atk.seed = derive_seed(cfg.seed, epoch + 1, b);
        adv = training_attack(model, xb, supervision, atk, tau);
      }
      const Tensor& x_in = adv ? adv->x_adv : xb;

      Tape tape;
      EncoderVars vars = bind_parameters(tape, model, true);
      Var lp = class_log_probs(
          similarity_matrix(encode_image(vars, tape.constant(x_in)), model.text_prototypes), tau);
      Var loss = supervised_loss(lp, supervision);
      const double lv = loss.value().item();
      if (!std::isfinite(lv)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch + 1) +
                             ", batch " + std::to_string(b));
      }
      if (observer) observer(BatchTrace{epoch, b, &xb, adv ? &*adv : nullptr, &supervision, lv});
      std::vector<Var> wrt = vars.all();
      std::vector<Tensor> grads = grad(loss, wrt);
      sgd_momentum_step(params, grads, state);
      model.set_parameters(params);
      loss_sum += lv;
    }
    rec.train_loss = loss_sum / static_cast<double>(batches);
    rec.clean_accuracy = probe_accuracy(model, probe_x, probe_y, nullptr);
    rec.robust_accuracy = probe_accuracy(model, probe_x, probe_y, &probe_attack);
    spdlog::info("{} epoch {}/{}: loss {:.5f} clean {:.3f} robust {:.3f} lr {:.3g}",
                 to_string(cfg.method), rec.epoch, cfg.epochs, rec.train_loss, rec.clean_accuracy,
                 rec.robust_accuracy, rec.lr);
    report.epochs.push_back(rec);
  }

  if (teacher && parameter_checksum(*teacher) != teacher_sum) {
    throw NumericalError("teacher parameters changed during training");
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return TrainResult{std::move(model), std::move(report)};
}

}  // namespace

TrainResult pretrain_clean(const TrainConfig& config, const Dataset& train, DualEncoder init,
                           const Dataset* probe, const BatchObserver& observer) {
  if (config.method != TrainMethod::clean) {
    throw ContractViolation("pretrain_clean requires method = clean");
  }
  return run_training(config, train, std::move(init), nullptr, probe, observer);
}

TrainResult adversarial_finetune(const TrainConfig& config, const Dataset& train, DualEncoder init,
                                 const DualEncoder* teacher, const Dataset* probe,
                                 const BatchObserver& observer) {
  std::optional<DualEncoder> loaded;
  if (config.method == TrainMethod::agft && teacher == nullptr) {
    if (config.teacher_checkpoint.empty()) {
      throw ContractViolation("agft training requires a teacher model or teacher checkpoint");
    }
    loaded = load_checkpoint(config.teacher_checkpoint);
    teacher = &*loaded;
  }
  return run_training(config, train, std::move(init), teacher, probe, observer);
}

std::string report_jsonl(const TrainReport& report) {
  std::string out;
  for (const EpochRecord& r : report.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["clean_accuracy"] = r.clean_accuracy;
    j["robust_accuracy"] = r.robust_accuracy;
    j["lr"] = r.lr;
    out += j.dump() + "\n";
  }
  return out;
}

void write_report_jsonl(const TrainReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training report '" + path.string() + "'");
  out << report_jsonl(report);
}

}  // namespace agft
