#pragma once

// White-box l-infinity attacks: PGD, the iterative FGSM family (MI, NI, DI2,
// TI) and a C&W margin attack run in the same projected sign-gradient loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "agft/autodiff.hpp"
#include "agft/model.hpp"
#include "agft/objectives.hpp"

namespace agft {

enum class AttackFamily { pgd, mi, ni, di2, ti, cw };
enum class TargetStrategy { random, least_likely };

std::string to_string(AttackFamily family);
AttackFamily parse_attack_family(const std::string& name);
std::string to_string(TargetStrategy strategy);
TargetStrategy parse_target_strategy(const std::string& name);

struct TargetSpec {
  TargetStrategy strategy = TargetStrategy::least_likely;
  std::uint64_t seed = 0;
};

struct AttackConfig {
  AttackFamily family = AttackFamily::pgd;
  double epsilon = 1.0 / 255.0;
  double alpha = 1.0 / 255.0;
  std::size_t steps = 20;
  bool random_init = true;      // PGD and CW only
  double momentum_decay = 1.0;  // MI / NI
  double transform_prob = 0.5;  // DI2
  std::size_t kernel_size = 3;  // TI, odd
  std::optional<TargetSpec> targeted;
  std::uint64_t seed = 0;  // random init and DI2 transforms
  double lo = 0.0;
  double hi = 1.0;

  void validate() const;
  std::string describe() const;
};

struct AdversarialBatch {
  Tensor x_adv;
  Tensor perturbation;  // x_adv - x
  // Batch loss at each gradient evaluation, plus the loss at the final
  // iterate (steps + 1 entries).
  std::vector<double> loss_trace;
  // Samples whose gradient went non-finite; they are returned unperturbed.
  std::vector<std::size_t> aborted;
};

// Scalar loss of a batch placed on `tape` as `x`.
using AttackLoss = std::function<Var(Tape& tape, Var x)>;

// clamp(candidate, origin - eps, origin + eps), then clamp to [lo, hi].
Tensor project_linf(const Tensor& candidate, const Tensor& origin, double epsilon, double lo,
                    double hi);

// x_0 = x (+ U[-eps, eps] when random_init), then `steps` of
// x <- project(x + alpha * sign(grad)). Targeted configs descend the loss.
AdversarialBatch pgd_attack(const AttackLoss& loss, const Tensor& x, const AttackConfig& cfg);

// MI / NI / DI2 / TI. DI2 and TI need a square input layout.
AdversarialBatch fgsm_family_attack(const AttackLoss& loss, const Tensor& x,
                                    const AttackConfig& cfg);

// Ascends the logit margin max_{j != y} z_j - z_y (untargeted) or
// z_t - max_{j != t} z_j (targeted, `labels` holding the targets), z = S / tau.
AdversarialBatch cw_linf_attack(const DualEncoder& model, const Tensor& x,
                                std::span<const std::size_t> labels, const AttackConfig& cfg,
                                double tau);

// Least-likely class under the clean prediction, or a uniformly random class
// other than the true one.
std::vector<std::size_t> choose_target(const DualEncoder& model, const Tensor& x_clean,
                                       std::span<const std::size_t> true_labels,
                                       TargetStrategy strategy, std::uint64_t seed);

// Cross-entropy of the model's tau-distribution against `labels`.
AttackLoss label_ce_loss(const DualEncoder& model, std::vector<std::size_t> labels, double tau);
// Loss of an arbitrary supervision payload.
AttackLoss payload_loss(const DualEncoder& model, SupervisionPayload payload, double tau);

// Evaluation entry point: label cross-entropy (or the margin for CW), with
// targets chosen per cfg.targeted.
AdversarialBatch run_attack(const DualEncoder& model, const Tensor& x,
                            std::span<const std::size_t> labels, const AttackConfig& cfg);

// Side length of a square single-channel layout, or nullopt.
std::optional<std::size_t> square_side(std::size_t input_dim);

// Normalised 1-D Gaussian taps used by TI (outer product gives the 2-D kernel).
std::vector<double> ti_kernel_1d(std::size_t size);

}  // namespace agft
