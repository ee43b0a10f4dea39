#include <cmath>
#include <random>

#include "doctest.h"

#include "agft/checkpoint.hpp"
#include "agft/error.hpp"
#include "agft/optim.hpp"
#include "agft/trainer.hpp"
#include "test_support.hpp"

using namespace agft;

namespace {

DatasetSplits toy_splits(std::uint64_t seed, std::size_t per_class = 25) {
  SyntheticSpec spec;
  spec.n_per_class = per_class;
  spec.seed = seed;
  return generate_synthetic(spec);
}

DatasetSplits tiny_splits(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.n_per_class = 20;
  spec.input_dim = 36;
  spec.spatial_side = 6;
  spec.noise_sigma = 0.1;
  spec.class_spread = 0.5;
  spec.seed = seed;
  return generate_synthetic(spec);
}

TrainConfig quick(TrainMethod method, std::size_t epochs = 3) {
  TrainConfig tc;
  tc.method = method;
  tc.epochs = epochs;
  tc.batch_size = 16;
  tc.lr = 1e-2;
  tc.seed = 3;
  tc.attack.epsilon = tc.attack.alpha = 8.0 / 255;
  tc.attack.steps = 2;
  if (method == TrainMethod::agft) tc.calibration = CalibrationConfig{};
  return tc;
}

double accuracy(const DualEncoder& m, const Dataset& d) {
  const auto pred = predict_distribution(m, d.inputs).top_class;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < d.size(); ++i) hit += pred[i] == d.labels[i];
  return static_cast<double>(hit) / static_cast<double>(d.size());
}

}  // namespace

TEST_CASE("clean pretraining separates 8 Gaussian clusters") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const DatasetSplits s = toy_splits(seed);
    REQUIRE(s.train.size() == 200);
    // The data must be separable for the threshold to mean anything.
    CHECK(agft::testing::logistic_regression_accuracy(s.train, s.test) >= 0.95);
    TrainConfig tc;
    tc.epochs = 30;
    tc.seed = seed;
    tc.lr = 1e-3;
    const TrainResult r = pretrain_clean(tc, s.train, make_dual_encoder(ModelSpec{}, seed));
    CHECK(accuracy(r.model, s.test) >= 0.95);
    CHECK(r.report.epochs.size() == 30);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  const DatasetSplits s = tiny_splits(1);
  const DualEncoder init = agft::testing::tiny_model(1);
  TrainConfig tc = quick(TrainMethod::clean, 1);
  tc.lr = 0.0;
  const TrainResult r = pretrain_clean(tc, s.train, init);
  CHECK(parameter_checksum(r.model) == parameter_checksum(init));
}

TEST_CASE("same seed twice gives identical checkpoints and reports") {
  const DatasetSplits s = tiny_splits(2);
  const DualEncoder init = agft::testing::tiny_model(2);
  for (TrainMethod m : {TrainMethod::clean, TrainMethod::tecoa, TrainMethod::agft}) {
    const TrainConfig tc = quick(m);
    const DualEncoder* teacher = m == TrainMethod::agft ? &init : nullptr;
    const TrainResult a = adversarial_finetune(tc, s.train, init, teacher, &s.test);
    const TrainResult b = adversarial_finetune(tc, s.train, init, teacher, &s.test);
    CHECK(serialize_checkpoint(a.model) == serialize_checkpoint(b.model));
    CHECK(a.report.epochs == b.report.epochs);
    CHECK(report_jsonl(a.report) == report_jsonl(b.report));
  }
}

TEST_CASE("zero-radius inner max reduces to clean fine-tuning") {
  const DatasetSplits s = tiny_splits(3);
  const DualEncoder init = agft::testing::tiny_model(3);
  TrainConfig tc = quick(TrainMethod::tecoa);
  tc.attack.epsilon = 0.0;
  const TrainResult adv = adversarial_finetune(tc, s.train, init, nullptr, &s.test);
  tc.method = TrainMethod::clean;
  const TrainResult clean = adversarial_finetune(tc, s.train, init, nullptr, &s.test);
  CHECK(serialize_checkpoint(adv.model) == serialize_checkpoint(clean.model));
}

TEST_CASE("agft with a one-hot teacher at gamma 1 matches tecoa losses") {
  // Class k lights up block k of a 36-wide input, and the teacher reads
  // the block sums straight onto orthonormal prototypes.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  Dataset d;
  d.num_classes = 4;
  d.inputs = Tensor({48, 36});
  for (std::size_t i = 0; i < 48; ++i) {
    const auto k = static_cast<std::uint32_t>(i % 4);
    d.labels.push_back(k);
    for (std::size_t j = 0; j < 36; ++j) d.inputs.at(i, j) = (j / 9 == k ? 0.9 : 0.1) + jitter(rng);
  }
  DualEncoder teacher;
  Tensor w({36, 4});
  for (std::size_t j = 0; j < 36; ++j) w.at(j, j / 9) = 1.0;
  Tensor bias({4});
  for (double& v : bias.data()) v = -0.9;
  teacher.layers.push_back(Linear{w, bias});
  teacher.text_prototypes = Tensor({4, 4});
  for (std::size_t k = 0; k < 4; ++k) teacher.text_prototypes.at(k, k) = 1.0;

  TrainConfig tc = quick(TrainMethod::tecoa, 2);
  tc.tau = 1e-3;
  const Tensor target = calibrated_target(teacher, d.inputs, CalibrationConfig{1.0, tc.tau});
  for (std::size_t i = 0; i < 48; ++i) {
    for (std::size_t k = 0; k < 4; ++k) REQUIRE(target.at(i, k) == (k == d.labels[i] ? 1.0 : 0.0));
  }

  std::vector<double> tecoa_losses, agft_losses;
  const DualEncoder init = agft::testing::tiny_model(4);
  adversarial_finetune(tc, d, init, nullptr, nullptr,
                       [&](const BatchTrace& t) { tecoa_losses.push_back(t.loss); });
  tc.method = TrainMethod::agft;
  tc.calibration = CalibrationConfig{1.0, tc.tau};
  adversarial_finetune(tc, d, init, &teacher, nullptr,
                       [&](const BatchTrace& t) { agft_losses.push_back(t.loss); });
  REQUIRE(tecoa_losses.size() == agft_losses.size());
  for (std::size_t i = 0; i < tecoa_losses.size(); ++i) {
    CHECK(std::abs(tecoa_losses[i] - agft_losses[i]) <= 1e-9);
  }
}

TEST_CASE("training attack keeps batch invariants at every step") {
  const DatasetSplits s = tiny_splits(5);
  const DualEncoder init = agft::testing::tiny_model(5);
  for (TrainMethod m : {TrainMethod::tecoa, TrainMethod::agft}) {
    TrainConfig tc = quick(m, 2);
    tc.attack.random_init = true;
    std::size_t seen = 0, bad = 0;
    adversarial_finetune(tc, s.train, init, m == TrainMethod::agft ? &init : nullptr, nullptr,
                         [&](const BatchTrace& t) {
                           ++seen;
                           REQUIRE(t.adversarial != nullptr);
                           const Tensor& xa = t.adversarial->x_adv;
                           if (max_abs_diff(xa, *t.x_clean) > tc.attack.epsilon + 1e-12) ++bad;
                           for (double v : xa.data()) bad += (v < 0.0 || v > 1.0);
                           if (t.adversarial->loss_trace.size() != 3) ++bad;
                           if (!std::isfinite(t.loss)) ++bad;
                         });
    CHECK(seen == 2 * 5);
    CHECK(bad == 0);
  }
}

TEST_CASE("inner maximisation raises the training loss on the final model") {
  const DatasetSplits s = tiny_splits(6);
  const DualEncoder init = agft::testing::tiny_model(6);
  for (TrainMethod m : {TrainMethod::tecoa, TrainMethod::agft}) {
    TrainConfig tc = quick(m, 5);
    const DualEncoder* teacher = m == TrainMethod::agft ? &init : nullptr;
    const TrainResult r = adversarial_finetune(tc, s.train, init, teacher);
    const double tau = r.model.tau;
    std::size_t raised = 0, total = 0;
    for (std::size_t begin = 0; begin < s.test.size(); begin += 8) {
      const std::size_t end = std::min(s.test.size(), begin + 8);
      const Tensor xb = s.test.inputs.slice_rows(begin, end);
      const auto yb = s.test.labels_as_index(begin, end);
      const SupervisionPayload sup =
          teacher ? SupervisionPayload::soft(calibrated_target(*teacher, xb, *tc.calibration))
                  : SupervisionPayload::hard(yb);
      AttackConfig atk = tc.attack;
      atk.seed = begin;
      const AdversarialBatch adv = training_attack(r.model, xb, sup, atk, tau);
      auto loss_at = [&](const Tensor& x) {
        return teacher ? agft_soft_loss(r.model, x, sup.target, tau)
                       : hard_label_ce_loss(r.model, x, yb, tau);
      };
      raised += loss_at(adv.x_adv) >= loss_at(xb);
      ++total;
    }
    CHECK(static_cast<double>(raised) >= 0.95 * static_cast<double>(total));
  }
}

TEST_CASE("epoch learning rates follow the cosine schedule exactly") {
  const DatasetSplits s = tiny_splits(7);
  TrainConfig tc = quick(TrainMethod::clean, 6);
  const TrainResult r = pretrain_clean(tc, s.train, agft::testing::tiny_model(7));
  const std::size_t batches = (s.train.size() + tc.batch_size - 1) / tc.batch_size;
  REQUIRE(r.report.epochs.size() == 6);
  for (std::size_t e = 0; e < 6; ++e) {
    CHECK(r.report.epochs[e].epoch == e + 1);
    CHECK(r.report.epochs[e].lr == cosine_lr(e * batches, 6 * batches, tc.lr));
  }
}

TEST_CASE("teacher parameters are untouched by agft") {
  const DatasetSplits s = tiny_splits(8);
  const DualEncoder teacher = agft::testing::tiny_model(8);
  const std::uint64_t before = parameter_checksum(teacher);
  adversarial_finetune(quick(TrainMethod::agft, 2), s.train, teacher, &teacher);
  CHECK(parameter_checksum(teacher) == before);
}

TEST_CASE("trainer rejects inconsistent inputs") {
  const DatasetSplits s = tiny_splits(9);
  CHECK_THROWS_WITH_AS(pretrain_clean(quick(TrainMethod::clean), s.train,
                                      agft::testing::tiny_model(9, 3)),
                       doctest::Contains("classes"), ContractViolation);
  CHECK_THROWS_AS(adversarial_finetune(quick(TrainMethod::agft), s.train,
                                       agft::testing::tiny_model(9), nullptr),
                  ContractViolation);
  TrainConfig no_cal = quick(TrainMethod::agft);
  no_cal.calibration.reset();
  CHECK_THROWS_AS(no_cal.validate(), ContractViolation);
  CHECK(parse_train_method("agft") == TrainMethod::agft);
  CHECK_THROWS_AS(parse_train_method("trades"), ConfigError);
}

TEST_CASE("report jsonl has one record per epoch") {
  const DatasetSplits s = tiny_splits(10);
  const TrainResult r = pretrain_clean(quick(TrainMethod::clean, 4), s.train, agft::testing::tiny_model(10));
  const std::string text = report_jsonl(r.report);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(text.find("\"robust_accuracy\"") != std::string::npos);
}
