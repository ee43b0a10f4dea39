#include "agft/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <spdlog/fmt/fmt.h>

#include "agft/error.hpp"
#include "agft/seed.hpp"

namespace agft {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_number(const std::string& key, const std::string& text) {
  auto one = [&](const std::string& part) {
    double v = 0.0;
    const std::string t = trim(part);
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
      throw ConfigError("'" + key + "': cannot parse number '" + text + "'");
    }
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string::npos) return one(text);
  const double den = one(text.substr(slash + 1));
  if (den == 0.0) throw ConfigError("'" + key + "': division by zero in '" + text + "'");
  return one(text.substr(0, slash)) / den;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const std::string t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError("'" + key + "': expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + text + "'");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

AttackConfig default_eval_attack() {
  AttackConfig a;
  a.family = AttackFamily::pgd;
  a.epsilon = 8.0 / 255.0;
  a.alpha = 1.0 / 255.0;
  a.steps = 20;
  a.random_init = true;
  return a;
}

void set_attack_field(AttackConfig& a, const std::string& key, const std::string& field,
                      const std::string& value) {
  if (field == "family") {
    a.family = parse_attack_family(value);
  } else if (field == "epsilon") {
    a.epsilon = parse_number(key, value);
  } else if (field == "alpha") {
    a.alpha = parse_number(key, value);
  } else if (field == "steps") {
    a.steps = parse_uint(key, value);
  } else if (field == "random_init") {
    a.random_init = parse_bool(key, value);
  } else if (field == "momentum_decay") {
    a.momentum_decay = parse_number(key, value);
  } else if (field == "transform_prob") {
    a.transform_prob = parse_number(key, value);
  } else if (field == "kernel_size") {
    a.kernel_size = parse_uint(key, value);
  } else if (field == "target") {
    if (value == "none") {
      a.targeted.reset();
    } else {
      a.targeted = TargetSpec{parse_target_strategy(value), 0};
    }
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void emit_attack(std::ostringstream& out, const std::string& prefix, const AttackConfig& a) {
  out << prefix << "family = " << to_string(a.family) << "\n";
  out << prefix << "epsilon = " << format_double(a.epsilon) << "\n";
  out << prefix << "alpha = " << format_double(a.alpha) << "\n";
  out << prefix << "steps = " << a.steps << "\n";
  out << prefix << "random_init = " << (a.random_init ? "true" : "false") << "\n";
  out << prefix << "momentum_decay = " << format_double(a.momentum_decay) << "\n";
  out << prefix << "transform_prob = " << format_double(a.transform_prob) << "\n";
  out << prefix << "kernel_size = " << a.kernel_size << "\n";
  out << prefix << "target = " << (a.targeted ? to_string(a.targeted->strategy) : "none") << "\n";
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt_item) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += fmt_item(items[i]);
  }
  return out;
}

void set_train_field(TrainConfig& t, const std::string& key, const std::string& field,
                     const std::string& value) {
  if (field == "epochs") {
    t.epochs = parse_uint(key, value);
  } else if (field == "batch_size") {
    t.batch_size = parse_uint(key, value);
  } else if (field == "lr") {
    t.lr = parse_number(key, value);
  } else if (field == "momentum") {
    t.momentum = parse_number(key, value);
  } else if (field == "probe_size") {
    t.probe_size = parse_uint(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

void emit_train(std::ostringstream& out, const std::string& prefix, const TrainConfig& t) {
  out << prefix << "epochs = " << t.epochs << "\n";
  out << prefix << "batch_size = " << t.batch_size << "\n";
  out << prefix << "lr = " << format_double(t.lr) << "\n";
  out << prefix << "momentum = " << format_double(t.momentum) << "\n";
  out << prefix << "probe_size = " << t.probe_size << "\n";
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::uint64_t ExperimentConfig::data_seed() const { return derive_seed(seed, 1); }
std::uint64_t ExperimentConfig::model_seed() const { return derive_seed(seed, 2); }
std::uint64_t ExperimentConfig::pretrain_seed() const { return derive_seed(seed, 3); }
std::uint64_t ExperimentConfig::finetune_seed(TrainMethod method) const {
  return derive_seed(seed, 4, static_cast<std::uint64_t>(method));
}
std::uint64_t ExperimentConfig::attack_seed(const std::string& name) const {
  return derive_seed(seed, 5, fnv1a(name));
}

TrainConfig ExperimentConfig::pretrain_config() const {
  TrainConfig t = pretrain;
  t.method = TrainMethod::clean;
  t.seed = pretrain_seed();
  t.tau = 0.0;
  t.attack = resolved_eval_attacks().empty() ? finetune.attack : resolved_eval_attacks().front().config;
  t.attack.targeted.reset();
  t.calibration.reset();
  return t;
}

TrainConfig ExperimentConfig::finetune_config(TrainMethod method) const {
  TrainConfig t = finetune;
  t.method = method;
  t.seed = finetune_seed(method);
  if (method == TrainMethod::agft) {
    t.calibration = CalibrationConfig{finetune.calibration ? finetune.calibration->gamma : 0.4, t.tau};
    t.teacher_checkpoint = output_dir / "models" / "clean.ckpt";
  } else {
    t.calibration.reset();
  }
  return t;
}

SyntheticSpec ExperimentConfig::synthetic_spec() const {
  SyntheticSpec s = data;
  s.num_classes = model.num_classes;
  s.input_dim = model.input_dim;
  s.seed = data_seed();
  return s;
}

std::vector<NamedAttack> ExperimentConfig::resolved_eval_attacks() const {
  std::vector<NamedAttack> out = eval_attacks;
  for (NamedAttack& a : out) {
    a.config.seed = attack_seed(a.name);
    if (a.config.targeted) a.config.targeted->seed = derive_seed(a.config.seed, 0x7a);
  }
  return out;
}

const NamedAttack& ExperimentConfig::ablation_attack() const {
  if (eval_attacks.empty()) throw ConfigError("ablation needs at least one evaluation attack");
  if (ablate_attack.empty()) return eval_attacks.front();
  for (const NamedAttack& a : eval_attacks) {
    if (a.name == ablate_attack) return a;
  }
  throw ConfigError("ablate.attack names unknown attack '" + ablate_attack + "'");
}

void ExperimentConfig::validate() const {
  try {
    if (model.input_dim == 0 || model.embed_dim == 0 || model.num_classes == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (!(model.tau > 0.0)) throw ConfigError("model.tau must be positive");
    if (data.spatial_side != 0 && data.spatial_side * data.spatial_side != model.input_dim) {
      throw ConfigError("data.spatial_side^2 must equal model.input_dim");
    }
    if (top_k == 0 || top_k > model.num_classes) throw ConfigError("eval.top_k must lie in [1, K]");
    pretrain_config().validate();
    for (TrainMethod m : finetune_methods) {
      if (m == TrainMethod::clean) throw ConfigError("finetune.methods accepts tecoa and agft");
      finetune_config(m).validate();
    }
    for (const NamedAttack& a : eval_attacks) a.config.validate();
    for (double g : ablate_gammas) {
      if (!(g > 0.0 && g <= 1.0)) throw ConfigError("ablate.gammas must lie in (0, 1]");
    }
    for (double it : ablate_inv_taus) {
      if (!(it > 0.0)) throw ConfigError("ablate.inv_taus must be positive");
    }
    if (ablate_workers == 0) throw ConfigError("ablate.workers must be at least 1");
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  // Tight clusters whose means differ by a few hundredths per pixel, so an
  // 8/255 budget is enough to break an undefended model.
  c.data.noise_sigma = 0.1;
  c.data.shift_sigma = 0.05;
  c.data.class_spread = 0.25;
  c.pretrain.method = TrainMethod::clean;
  c.pretrain.epochs = 30;
  c.pretrain.batch_size = 32;
  c.pretrain.lr = 1e-3;
  c.pretrain.momentum = 0.9;
  c.finetune.epochs = 30;
  c.finetune.batch_size = 32;
  c.finetune.lr = 1e-3;
  c.finetune.momentum = 0.9;
  c.finetune.tau = 1.0 / 180.0;
  c.finetune.calibration = CalibrationConfig{0.4, 1.0 / 180.0};
  c.finetune.attack.family = AttackFamily::pgd;
  c.finetune.attack.epsilon = 8.0 / 255.0;
  c.finetune.attack.alpha = 8.0 / 255.0;
  c.finetune.attack.steps = 2;
  c.finetune.attack.random_init = true;
  c.eval_attacks = {NamedAttack{"pgd20", default_eval_attack()}};
  return c;
}

void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto starts = [&key](const std::string& p) { return key.rfind(p, 0) == 0; };
  if (key == "output.dir") {
    c.output_dir = value;
  } else if (key == "seed") {
    c.seed = parse_uint(key, value);
  } else if (key == "model.input_dim") {
    c.model.input_dim = parse_uint(key, value);
  } else if (key == "model.hidden") {
    c.model.hidden.clear();
    for (const std::string& h : split_list(value)) c.model.hidden.push_back(parse_uint(key, h));
  } else if (key == "model.embed_dim") {
    c.model.embed_dim = parse_uint(key, value);
  } else if (key == "model.classes") {
    c.model.num_classes = parse_uint(key, value);
  } else if (key == "model.tau") {
    c.model.tau = parse_number(key, value);
  } else if (key == "data.n_per_class") {
    c.data.n_per_class = parse_uint(key, value);
  } else if (key == "data.spatial_side") {
    c.data.spatial_side = parse_uint(key, value);
  } else if (key == "data.noise_sigma") {
    c.data.noise_sigma = parse_number(key, value);
  } else if (key == "data.shift_sigma") {
    c.data.shift_sigma = parse_number(key, value);
  } else if (key == "data.class_spread") {
    c.data.class_spread = parse_number(key, value);
  } else if (starts("pretrain.")) {
    set_train_field(c.pretrain, key, key.substr(9), value);
  } else if (key == "finetune.methods") {
    c.finetune_methods.clear();
    for (const std::string& m : split_list(value)) c.finetune_methods.push_back(parse_train_method(m));
  } else if (key == "finetune.tau") {
    c.finetune.tau = parse_number(key, value);
  } else if (key == "finetune.gamma") {
    c.finetune.calibration = CalibrationConfig{parse_number(key, value), c.finetune.tau};
  } else if (starts("finetune.attack.")) {
    set_attack_field(c.finetune.attack, key, key.substr(16), value);
  } else if (starts("finetune.")) {
    set_train_field(c.finetune, key, key.substr(9), value);
  } else if (key == "eval.top_k") {
    c.top_k = parse_uint(key, value);
  } else if (key == "eval.attacks") {
    std::vector<NamedAttack> next;
    for (const std::string& name : split_list(value)) {
      auto it = std::find_if(c.eval_attacks.begin(), c.eval_attacks.end(),
                             [&](const NamedAttack& a) { return a.name == name; });
      next.push_back(it != c.eval_attacks.end() ? *it : NamedAttack{name, default_eval_attack()});
    }
    c.eval_attacks = std::move(next);
  } else if (starts("eval.attack.")) {
    const std::string rest = key.substr(12);
    const auto dot = rest.find('.');
    if (dot == std::string::npos) throw ConfigError("unknown config key '" + key + "'");
    const std::string name = rest.substr(0, dot);
    auto it = std::find_if(c.eval_attacks.begin(), c.eval_attacks.end(),
                           [&](const NamedAttack& a) { return a.name == name; });
    if (it == c.eval_attacks.end()) {
      throw ConfigError("'" + key + "': attack '" + name + "' is not listed in eval.attacks");
    }
    set_attack_field(it->config, key, rest.substr(dot + 1), value);
  } else if (key == "ablate.gammas") {
    c.ablate_gammas.clear();
    for (const std::string& g : split_list(value)) c.ablate_gammas.push_back(parse_number(key, g));
  } else if (key == "ablate.inv_taus") {
    c.ablate_inv_taus.clear();
    for (const std::string& t : split_list(value)) c.ablate_inv_taus.push_back(parse_number(key, t));
  } else if (key == "ablate.attack") {
    c.ablate_attack = value;
  } else if (key == "ablate.epochs") {
    c.ablate_epochs = parse_uint(key, value);
  } else if (key == "ablate.workers") {
    c.ablate_workers = parse_uint(key, value);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

ExperimentConfig parse_config(const std::string& text) {
  struct Line {
    std::size_t number;
    std::string key, value;
  };
  std::vector<Line> lines;
  std::istringstream in(text);
  std::string raw;
  for (std::size_t no = 1; std::getline(in, raw); ++no) {
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(no) + ": expected 'key = value'");
    }
    Line l{no, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (l.key.empty()) throw ConfigError("config line " + std::to_string(no) + ": empty key");
    lines.push_back(std::move(l));
  }
  // The attack list and the shared tau must exist before keys that refer to them.
  auto rank = [](const Line& l) {
    if (l.key == "eval.attacks") return 0;
    if (l.key == "finetune.tau") return 1;
    return 2;
  };
  std::stable_sort(lines.begin(), lines.end(),
                   [&](const Line& a, const Line& b) { return rank(a) < rank(b); });
  ExperimentConfig c = default_experiment_config();
  for (const Line& l : lines) {
    try {
      set_config_value(c, l.key, l.value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(l.number) + ": " + e.what());
    }
  }
  if (c.finetune.calibration) c.finetune.calibration->tau = c.finetune.tau;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  auto num = [](double v) { return format_double(v); };
  auto uint = [](std::size_t v) { return std::to_string(v); };
  out << "output.dir = " << c.output_dir.string() << "\n";
  out << "seed = " << c.seed << "\n";
  out << "model.input_dim = " << c.model.input_dim << "\n";
  out << "model.hidden = " << join(c.model.hidden, uint) << "\n";
  out << "model.embed_dim = " << c.model.embed_dim << "\n";
  out << "model.classes = " << c.model.num_classes << "\n";
  out << "model.tau = " << num(c.model.tau) << "\n";
  out << "data.n_per_class = " << c.data.n_per_class << "\n";
  out << "data.spatial_side = " << c.data.spatial_side << "\n";
  out << "data.noise_sigma = " << num(c.data.noise_sigma) << "\n";
  out << "data.shift_sigma = " << num(c.data.shift_sigma) << "\n";
  out << "data.class_spread = " << num(c.data.class_spread) << "\n";
  emit_train(out, "pretrain.", c.pretrain);
  out << "finetune.methods = "
      << join(c.finetune_methods, [](TrainMethod m) { return to_string(m); }) << "\n";
  emit_train(out, "finetune.", c.finetune);
  out << "finetune.tau = " << num(c.finetune.tau) << "\n";
  out << "finetune.gamma = " << num(c.finetune.calibration ? c.finetune.calibration->gamma : 0.4)
      << "\n";
  emit_attack(out, "finetune.attack.", c.finetune.attack);
  out << "eval.top_k = " << c.top_k << "\n";
  out << "eval.attacks = " << join(c.eval_attacks, [](const NamedAttack& a) { return a.name; })
      << "\n";
  for (const NamedAttack& a : c.eval_attacks) emit_attack(out, "eval.attack." + a.name + ".", a.config);
  out << "ablate.gammas = " << join(c.ablate_gammas, num) << "\n";
  out << "ablate.inv_taus = " << join(c.ablate_inv_taus, num) << "\n";
  out << "ablate.attack = " << c.ablate_attack << "\n";
  out << "ablate.epochs = " << c.ablate_epochs << "\n";
  out << "ablate.workers = " << c.ablate_workers << "\n";
  return out.str();
}

std::string config_hash(const ExperimentConfig& config) {
  return fmt::format("{:016x}", fnv1a(serialize_config(config)));
}

}  // namespace agft
