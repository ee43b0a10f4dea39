#include "agft/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"
#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "agft/binary_io.hpp"
#include "agft/checkpoint.hpp"
#include "agft/error.hpp"

namespace agft {

namespace fs = std::filesystem;

namespace {

fs::path data_path(const ExperimentConfig& c, const std::string& split) {
  return c.output_dir / "data" / (split + ".agds");
}
fs::path model_path(const ExperimentConfig& c, const std::string& name) {
  return c.output_dir / "models" / (name + ".ckpt");
}

Dataset load_split(const ExperimentConfig& c, const std::string& split) {
  const fs::path p = data_path(c, split);
  if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + " (run gen-data first)");
  return read_dataset(p);
}

DualEncoder load_model(const ExperimentConfig& c, const std::string& name) {
  const fs::path p = model_path(c, name);
  if (!fs::exists(p)) throw std::runtime_error("missing checkpoint " + p.string());
  return load_checkpoint(p);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

template <typename F>
auto run_stage(const std::string& name, F&& body) -> decltype(body()) {
  spdlog::info("stage {}", name);
  try {
    return body();
  } catch (const ConfigError&) {
    throw;
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::vector<std::string> models_present(const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (const char* name : {"clean", "tecoa", "agft"}) {
    if (fs::exists(model_path(c, name))) out.emplace_back(name);
  }
  return out;
}

std::uint64_t fnv1a_bytes(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

TrainResult finetune_one(const TrainConfig& tc, const Dataset& train, const Dataset& test,
                         const DualEncoder& clean) {
  return adversarial_finetune(tc, train, clean, &clean, &test);
}

}  // namespace

void stage_gen_data(const ExperimentConfig& config) {
  run_stage("gen-data", [&] {
    DatasetSplits s = generate_synthetic(config.synthetic_spec());
    write_dataset(data_path(config, "train"), s.train);
    write_dataset(data_path(config, "test"), s.test);
    write_dataset(data_path(config, "shifted"), s.shifted);
  });
}

void stage_pretrain(const ExperimentConfig& config) {
  run_stage("pretrain", [&] {
    const Dataset train = load_split(config, "train");
    const Dataset test = load_split(config, "test");
    ModelSpec spec = config.model;
    DualEncoder init = make_dual_encoder(spec, config.model_seed());
    TrainResult r = pretrain_clean(config.pretrain_config(), train, std::move(init), &test);
    save_checkpoint(r.model, model_path(config, "clean"));
    write_report_jsonl(r.report, config.output_dir / "models" / "clean.jsonl");
  });
}

void stage_finetune(const ExperimentConfig& config, std::optional<TrainMethod> method) {
  run_stage("finetune", [&] {
    const Dataset train = load_split(config, "train");
    const Dataset test = load_split(config, "test");
    const DualEncoder clean = load_model(config, "clean");
    std::vector<TrainMethod> methods =
        method ? std::vector<TrainMethod>{*method} : config.finetune_methods;
    for (TrainMethod m : methods) {
      if (m == TrainMethod::clean) throw ConfigError("finetune accepts tecoa or agft");
      TrainResult r = finetune_one(config.finetune_config(m), train, test, clean);
      save_checkpoint(r.model, model_path(config, to_string(m)));
      write_report_jsonl(r.report, config.output_dir / "models" / (to_string(m) + ".jsonl"));
    }
  });
}

void stage_attack(const ExperimentConfig& config, const std::string& model) {
  run_stage("attack", [&] {
    const Dataset test = load_split(config, "test");
    const std::vector<std::string> names =
        model.empty() ? models_present(config) : std::vector<std::string>{model};
    for (const std::string& name : names) {
      const DualEncoder m = load_model(config, name);
      for (const NamedAttack& a : config.resolved_eval_attacks()) {
        Dataset adv = test;
        adv.inputs = adversarial_inputs(m, test, a.config);
        write_dataset(config.output_dir / "adversarial" / (name + "_" + a.name + ".agds"), adv);
      }
    }
  });
}

std::vector<MetricsRecord> stage_evaluate(const ExperimentConfig& config, const EmitOptions& emit,
                                          const std::string& model) {
  return run_stage("evaluate", [&] {
    const DualEncoder orig = load_model(config, "clean");
    const std::vector<std::string> names =
        model.empty() ? models_present(config) : std::vector<std::string>{model};
    const std::vector<NamedAttack> attacks = config.resolved_eval_attacks();
    std::vector<MetricsRecord> records;
    for (const char* split : {"test", "shifted"}) {
      const Dataset data = load_split(config, split);
      for (const std::string& name : names) {
        const DualEncoder m = load_model(config, name);
        EvaluationRequest req{name, split, std::nullopt, config.top_k};
        records.push_back(evaluate(m, orig, data, req));
        for (const NamedAttack& a : attacks) {
          req.attack = a.config;
          MetricsRecord rec = evaluate(m, orig, data, req);
          rec.attack = a.name;
          records.push_back(rec);
        }
      }
    }
    if (emit.jsonl) {
      std::string text;
      for (const MetricsRecord& r : records) text += to_jsonl(r) + "\n";
      write_text(config.output_dir / "metrics" / "metrics.jsonl", text);
    }
    if (emit.csv) {
      std::string text = csv_header() + "\n";
      for (const MetricsRecord& r : records) text += to_csv_row(r) + "\n";
      write_text(config.output_dir / "metrics" / "summary.csv", text);
    }
    for (const MetricsRecord& r : records) {
      spdlog::info("{:>6} {:>8} {:>10}: acc {:.3f} iou {:.3f} conf {:.3f}", r.model_id,
                   r.dataset_id, r.attack, r.accuracy, r.top5_iou, r.conf);
    }
    return records;
  });
}

void mark_pareto(std::vector<AblationCell>& cells) {
  for (AblationCell& a : cells) {
    a.pareto = std::none_of(cells.begin(), cells.end(), [&a](const AblationCell& b) {
      return b.clean_accuracy >= a.clean_accuracy && b.robust_accuracy >= a.robust_accuracy &&
             (b.clean_accuracy > a.clean_accuracy || b.robust_accuracy > a.robust_accuracy);
    });
  }
}

std::string ablation_csv(const std::vector<AblationCell>& cells) {
  std::string out = "gamma,inv_tau,clean_accuracy,robust_accuracy\n";
  for (const AblationCell& c : cells) {
    out += fmt::format("{},{},{:.6f},{:.6f}\n", format_double(c.gamma), format_double(c.inv_tau),
                       c.clean_accuracy, c.robust_accuracy);
  }
  return out;
}

std::string ablation_matrix_csv(const ExperimentConfig& config,
                                const std::vector<AblationCell>& cells) {
  // Rows are gamma, columns are 1/tau, cells read "clean/robust" in percent.
  std::string out = "gamma";
  for (double it : config.ablate_inv_taus) out += ",inv_tau=" + format_double(it);
  out += "\n";
  for (std::size_t g = 0; g < config.ablate_gammas.size(); ++g) {
    out += format_double(config.ablate_gammas[g]);
    for (std::size_t t = 0; t < config.ablate_inv_taus.size(); ++t) {
      const AblationCell& c = cells[g * config.ablate_inv_taus.size() + t];
      out += fmt::format(",{:.2f}/{:.2f}", 100.0 * c.clean_accuracy, 100.0 * c.robust_accuracy);
    }
    out += "\n";
  }
  return out;
}

std::vector<AblationCell> stage_ablate(const ExperimentConfig& config, const EmitOptions& emit) {
  if (config.ablate_gammas.empty() || config.ablate_inv_taus.empty()) {
    throw ConfigError("ablation grid is empty");
  }
  const NamedAttack robust_attack = [&] {
    const std::string name = config.ablation_attack().name;
    for (const NamedAttack& a : config.resolved_eval_attacks()) {
      if (a.name == name) return a;
    }
    throw ConfigError("unknown ablation attack");
  }();
  return run_stage("ablate", [&] {
    const Dataset train = load_split(config, "train");
    const Dataset test = load_split(config, "test");
    const DualEncoder clean = load_model(config, "clean");

    std::vector<AblationCell> cells;
    for (double g : config.ablate_gammas) {
      for (double it : config.ablate_inv_taus) cells.push_back(AblationCell{g, it, 0, 0, false});
    }
    std::vector<std::string> errors(cells.size());
    std::mutex log_mutex;
    auto run_cell = [&](std::size_t i) {
      try {
        AblationCell& cell = cells[i];
        TrainConfig tc = config.finetune_config(TrainMethod::agft);
        tc.tau = 1.0 / cell.inv_tau;
        tc.calibration = CalibrationConfig{cell.gamma, tc.tau};
        if (config.ablate_epochs > 0) tc.epochs = config.ablate_epochs;
        TrainResult r = finetune_one(tc, train, test, clean);
        cell.clean_accuracy = accuracy(r.model, test);
        cell.robust_accuracy = accuracy(r.model, test, &robust_attack.config);
        std::lock_guard<std::mutex> lock(log_mutex);
        spdlog::info("ablate gamma {} 1/tau {}: clean {:.3f} robust {:.3f}", cell.gamma,
                     cell.inv_tau, cell.clean_accuracy, cell.robust_accuracy);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    };
    const std::size_t workers = std::min(config.ablate_workers, cells.size());
    if (workers <= 1) {
      for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t i = w; i < cells.size(); i += workers) run_cell(i);
        });
      }
      for (std::thread& t : pool) t.join();
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!errors[i].empty()) {
        throw std::runtime_error(fmt::format("cell gamma={} 1/tau={}: {}", cells[i].gamma,
                                             cells[i].inv_tau, errors[i]));
      }
    }
    mark_pareto(cells);

    const fs::path dir = config.output_dir / "ablation";
    if (emit.csv) {
      write_text(dir / "ablation.csv", ablation_csv(cells));
      write_text(dir / "ablation_matrix.csv", ablation_matrix_csv(config, cells));
      std::string frontier = "gamma,inv_tau,clean_accuracy,robust_accuracy,pareto\n";
      for (const AblationCell& c : cells) {
        frontier += fmt::format("{},{},{:.6f},{:.6f},{}\n", format_double(c.gamma),
                                format_double(c.inv_tau), c.clean_accuracy, c.robust_accuracy,
                                c.pareto ? 1 : 0);
      }
      write_text(dir / "frontier.csv", frontier);
    }
    if (emit.jsonl) {
      std::string text;
      for (const AblationCell& c : cells) {
        nlohmann::ordered_json j;
        j["gamma"] = c.gamma;
        j["inv_tau"] = c.inv_tau;
        j["clean_accuracy"] = c.clean_accuracy;
        j["robust_accuracy"] = c.robust_accuracy;
        j["pareto"] = c.pareto;
        text += j.dump() + "\n";
      }
      write_text(dir / "ablation.jsonl", text);
    }
    return cells;
  });
}

void write_manifest(const ExperimentConfig& config, const std::vector<std::string>& stages) {
  const fs::path path = config.output_dir / "manifest.json";
  std::vector<std::string> all;
  if (fs::exists(path)) {
    try {
      auto old = nlohmann::json::parse(std::ifstream(path));
      if (old.value("config_hash", "") == config_hash(config)) {
        all = old.value("stages", std::vector<std::string>{});
      }
    } catch (const std::exception&) {
      spdlog::warn("ignoring unreadable manifest {}", path.string());
    }
  }
  for (const std::string& s : stages) {
    if (std::find(all.begin(), all.end(), s) == all.end()) all.push_back(s);
  }

  nlohmann::ordered_json j;
  j["config_hash"] = config_hash(config);
  j["seed"] = config.seed;
  nlohmann::ordered_json seeds;
  seeds["data"] = config.data_seed();
  seeds["model"] = config.model_seed();
  seeds["pretrain"] = config.pretrain_seed();
  for (TrainMethod m : {TrainMethod::tecoa, TrainMethod::agft}) {
    seeds["finetune_" + to_string(m)] = config.finetune_seed(m);
  }
  for (const NamedAttack& a : config.resolved_eval_attacks()) {
    seeds["attack_" + a.name] = a.config.seed;
  }
  j["seeds"] = seeds;
  j["stages"] = all;

  std::vector<fs::path> files;
  if (fs::exists(config.output_dir)) {
    for (const auto& e : fs::recursive_directory_iterator(config.output_dir)) {
      if (e.is_regular_file() && e.path() != path) files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  nlohmann::ordered_json artifacts = nlohmann::ordered_json::object();
  for (const fs::path& f : files) {
    artifacts[fs::relative(f, config.output_dir).generic_string()] =
        fmt::format("{:016x}", fnv1a_bytes(io::read_file(f)));
  }
  j["artifacts"] = artifacts;
  write_text(path, j.dump(2) + "\n");
}

void run_pipeline(const ExperimentConfig& config, const EmitOptions& emit) {
  config.validate();
  std::vector<std::string> done;
  auto step = [&](const std::string& name, auto&& body) {
    try {
      body();
    } catch (...) {
      write_manifest(config, done);
      throw;
    }
    done.push_back(name);
    write_manifest(config, done);
  };
  step("gen-data", [&] { stage_gen_data(config); });
  step("pretrain", [&] { stage_pretrain(config); });
  step("finetune", [&] { stage_finetune(config); });
  step("attack", [&] { stage_attack(config); });
  step("evaluate", [&] { stage_evaluate(config, emit); });
  step("ablate", [&] { stage_ablate(config, emit); });
}

}  // namespace agft
