// agft-cli: drives the experiment stages through the C API.
//
//   agft-cli pipeline --config exp.cfg --emit both
//   agft-cli finetune --config exp.cfg --method agft --seed 3
//
// Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "agft/agft.h"

namespace {

struct Options {
  std::string config_path;
  std::string seed;
  std::string emit = "both";
  std::string output_dir;
  std::vector<std::string> overrides;
  std::string method;
  std::string model;
  bool verbose = false;
  bool quiet = false;
};

int exit_code(agft_status s) {
  if (s == AGFT_OK) return 0;
  return s == AGFT_ERR_CONFIG ? 1 : 2;
}

int report(agft_status s) {
  if (s != AGFT_OK) std::fprintf(stderr, "agft-cli: error: %s\n", agft_last_error());
  return exit_code(s);
}

int emit_flags(const std::string& emit) {
  if (emit == "jsonl") return AGFT_EMIT_JSONL;
  if (emit == "csv") return AGFT_EMIT_CSV;
  return AGFT_EMIT_BOTH;
}

// Loads the config and applies command-line overrides in order.
agft_status build_config(const Options& opt, agft_config** out) {
  agft_status s = opt.config_path.empty() ? agft_config_default(out)
                                          : agft_config_load(opt.config_path.c_str(), out);
  if (s != AGFT_OK) {
    std::fprintf(stderr, "agft-cli: error: %s\n", agft_last_error());
    return s;
  }
  auto set = [&](const std::string& key, const std::string& value) {
    return s == AGFT_OK ? (s = agft_config_set(*out, key.c_str(), value.c_str())) : s;
  };
  for (const std::string& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "agft-cli: --set expects key=value, got '%s'\n", kv.c_str());
      s = AGFT_ERR_CONFIG;
      break;
    }
    set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!opt.seed.empty()) set("seed", opt.seed);
  if (!opt.output_dir.empty()) set("output.dir", opt.output_dir);
  if (s != AGFT_OK) {
    std::fprintf(stderr, "agft-cli: error: %s\n", agft_last_error());
    agft_config_free(*out);
    *out = nullptr;
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Alignment-guided adversarial fine-tuning experiments on synthetic data"};
  app.require_subcommand(1);
  Options opt;

  const std::map<std::string, std::string> commands = {
      {"gen-data", "Generate train / test / shifted synthetic splits"},
      {"pretrain", "Train the clean dual encoder"},
      {"finetune", "Adversarially fine-tune from the clean model"},
      {"attack", "Write adversarial test sets"},
      {"evaluate", "Compute metrics for every model, split and attack"},
      {"ablate", "Run the gamma x 1/tau ablation grid"},
      {"pipeline", "Run every stage in order"},
      {"show-config", "Print the resolved configuration"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", opt.config_path, "Config file (defaults if omitted)")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Override the top-level seed");
    sub->add_option("-o,--output", opt.output_dir, "Override output.dir");
    sub->add_option("--set", opt.overrides, "Extra key=value assignments")->take_all();
    sub->add_option("--emit", opt.emit, "Metric outputs")
        ->check(CLI::IsMember({"jsonl", "csv", "both"}));
    sub->add_flag("-v,--verbose", opt.verbose, "Debug logging");
    sub->add_flag("-q,--quiet", opt.quiet, "Warnings and errors only");
    if (name == "finetune") {
      sub->add_option("--method", opt.method, "tecoa or agft (default: all configured)")
          ->check(CLI::IsMember({"tecoa", "agft"}));
    }
    if (name == "attack" || name == "evaluate") {
      sub->add_option("--model", opt.model, "Model name (default: all present)")
          ->check(CLI::IsMember({"clean", "tecoa", "agft"}));
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  agft_set_log_level(opt.verbose ? 1 : opt.quiet ? 3 : 2);
  agft_config* cfg = nullptr;
  if (agft_status s = build_config(opt, &cfg); s != AGFT_OK) return exit_code(s);

  const std::string cmd = app.get_subcommands().front()->get_name();
  const int emit = emit_flags(opt.emit);
  const char* model = opt.model.empty() ? nullptr : opt.model.c_str();
  agft_status s = AGFT_OK;
  if (cmd == "gen-data") {
    s = agft_gen_data(cfg);
  } else if (cmd == "pretrain") {
    s = agft_pretrain(cfg);
  } else if (cmd == "finetune") {
    s = agft_finetune(cfg, opt.method.empty() ? nullptr : opt.method.c_str());
  } else if (cmd == "attack") {
    s = agft_attack(cfg, model);
  } else if (cmd == "evaluate") {
    s = agft_evaluate(cfg, model, emit);
  } else if (cmd == "ablate") {
    s = agft_ablate(cfg, emit);
  } else if (cmd == "pipeline") {
    s = agft_pipeline(cfg, emit);
  } else if (cmd == "show-config") {
    size_t needed = 0;
    s = agft_config_serialize(cfg, nullptr, 0, &needed);
    if (s == AGFT_OK) {
      std::string text(needed, '\0');
      s = agft_config_serialize(cfg, text.data(), text.size(), &needed);
      if (s == AGFT_OK) std::fputs(text.c_str(), stdout);
    }
  }
  agft_config_free(cfg);
  return report(s);
}
