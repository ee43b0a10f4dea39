#include "agft/agft.h"

#include <cstring>
#include <exception>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "agft/checkpoint.hpp"
#include "agft/config.hpp"
#include "agft/error.hpp"
#include "agft/metrics.hpp"
#include "agft/pipeline.hpp"

struct agft_config {
  agft::ExperimentConfig value;
};
struct agft_model {
  agft::DualEncoder value;
};
struct agft_dataset {
  agft::Dataset value;
};

namespace {

thread_local std::string last_error;

// Logs belong on stderr so stdout stays free for piping.
struct StderrLogger {
  StderrLogger() {
    auto logger = spdlog::stderr_color_mt("agft");
    logger->set_pattern("[%H:%M:%S] [%^%l%$] %v");
    spdlog::set_default_logger(logger);
  }
};

void ensure_logger() { static StderrLogger once; }

agft_status fail(agft_status code, const std::string& what) {
  last_error = what;
  return code;
}

template <typename F>
agft_status guarded(F&& body) {
  ensure_logger();
  last_error.clear();
  try {
    body();
    return AGFT_OK;
  } catch (const agft::ConfigError& e) {
    return fail(AGFT_ERR_CONFIG, e.what());
  } catch (const agft::FormatError& e) {
    return fail(AGFT_ERR_IO, e.what());
  } catch (const agft::ContractViolation& e) {
    return fail(AGFT_ERR_ARGUMENT, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(AGFT_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(AGFT_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(AGFT_ERR_RUNTIME, "unknown error");
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw agft::ContractViolation(std::string(what) + " is null");
}

agft::EmitOptions emit_options(int emit) {
  if (emit < 1 || emit > 3) throw agft::ContractViolation("emit must be 1, 2 or 3");
  return agft::EmitOptions{(emit & AGFT_EMIT_JSONL) != 0, (emit & AGFT_EMIT_CSV) != 0};
}

template <typename F>
agft_status stage(const agft_config* config, const char* name, F&& body) {
  return guarded([&] {
    require(config, "config");
    config->value.validate();
    body(config->value);
    agft::write_manifest(config->value, {name});
  });
}

}  // namespace

extern "C" {

const char* agft_last_error(void) { return last_error.c_str(); }

const char* agft_version(void) { return "0.1.0"; }

void agft_set_log_level(int level) {
  ensure_logger();
  if (level < 0) level = 0;
  if (level > 6) level = 6;
  spdlog::set_level(static_cast<spdlog::level::level_enum>(level));
}

agft_status agft_config_default(agft_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = new agft_config{agft::default_experiment_config()};
  });
}

agft_status agft_config_load(const char* path, agft_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new agft_config{agft::load_config(path)};
  });
}

agft_status agft_config_parse(const char* text, agft_config** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = new agft_config{agft::parse_config(text)};
  });
}

agft_status agft_config_set(agft_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config, "config");
    require(key, "key");
    require(value, "value");
    agft::ExperimentConfig next = config->value;
    agft::set_config_value(next, key, value);
    if (next.finetune.calibration) next.finetune.calibration->tau = next.finetune.tau;
    next.validate();
    config->value = std::move(next);
  });
}

agft_status agft_config_serialize(const agft_config* config, char* buf, size_t size,
                                  size_t* needed) {
  return guarded([&] {
    require(config, "config");
    const std::string text = agft::serialize_config(config->value);
    if (needed) *needed = text.size() + 1;
    if (buf == nullptr) return;
    if (size < text.size() + 1) throw agft::ContractViolation("buffer too small");
    std::memcpy(buf, text.c_str(), text.size() + 1);
  });
}

agft_status agft_config_hash(const agft_config* config, char* buf, size_t size) {
  return guarded([&] {
    require(config, "config");
    require(buf, "buf");
    const std::string h = agft::config_hash(config->value);
    if (size < h.size() + 1) throw agft::ContractViolation("buffer too small");
    std::memcpy(buf, h.c_str(), h.size() + 1);
  });
}

void agft_config_free(agft_config* config) { delete config; }

agft_status agft_gen_data(const agft_config* config) {
  return stage(config, "gen-data", [](const agft::ExperimentConfig& c) { agft::stage_gen_data(c); });
}

agft_status agft_pretrain(const agft_config* config) {
  return stage(config, "pretrain", [](const agft::ExperimentConfig& c) { agft::stage_pretrain(c); });
}

agft_status agft_finetune(const agft_config* config, const char* method) {
  return stage(config, "finetune", [method](const agft::ExperimentConfig& c) {
    std::optional<agft::TrainMethod> m;
    if (method && *method) m = agft::parse_train_method(method);
    agft::stage_finetune(c, m);
  });
}

agft_status agft_attack(const agft_config* config, const char* model) {
  return stage(config, "attack", [model](const agft::ExperimentConfig& c) {
    agft::stage_attack(c, model ? model : "");
  });
}

agft_status agft_evaluate(const agft_config* config, const char* model, int emit) {
  return stage(config, "evaluate", [model, emit](const agft::ExperimentConfig& c) {
    agft::stage_evaluate(c, emit_options(emit), model ? model : "");
  });
}

agft_status agft_ablate(const agft_config* config, int emit) {
  return stage(config, "ablate", [emit](const agft::ExperimentConfig& c) {
    agft::stage_ablate(c, emit_options(emit));
  });
}

agft_status agft_pipeline(const agft_config* config, int emit) {
  return guarded([&] {
    require(config, "config");
    agft::run_pipeline(config->value, emit_options(emit));
  });
}

agft_status agft_model_load(const char* path, agft_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new agft_model{agft::load_checkpoint(path)};
  });
}

agft_status agft_model_save(const agft_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    agft::save_checkpoint(model->value, path);
  });
}

agft_status agft_model_info(const agft_model* model, size_t* input_dim, size_t* num_classes,
                            double* tau) {
  return guarded([&] {
    require(model, "model");
    if (input_dim) *input_dim = model->value.input_dim();
    if (num_classes) *num_classes = model->value.num_classes();
    if (tau) *tau = model->value.tau;
  });
}

agft_status agft_model_predict(const agft_model* model, const double* x, size_t n,
                               size_t* classes) {
  return guarded([&] {
    require(model, "model");
    require(x, "x");
    require(classes, "classes");
    if (n == 0) return;
    const std::size_t d = model->value.input_dim();
    agft::Tensor batch({n, d}, std::vector<double>(x, x + n * d));
    const std::vector<std::size_t> top = agft::predict_distribution(model->value, batch).top_class;
    std::copy(top.begin(), top.end(), classes);
  });
}

void agft_model_free(agft_model* model) { delete model; }

agft_status agft_dataset_read(const char* path, agft_dataset** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new agft_dataset{agft::read_dataset(path)};
  });
}

agft_status agft_dataset_write(const agft_dataset* dataset, const char* path) {
  return guarded([&] {
    require(dataset, "dataset");
    require(path, "path");
    agft::write_dataset(path, dataset->value);
  });
}

agft_status agft_dataset_info(const agft_dataset* dataset, size_t* size, size_t* input_dim,
                              size_t* num_classes) {
  return guarded([&] {
    require(dataset, "dataset");
    if (size) *size = dataset->value.size();
    if (input_dim) *input_dim = dataset->value.input_dim();
    if (num_classes) *num_classes = dataset->value.num_classes;
  });
}

agft_status agft_accuracy(const agft_model* model, const agft_dataset* dataset, double* out) {
  return guarded([&] {
    require(model, "model");
    require(dataset, "dataset");
    require(out, "out");
    *out = agft::accuracy(model->value, dataset->value);
  });
}

void agft_dataset_free(agft_dataset* dataset) { delete dataset; }

}  // extern "C"
