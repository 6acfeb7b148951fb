#include "stretchlab.h"

#include <cstdlib>
#include <cstring>
#include <sstream>
#include <string>

#include "stretchlab/core/errors.hpp"
#include "stretchlab/engine/engine.hpp"

using stretchlab::ConfigError;
using stretchlab::IoError;
using stretchlab::NumericError;

struct stretchlab_config {
  stretchlab::engine::Config cfg;
};

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <typename F>
int guarded(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return STRETCHLAB_OK;
  } catch (const ConfigError& e) {
    return fail(STRETCHLAB_ERR_CONFIG, e.what());
  } catch (const NumericError& e) {
    return fail(STRETCHLAB_ERR_NUMERIC, e.what());
  } catch (const IoError& e) {
    return fail(STRETCHLAB_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(STRETCHLAB_ERR_INVALID, e.what());
  }
}

std::vector<std::string> split_names(const char* csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv ? csv : "");
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

}  // namespace

extern "C" {

const char* stretchlab_version(void) { return "0.1.0"; }

const char* stretchlab_last_error(void) { return g_last_error.c_str(); }

void stretchlab_string_free(char* s) { std::free(s); }

int stretchlab_config_open(const char* path, stretchlab_config** out) {
  if (!path || !out) return fail(STRETCHLAB_ERR_INVALID, "null argument");
  return guarded([&] {
    auto* h = new stretchlab_config{stretchlab::engine::Config::from_json_file(path)};
    *out = h;
  });
}

int stretchlab_config_parse(const char* json_text, stretchlab_config** out) {
  if (!json_text || !out) return fail(STRETCHLAB_ERR_INVALID, "null argument");
  return guarded([&] {
    auto* h =
        new stretchlab_config{stretchlab::engine::Config::from_json_text(json_text)};
    *out = h;
  });
}

void stretchlab_config_close(stretchlab_config* cfg) { delete cfg; }

int stretchlab_config_to_json(const stretchlab_config* cfg, char** out_json) {
  if (!cfg || !out_json) return fail(STRETCHLAB_ERR_INVALID, "null argument");
  return guarded([&] { *out_json = dup_string(cfg->cfg.to_json()); });
}

int stretchlab_config_set_train(stretchlab_config* cfg, const char* mode,
                                const char* variant) {
  if (!cfg) return fail(STRETCHLAB_ERR_INVALID, "null config");
  return guarded([&] {
    if (mode) cfg->cfg.train.mode = mode;
    if (variant) cfg->cfg.train.variant = variant;
    cfg->cfg.train.validate();
  });
}

int stretchlab_generate_dataset(const stretchlab_config* cfg, const char* out_dir,
                                int episodes, uint64_t seed) {
  if (!cfg || !out_dir) return fail(STRETCHLAB_ERR_INVALID, "null argument");
  return guarded(
      [&] { stretchlab::engine::generate_dataset(cfg->cfg, out_dir, episodes, seed); });
}

int stretchlab_train(const stretchlab_config* cfg, const char* data_dir,
                     const char* out_checkpoint, const char* init_checkpoint,
                     const char* log_csv) {
  if (!cfg || !data_dir || !out_checkpoint)
    return fail(STRETCHLAB_ERR_INVALID, "null argument");
  return guarded([&] {
    stretchlab::engine::train(cfg->cfg, data_dir, out_checkpoint,
                              init_checkpoint ? init_checkpoint : "",
                              log_csv ? log_csv : "");
  });
}

int stretchlab_evaluate(const char* checkpoint, const char* data_dir,
                        const char* settings_csv, int n_samples, uint64_t seed,
                        int zero_noise, int save_predictions, const char* out_dir) {
  if (!checkpoint || !data_dir || !out_dir)
    return fail(STRETCHLAB_ERR_INVALID, "null argument");
  return guarded([&] {
    stretchlab::engine::EvaluateOptions opts;
    auto names = split_names(settings_csv);
    if (!names.empty()) opts.horizons = names;
    for (const std::string& n : opts.horizons)
      if (n != "short" && n != "mid" && n != "long")
        throw ConfigError("eval: unknown setting " + n);
    opts.n_samples = n_samples;
    opts.seed = seed;
    opts.zero_noise_only = zero_noise != 0;
    opts.save_predictions = save_predictions != 0;
    stretchlab::engine::evaluate(checkpoint, data_dir, opts, out_dir);
  });
}

int stretchlab_plot(const char* metrics_csv, const char* out_dir) {
  if (!metrics_csv || !out_dir) return fail(STRETCHLAB_ERR_INVALID, "null argument");
  return guarded([&] { stretchlab::engine::plot_reports(metrics_csv, out_dir); });
}

}  // extern "C"
