#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stretchlab/engine/loss.hpp"
#include "stretchlab/engine/model.hpp"

namespace stretchlab::engine {

// Worker cap from STRETCHLAB_THREADS (>=1); defaults to the hardware count.
int thread_budget();

// Runs fn(i) for i in [0,n) over the worker budget. Work is indexed, so
// results are position-stable regardless of scheduling.
void parallel_for(int n, const std::function<void(int)>& fn);

// ---- dataset ----

void generate_dataset(const Config& cfg, const std::string& out_dir, int episodes,
                      uint64_t seed);
int count_episodes(const std::string& dir);

// ---- checkpoints ----

struct CheckpointMeta {
  Config config;
  std::string variant;
  std::string mode;
  int epoch = 0;
  double val_loss = 0;
};

void save_checkpoint(const std::string& path, const PredictionModel<float>& model,
                     const CheckpointMeta& meta);
CheckpointMeta load_checkpoint(const std::string& path, PredictionModel<float>& model);
CheckpointMeta peek_checkpoint(const std::string& path);

// ---- training ----

struct EpochStats {
  int epoch = 0;
  std::string stage;
  double lr = 0;
  double total = 0;  // equals the sum of the component columns
  double elbo_term = 0, seg = 0, center = 0, offset = 0, flow = 0;
  double state_loglik = 0, kl_first = 0, kl_z = 0;  // raw diagnostics
  double val_loss = 0;

  double component_sum() const { return elbo_term + seg + center + offset + flow; }
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<EpochStats> epochs;
  double best_val = 0;
};

// mode/variant come from cfg.train. For finetune, init_checkpoint is required.
TrainResult train(const Config& cfg, const std::string& data_dir,
                  const std::string& out_checkpoint,
                  const std::string& init_checkpoint = "",
                  const std::string& log_path = "");

// ---- evaluation ----

struct EvaluateOptions {
  std::vector<std::string> horizons = {"short", "mid", "long"};
  int n_samples = 10;
  uint64_t seed = 0;        // 0: derive from the checkpoint's train seed
  bool zero_noise_only = false;
  // Serialize per-episode predicted instance sequences (pred_instance
  // [S,T,H,W]) under <out_dir>/predictions/.
  bool save_predictions = false;
};

void evaluate(const std::string& checkpoint, const std::string& data_dir,
              const EvaluateOptions& opts, const std::string& out_dir);

// Decoded and post-processed prediction for one rollout sample:
// per-frame modality decode, center extraction, offset grouping, flow-based
// id propagation.
struct SamplePrediction {
  Tensor<uint8_t> seg;        // [T,H,W]
  Tensor<int32_t> instances;  // [T,H,W]
};

SamplePrediction post_process(const PredictionModel<float>& model, const Config& cfg,
                              const std::vector<Tensor<float>>& states);

// ---- plots ----

void plot_reports(const std::string& metrics_csv, const std::string& out_dir);

}  // namespace stretchlab::engine
