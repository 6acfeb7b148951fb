#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "stretchlab/core/npz.hpp"
#include "stretchlab/engine/engine.hpp"

using namespace stretchlab;
using namespace stretchlab::engine;

namespace {

std::string tiny_config_json() {
  return R"({
    "world": {"grid_cells": 16, "cell_size": 2.0, "n_agents_min": 2, "n_agents_max": 2,
              "agent_length": 4.0, "agent_width": 2.0, "speed_min": 0.5, "speed_max": 1.5,
              "p_turn": 0.2, "p_speed_change": 0.1, "episode_len": 8,
              "conditioning_len": 3, "seed": 5},
    "rig": {"n_cameras": 2, "image_h": 16, "image_w": 32, "fov_deg": 120.0,
            "camera_height": 1.6},
    "frustum": {"d_min": 2.0, "d_max": 10.0, "d_size": 1.0},
    "model": {"bev_channels": 6, "enc_channels": 6, "latent_channels": 4,
              "z_channels": 4, "img_width": 8, "enc_width": 8, "dec_width": 8,
              "net_width": 8, "gru_hidden": 8, "head_width": 8, "label_width": 8},
    "train": {"mode": "joint", "variant": "stretchbev-p", "lr": 3e-4,
              "lr_decay_factor": 0.5, "plateau_patience": 1, "max_epochs": 2,
              "batch_size": 2, "seed": 9}
  })";
}

std::string temp_dir(const std::string& name) {
  std::string d = (std::filesystem::temp_directory_path() / name).string();
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace

TEST_CASE("config: parse, echo, validation") {
  Config cfg = Config::from_json_text(tiny_config_json());
  CHECK(cfg.world.grid_cells == 16);
  CHECK(cfg.train.variant == "stretchbev-p");

  Config echo = Config::from_json_text(cfg.to_json());
  CHECK(echo.to_json() == cfg.to_json());
  CHECK(echo.hash() == cfg.hash());

  CHECK_THROWS_AS(Config::from_json_text("{ not json"), ConfigError);
  CHECK_THROWS_AS(Config::from_json_text(R"({"train": {"lr": -1}})"), ConfigError);
  CHECK_THROWS_AS(Config::from_json_text(R"({"train": {"variant": "foo"}})"),
                  ConfigError);
  CHECK_THROWS_AS(Config::from_json_text(R"({"world": {"grid_cells": 30}})"),
                  ConfigError);
}

TEST_CASE("checkpoint round trip is bitwise at 32-bit storage") {
  Config cfg = Config::from_json_text(tiny_config_json());
  PredictionModel<float> model;
  model.init(cfg, dynamics::Variant::kStretchBevP, 33);

  std::string dir = temp_dir("stretchlab_ckpt");
  std::string p1 = dir + "/a.npz";
  CheckpointMeta meta;
  meta.config = cfg;
  meta.variant = "stretchbev-p";
  meta.mode = "joint";
  meta.epoch = 3;
  meta.val_loss = 1.25;
  save_checkpoint(p1, model, meta);

  PredictionModel<float> loaded;
  CheckpointMeta back = load_checkpoint(p1, loaded);
  CHECK(back.variant == "stretchbev-p");
  CHECK(back.epoch == 3);
  CHECK(back.config.hash() == cfg.hash());
  for (size_t i = 0; i < model.registry.size(); ++i)
    CHECK(model.registry.entries()[i].value->data ==
          loaded.registry.entries()[i].value->data);

  std::string p2 = dir + "/b.npz";
  save_checkpoint(p2, loaded, back);
  CHECK(slurp(p1) == slurp(p2));
  std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline: gen, train, evaluate, plot") {
  Config cfg = Config::from_json_text(tiny_config_json());
  std::string data = temp_dir("stretchlab_data");
  std::string out = temp_dir("stretchlab_out");

  generate_dataset(cfg, data, 6, 42);
  CHECK(count_episodes(data) == 6);
  world::Episode ep = world::load_episode(data, 2);
  CHECK(static_cast<int>(ep.frames.size()) == 8);

  // joint training smoke: epochs logged, totals equal component sums
  TrainResult tr = train(cfg, data, out + "/joint.npz", "", out + "/log.csv");
  CHECK(std::filesystem::exists(out + "/joint.npz"));
  CHECK(std::filesystem::exists(out + "/log.csv"));
  REQUIRE(static_cast<int>(tr.epochs.size()) == 2);
  for (const EpochStats& e : tr.epochs) {
    CHECK(e.total == e.component_sum());  // bitwise by construction
    CHECK(std::isfinite(e.val_loss));
  }

  // plateau rule: lr changes exactly when validation fails to improve
  double best = std::numeric_limits<double>::infinity();
  double lr = cfg.train.lr;
  int bad = 0;
  for (const EpochStats& e : tr.epochs) {
    CHECK(e.lr == doctest::Approx(lr).epsilon(1e-9));
    if (e.val_loss < best) {
      best = e.val_loss;
      bad = 0;
    } else if (++bad >= cfg.train.plateau_patience) {
      lr *= cfg.train.lr_decay_factor;
      bad = 0;
    }
  }

  // training determinism: same config and data give identical bytes
  train(cfg, data, out + "/joint2.npz", "", "");
  CHECK(slurp(out + "/joint.npz") == slurp(out + "/joint2.npz"));

  // evaluation: short horizon, both regions, deterministic outputs
  EvaluateOptions opts;
  opts.horizons = {"short"};
  opts.n_samples = 3;
  opts.save_predictions = true;
  evaluate(out + "/joint.npz", data, opts, out + "/rep1");
  {
    // predicted instance sequences use the episode container schema
    NpzReader pr(out + "/rep1/predictions/episode_00000.npz");
    Tensor<int32_t> pi = pr.tensor<int32_t>("pred_instance");
    CHECK(pi.shape == std::vector<int>{3, 4, 16, 16});  // [S, T, H, W]
  }
  opts.save_predictions = false;
  evaluate(out + "/joint.npz", data, opts, out + "/rep2");
  CHECK(slurp(out + "/rep1/report_metrics.csv") ==
        slurp(out + "/rep2/report_metrics.csv"));
  CHECK(slurp(out + "/rep1/report_ged.csv") == slurp(out + "/rep2/report_ged.csv"));

  // 6 episodes x (near, far) data rows + 2 header lines
  std::string csv = slurp(out + "/rep1/report_metrics.csv");
  int lines = 0;
  for (char c : csv) lines += c == '\n';
  CHECK(lines == 2 + 6 * 2);

  // plots exist and are byte-stable
  plot_reports(out + "/rep1/report_metrics.csv", out + "/plots1");
  plot_reports(out + "/rep1/report_metrics.csv", out + "/plots2");
  for (const char* f : {"plot_iou.svg", "plot_vpq.svg", "plot_ged.svg"}) {
    CHECK(std::filesystem::exists(out + "/plots1/" + f));
    CHECK(slurp(out + "/plots1/" + f) == slurp(out + "/plots2/" + f));
  }

  // empty report refuses to plot
  std::string empty_csv = out + "/empty.csv";
  std::ofstream(empty_csv) << "# header only\nepisode,variant\n";
  CHECK_THROWS_AS(plot_reports(empty_csv, out + "/plots3"), ConfigError);

  std::filesystem::remove_all(data);
  std::filesystem::remove_all(out);
}

TEST_CASE("pretrain: stage separation and variant gate") {
  Config cfg = Config::from_json_text(tiny_config_json());
  cfg.train.mode = "pretrain";
  cfg.train.variant = "stretchbev";
  cfg.train.max_epochs = 1;

  std::string data = temp_dir("stretchlab_pre_data");
  std::string out = temp_dir("stretchlab_pre_out");
  generate_dataset(cfg, data, 4, 7);

  TrainResult tr = train(cfg, data, out + "/pre.npz", "", "");
  REQUIRE(static_cast<int>(tr.epochs.size()) == 2);  // one per stage
  CHECK(tr.epochs[0].stage == "stage0-extractor");
  CHECK(tr.epochs[1].stage == "stage1-dynamics");
  // stage 1 optimizes the state ELBO only: modality components are zero
  CHECK(tr.epochs[1].seg == 0.0);
  CHECK(tr.epochs[1].center == 0.0);
  CHECK(tr.epochs[1].offset == 0.0);
  CHECK(tr.epochs[1].flow == 0.0);
  CHECK(tr.epochs[1].elbo_term != 0.0);
  // stage 0 is purely supervised
  CHECK(tr.epochs[0].elbo_term == 0.0);

  // pre-training requires the label-free variant
  cfg.train.variant = "stretchbev-p";
  CHECK_THROWS_AS(train(cfg, data, out + "/bad.npz", "", ""), ConfigError);

  // finetune requires an init checkpoint
  cfg.train.variant = "stretchbev";
  cfg.train.mode = "finetune";
  CHECK_THROWS_AS(train(cfg, data, out + "/bad.npz", "", ""), ConfigError);
  TrainResult ft = train(cfg, data, out + "/ft.npz", out + "/pre.npz", "");
  CHECK(std::filesystem::exists(out + "/ft.npz"));

  std::filesystem::remove_all(data);
  std::filesystem::remove_all(out);
}
