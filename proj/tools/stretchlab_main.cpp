// stretchlab command line: gen-data, train, eval, plot.
// Links the C API only; exit codes 0 ok / 2 config / 3 numeric.

#include <cstdint>
#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "stretchlab.h"

namespace {

int report(int status) {
  if (status != STRETCHLAB_OK)
    std::fprintf(stderr, "error: %s\n", stretchlab_last_error());
  return status;
}

struct ConfigHandle {
  stretchlab_config* cfg = nullptr;
  ~ConfigHandle() {
    if (cfg) stretchlab_config_close(cfg);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stretchlab: synthetic BEV future-instance-prediction lab"};
  app.require_subcommand(1);

  // gen-data
  std::string gd_config, gd_out;
  int gd_episodes = 100;
  uint64_t gd_seed = 1;
  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic episodes");
  gen->add_option("--config", gd_config, "config JSON file")->required();
  gen->add_option("--out", gd_out, "output directory")->required();
  gen->add_option("--episodes", gd_episodes, "number of episodes");
  gen->add_option("--seed", gd_seed, "dataset seed");

  // train
  std::string tr_config, tr_mode, tr_variant, tr_data, tr_out = "model.ckpt.npz";
  std::string tr_init, tr_log;
  CLI::App* tr = app.add_subcommand("train", "train a model");
  tr->add_option("--config", tr_config, "config JSON file")->required();
  tr->add_option("--mode", tr_mode, "pretrain | joint | finetune");
  tr->add_option("--variant", tr_variant, "stretchbev | stretchbev-p");
  tr->add_option("--data", tr_data, "episode directory")->required();
  tr->add_option("--out", tr_out, "output checkpoint path");
  tr->add_option("--init", tr_init, "initial checkpoint (finetune)");
  tr->add_option("--log", tr_log, "per-epoch training log CSV");

  // eval
  std::string ev_ckpt, ev_data, ev_out = "reports", ev_settings = "short,mid,long";
  int ev_samples = 10;
  uint64_t ev_seed = 0;
  bool ev_zero = false;
  bool ev_save_pred = false;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "episode directory")->required();
  ev->add_option("--samples", ev_samples, "rollout samples per episode");
  ev->add_option("--settings", ev_settings, "comma list of short,mid,long");
  ev->add_option("--seed", ev_seed, "evaluation seed (0: from checkpoint)");
  ev->add_flag("--zero-noise", ev_zero, "replace samples with the mean rollout");
  ev->add_flag("--save-predictions", ev_save_pred,
               "serialize predicted instance sequences per episode");
  ev->add_option("--out", ev_out, "report directory");

  // plot
  std::string pl_report, pl_out = "plots";
  CLI::App* pl = app.add_subcommand("plot", "emit SVG figures from reports");
  pl->add_option("--report", pl_report, "report_metrics.csv path")->required();
  pl->add_option("--out", pl_out, "figure directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : STRETCHLAB_ERR_CONFIG;
  }

  if (gen->parsed()) {
    ConfigHandle h;
    int rc = report(stretchlab_config_open(gd_config.c_str(), &h.cfg));
    if (rc) return rc;
    return report(
        stretchlab_generate_dataset(h.cfg, gd_out.c_str(), gd_episodes, gd_seed));
  }

  if (tr->parsed()) {
    ConfigHandle h;
    int rc = report(stretchlab_config_open(tr_config.c_str(), &h.cfg));
    if (rc) return rc;
    rc = report(stretchlab_config_set_train(
        h.cfg, tr_mode.empty() ? nullptr : tr_mode.c_str(),
        tr_variant.empty() ? nullptr : tr_variant.c_str()));
    if (rc) return rc;
    return report(stretchlab_train(h.cfg, tr_data.c_str(), tr_out.c_str(),
                                   tr_init.empty() ? nullptr : tr_init.c_str(),
                                   tr_log.empty() ? nullptr : tr_log.c_str()));
  }

  if (ev->parsed())
    return report(stretchlab_evaluate(ev_ckpt.c_str(), ev_data.c_str(),
                                      ev_settings.c_str(), ev_samples, ev_seed,
                                      ev_zero ? 1 : 0, ev_save_pred ? 1 : 0,
                                      ev_out.c_str()));

  if (pl->parsed())
    return report(stretchlab_plot(pl_report.c_str(), pl_out.c_str()));

  return STRETCHLAB_ERR_CONFIG;
}
