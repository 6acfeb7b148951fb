#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "nlohmann/json.hpp"
#include "stretchlab/core/npz.hpp"
#include "stretchlab/engine/engine.hpp"
#include "stretchlab/instances.hpp"
#include "stretchlab/metrics.hpp"

namespace stretchlab::engine {

namespace {

struct SettingKey {
  std::string name;
  int horizon;
  metrics::Region region;
  std::string region_name() const {
    return region == metrics::Region::kNear ? "near" : "far";
  }
};

struct SettingScores {
  double iou_best = 0, vpq_best = 0;
  double iou_meanroll = 0, vpq_meanroll = 0;
  std::vector<double> iou_samples, vpq_samples;
  double ged_scaled = 0;
};

struct EpisodeReport {
  int episode = 0;
  std::vector<SettingScores> per_setting;
};

}  // namespace

SamplePrediction post_process(const PredictionModel<float>& model,
                              const Config& cfg,
                              const std::vector<Tensor<float>>& states) {
  int t_len = static_cast<int>(states.size());
  int h = cfg.world.grid_cells, w = cfg.world.grid_cells;
  int64_t hw = static_cast<int64_t>(h) * w;

  SamplePrediction out;
  out.seg = Tensor<uint8_t>({t_len, h, w});
  Tensor<float> flows({t_len, 2, h, w});
  std::vector<Tensor<int32_t>> frame_maps;

  for (int t = 0; t < t_len; ++t) {
    Tape<float> tp;
    Binder<float> B(tp, false);
    heads::Modalities<float> mod = model.decoder.forward(B, tp.constant(states[t]));

    const Tensor<float>& logits = tp.val(mod.seg_logits);
    Tensor<float> mask({h, w});
    for (int64_t i = 0; i < hw; ++i) {
      bool fg = logits[hw + i] > logits[i];
      mask[i] = fg ? 1.0f : 0.0f;
      out.seg[t * hw + i] = fg ? 1 : 0;
    }

    Tensor<float> center({h, w});
    std::copy_n(tp.val(mod.center).data.begin(), hw, center.data.begin());
    std::copy_n(tp.val(mod.flow).data.begin(), 2 * hw,
                flows.data.begin() + t * 2 * hw);

    auto centers = instances::extract_centers(
        center, static_cast<float>(cfg.instances.center_threshold),
        cfg.instances.nms_radius);
    frame_maps.push_back(
        instances::group_pixels(mask, tp.val(mod.offset), centers).map);
  }

  out.instances =
      instances::track_instances(frame_maps, flows, cfg.instances.min_track_iou);
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

void evaluate(const std::string& checkpoint, const std::string& data_dir,
              const EvaluateOptions& opts, const std::string& out_dir) {
  PredictionModel<float> model;
  CheckpointMeta meta = load_checkpoint(checkpoint, model);
  const Config& cfg = meta.config;
  bool with_labels = model.variant == dynamics::Variant::kStretchBevP;

  int n_episodes = count_episodes(data_dir);
  if (n_episodes == 0) throw ConfigError("eval: no episodes found in " + data_dir);
  if (opts.n_samples < 2)
    throw ConfigError("eval: need at least 2 samples for the diversity metric");

  std::vector<SettingKey> settings;
  {
    std::vector<std::string> names = opts.horizons;
    std::sort(names.begin(), names.end(), [](const auto& a, const auto& b) {
      return metrics::horizon_of(a) < metrics::horizon_of(b);
    });
    for (const std::string& nm : names)
      for (metrics::Region rg : {metrics::Region::kNear, metrics::Region::kFar})
        settings.push_back({nm, metrics::horizon_of(nm), rg});
  }
  int max_h = 0;
  for (const auto& s : settings) max_h = std::max(max_h, s.horizon);

  world::CameraRig rig = cfg.make_rig();
  std::vector<liftsplat::LiftGeometry> geoms;
  for (const auto& cam : rig.cameras)
    geoms.push_back(liftsplat::make_lift_geometry(cam, rig.image_h, rig.image_w, 4,
                                                  cfg.frustum, cfg.grid()));

  uint64_t eval_seed = opts.seed ? opts.seed : mix_seed(cfg.train.seed, 0xEAA1);
  int k = cfg.world.conditioning_len;

  std::filesystem::create_directories(out_dir);
  if (opts.save_predictions)
    std::filesystem::create_directories(out_dir + "/predictions");

  std::vector<EpisodeReport> reports(n_episodes);
  parallel_for(n_episodes, [&](int ei) {
    world::Episode ep = world::load_episode(data_dir, ei);
    int t_total = static_cast<int>(ep.frames.size());
    int future = t_total - k;
    if (max_h > future)
      throw ConfigError("eval: horizon exceeds episode future length " +
                        std::to_string(future));

    int h = cfg.world.grid_cells;
    int64_t hw = static_cast<int64_t>(h) * h;

    // Ground truth over the evaluated future frames.
    Tensor<int32_t> gt_inst({max_h, h, h});
    Tensor<uint8_t> gt_seg({max_h, h, h});
    for (int t = 0; t < max_h; ++t)
      for (int64_t i = 0; i < hw; ++i) {
        int32_t id = ep.labels.instance[(k + t) * hw + i];
        gt_inst[t * hw + i] = id;
        gt_seg[t * hw + i] = id > 0 ? 1 : 0;
      }

    // Conditioning inputs.
    std::vector<Tensor<float>> cond_states;
    for (int t = 0; t < k; ++t) {
      Tape<float> tp;
      Binder<float> B(tp, false);
      cond_states.push_back(tp.val(liftsplat::fuse_frame(
          B, model.image_encoder, ep.frames[t].images, geoms, cfg.grid())));
    }
    std::vector<Tensor<float>> cond_label_enc;
    if (with_labels) {
      cond_label_enc.resize(k);
      for (int t = 1; t < k; ++t) {
        Tape<float> tp;
        Binder<float> B(tp, false);
        cond_label_enc[t] = tp.val(model.label_encoder.forward(
            B, tp.constant(heads::label_input<float>(ep.labels.slice(t)))));
      }
    }

    uint64_t ep_seed = mix_seed(eval_seed, static_cast<uint64_t>(ei));
    auto sampled = dynamics::rollout(model.dyn, cond_states,
                                     with_labels ? &cond_label_enc : nullptr, max_h,
                                     opts.n_samples, ep_seed,
                                     /*zero_noise=*/opts.zero_noise_only);
    auto mean_roll = dynamics::rollout(model.dyn, cond_states,
                                       with_labels ? &cond_label_enc : nullptr,
                                       max_h, 1, ep_seed, /*zero_noise=*/true);

    std::vector<SamplePrediction> preds;
    for (const auto& s : sampled) preds.push_back(post_process(model, cfg, s));
    SamplePrediction meanp = post_process(model, cfg, mean_roll[0]);

    if (opts.save_predictions) {
      Tensor<int32_t> stacked({opts.n_samples, max_h, h, h});
      for (int si = 0; si < opts.n_samples; ++si)
        std::copy(preds[si].instances.data.begin(), preds[si].instances.data.end(),
                  stacked.data.begin() + static_cast<int64_t>(si) * max_h * hw);
      NpzWriter npz;
      npz.add("pred_instance", stacked);
      npz.save(out_dir + "/predictions/" + world::episode_file_name(ei) + ".npz");
    }

    EpisodeReport rep;
    rep.episode = ei;
    for (const SettingKey& sk : settings) {
      metrics::EvalSetting ms{sk.name, sk.horizon, sk.region};
      double cs = cfg.world.cell_size;

      Tensor<int32_t> gt_i = metrics::apply_setting(gt_inst, ms, cs);
      Tensor<uint8_t> gt_s = metrics::apply_setting(gt_seg, ms, cs);

      SettingScores sc;
      std::vector<Tensor<int32_t>> pred_insts;
      for (const SamplePrediction& p : preds) {
        Tensor<int32_t> pi = metrics::apply_setting(p.instances, ms, cs);
        Tensor<uint8_t> psg = metrics::apply_setting(p.seg, ms, cs);
        sc.iou_samples.push_back(metrics::iou(psg, gt_s));
        sc.vpq_samples.push_back(metrics::vpq(pi, gt_i));
        pred_insts.push_back(std::move(pi));
      }
      sc.iou_best = *std::max_element(sc.iou_samples.begin(), sc.iou_samples.end());
      sc.vpq_best = *std::max_element(sc.vpq_samples.begin(), sc.vpq_samples.end());
      sc.iou_meanroll =
          metrics::iou(metrics::apply_setting(meanp.seg, ms, cs), gt_s);
      sc.vpq_meanroll =
          metrics::vpq(metrics::apply_setting(meanp.instances, ms, cs), gt_i);

      int n = opts.n_samples;
      std::vector<std::vector<double>> d_sy(n, std::vector<double>(1));
      std::vector<std::vector<double>> d_ss(n, std::vector<double>(n, 0.0));
      for (int i = 0; i < n; ++i) {
        d_sy[i][0] = 1.0 - sc.vpq_samples[i];
        for (int j = i + 1; j < n; ++j) {
          double d = 1.0 - metrics::vpq(pred_insts[i], pred_insts[j]);
          d_ss[i][j] = d_ss[j][i] = d;
        }
      }
      sc.ged_scaled = 100.0 * metrics::ged(d_sy, d_ss, {{0.0}});
      rep.per_setting.push_back(std::move(sc));
    }
    reports[ei] = std::move(rep);
  });

  // ---- reports, ordered by horizon so temporal degradation is inspectable ----
  std::filesystem::create_directories(out_dir);
  const std::string variant = meta.variant;

  FILE* fm = std::fopen((out_dir + "/report_metrics.csv").c_str(), "wb");
  if (!fm) throw IoError("cannot write report_metrics.csv");
  std::fprintf(fm, "# near region: center crop without resampling\n");
  std::fprintf(fm,
               "episode,variant,horizon,region,iou,vpq,iou_mean_rollout,"
               "vpq_mean_rollout,iou_sample_mean,iou_sample_std,vpq_sample_mean,"
               "vpq_sample_std\n");
  FILE* fg = std::fopen((out_dir + "/report_ged.csv").c_str(), "wb");
  if (!fg) {
    std::fclose(fm);
    throw IoError("cannot write report_ged.csv");
  }
  std::fprintf(fg, "# ged uses (1 - vpq) distances, scaled x100\n");
  std::fprintf(fg, "episode,variant,horizon,region,ged,n_samples\n");

  for (size_t si = 0; si < settings.size(); ++si) {
    const SettingKey& sk = settings[si];
    for (const EpisodeReport& rep : reports) {
      const SettingScores& sc = rep.per_setting[si];
      std::fprintf(fm, "%d,%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                   rep.episode, variant.c_str(), sk.name.c_str(),
                   sk.region_name().c_str(), sc.iou_best, sc.vpq_best,
                   sc.iou_meanroll, sc.vpq_meanroll, mean_of(sc.iou_samples),
                   std_of(sc.iou_samples), mean_of(sc.vpq_samples),
                   std_of(sc.vpq_samples));
      std::fprintf(fg, "%d,%s,%s,%s,%.6f,%d\n", rep.episode, variant.c_str(),
                   sk.name.c_str(), sk.region_name().c_str(), sc.ged_scaled,
                   opts.n_samples);
    }
  }
  std::fclose(fm);
  std::fclose(fg);

  nlohmann::json summary;
  summary["variant"] = variant;
  summary["n_samples"] = opts.n_samples;
  summary["episodes"] = n_episodes;
  summary["near_region"] = "center crop without resampling";
  summary["training_horizon"] = cfg.world.episode_len - cfg.world.conditioning_len;
  summary["zero_noise_only"] = opts.zero_noise_only;
  nlohmann::json rows = nlohmann::json::array();
  for (size_t si = 0; si < settings.size(); ++si) {
    const SettingKey& sk = settings[si];
    std::vector<double> iou_b, vpq_b, iou_m, vpq_m, ged_v, iou_all, vpq_all;
    for (const EpisodeReport& rep : reports) {
      const SettingScores& sc = rep.per_setting[si];
      iou_b.push_back(sc.iou_best);
      vpq_b.push_back(sc.vpq_best);
      iou_m.push_back(sc.iou_meanroll);
      vpq_m.push_back(sc.vpq_meanroll);
      ged_v.push_back(sc.ged_scaled);
      iou_all.insert(iou_all.end(), sc.iou_samples.begin(), sc.iou_samples.end());
      vpq_all.insert(vpq_all.end(), sc.vpq_samples.begin(), sc.vpq_samples.end());
    }
    nlohmann::json r;
    r["horizon_name"] = sk.name;
    r["horizon"] = sk.horizon;
    r["region"] = sk.region_name();
    r["iou_best_mean"] = mean_of(iou_b);
    r["iou_best_std"] = std_of(iou_b);
    r["vpq_best_mean"] = mean_of(vpq_b);
    r["vpq_best_std"] = std_of(vpq_b);
    r["iou_mean_rollout_mean"] = mean_of(iou_m);
    r["vpq_mean_rollout_mean"] = mean_of(vpq_m);
    r["iou_sample_mean"] = mean_of(iou_all);
    r["iou_sample_std"] = std_of(iou_all);
    r["vpq_sample_mean"] = mean_of(vpq_all);
    r["vpq_sample_std"] = std_of(vpq_all);
    r["ged_mean"] = mean_of(ged_v);
    r["ged_std"] = std_of(ged_v);
    rows.push_back(std::move(r));
  }
  summary["results"] = std::move(rows);
  FILE* fs = std::fopen((out_dir + "/report_summary.json").c_str(), "wb");
  if (!fs) throw IoError("cannot write report_summary.json");
  std::string text = summary.dump(2) + "\n";
  std::fwrite(text.data(), 1, text.size(), fs);
  std::fclose(fs);
}

}  // namespace stretchlab::engine
