#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <unordered_set>

#include "stretchlab/core/npz.hpp"
#include "stretchlab/engine/engine.hpp"

namespace stretchlab::engine {

namespace {

struct LoadedEpisode {
  EpisodeTensors<float> data;
  uint64_t seed = 0;
};

std::vector<LoadedEpisode> load_training_set(const std::string& dir) {
  int n = count_episodes(dir);
  if (n == 0) throw ConfigError("train: no episodes found in " + dir);
  std::vector<LoadedEpisode> out(n);
  parallel_for(n, [&](int i) {
    world::Episode ep = world::load_episode(dir, i);
    LoadedEpisode le;
    le.seed = ep.seed;
    int t_len = static_cast<int>(ep.frames.size());
    for (int t = 0; t < t_len; ++t) {
      le.data.images.push_back(std::move(ep.frames[t].images));
      le.data.labels.push_back(ep.labels.slice(t));
    }
    out[i] = std::move(le);
  });
  return out;
}

void load_weights_into(const std::string& path, PredictionModel<float>& model) {
  NpzReader npz(path);
  for (const auto& e : model.registry.entries()) {
    Tensor<float> stored = npz.tensor<float>(e.name);
    if (stored.shape != e.value->shape)
      throw ConfigError("init checkpoint incompatible with config at " + e.name);
    *e.value = std::move(stored);
  }
}

struct Stage {
  std::string name;
  LossMode mode;
  std::vector<std::string> frozen_prefixes;
};

void write_log(const std::string& path, const std::vector<EpochStats>& rows) {
  if (path.empty()) return;
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write training log: " + path);
  std::fprintf(f,
               "stage,epoch,lr,total,elbo_term,seg,center,offset,flow,"
               "state_loglik,kl_first,kl_z,val_loss\n");
  for (const EpochStats& r : rows)
    std::fprintf(f, "%s,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                 r.stage.c_str(), r.epoch, r.lr, r.total, r.elbo_term, r.seg,
                 r.center, r.offset, r.flow, r.state_loglik, r.kl_first, r.kl_z,
                 r.val_loss);
  std::fclose(f);
}

}  // namespace

TrainResult train(const Config& cfg, const std::string& data_dir,
                  const std::string& out_checkpoint,
                  const std::string& init_checkpoint, const std::string& log_path) {
  cfg.validate();
  dynamics::Variant variant = parse_variant(cfg.train.variant);
  const std::string& mode = cfg.train.mode;
  if (mode == "pretrain" && variant != dynamics::Variant::kStretchBev)
    throw ConfigError(
        "train: unsupervised pre-training requires the label-free variant");
  if (mode == "finetune" && init_checkpoint.empty())
    throw ConfigError("train: finetune requires an init checkpoint");

  std::vector<LoadedEpisode> episodes = load_training_set(data_dir);
  int t_len = static_cast<int>(episodes[0].data.labels.size());
  if (t_len <= cfg.world.conditioning_len)
    throw ConfigError("train: episodes shorter than the conditioning length");

  // Validation split by episode seed; keep at least one episode per side.
  std::vector<int> train_idx, val_idx;
  for (int i = 0; i < static_cast<int>(episodes.size()); ++i)
    (episodes[i].seed % 10 == 0 ? val_idx : train_idx).push_back(i);
  if (val_idx.empty()) {
    val_idx.push_back(train_idx.back());
    train_idx.pop_back();
  }
  if (train_idx.empty()) throw ConfigError("train: no training episodes after split");

  PredictionModel<float> model;
  model.init(cfg, variant, cfg.train.seed);
  if (!init_checkpoint.empty()) load_weights_into(init_checkpoint, model);

  world::CameraRig rig = cfg.make_rig();
  std::vector<liftsplat::LiftGeometry> geoms;
  for (const auto& cam : rig.cameras)
    geoms.push_back(liftsplat::make_lift_geometry(cam, rig.image_h, rig.image_w, 4,
                                                  cfg.frustum, cfg.grid()));

  std::vector<Stage> stages;
  if (mode == "pretrain") {
    stages.push_back({"stage0-extractor", LossMode::kSupervisedFrames, {}});
    stages.push_back(
        {"stage1-dynamics", LossMode::kStateElbo, {"img.", "heads.", "labelenc."}});
  } else {
    stages.push_back({mode, LossMode::kJoint, {}});
  }

  TrainResult result;
  result.checkpoint_path = out_checkpoint;

  for (size_t stage_i = 0; stage_i < stages.size(); ++stage_i) {
    const Stage& stage = stages[stage_i];

    std::unordered_set<const void*> frozen;
    for (const auto& e : model.registry.entries())
      for (const std::string& prefix : stage.frozen_prefixes)
        if (e.name.rfind(prefix, 0) == 0) frozen.insert(e.value);

    if (stage.mode == LossMode::kStateElbo) {
      // The extractor is frozen here: extract every episode's states once.
      parallel_for(static_cast<int>(episodes.size()), [&](int i) {
        LoadedEpisode& ep = episodes[i];
        ep.data.states.clear();
        for (size_t t = 0; t < ep.data.images.size(); ++t) {
          Tape<float> tp;
          Binder<float> B(tp, false);
          ep.data.states.push_back(tp.val(liftsplat::fuse_frame(
              B, model.image_encoder, ep.data.images[t], geoms, cfg.grid())));
        }
      });
    }

    Adam<float> opt(static_cast<float>(cfg.train.lr));
    float ft_scale = static_cast<float>(cfg.train.finetune_lr_scale);
    opt.attach(model.registry, [&](const std::string& name) {
      if (mode == "finetune" && name.rfind("dyn.", 0) == 0) return ft_scale;
      return 1.0f;
    });

    double best_val = std::numeric_limits<double>::infinity();
    std::vector<Tensor<float>> best_snapshot = model.snapshot();
    int best_epoch = 0;
    int bad_epochs = 0;

    // Runs one episode; fills grads (registry-aligned) when train_pass.
    auto run_episode = [&](int idx, Rng noise, bool train_pass,
                           std::vector<Tensor<float>>* grads) {
      Tape<float> tp;
      Binder<float> B(tp, train_pass, &frozen);
      LossBreakdown<float> lb = episode_loss(B, model, cfg, episodes[idx].data,
                                             stage.mode, geoms, noise);
      float total = tp.val(lb.total)[0];
      if (!std::isfinite(total))
        throw NumericError("non-finite loss on episode " + std::to_string(idx) +
                           " (loglik=" + std::to_string(lb.state_loglik) +
                           ", kl=" + std::to_string(lb.kl_first + lb.kl_z) + ")");
      if (train_pass) {
        tp.backward(lb.total);
        grads->assign(model.registry.size(), Tensor<float>{});
        for (size_t p = 0; p < model.registry.size(); ++p) {
          Var<float> v = B.lookup(*model.registry.entries()[p].value);
          if (v.valid() && tp.requires_grad(v)) (*grads)[p] = tp.grad(v);
        }
      }
      lb.total = Var<float>{};  // tape-local handle; only the scalars leave
      return std::make_pair(lb, total);
    };

    try {
      for (int epoch = 1; epoch <= cfg.train.max_epochs; ++epoch) {
        std::vector<int> order = train_idx;
        Rng shuffle_rng(mix_seed(cfg.train.seed, 0x5F0F + stage_i, epoch));
        for (size_t i = order.size() - 1; i > 0; --i)
          std::swap(order[i], order[shuffle_rng.below(i + 1)]);

        EpochStats stats;
        stats.stage = stage.name;
        stats.epoch = epoch;
        stats.lr = opt.lr();
        double n_train = static_cast<double>(order.size());

        for (size_t b0 = 0; b0 < order.size();
             b0 += static_cast<size_t>(cfg.train.batch_size)) {
          size_t b1 = std::min(order.size(), b0 + cfg.train.batch_size);
          int bn = static_cast<int>(b1 - b0);
          std::vector<std::vector<Tensor<float>>> batch_grads(bn);
          std::vector<LossBreakdown<float>> batch_stats(bn);
          parallel_for(bn, [&](int bi) {
            int idx = order[b0 + bi];
            Rng noise(mix_seed(cfg.train.seed,
                               0xA0A0 + stage_i * 1000 + static_cast<uint64_t>(epoch),
                               static_cast<uint64_t>(idx)));
            batch_stats[bi] = run_episode(idx, noise, true, &batch_grads[bi]).first;
          });

          std::vector<Tensor<float>> grad_sum(model.registry.size());
          float inv_bn = 1.0f / static_cast<float>(bn);
          for (int bi = 0; bi < bn; ++bi)
            for (size_t p = 0; p < model.registry.size(); ++p) {
              if (batch_grads[bi][p].empty()) continue;
              if (grad_sum[p].empty())
                grad_sum[p] = Tensor<float>(batch_grads[bi][p].shape);
              for (int64_t k = 0; k < grad_sum[p].size(); ++k)
                grad_sum[p][k] += inv_bn * batch_grads[bi][p][k];
            }
          opt.step(model.registry, grad_sum);

          for (int bi = 0; bi < bn; ++bi) {
            const LossBreakdown<float>& lb = batch_stats[bi];
            stats.elbo_term += lb.elbo_term / n_train;
            stats.seg += lb.seg / n_train;
            stats.center += lb.center / n_train;
            stats.offset += lb.offset / n_train;
            stats.flow += lb.flow / n_train;
            stats.state_loglik += lb.state_loglik / n_train;
            stats.kl_first += lb.kl_first / n_train;
            stats.kl_z += lb.kl_z / n_train;
          }
        }
        stats.total = stats.component_sum();

        // Fixed per-episode validation noise keeps epochs comparable.
        std::vector<double> val_losses(val_idx.size());
        parallel_for(static_cast<int>(val_idx.size()), [&](int vi) {
          Rng noise(mix_seed(cfg.train.seed, 0x7A1,
                             static_cast<uint64_t>(val_idx[vi])));
          std::vector<Tensor<float>> unused;
          val_losses[vi] = run_episode(val_idx[vi], noise, false, &unused).second;
        });
        double val_loss = 0;
        for (double v : val_losses)
          val_loss += v / static_cast<double>(val_losses.size());
        stats.val_loss = val_loss;
        result.epochs.push_back(stats);

        if (val_loss < best_val) {
          best_val = val_loss;
          best_snapshot = model.snapshot();
          best_epoch = epoch;
          bad_epochs = 0;
        } else if (++bad_epochs >= cfg.train.plateau_patience) {
          opt.set_lr(opt.lr() * static_cast<float>(cfg.train.lr_decay_factor));
          bad_epochs = 0;
        }
      }
    } catch (const NumericError&) {
      // Keep the last good weights on numeric failure, then propagate.
      model.restore(best_snapshot);
      CheckpointMeta meta;
      meta.config = cfg;
      meta.variant = cfg.train.variant;
      meta.mode = mode;
      meta.epoch = best_epoch;
      meta.val_loss = best_val;
      save_checkpoint(out_checkpoint, model, meta);
      write_log(log_path, result.epochs);
      throw;
    }

    model.restore(best_snapshot);
    result.best_val = best_val;

    CheckpointMeta meta;
    meta.config = cfg;
    meta.variant = cfg.train.variant;
    meta.mode = mode;
    meta.epoch = best_epoch;
    meta.val_loss = best_val;
    save_checkpoint(out_checkpoint, model, meta);
  }

  write_log(log_path, result.epochs);
  return result;
}

}  // namespace stretchlab::engine
