#include "nlohmann/json.hpp"
#include "stretchlab/core/npz.hpp"
#include "stretchlab/engine/engine.hpp"

namespace stretchlab::engine {

namespace {
constexpr int kSchemaVersion = 1;

nlohmann::json manifest_json(const PredictionModel<float>& model,
                             const CheckpointMeta& meta) {
  nlohmann::json m;
  m["schema_version"] = kSchemaVersion;
  m["variant"] = meta.variant;
  m["mode"] = meta.mode;
  m["epoch"] = meta.epoch;
  m["val_loss"] = meta.val_loss;
  m["config_hash"] = meta.config.hash();
  m["config"] = nlohmann::json::parse(meta.config.to_json());
  nlohmann::json shapes;
  for (const auto& e : model.registry.entries()) shapes[e.name] = e.value->shape;
  m["shapes"] = std::move(shapes);
  return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const PredictionModel<float>& model,
                     const CheckpointMeta& meta) {
  NpzWriter npz;
  npz.add_raw("manifest.json", manifest_json(model, meta).dump(2));
  for (const auto& e : model.registry.entries()) npz.add(e.name, *e.value);
  npz.save(path);
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  NpzReader npz(path);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(npz.raw("manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: bad manifest: ") + e.what());
  }
  if (m.value("schema_version", -1) != kSchemaVersion)
    throw IoError("checkpoint: unsupported schema version");
  CheckpointMeta meta;
  meta.variant = m.at("variant").get<std::string>();
  meta.mode = m.value("mode", std::string("joint"));
  meta.epoch = m.value("epoch", 0);
  meta.val_loss = m.value("val_loss", 0.0);
  meta.config = Config::from_json_text(m.at("config").dump());
  return meta;
}

CheckpointMeta load_checkpoint(const std::string& path,
                               PredictionModel<float>& model) {
  CheckpointMeta meta = peek_checkpoint(path);
  model.init(meta.config, parse_variant(meta.variant), meta.config.train.seed);

  NpzReader npz(path);
  for (const auto& e : model.registry.entries()) {
    Tensor<float> stored = npz.tensor<float>(e.name);
    if (stored.shape != e.value->shape)
      throw IoError("checkpoint: shape mismatch for " + e.name + ": stored " +
                    Tensor<float>::shape_str(stored.shape) + " expected " +
                    Tensor<float>::shape_str(e.value->shape));
    *e.value = std::move(stored);
  }
  return meta;
}

}  // namespace stretchlab::engine
