#include <cstdio>

#include "nlohmann/json.hpp"
#include "stretchlab/core/errors.hpp"
#include "stretchlab/core/npz.hpp"
#include "stretchlab/world.hpp"

namespace stretchlab::world {

namespace {
constexpr int kSchemaVersion = 1;
}

std::string episode_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "episode_%05d", index);
  return buf;
}

void save_episode(const std::string& dir, int index, const Episode& episode,
                  const std::string& config_json) {
  int t_len = static_cast<int>(episode.frames.size());
  if (t_len == 0) throw IoError("cannot save empty episode");
  const Tensor<float>& f0 = episode.frames[0].images;
  int n_cam = f0.dim(0), h = f0.dim(2), w = f0.dim(3);

  Tensor<uint8_t> images({t_len, n_cam, 3, h, w});
  int64_t per_frame = f0.size();
  for (int t = 0; t < t_len; ++t) {
    const Tensor<float>& img = episode.frames[t].images;
    for (int64_t i = 0; i < per_frame; ++i) {
      float v = img[i];
      v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
      images[t * per_frame + i] = static_cast<uint8_t>(v * 255.0f + 0.5f);
    }
  }

  NpzWriter npz;
  npz.add("images", images);
  npz.add("instance", episode.labels.instance);
  npz.add("segmentation", episode.labels.segmentation);
  npz.add("centers", episode.labels.centers);
  npz.add("offsets", episode.labels.offsets);
  npz.add("flows", episode.labels.flows);

  std::string stem = dir + "/" + episode_file_name(index);
  npz.save(stem + ".npz");

  nlohmann::json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["seed"] = episode.seed;
  meta["config"] = nlohmann::json::parse(config_json);
  std::string text = meta.dump(2) + "\n";
  FILE* f = std::fopen((stem + ".json").c_str(), "wb");
  if (!f) throw IoError("cannot write episode metadata: " + stem + ".json");
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

Episode load_episode(const std::string& dir, int index) {
  std::string stem = dir + "/" + episode_file_name(index);
  NpzReader npz(stem + ".npz");

  Episode ep;
  Tensor<uint8_t> images = npz.tensor<uint8_t>("images");
  int t_len = images.dim(0), n_cam = images.dim(1), h = images.dim(3), w = images.dim(4);
  int64_t per_frame = static_cast<int64_t>(n_cam) * 3 * h * w;
  for (int t = 0; t < t_len; ++t) {
    MultiCamFrame frame;
    frame.images = Tensor<float>({n_cam, 3, h, w});
    for (int64_t i = 0; i < per_frame; ++i)
      frame.images[i] = static_cast<float>(images[t * per_frame + i]) / 255.0f;
    ep.frames.push_back(std::move(frame));
  }
  ep.labels.instance = npz.tensor<int32_t>("instance");
  ep.labels.segmentation = npz.tensor<float>("segmentation");
  ep.labels.centers = npz.tensor<float>("centers");
  ep.labels.offsets = npz.tensor<float>("offsets");
  ep.labels.flows = npz.tensor<float>("flows");

  nlohmann::json meta = nlohmann::json::parse(load_episode_meta(dir, index));
  ep.seed = meta.value("seed", uint64_t(0));
  return ep;
}

std::string load_episode_meta(const std::string& dir, int index) {
  std::string path = dir + "/" + episode_file_name(index) + ".json";
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("cannot read episode metadata: " + path);
  std::string text;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) text.append(buf, n);
  std::fclose(f);
  return text;
}

}  // namespace stretchlab::world
