#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <mutex>
#include <thread>

#include "stretchlab/engine/engine.hpp"

namespace stretchlab::engine {

int thread_budget() {
  if (const char* env = std::getenv("STRETCHLAB_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  int workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int wi = 0; wi < workers; ++wi)
    pool.emplace_back([&] {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void generate_dataset(const Config& cfg, const std::string& out_dir, int episodes,
                      uint64_t seed) {
  cfg.validate();
  if (episodes < 1) throw ConfigError("gen-data: episodes must be >= 1");
  std::filesystem::create_directories(out_dir);
  world::CameraRig rig = cfg.make_rig();
  std::string echo = cfg.to_json();

  parallel_for(episodes, [&](int i) {
    world::WorldConfig wc = cfg.world;
    wc.seed = mix_seed(seed, static_cast<uint64_t>(i));
    world::Episode ep = world::generate_episode(wc, rig);
    world::save_episode(out_dir, i, ep, echo);
  });
}

int count_episodes(const std::string& dir) {
  int n = 0;
  while (std::filesystem::exists(dir + "/" + world::episode_file_name(n) + ".npz"))
    ++n;
  return n;
}

}  // namespace stretchlab::engine
