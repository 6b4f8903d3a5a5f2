#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "drformer/config.hpp"

namespace fixture {

// A few-second model: 2-patch encoders of width 8, one block each.
inline drformer::RunConfig tiny_config() {
  drformer::RunConfig c = drformer::profile_config("desk");
  c.model.dino = {.image_height = 28, .image_width = 14, .patch_size = 14, .embed_dim = 8, .depth = 1, .heads = 2};
  c.model.clip = {.image_height = 32, .image_width = 16, .patch_size = 16, .embed_dim = 8, .depth = 1, .heads = 2};
  c.model.fusion.fusion_dim = 8;
  c.model.fusion.heads = 2;
  c.synthetic.num_ids = 6;
  c.synthetic.per_id = 6;
  c.synthetic.train_ids = 3;
  c.synthetic.height = 32;
  c.synthetic.width = 16;
  c.p = 3;
  c.k = 2;
  c.steps = 6;
  c.seed = 11;
  return c;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("drformer_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixture
