#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "drformer/data.hpp"
#include "drformer/losses.hpp"
#include "drformer/model.hpp"
#include "drformer/optim.hpp"

namespace drformer {

enum class DataSource { synthetic, manifest, features };

struct RunConfig {
  std::string profile = "desk";

  DataSource source = DataSource::synthetic;
  SyntheticSpec synthetic;
  std::filesystem::path manifest_path;
  std::filesystem::path features_path;

  // num_cameras and num_classes are filled in from the data at build time.
  ModelConfig model;
  LossWeights loss;
  AdamConfig optim;

  std::size_t steps = 200;
  std::size_t epochs = 0;  // when non-zero, overrides steps
  std::size_t p = 4;
  std::size_t k = 4;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint

  bool disable_fusion = false;
  bool disable_intra = false;
  bool disable_inter = false;

  bool normalize_features = false;  // cosine-equivalent ranking at evaluation

  // Learnable tokens per encoder (kept equal on both branches).
  std::size_t tokens() const { return model.dino.n_learnable_tokens; }
  void set_tokens(std::size_t n);

  // Loss weights and fusion config after the ablation switches.
  LossWeights effective_loss() const;
  FusionConfig effective_fusion() const;

  // Numeric ranges; `check_paths` also requires the data files to exist.
  void validate(bool check_paths = false) const;
};

// "desk": toy encoders, lr 1e-3, 200 steps. "paper": ViT-B sized encoders,
// lr 5e-6, 70 epochs.
RunConfig profile_config(std::string_view name);

// Line-oriented `key = value` text under `[section]` headers; '#' starts a
// comment. Keys override the profile named by `[run] profile` (or `base`).
// Relative data paths resolve against `base_dir`.
RunConfig parse_config(std::istream& is, const std::filesystem::path& base_dir = {}, std::string_view base = {});
RunConfig load_config(const std::filesystem::path& path, std::string_view profile_override = {});
void write_config(std::ostream& os, const RunConfig& cfg);

// Every recognized "section.key".
std::vector<std::string> config_keys();

}  // namespace drformer
