#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "drformer/model.hpp"
#include "drformer/optim.hpp"

namespace drformer {

struct CheckpointInfo {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  bool has_optimizer = false;
};

// Binary, little-endian doubles stored verbatim so a restore is bit-exact.
// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const DRFormer& model, const Adam* optimizer,
                     const CheckpointInfo& info);

// Every model tensor must be present with matching shape (CheckpointError
// otherwise). Optimizer moments are restored when `optimizer` is given; a
// checkpoint without them then is an error.
// Step and seed only; the tensors are not read.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

CheckpointInfo load_checkpoint(const std::filesystem::path& path, DRFormer& model, Adam* optimizer = nullptr);

}  // namespace drformer
