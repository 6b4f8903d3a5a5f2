#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "drformer/config.hpp"
#include "drformer/data.hpp"
#include "drformer/losses.hpp"
#include "drformer/model.hpp"
#include "drformer/optim.hpp"

namespace drformer {

// The manifest plus everything a forward pass needs per record, decoded once.
struct Dataset {
  DatasetManifest manifest;
  std::vector<Tensor> images;         // image sources, one per record
  std::optional<FeatureSet> features;  // feature-file source
  std::vector<std::size_t> feature_of;  // record -> feature-set row

  bool token_input() const { return features.has_value(); }
  // Class index of every train pid (sorted order); other pids map to npos.
  std::vector<std::size_t> class_of_pid() const;
  std::size_t num_classes() const;
};

Dataset load_dataset(const RunConfig& cfg);

// Model dimensions for this data: cameras and classes, and for feature input
// depth-0 encoders sized to the file.
ModelConfig build_model_config(const RunConfig& cfg, const Dataset& data);

// Runs of the same config share the model init seed.
std::uint64_t model_init_seed(std::uint64_t run_seed);

SampleForward forward_record(const DRFormer& model, const Dataset& data, std::size_t record,
                             AttentionTrace* trace = nullptr);
BatchForward forward_records(const DRFormer& model, const Dataset& data, std::span<const std::size_t> records);
// [z_dc; z_cd] rows, no gradient tracking.
Tensor retrieval_features(const DRFormer& model, const Dataset& data, std::span<const std::size_t> records);

struct StepRecord {
  std::size_t step = 0;  // 1-based count of completed updates
  LossBreakdown loss;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  BranchAccuracy accuracy;
};

// Optional sinks; lines are written as each record is produced.
struct TrainLogs {
  std::ostream* steps = nullptr;   // step  L_ID  L_Tri  L_intra  L_inter  total
  std::ostream* epochs = nullptr;  // epoch  step  acc_D  acc_C  gap
};

void write_step_header(std::ostream& os);
void write_step_line(std::ostream& os, const StepRecord& r);
void write_epoch_header(std::ostream& os);
void write_epoch_line(std::ostream& os, const EpochRecord& r);

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::shared_ptr<const Dataset> data);

  const RunConfig& config() const { return cfg_; }
  const Dataset& data() const { return *data_; }
  DRFormer& model() { return *model_; }
  const DRFormer& model() const { return *model_; }
  Adam& optimizer() { return *optim_; }

  std::size_t step() const { return step_; }
  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;

  // One PK batch, forward, backward and update. The batch depends only on
  // (seed, step), so a restored trainer draws the same sequence.
  StepRecord train_step();
  // Per-branch accuracy over the training split.
  EpochRecord epoch_diagnostic() const;

  // Trains until `until` completed steps (0: total_steps()). With a
  // non-empty `out_dir`, checkpoints land there; a divergent step leaves
  // last_good.ckpt holding the state before it and rethrows.
  void run(const TrainLogs& logs, std::size_t until = 0, const std::filesystem::path& out_dir = {});

  void save(const std::filesystem::path& path) const;
  void restore(const std::filesystem::path& path);

  // Regularizer nodes (intra_loss / inter_loss scopes) on the last step's tape.
  std::size_t last_regularizer_nodes() const { return last_reg_nodes_; }
  const std::vector<StepRecord>& history() const { return history_; }
  const std::vector<EpochRecord>& epochs() const { return epochs_; }

 private:
  RunConfig cfg_;
  LossWeights weights_;
  std::shared_ptr<const Dataset> data_;
  std::vector<std::size_t> class_of_pid_;
  std::unique_ptr<DRFormer> model_;
  std::unique_ptr<Adam> optim_;
  std::size_t step_ = 0;
  std::size_t last_reg_nodes_ = 0;
  std::vector<StepRecord> history_;
  std::vector<EpochRecord> epochs_;
};

// Order-sensitive FNV-1a hash over the bit patterns of every model tensor.
std::uint64_t parameter_checksum(const DRFormer& model);

}  // namespace drformer
