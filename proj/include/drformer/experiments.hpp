#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "drformer/bias_analysis.hpp"
#include "drformer/config.hpp"
#include "drformer/eval.hpp"
#include "drformer/model.hpp"
#include "drformer/train.hpp"

namespace drformer {

// Query and gallery records used to score a model: the manifest's own
// query/gallery splits, or (when `use_train` is set or those are empty) a
// retrieval split of the training records.
RetrievalSplit retrieval_records(const Dataset& data, bool use_train = false);

DistanceMatrix retrieval_distances(const DRFormer& model, const Dataset& data, const RetrievalSplit& split,
                                   bool normalize = false);

MetricsReport evaluate_model(const DRFormer& model, const Dataset& data, bool normalize = false,
                             bool use_train = false);

// Branch logits of every training record. Only training pids have classifier
// rows, so the dump is taken over the training split.
BranchLogitDump dump_branch_logits(const DRFormer& model, const Dataset& data, double eps);

// Head-averaged attention of one sample. Encoder blocks keep the
// learnable-token query rows, N x (N + M); fusion cross-attention is N x N.
struct AttentionMap {
  std::string site;
  Tensor weights;
};
std::vector<AttentionMap> attention_maps(const DRFormer& model, const Dataset& data, std::size_t record);

// "attention <site> <rows> <cols>" followed by `rows` lines of values.
void write_attention(std::ostream& os, const std::vector<AttentionMap>& maps);
std::vector<AttentionMap> read_attention(std::istream& is);

struct AblationRun {
  std::string group;  // fusion, regularizer or tokens
  std::string name;
  RunConfig config;
};

// Fusion ladder (concat, 1 cross, 1 cross + 1 self, 1 cross + 2 self) without
// regularizers, the 2 x 2 regularizer grid on the full fusion stack, and the
// token sweep N = 1..4 with both regularizers. Every run shares the base seed
// and dataset.
std::vector<AblationRun> ablation_grid(const RunConfig& base);

struct AblationRow {
  std::string group;
  std::string name;
  double map = 0.0;
  double rank1 = 0.0;
  double acc_d = 0.0;
  double acc_c = 0.0;
  double gap = 0.0;
  std::size_t reg_nodes = 0;  // regularizer nodes on the final step's tape
};

// Trains and evaluates every run of the grid. `progress` gets one line per run.
std::vector<AblationRow> ablate(const RunConfig& base, std::ostream* progress = nullptr);

// Aligned text table; numbers are written exactly, so reading it back
// reproduces the rows.
void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_table(std::istream& is);

// '#'-prefixed comparison lines (skipped by the reader): fusion stack against
// concatenation, each regularizer's mAP change, and the terminal branch gap
// with and without the inter-model regularizer. Reported, never asserted.
void write_ablation_summary(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace drformer
