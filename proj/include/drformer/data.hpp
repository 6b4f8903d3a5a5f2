#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "drformer/tensor.hpp"

namespace drformer {

enum class Split { train, query, gallery };
const char* split_name(Split s);
Split parse_split(const std::string& s, std::size_t line);

struct ReIDSample {
  Tensor image;  // [H x W x C], values in [0, 1]
  std::size_t pid = 0;
  std::size_t camid = 0;
};

// payload is "synth:<seed>:<pid>:<k>:<camid>:<H>x<W>:<occlusion>:<noise>" or a path to a PPM
// file (relative paths resolve against the manifest directory).
struct ManifestRecord {
  Split split = Split::train;
  std::size_t pid = 0;
  std::size_t camid = 0;
  std::string payload;
};

struct DatasetManifest {
  std::size_t num_identities = 0;
  std::size_t num_cameras = 0;
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;

  std::vector<std::size_t> indices(Split s) const;
  // Distinct train pids in ascending order; a pid's class label is its position.
  std::vector<std::size_t> train_pids() const;
  // Throws ConfigError when train and query/gallery pids overlap, when a query
  // has no gallery entry of its pid under another camera, or ids are out of range.
  void validate() const;
};

struct SyntheticSpec {
  std::size_t num_ids = 8;
  std::size_t per_id = 16;
  std::size_t num_cams = 2;
  std::size_t height = 64;
  std::size_t width = 32;
  // Identities used for training; 0 means half of num_ids. Equal to num_ids
  // leaves the query/gallery splits empty (overfit runs evaluate on train).
  std::size_t train_ids = 0;
  double occlusion_rate = 0.3;
  double noise = 0.03;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

DatasetManifest generate_synthetic(const SyntheticSpec& spec);

void write_manifest(std::ostream& os, const DatasetManifest& m);
DatasetManifest read_manifest(std::istream& is);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Decodes a payload reference into an [H x W x 3] image.
Tensor render_payload(const std::string& payload, const std::filesystem::path& base_dir = {});
ReIDSample load_sample(const DatasetManifest& m, std::size_t index);

// Bilinear resampling with pixel centers aligned (half-pixel convention).
Tensor resample_bilinear(const Tensor& image, std::size_t height, std::size_t width);

Tensor read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Tensor& image);

// Query rows and gallery rows for a retrieval protocol over `candidates`
// (indices into pid/camid lists). Per pid, in order, up to two samples become
// queries provided the remaining ones still hold another camera of that pid.
struct RetrievalSplit {
  std::vector<std::size_t> query;
  std::vector<std::size_t> gallery;
};
RetrievalSplit retrieval_split(const std::vector<std::size_t>& pids, const std::vector<std::size_t>& camids,
                               const std::vector<std::size_t>& candidates, std::size_t queries_per_id = 2);

struct PKBatch {
  std::vector<std::size_t> indices;  // manifest record indices, grouped by pid
  std::vector<std::size_t> pids;     // pid of each entry
  std::size_t p = 0;
  std::size_t k = 0;
};

// P pids uniformly without replacement from the train split, then K samples
// of each (with replacement only when a pid holds fewer than K).
PKBatch pk_sample(const DatasetManifest& m, std::size_t p, std::size_t k, std::uint64_t seed);

// Precomputed learnable-token features standing in for the two encoders.
struct FeatureRecord {
  Tensor f_t_d;  // [N x d_D]
  Tensor f_t_c;  // [N x d_C]
  std::size_t pid = 0;
  std::size_t camid = 0;
};

struct FeatureSet {
  std::size_t n = 0;
  std::size_t dim_d = 0;
  std::size_t dim_c = 0;
  std::vector<FeatureRecord> records;
};

// Header "reid-feat v1 n=<N> dd=<d_D> dc=<d_C>", then per line: pid camid,
// N*d_D values, N*d_C values. Errors name the record and line.
void write_features(std::ostream& os, const FeatureSet& set);
FeatureSet import_features(std::istream& is);
FeatureSet import_features(const std::filesystem::path& path);

// Manifest view of a feature set: pids sorted, the first `train_ids` of them
// train (0 = half), the rest split into query/gallery by retrieval_split.
// Payloads are "feat:<record index>".
DatasetManifest manifest_from_features(const FeatureSet& set, std::size_t train_ids = 0);

std::uint64_t splitmix64(std::uint64_t x);
// Seed for an independent stream, e.g. derive_seed(run_seed, step).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace drformer
