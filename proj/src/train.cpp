#include "drformer/train.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>
#include <ostream>
#include <string>

#include "drformer/checkpoint.hpp"
#include "drformer/errors.hpp"
#include "drformer/ops.hpp"
#include "drformer/text_io.hpp"

namespace drformer {

namespace {

constexpr std::size_t kNoClass = std::numeric_limits<std::size_t>::max();

}  // namespace

std::vector<std::size_t> Dataset::class_of_pid() const {
  std::vector<std::size_t> out(manifest.num_identities, kNoClass);
  const auto pids = manifest.train_pids();
  for (std::size_t c = 0; c < pids.size(); ++c) out[pids[c]] = c;
  return out;
}

std::size_t Dataset::num_classes() const { return manifest.train_pids().size(); }

Dataset load_dataset(const RunConfig& cfg) {
  Dataset d;
  switch (cfg.source) {
    case DataSource::synthetic:
      d.manifest = generate_synthetic(cfg.synthetic);
      break;
    case DataSource::manifest:
      d.manifest = load_manifest(cfg.manifest_path);
      break;
    case DataSource::features: {
      d.features = import_features(cfg.features_path);
      d.manifest = manifest_from_features(*d.features, cfg.synthetic.train_ids);
      for (std::size_t i = 0; i < d.manifest.records.size(); ++i) {
        const auto& payload = d.manifest.records[i].payload;
        d.feature_of.push_back(text::parse_uint(std::string_view(payload).substr(5), i + 1));
      }
      break;
    }
  }
  d.manifest.validate();
  if (!d.token_input()) {
    d.images.reserve(d.manifest.records.size());
    for (std::size_t i = 0; i < d.manifest.records.size(); ++i) d.images.push_back(load_sample(d.manifest, i).image);
  }
  return d;
}

ModelConfig build_model_config(const RunConfig& cfg, const Dataset& data) {
  ModelConfig m = cfg.model;
  m.fusion = cfg.effective_fusion();
  m.num_cameras = std::max<std::size_t>(data.manifest.num_cameras, 1);
  m.num_classes = data.num_classes();
  if (data.token_input()) {
    // No encoders are built; their configs only carry the file's dims.
    const auto& f = *data.features;
    m.token_input = true;
    for (auto* e : {&m.dino, &m.clip}) {
      e->depth = 0;
      e->heads = 1;
      e->n_learnable_tokens = f.n;
    }
    m.dino.embed_dim = f.dim_d;
    m.clip.embed_dim = f.dim_c;
  }
  return m;
}

std::uint64_t model_init_seed(std::uint64_t run_seed) { return derive_seed(run_seed, ~std::uint64_t{0}); }

SampleForward forward_record(const DRFormer& model, const Dataset& data, std::size_t record, AttentionTrace* trace) {
  if (record >= data.manifest.records.size()) {
    throw LookupError("record " + std::to_string(record) + " outside the " +
                      std::to_string(data.manifest.records.size()) + "-record dataset");
  }
  if (data.token_input()) {
    const auto& r = data.features->records[data.feature_of[record]];
    return model.forward_tokens(r.f_t_d, r.f_t_c, trace);
  }
  return model.forward(data.images[record], data.manifest.records[record].camid, trace);
}

BatchForward forward_records(const DRFormer& model, const Dataset& data, std::span<const std::size_t> records) {
  std::vector<SampleForward> samples;
  samples.reserve(records.size());
  for (auto r : records) samples.push_back(forward_record(model, data, r));
  return model.collate(samples);
}

Tensor retrieval_features(const DRFormer& model, const Dataset& data, std::span<const std::size_t> records) {
  NoGradGuard no_grad;
  const std::size_t f = model.config().fusion.fusion_dim;
  std::vector<double> flat;
  flat.reserve(records.size() * 2 * f);
  for (auto r : records) {
    const auto s = forward_record(model, data, r);
    flat.insert(flat.end(), s.pooled.z_dc.data().begin(), s.pooled.z_dc.data().end());
    flat.insert(flat.end(), s.pooled.z_cd.data().begin(), s.pooled.z_cd.data().end());
  }
  return Tensor({records.size(), 2 * f}, std::move(flat));
}

void write_step_header(std::ostream& os) { os << "step\tL_ID\tL_Tri\tL_intra\tL_inter\ttotal\n"; }

void write_step_line(std::ostream& os, const StepRecord& r) {
  const auto& b = r.loss;
  os << r.step << '\t' << text::number(b.id_loss) << '\t' << text::number(b.triplet_loss) << '\t'
     << text::number(b.intra_loss) << '\t' << text::number(b.inter_loss) << '\t' << text::number(b.total) << '\n';
}

void write_epoch_header(std::ostream& os) { os << "epoch\tstep\tacc_D\tacc_C\tgap\n"; }

void write_epoch_line(std::ostream& os, const EpochRecord& r) {
  os << r.epoch << '\t' << r.step << '\t' << text::number(r.accuracy.dino) << '\t' << text::number(r.accuracy.clip)
     << '\t' << text::number(r.accuracy.gap()) << '\n';
}

Trainer::Trainer(const RunConfig& cfg, std::shared_ptr<const Dataset> data)
    : cfg_(cfg), weights_(cfg.effective_loss()), data_(std::move(data)) {
  cfg_.validate();
  if (!data_) throw ContractError("Trainer: no dataset");
  class_of_pid_ = data_->class_of_pid();
  model_ = std::make_unique<DRFormer>(build_model_config(cfg_, *data_), model_init_seed(cfg_.seed));
  optim_ = std::make_unique<Adam>(model_->trainable(), cfg_.optim);
}

std::size_t Trainer::steps_per_epoch() const {
  const std::size_t n = data_->manifest.indices(Split::train).size();
  const std::size_t batch = cfg_.p * cfg_.k;
  return std::max<std::size_t>(1, (n + batch - 1) / batch);
}

std::size_t Trainer::total_steps() const { return cfg_.epochs ? cfg_.epochs * steps_per_epoch() : cfg_.steps; }

StepRecord Trainer::train_step() {
  const auto batch = pk_sample(data_->manifest, cfg_.p, cfg_.k, derive_seed(cfg_.seed, step_));
  std::vector<std::size_t> labels;
  labels.reserve(batch.pids.size());
  for (auto pid : batch.pids) labels.push_back(class_of_pid_.at(pid));

  optim_->zero_grad();
  Tape tape;
  TotalLoss loss;
  {
    RecordingGuard guard(tape);
    const auto fwd = forward_records(*model_, *data_, batch.indices);
    loss = total_loss(batch_loss_parts(fwd, model_->classifier(), labels, weights_), weights_);
  }
  last_reg_nodes_ = tape.count_scope("intra_loss") + tape.count_scope("inter_loss");
  tape.backward(loss.total);
  optim_->step();
  ++step_;
  StepRecord rec{step_, loss.breakdown};
  history_.push_back(rec);
  return rec;
}

EpochRecord Trainer::epoch_diagnostic() const {
  NoGradGuard no_grad;
  const auto train = data_->manifest.indices(Split::train);
  std::vector<std::size_t> labels;
  for (auto i : train) labels.push_back(class_of_pid_.at(data_->manifest.records[i].pid));
  const auto fwd = forward_records(*model_, *data_, train);
  EpochRecord r;
  r.step = step_;
  r.epoch = step_ / steps_per_epoch();
  r.accuracy = branch_accuracy(fwd.z_dc, fwd.z_cd, model_->classifier(), labels);
  return r;
}

void Trainer::run(const TrainLogs& logs, std::size_t until, const std::filesystem::path& out_dir) {
  if (until == 0) until = total_steps();
  if (step_ == 0) {
    if (logs.steps) write_step_header(*logs.steps);
    if (logs.epochs) write_epoch_header(*logs.epochs);
  }
  const std::size_t spe = steps_per_epoch();
  while (step_ < until) {
    StepRecord rec;
    try {
      rec = train_step();
    } catch (const TrainingDivergenceError&) {
      // The update never happened, so the current state is the last good one.
      if (!out_dir.empty()) save(out_dir / "last_good.ckpt");
      throw;
    }
    if (logs.steps) write_step_line(*logs.steps, rec);
    if (step_ % spe == 0) {
      epochs_.push_back(epoch_diagnostic());
      if (logs.epochs) write_epoch_line(*logs.epochs, epochs_.back());
    }
    if (!out_dir.empty() && cfg_.checkpoint_every && step_ % cfg_.checkpoint_every == 0) {
      save(out_dir / "checkpoint.ckpt");
    }
  }
  if (!out_dir.empty()) save(out_dir / "model.ckpt");
}

void Trainer::save(const std::filesystem::path& path) const {
  save_checkpoint(path, *model_, optim_.get(), {step_, cfg_.seed, true});
}

void Trainer::restore(const std::filesystem::path& path) {
  // Check the run identity before any tensor is overwritten.
  const auto info = read_checkpoint_info(path);
  if (info.seed != cfg_.seed) {
    throw CheckpointError(path.string() + ": written by a run with seed " + std::to_string(info.seed) +
                          ", this run uses " + std::to_string(cfg_.seed));
  }
  load_checkpoint(path, *model_, optim_.get());
  step_ = info.step;
  history_.clear();
  epochs_.clear();
}

std::uint64_t parameter_checksum(const DRFormer& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : model.state()) {
    for (double v : p.tensor.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace drformer
