#include "drformer/config.hpp"

#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <ostream>

#include "drformer/errors.hpp"
#include "drformer/text_io.hpp"

namespace drformer {

void RunConfig::set_tokens(std::size_t n) {
  model.dino.n_learnable_tokens = n;
  model.clip.n_learnable_tokens = n;
}

LossWeights RunConfig::effective_loss() const {
  LossWeights w = loss;
  if (disable_inter) w.lambda1 = 0.0;
  if (disable_intra) w.lambda2 = 0.0;
  return w;
}

FusionConfig RunConfig::effective_fusion() const {
  FusionConfig f = model.fusion;
  if (disable_fusion) f.enabled = false;
  return f;
}

void RunConfig::validate(bool check_paths) const {
  if (profile != "desk" && profile != "paper") throw ConfigError("unknown profile '" + profile + "'");
  model.dino.validate();
  model.clip.validate();
  if (tokens() == 0) throw ConfigError("model.tokens must be at least 1");
  if (model.dino.n_learnable_tokens != model.clip.n_learnable_tokens) {
    throw ConfigError("both encoders need the same number of learnable tokens");
  }
  effective_fusion().validate(model.dino.embed_dim, model.clip.embed_dim);
  loss.validate();
  optim.validate();
  if (steps == 0 && epochs == 0) throw ConfigError("train.steps or train.epochs must be positive");
  if (p < 2 || k < 2) throw ConfigError("train.p and train.k must both be at least 2");
  switch (source) {
    case DataSource::synthetic:
      synthetic.validate();
      if (p > (synthetic.train_ids ? synthetic.train_ids : synthetic.num_ids / 2)) {
        throw ConfigError("train.p = " + std::to_string(p) + " exceeds the number of training identities");
      }
      break;
    case DataSource::manifest:
      if (manifest_path.empty()) throw ConfigError("data.source = manifest needs data.manifest");
      if (check_paths && !std::filesystem::exists(manifest_path)) {
        throw ConfigError("manifest not found: " + manifest_path.string());
      }
      break;
    case DataSource::features:
      if (features_path.empty()) throw ConfigError("data.source = features needs data.features");
      if (check_paths && !std::filesystem::exists(features_path)) {
        throw ConfigError("feature file not found: " + features_path.string());
      }
      break;
  }
}

RunConfig profile_config(std::string_view name) {
  RunConfig c;
  if (name == "desk" || name.empty()) return c;
  if (name != "paper") throw ConfigError("unknown profile '" + std::string(name) + "'");
  c.profile = "paper";
  c.model.dino = EncoderConfig::paper_dino();
  c.model.clip = EncoderConfig::paper_clip();
  c.model.fusion.fusion_dim = 768;
  c.model.fusion.heads = 12;
  c.optim.lr = 5e-6;
  c.epochs = 70;
  c.p = 16;
  c.k = 4;
  c.synthetic.num_ids = 64;  // 32 training identities cover P = 16
  c.synthetic.height = 256;
  c.synthetic.width = 128;
  return c;
}

namespace {

struct Field {
  std::function<void(RunConfig&, std::string_view, std::size_t)> set;
  std::function<std::string(const RunConfig&)> get;
};

bool parse_bool(std::string_view v, std::size_t line) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ParseError("expected a boolean, got '" + std::string(v) + "'", line);
}

std::string show(bool b) { return b ? "true" : "false"; }
std::string show(double d) { return text::number(d); }
std::string show(std::size_t n) { return std::to_string(n); }

template <typename Getter>
Field size_field(Getter ref) {
  return {[ref](RunConfig& c, std::string_view v, std::size_t line) { ref(c) = text::parse_uint(v, line); },
          [ref](const RunConfig& c) { return show(static_cast<std::size_t>(ref(const_cast<RunConfig&>(c)))); }};
}

template <typename Getter>
Field double_field(Getter ref) {
  return {[ref](RunConfig& c, std::string_view v, std::size_t line) { ref(c) = text::parse_double(v, line); },
          [ref](const RunConfig& c) { return show(ref(const_cast<RunConfig&>(c))); }};
}

template <typename Getter>
Field bool_field(Getter ref) {
  return {[ref](RunConfig& c, std::string_view v, std::size_t line) { ref(c) = parse_bool(v, line); },
          [ref](const RunConfig& c) { return show(ref(const_cast<RunConfig&>(c))); }};
}

void add_encoder_fields(std::map<std::string, Field>& f, const std::string& section,
                        EncoderConfig& (*enc)(RunConfig&)) {
  f[section + ".height"] = size_field([enc](RunConfig& c) -> std::size_t& { return enc(c).image_height; });
  f[section + ".width"] = size_field([enc](RunConfig& c) -> std::size_t& { return enc(c).image_width; });
  f[section + ".patch"] = size_field([enc](RunConfig& c) -> std::size_t& { return enc(c).patch_size; });
  f[section + ".dim"] = size_field([enc](RunConfig& c) -> std::size_t& { return enc(c).embed_dim; });
  f[section + ".depth"] = size_field([enc](RunConfig& c) -> std::size_t& { return enc(c).depth; });
  f[section + ".heads"] = size_field([enc](RunConfig& c) -> std::size_t& { return enc(c).heads; });
  f[section + ".mlp_ratio"] = size_field([enc](RunConfig& c) -> std::size_t& { return enc(c).mlp_ratio; });
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> f;
    f["run.profile"] = {[](RunConfig&, std::string_view, std::size_t) {},  // consumed before the other keys
                        [](const RunConfig& c) { return c.profile; }};
    f["run.seed"] = size_field([](RunConfig& c) -> std::uint64_t& { return c.seed; });

    f["data.source"] = {[](RunConfig& c, std::string_view v, std::size_t line) {
                          if (v == "synthetic") c.source = DataSource::synthetic;
                          else if (v == "manifest") c.source = DataSource::manifest;
                          else if (v == "features") c.source = DataSource::features;
                          else throw ParseError("data.source must be synthetic, manifest or features", line);
                        },
                        [](const RunConfig& c) -> std::string {
                          switch (c.source) {
                            case DataSource::manifest: return "manifest";
                            case DataSource::features: return "features";
                            default: return "synthetic";
                          }
                        }};
    f["data.manifest"] = {[](RunConfig& c, std::string_view v, std::size_t) { c.manifest_path = std::string(v); },
                          [](const RunConfig& c) { return c.manifest_path.string(); }};
    f["data.features"] = {[](RunConfig& c, std::string_view v, std::size_t) { c.features_path = std::string(v); },
                          [](const RunConfig& c) { return c.features_path.string(); }};
    f["data.ids"] = size_field([](RunConfig& c) -> std::size_t& { return c.synthetic.num_ids; });
    f["data.per_id"] = size_field([](RunConfig& c) -> std::size_t& { return c.synthetic.per_id; });
    f["data.cameras"] = size_field([](RunConfig& c) -> std::size_t& { return c.synthetic.num_cams; });
    f["data.height"] = size_field([](RunConfig& c) -> std::size_t& { return c.synthetic.height; });
    f["data.width"] = size_field([](RunConfig& c) -> std::size_t& { return c.synthetic.width; });
    f["data.train_ids"] = size_field([](RunConfig& c) -> std::size_t& { return c.synthetic.train_ids; });
    f["data.occlusion"] = double_field([](RunConfig& c) -> double& { return c.synthetic.occlusion_rate; });
    f["data.noise"] = double_field([](RunConfig& c) -> double& { return c.synthetic.noise; });
    f["data.seed"] = size_field([](RunConfig& c) -> std::uint64_t& { return c.synthetic.seed; });

    add_encoder_fields(f, "dino", [](RunConfig& c) -> EncoderConfig& { return c.model.dino; });
    add_encoder_fields(f, "clip", [](RunConfig& c) -> EncoderConfig& { return c.model.clip; });

    f["model.tokens"] = {[](RunConfig& c, std::string_view v, std::size_t line) {
                           c.set_tokens(text::parse_uint(v, line));
                         },
                         [](const RunConfig& c) { return show(c.tokens()); }};
    f["model.freeze_encoders"] = bool_field([](RunConfig& c) -> bool& { return c.model.freeze_encoders; });

    f["fusion.enabled"] = bool_field([](RunConfig& c) -> bool& { return c.model.fusion.enabled; });
    f["fusion.dim"] = size_field([](RunConfig& c) -> std::size_t& { return c.model.fusion.fusion_dim; });
    f["fusion.heads"] = size_field([](RunConfig& c) -> std::size_t& { return c.model.fusion.heads; });
    f["fusion.mlp_ratio"] = size_field([](RunConfig& c) -> std::size_t& { return c.model.fusion.mlp_ratio; });
    f["fusion.cross_layers"] = size_field([](RunConfig& c) -> std::size_t& { return c.model.fusion.cross_layers; });
    f["fusion.self_layers"] = size_field([](RunConfig& c) -> std::size_t& { return c.model.fusion.self_layers; });
    f["fusion.shared_weights"] = bool_field([](RunConfig& c) -> bool& { return c.model.fusion.shared_weights; });
    f["fusion.input_projection"] =
        bool_field([](RunConfig& c) -> bool& { return c.model.fusion.input_projection; });
    f["fusion.pool"] = {[](RunConfig& c, std::string_view v, std::size_t line) {
                          if (v == "mean") c.model.fusion.pool = PoolMode::mean;
                          else if (v == "first_token") c.model.fusion.pool = PoolMode::first_token;
                          else throw ParseError("fusion.pool must be mean or first_token", line);
                        },
                        [](const RunConfig& c) -> std::string {
                          return c.model.fusion.pool == PoolMode::mean ? "mean" : "first_token";
                        }};

    f["loss.lambda_inter"] = double_field([](RunConfig& c) -> double& { return c.loss.lambda1; });
    f["loss.lambda_intra"] = double_field([](RunConfig& c) -> double& { return c.loss.lambda2; });
    f["loss.margin"] = double_field([](RunConfig& c) -> double& { return c.loss.margin_alpha; });
    f["loss.label_smoothing"] = double_field([](RunConfig& c) -> double& { return c.loss.label_smoothing_eps; });

    f["optim.lr"] = double_field([](RunConfig& c) -> double& { return c.optim.lr; });
    f["optim.beta1"] = double_field([](RunConfig& c) -> double& { return c.optim.beta1; });
    f["optim.beta2"] = double_field([](RunConfig& c) -> double& { return c.optim.beta2; });
    f["optim.eps"] = double_field([](RunConfig& c) -> double& { return c.optim.eps; });
    f["optim.weight_decay"] = double_field([](RunConfig& c) -> double& { return c.optim.weight_decay; });

    f["train.steps"] = size_field([](RunConfig& c) -> std::size_t& { return c.steps; });
    f["train.epochs"] = size_field([](RunConfig& c) -> std::size_t& { return c.epochs; });
    f["train.p"] = size_field([](RunConfig& c) -> std::size_t& { return c.p; });
    f["train.k"] = size_field([](RunConfig& c) -> std::size_t& { return c.k; });
    f["train.checkpoint_every"] = size_field([](RunConfig& c) -> std::size_t& { return c.checkpoint_every; });

    f["ablation.disable_fusion"] = bool_field([](RunConfig& c) -> bool& { return c.disable_fusion; });
    f["ablation.disable_intra"] = bool_field([](RunConfig& c) -> bool& { return c.disable_intra; });
    f["ablation.disable_inter"] = bool_field([](RunConfig& c) -> bool& { return c.disable_inter; });

    f["eval.normalize"] = bool_field([](RunConfig& c) -> bool& { return c.normalize_features; });
    return f;
  }();
  return table;
}

struct Entry {
  std::string key;
  std::string value;
  std::size_t line;
};

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, _] : fields()) out.push_back(k);
  return out;
}

RunConfig parse_config(std::istream& is, const std::filesystem::path& base_dir, std::string_view base) {
  std::vector<Entry> entries;
  std::string section, line;
  std::size_t line_no = 0;
  std::string file_profile;
  while (std::getline(is, line)) {
    ++line_no;
    auto t = text::trim(line);
    if (const auto hash = t.find('#'); hash != std::string_view::npos) t = text::trim(t.substr(0, hash));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) throw ParseError("malformed section header", line_no);
      section = std::string(text::trim(t.substr(1, t.size() - 2)));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", line_no);
    if (section.empty()) throw ParseError("key outside of any [section]", line_no);
    std::string key = section + "." + std::string(text::trim(t.substr(0, eq)));
    std::string value(text::trim(t.substr(eq + 1)));
    if (!fields().count(key)) throw ParseError("unknown config key '" + key + "'", line_no);
    if (value.empty()) throw ParseError("empty value for '" + key + "'", line_no);
    if (key == "run.profile") file_profile = value;
    entries.push_back({std::move(key), std::move(value), line_no});
  }

  RunConfig cfg = profile_config(base.empty() ? std::string_view(file_profile) : base);
  for (const auto& e : entries) fields().at(e.key).set(cfg, e.value, e.line);
  for (auto* p : {&cfg.manifest_path, &cfg.features_path}) {
    if (!p->empty() && p->is_relative() && !base_dir.empty()) *p = base_dir / *p;
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, std::string_view profile_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  RunConfig cfg;
  try {
    cfg = parse_config(in, path.parent_path(), profile_override);
  } catch (const ParseError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  cfg.validate(true);
  return cfg;
}

void write_config(std::ostream& os, const RunConfig& cfg) {
  std::string current;
  for (const auto& [key, field] : fields()) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    const std::string value = field.get(cfg);
    if (value.empty()) continue;  // unset paths
    if (section != current) {
      if (!current.empty()) os << '\n';
      os << '[' << section << "]\n";
      current = section;
    }
    os << key.substr(dot + 1) << " = " << value << '\n';
  }
}

}  // namespace drformer
