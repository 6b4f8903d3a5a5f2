#include "drformer/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "drformer/errors.hpp"
#include "drformer/text_io.hpp"

namespace drformer {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::query: return "query";
    case Split::gallery: return "gallery";
  }
  return "?";
}

Split parse_split(const std::string& s, std::size_t line) {
  if (s == "train") return Split::train;
  if (s == "query") return Split::query;
  if (s == "gallery") return Split::gallery;
  throw ParseError("unknown split '" + s + "'", line);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL + 1));
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (records[i].split == s) out.push_back(i);
  return out;
}

std::vector<std::size_t> DatasetManifest::train_pids() const {
  std::set<std::size_t> pids;
  for (const auto& r : records)
    if (r.split == Split::train) pids.insert(r.pid);
  return {pids.begin(), pids.end()};
}

void DatasetManifest::validate() const {
  std::set<std::size_t> train, eval;
  std::map<std::size_t, std::set<std::size_t>> gallery_cams;
  for (const auto& r : records) {
    if (r.pid >= num_identities || r.camid >= num_cameras) {
      throw ConfigError("manifest: record pid " + std::to_string(r.pid) + " camid " + std::to_string(r.camid) +
                        " outside ids=" + std::to_string(num_identities) + " cams=" + std::to_string(num_cameras));
    }
    if (r.split == Split::train) {
      train.insert(r.pid);
    } else {
      eval.insert(r.pid);
    }
    if (r.split == Split::gallery) gallery_cams[r.pid].insert(r.camid);
  }
  for (auto pid : eval) {
    if (train.count(pid)) throw ConfigError("manifest: pid " + std::to_string(pid) + " is in train and eval splits");
  }
  for (const auto& r : records) {
    if (r.split != Split::query) continue;
    const auto it = gallery_cams.find(r.pid);
    const bool ok = it != gallery_cams.end() &&
                    std::any_of(it->second.begin(), it->second.end(), [&](std::size_t c) { return c != r.camid; });
    if (!ok) {
      throw ConfigError("manifest: query of pid " + std::to_string(r.pid) + " camid " + std::to_string(r.camid) +
                        " has no gallery match under another camera");
    }
  }
}

void SyntheticSpec::validate() const {
  if (num_ids < 4) throw ConfigError("synthetic data: need at least 4 identities");
  if (per_id < 4) throw ConfigError("synthetic data: need at least 4 samples per identity");
  if (num_cams < 2) throw ConfigError("synthetic data: need at least 2 cameras");
  if (height < 8 || width < 8) throw ConfigError("synthetic data: images must be at least 8x8");
  const std::size_t t = train_ids ? train_ids : num_ids / 2;
  if (t < 2 || t > num_ids) {
    throw ConfigError("synthetic data: train_ids " + std::to_string(t) + " infeasible for " + std::to_string(num_ids) +
                      " identities");
  }
  if (!(occlusion_rate >= 0.0 && occlusion_rate <= 1.0) || !(noise >= 0.0)) {
    throw ConfigError("synthetic data: occlusion rate must lie in [0, 1] and noise must be non-negative");
  }
}

namespace {

struct SynthRef {
  std::uint64_t seed = 0;
  std::size_t pid = 0, k = 0, camid = 0, height = 0, width = 0;
  double occlusion_rate = 0.0, noise = 0.0;
};

std::string format_ref(const SynthRef& r) {
  return "synth:" + std::to_string(r.seed) + ":" + std::to_string(r.pid) + ":" + std::to_string(r.k) + ":" +
         std::to_string(r.camid) + ":" + std::to_string(r.height) + "x" + std::to_string(r.width) + ":" +
         text::number(r.occlusion_rate) + ":" + text::number(r.noise);
}

SynthRef parse_ref(const std::string& payload) {
  const auto parts = text::split(payload, ':');
  if (parts.size() != 8 || parts[0] != "synth") throw ParseError("malformed synthetic payload '" + payload + "'", 0);
  SynthRef r;
  r.seed = text::parse_uint(parts[1], 0);
  r.pid = text::parse_uint(parts[2], 0);
  r.k = text::parse_uint(parts[3], 0);
  r.camid = text::parse_uint(parts[4], 0);
  const auto dims = text::split(parts[5], 'x');
  if (dims.size() != 2) throw ParseError("malformed image size in payload '" + payload + "'", 0);
  r.height = text::parse_uint(dims[0], 0);
  r.width = text::parse_uint(dims[1], 0);
  r.occlusion_rate = text::parse_double(parts[6], 0);
  r.noise = text::parse_double(parts[7], 0);
  return r;
}

constexpr std::size_t kGridRows = 8, kGridCols = 4, kChannels = 3;

Tensor render_synthetic(const SynthRef& r) {
  const std::size_t h = r.height, w = r.width;
  // Identity template: a coarse grid of colors.
  std::mt19937_64 tpl_rng(derive_seed(r.seed, 0x1000 + r.pid));
  std::uniform_real_distribution<double> color(0.05, 0.95);
  std::vector<double> grid(kGridRows * kGridCols * kChannels);
  for (auto& v : grid) v = color(tpl_rng);

  std::mt19937_64 cam_rng(derive_seed(r.seed, 0x2000 + r.camid));
  std::uniform_real_distribution<double> offset(-0.12, 0.12), gain(0.85, 1.15);
  double cam_offset[kChannels], cam_gain[kChannels];
  for (std::size_t c = 0; c < kChannels; ++c) {
    cam_offset[c] = offset(cam_rng);
    cam_gain[c] = gain(cam_rng);
  }

  std::mt19937_64 rng(derive_seed(derive_seed(r.seed, 0x3000 + r.pid), r.k));
  const int max_dy = static_cast<int>(h / 16), max_dx = static_cast<int>(w / 16);
  const int dy = std::uniform_int_distribution<int>(-max_dy, max_dy)(rng);
  const int dx = std::uniform_int_distribution<int>(-max_dx, max_dx)(rng);
  const bool occluded = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < r.occlusion_rate;
  std::size_t oy = 0, ox = 0, oh = 0, ow = 0;
  double occ_gray = 0.5;
  if (occluded) {
    oh = std::uniform_int_distribution<std::size_t>(h / 8, h / 3)(rng);
    ow = std::uniform_int_distribution<std::size_t>(w / 4, w / 2)(rng);
    oy = std::uniform_int_distribution<std::size_t>(0, h - oh)(rng);
    ox = std::uniform_int_distribution<std::size_t>(0, w - ow)(rng);
    occ_gray = std::uniform_real_distribution<double>(0.2, 0.8)(rng);
  }
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<double> px(h * w * kChannels);
  for (std::size_t y = 0; y < h; ++y) {
    const long sy = std::clamp<long>(static_cast<long>(y) - dy, 0, static_cast<long>(h) - 1);
    const std::size_t gy = static_cast<std::size_t>(sy) * kGridRows / h;
    for (std::size_t x = 0; x < w; ++x) {
      const long sx = std::clamp<long>(static_cast<long>(x) - dx, 0, static_cast<long>(w) - 1);
      const std::size_t gx = static_cast<std::size_t>(sx) * kGridCols / w;
      const bool in_occ = occluded && y >= oy && y < oy + oh && x >= ox && x < ox + ow;
      for (std::size_t c = 0; c < kChannels; ++c) {
        double v = in_occ ? occ_gray : grid[(gy * kGridCols + gx) * kChannels + c] * cam_gain[c] + cam_offset[c];
        v += r.noise * noise(rng);
        px[(y * w + x) * kChannels + c] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return Tensor({h, w, kChannels}, std::move(px));
}

void expect_header_field(const std::map<std::string, std::string>& fields, const char* key, std::size_t line) {
  if (!fields.count(key)) throw ParseError(std::string("header is missing '") + key + "='", line);
}

}  // namespace

RetrievalSplit retrieval_split(const std::vector<std::size_t>& pids, const std::vector<std::size_t>& camids,
                               const std::vector<std::size_t>& candidates, std::size_t queries_per_id) {
  std::map<std::size_t, std::vector<std::size_t>> by_pid;
  for (auto i : candidates) by_pid[pids.at(i)].push_back(i);
  std::set<std::size_t> queries;
  for (const auto& [pid, members] : by_pid) {
    std::vector<std::size_t> chosen;
    for (auto cand : members) {
      if (chosen.size() >= queries_per_id) break;
      chosen.push_back(cand);
      const bool covered = std::all_of(chosen.begin(), chosen.end(), [&](std::size_t q) {
        return std::any_of(members.begin(), members.end(), [&](std::size_t g) {
          return std::find(chosen.begin(), chosen.end(), g) == chosen.end() && camids[g] != camids[q];
        });
      });
      if (!covered) chosen.pop_back();
    }
    queries.insert(chosen.begin(), chosen.end());
  }
  RetrievalSplit out;
  for (auto i : candidates) (queries.count(i) ? out.query : out.gallery).push_back(i);
  return out;
}

DatasetManifest generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t train_ids = spec.train_ids ? spec.train_ids : spec.num_ids / 2;
  DatasetManifest m;
  m.num_identities = spec.num_ids;
  m.num_cameras = spec.num_cams;
  std::vector<std::size_t> pids, cams, eval;
  for (std::size_t pid = 0; pid < spec.num_ids; ++pid) {
    for (std::size_t k = 0; k < spec.per_id; ++k) {
      const std::size_t camid = (k + pid) % spec.num_cams;
      SynthRef ref{spec.seed, pid, k, camid, spec.height, spec.width, spec.occlusion_rate, spec.noise};
      if (pid >= train_ids) eval.push_back(m.records.size());
      m.records.push_back({Split::train, pid, camid, format_ref(ref)});
      pids.push_back(pid);
      cams.push_back(camid);
    }
  }
  const auto rs = retrieval_split(pids, cams, eval);
  for (auto i : rs.query) m.records[i].split = Split::query;
  for (auto i : rs.gallery) m.records[i].split = Split::gallery;
  m.validate();
  return m;
}

void write_manifest(std::ostream& os, const DatasetManifest& m) {
  os << "reid-manifest v1 ids=" << m.num_identities << " cams=" << m.num_cameras << '\n';
  for (const auto& r : m.records) {
    os << split_name(r.split) << '\t' << r.pid << '\t' << r.camid << '\t' << r.payload << '\n';
  }
}

DatasetManifest read_manifest(std::istream& is) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line)) throw ParseError("empty manifest", line_no);
  const auto header = text::parse_header(line, "reid-manifest", line_no);
  expect_header_field(header, "ids", line_no);
  expect_header_field(header, "cams", line_no);
  DatasetManifest m;
  m.num_identities = text::parse_uint(header.at("ids"), line_no);
  m.num_cameras = text::parse_uint(header.at("cams"), line_no);
  while (std::getline(is, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto f = text::split(line, '\t');
    if (f.size() != 4) throw ParseError("expected 4 tab-separated fields, got " + std::to_string(f.size()), line_no);
    ManifestRecord r;
    r.split = parse_split(std::string(f[0]), line_no);
    r.pid = text::parse_uint(f[1], line_no);
    r.camid = text::parse_uint(f[2], line_no);
    r.payload = std::string(f[3]);
    if (r.payload.empty()) throw ParseError("empty payload reference", line_no);
    m.records.push_back(std::move(r));
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  auto m = read_manifest(in);
  m.base_dir = path.parent_path();
  m.validate();
  return m;
}

Tensor render_payload(const std::string& payload, const std::filesystem::path& base_dir) {
  if (payload.rfind("synth:", 0) == 0) return render_synthetic(parse_ref(payload));
  if (payload.rfind("feat:", 0) == 0) throw ContractError("payload '" + payload + "' is a feature record, not an image");
  std::filesystem::path p(payload);
  if (p.is_relative()) p = base_dir / p;
  return read_ppm(p);
}

ReIDSample load_sample(const DatasetManifest& m, std::size_t index) {
  const auto& r = m.records.at(index);
  return {render_payload(r.payload, m.base_dir), r.pid, r.camid};
}

Tensor resample_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw DimensionError("resample: image must be [H x W x C], got " + shape_str(image.shape()));
  const std::size_t h = image.extent(0), w = image.extent(1), c = image.extent(2);
  if (h == height && w == width) return image.clone();
  std::vector<double> out(height * width * c);
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto at = [&](std::size_t yy, std::size_t xx) { return image[(yy * w + xx) * c + ch]; };
        const double top = at(y0, x0) * (1.0 - tx) + at(y0, x1) * tx;
        const double bottom = at(y1, x0) * (1.0 - tx) + at(y1, x1) * tx;
        out[(y * width + x) * c + ch] = top * (1.0 - ty) + bottom * ty;
      }
    }
  }
  return Tensor({height, width, c}, std::move(out));
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open image " + path.string());
  auto next_token = [&]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] != '#') return tok;
      std::string rest;
      std::getline(in, rest);
    }
    throw ParseError("truncated PPM header in " + path.string(), 1);
  };
  const std::string magic = next_token();
  if (magic != "P6" && magic != "P3") throw ParseError("not a PPM image: " + path.string(), 1);
  const std::size_t w = text::parse_uint(next_token(), 1);
  const std::size_t h = text::parse_uint(next_token(), 1);
  const std::size_t maxval = text::parse_uint(next_token(), 1);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw ParseError("unsupported PPM geometry in " + path.string(), 1);
  std::vector<double> px(h * w * 3);
  if (magic == "P6") {
    in.get();  // single whitespace byte after maxval
    std::vector<unsigned char> raw(px.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw ParseError("truncated PPM data", 1);
    for (std::size_t i = 0; i < raw.size(); ++i) px[i] = raw[i] / static_cast<double>(maxval);
  } else {
    for (auto& v : px) v = static_cast<double>(text::parse_uint(next_token(), 1)) / static_cast<double>(maxval);
  }
  return Tensor({h, w, 3}, std::move(px));
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.extent(2) != 3) {
    throw DimensionError("write_ppm: image must be [H x W x 3], got " + shape_str(image.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write image " + path.string());
  out << "P6\n" << image.extent(1) << ' ' << image.extent(0) << "\n255\n";
  for (double v : image.data()) out.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
}

PKBatch pk_sample(const DatasetManifest& m, std::size_t p, std::size_t k, std::uint64_t seed) {
  if (p < 2 || k < 2) throw ContractError("pk_sample: P and K must both be at least 2");
  std::map<std::size_t, std::vector<std::size_t>> by_pid;
  for (std::size_t i = 0; i < m.records.size(); ++i)
    if (m.records[i].split == Split::train) by_pid[m.records[i].pid].push_back(i);
  if (by_pid.size() < p) {
    throw ContractError("pk_sample: train split has " + std::to_string(by_pid.size()) + " identities, P = " +
                        std::to_string(p));
  }
  std::vector<std::size_t> pids;
  for (const auto& kv : by_pid) pids.push_back(kv.first);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, pids.size() - 1)(rng);
    std::swap(pids[i], pids[j]);
  }
  PKBatch batch;
  batch.p = p;
  batch.k = k;
  for (std::size_t i = 0; i < p; ++i) {
    auto pool = by_pid[pids[i]];
    if (pool.size() >= k) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t r = std::uniform_int_distribution<std::size_t>(j, pool.size() - 1)(rng);
        std::swap(pool[j], pool[r]);
        batch.indices.push_back(pool[j]);
      }
    } else {
      for (std::size_t j = 0; j < k; ++j) {
        batch.indices.push_back(pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)]);
      }
    }
    batch.pids.insert(batch.pids.end(), k, pids[i]);
  }
  return batch;
}

void write_features(std::ostream& os, const FeatureSet& set) {
  os << "reid-feat v1 n=" << set.n << " dd=" << set.dim_d << " dc=" << set.dim_c << '\n';
  for (const auto& r : set.records) {
    os << r.pid << ' ' << r.camid;
    for (double v : r.f_t_d.data()) os << ' ' << text::number(v);
    for (double v : r.f_t_c.data()) os << ' ' << text::number(v);
    os << '\n';
  }
}

namespace {

std::size_t parse_index(std::string_view tok, std::size_t line) {
  const double v = text::parse_double(tok, line);
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15) {
    throw ParseError("expected a non-negative integral id, got '" + std::string(tok) + "'", line);
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

FeatureSet import_features(std::istream& is) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line)) throw ParseError("empty feature file", line_no);
  const auto header = text::parse_header(line, "reid-feat", line_no);
  for (const char* key : {"n", "dd", "dc"}) expect_header_field(header, key, line_no);
  FeatureSet set;
  set.n = text::parse_uint(header.at("n"), line_no);
  set.dim_d = text::parse_uint(header.at("dd"), line_no);
  set.dim_c = text::parse_uint(header.at("dc"), line_no);
  if (set.n == 0 || set.dim_d == 0 || set.dim_c == 0) throw ParseError("header extents must be positive", line_no);
  const std::size_t nd = set.n * set.dim_d, nc = set.n * set.dim_c;
  std::size_t record_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto tok = text::split_ws(line);
    if (tok.empty()) continue;
    ++record_no;
    if (tok.size() != 2 + nd + nc) {
      throw ParseError("record " + std::to_string(record_no) + ": expected " + std::to_string(2 + nd + nc) +
                           " fields (pid, camid, " + std::to_string(nd) + " + " + std::to_string(nc) +
                           " values), got " + std::to_string(tok.size()),
                       line_no);
    }
    FeatureRecord r;
    r.pid = parse_index(tok[0], line_no);
    r.camid = parse_index(tok[1], line_no);
    std::vector<double> d(nd), c(nc);
    for (std::size_t i = 0; i < nd; ++i) d[i] = text::parse_double(tok[2 + i], line_no);
    for (std::size_t i = 0; i < nc; ++i) c[i] = text::parse_double(tok[2 + nd + i], line_no);
    r.f_t_d = Tensor({set.n, set.dim_d}, std::move(d));
    r.f_t_c = Tensor({set.n, set.dim_c}, std::move(c));
    set.records.push_back(std::move(r));
  }
  return set;
}

FeatureSet import_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open feature file " + path.string());
  return import_features(in);
}

DatasetManifest manifest_from_features(const FeatureSet& set, std::size_t train_ids) {
  DatasetManifest m;
  std::set<std::size_t> distinct;
  std::vector<std::size_t> pids, cams;
  for (const auto& r : set.records) {
    distinct.insert(r.pid);
    pids.push_back(r.pid);
    cams.push_back(r.camid);
    m.num_identities = std::max(m.num_identities, r.pid + 1);
    m.num_cameras = std::max(m.num_cameras, r.camid + 1);
  }
  const std::vector<std::size_t> sorted(distinct.begin(), distinct.end());
  const std::size_t t = std::min(train_ids ? train_ids : sorted.size() / 2, sorted.size());
  const std::set<std::size_t> train(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(t));
  std::vector<std::size_t> eval;
  for (std::size_t i = 0; i < set.records.size(); ++i) {
    m.records.push_back({Split::train, pids[i], cams[i], "feat:" + std::to_string(i)});
    if (!train.count(pids[i])) eval.push_back(i);
  }
  const auto rs = retrieval_split(pids, cams, eval);
  for (auto i : rs.query) m.records[i].split = Split::query;
  for (auto i : rs.gallery) m.records[i].split = Split::gallery;
  return m;
}

}  // namespace drformer
