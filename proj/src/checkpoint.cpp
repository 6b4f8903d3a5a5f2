#include "drformer/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "drformer/errors.hpp"

namespace drformer {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'F', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  explicit Writer(std::ofstream& os) : os_(os) {}
  void u64(std::uint64_t v) { os_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void doubles(std::span<const double> v) {
    u64(v.size());
    os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

 private:
  std::ofstream& os_;
};

class Reader {
 public:
  Reader(std::ifstream& is, const std::filesystem::path& path) : is_(is), path_(path) {}
  std::uint64_t u64() {
    std::uint64_t v = 0;
    read(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = u64();
    if (n > (1u << 20)) fail("implausible name length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  std::vector<double> doubles() {
    const auto n = u64();
    if (n > (std::uint64_t{1} << 34)) fail("implausible tensor size");
    std::vector<double> v(n);
    read(v.data(), n * sizeof(double));
    return v;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError(path_.string() + ": " + what);
  }

 private:
  void read(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!is_) fail("truncated file");
  }
  std::ifstream& is_;
  const std::filesystem::path& path_;
};

struct StoredTensor {
  Shape shape;
  std::vector<double> data;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DRFormer& model, const Adam* optimizer,
                     const CheckpointInfo& info) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp.string());
    Writer w(os);
    os.write(kMagic, sizeof kMagic);
    w.u64(info.step);
    w.u64(info.seed);
    const auto state = model.state();
    w.u64(state.size());
    for (const auto& p : state) {
      w.str(p.name);
      w.u64(p.tensor.rank());
      for (auto e : p.tensor.shape()) w.u64(e);
      w.doubles(p.tensor.data());
    }
    w.u64(optimizer ? 1 : 0);
    if (optimizer) {
      w.u64(optimizer->steps_taken());
      const auto& params = optimizer->params();
      w.u64(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        w.str(params[i].name);
        w.doubles(optimizer->first_moments()[i]);
        w.doubles(optimizer->second_moments()[i]);
      }
    }
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::ifstream open_checked(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint file");
  }
  return is;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  auto is = open_checked(path);
  Reader r(is, path);
  CheckpointInfo info;
  info.step = r.u64();
  info.seed = r.u64();
  return info;
}

CheckpointInfo load_checkpoint(const std::filesystem::path& path, DRFormer& model, Adam* optimizer) {
  auto is = open_checked(path);
  Reader r(is, path);

  CheckpointInfo info;
  info.step = r.u64();
  info.seed = r.u64();
  std::map<std::string, StoredTensor> stored;
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    auto name = r.str();
    StoredTensor t;
    const auto rank = r.u64();
    if (rank > 8) r.fail("implausible rank for '" + name + "'");
    for (std::uint64_t a = 0; a < rank; ++a) t.shape.push_back(r.u64());
    t.data = r.doubles();
    if (numel(t.shape) != t.data.size()) r.fail("tensor '" + name + "' size does not match its shape");
    stored.emplace(std::move(name), std::move(t));
  }

  // Validate everything before touching the model.
  auto state = model.state();
  for (const auto& p : state) {
    auto it = stored.find(p.name);
    if (it == stored.end()) r.fail("missing tensor '" + p.name + "'");
    if (it->second.shape != p.tensor.shape()) {
      r.fail("tensor '" + p.name + "' has shape " + shape_str(it->second.shape) + ", model expects " +
             shape_str(p.tensor.shape()));
    }
  }
  if (stored.size() != state.size()) r.fail("checkpoint holds tensors the model does not have");

  std::vector<std::vector<double>> m, v;
  std::uint64_t opt_steps = 0;
  info.has_optimizer = r.u64() != 0;
  if (info.has_optimizer) {
    opt_steps = r.u64();
    const auto n = r.u64();
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;
    for (std::uint64_t i = 0; i < n; ++i) {
      auto name = r.str();
      auto mi = r.doubles();
      auto vi = r.doubles();
      moments.emplace(std::move(name), std::make_pair(std::move(mi), std::move(vi)));
    }
    if (optimizer) {
      const auto& params = optimizer->params();
      if (moments.size() != params.size()) r.fail("optimizer state covers a different parameter set");
      for (const auto& p : params) {
        auto it = moments.find(p.name);
        if (it == moments.end() || it->second.first.size() != p.tensor.size() ||
            it->second.second.size() != p.tensor.size()) {
          r.fail("optimizer state for '" + p.name + "' missing or mis-sized");
        }
        m.push_back(std::move(it->second.first));
        v.push_back(std::move(it->second.second));
      }
    }
  } else if (optimizer) {
    r.fail("checkpoint carries no optimizer state");
  }

  for (auto& p : state) {
    const auto& src = stored.at(p.name).data;
    std::copy(src.begin(), src.end(), p.tensor.mutable_data().begin());
  }
  if (optimizer) {
    optimizer->first_moments() = std::move(m);
    optimizer->second_moments() = std::move(v);
    optimizer->set_steps_taken(opt_steps);
  }
  return info;
}

}  // namespace drformer
