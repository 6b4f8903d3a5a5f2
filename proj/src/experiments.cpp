#include "drformer/experiments.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>

#include "drformer/errors.hpp"
#include "drformer/ops.hpp"
#include "drformer/text_io.hpp"

namespace drformer {

RetrievalSplit retrieval_records(const Dataset& data, bool use_train) {
  const auto& m = data.manifest;
  RetrievalSplit s;
  if (!use_train) {
    s.query = m.indices(Split::query);
    s.gallery = m.indices(Split::gallery);
    if (!s.query.empty() && !s.gallery.empty()) return s;
  }
  std::vector<std::size_t> pids, cams;
  for (const auto& r : m.records) {
    pids.push_back(r.pid);
    cams.push_back(r.camid);
  }
  s = retrieval_split(pids, cams, m.indices(Split::train));
  if (s.query.empty()) throw ContractError("no training record can serve as a cross-camera query");
  return s;
}

DistanceMatrix retrieval_distances(const DRFormer& model, const Dataset& data, const RetrievalSplit& split,
                                   bool normalize) {
  Tensor q = retrieval_features(model, data, split.query);
  Tensor g = retrieval_features(model, data, split.gallery);
  if (normalize) {
    q = l2_normalize_rows(q);
    g = l2_normalize_rows(g);
  }
  auto dm = pairwise_distances(q, g);
  for (auto i : split.query) {
    dm.query_pids.push_back(data.manifest.records[i].pid);
    dm.query_cams.push_back(data.manifest.records[i].camid);
  }
  for (auto i : split.gallery) {
    dm.gallery_pids.push_back(data.manifest.records[i].pid);
    dm.gallery_cams.push_back(data.manifest.records[i].camid);
  }
  return dm;
}

MetricsReport evaluate_model(const DRFormer& model, const Dataset& data, bool normalize, bool use_train) {
  return evaluate(retrieval_distances(model, data, retrieval_records(data, use_train), normalize));
}

BranchLogitDump dump_branch_logits(const DRFormer& model, const Dataset& data, double eps) {
  NoGradGuard no_grad;
  const auto train = data.manifest.indices(Split::train);
  const auto classes = data.class_of_pid();
  BranchLogitDump dump;
  dump.num_classes = model.classifier().num_classes();
  dump.eps = eps;
  const auto fwd = forward_records(model, data, train);
  const Tensor ld = branch_logits(fwd.z_dc, model.classifier());
  const Tensor lc = branch_logits(fwd.z_cd, model.classifier());
  const std::size_t k = dump.num_classes;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& r = data.manifest.records[train[i]];
    BranchLogitRecord rec;
    rec.pid = r.pid;
    rec.camid = r.camid;
    rec.label = classes.at(r.pid);
    rec.s_d.assign(ld.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                   ld.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    rec.s_c.assign(lc.data().begin() + static_cast<std::ptrdiff_t>(i * k),
                   lc.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    dump.records.push_back(std::move(rec));
  }
  return dump;
}

namespace {

Tensor head_average(const std::vector<const AttentionRecord*>& heads, std::size_t keep_rows) {
  const Tensor& first = heads.front()->weights;
  const std::size_t cols = first.cols();
  std::vector<double> acc(keep_rows * cols, 0.0);
  for (const auto* h : heads) {
    const auto w = h->weights.data();
    for (std::size_t i = 0; i < keep_rows * cols; ++i) acc[i] += w[i];
  }
  for (auto& v : acc) v /= static_cast<double>(heads.size());
  return Tensor({keep_rows, cols}, std::move(acc));
}

}  // namespace

std::vector<AttentionMap> attention_maps(const DRFormer& model, const Dataset& data, std::size_t record) {
  NoGradGuard no_grad;
  AttentionTrace trace;
  forward_record(model, data, record, &trace);
  const std::size_t n = model.config().dino.n_learnable_tokens;

  // Group the per-head records by site, keeping first-seen order.
  std::vector<std::string> order;
  std::vector<std::vector<const AttentionRecord*>> groups;
  for (const auto& r : trace.records) {
    const bool encoder = r.site.rfind("dino.", 0) == 0 || r.site.rfind("clip.", 0) == 0;
    const bool fusion_cross = r.site.rfind("fusion.", 0) == 0 && r.site.find(".cross") != std::string::npos;
    if (!encoder && !fusion_cross) continue;
    auto it = std::find(order.begin(), order.end(), r.site);
    if (it == order.end()) {
      order.push_back(r.site);
      groups.emplace_back();
      it = order.end() - 1;
    }
    groups[static_cast<std::size_t>(it - order.begin())].push_back(&r);
  }
  std::vector<AttentionMap> out;
  for (std::size_t g = 0; g < order.size(); ++g) out.push_back({order[g], head_average(groups[g], n)});
  return out;
}

void write_attention(std::ostream& os, const std::vector<AttentionMap>& maps) {
  for (const auto& m : maps) {
    os << "attention " << m.site << ' ' << m.weights.rows() << ' ' << m.weights.cols() << '\n';
    for (std::size_t i = 0; i < m.weights.rows(); ++i) {
      for (std::size_t j = 0; j < m.weights.cols(); ++j) os << (j ? " " : "") << text::number(m.weights.at(i, j));
      os << '\n';
    }
  }
}

std::vector<AttentionMap> read_attention(std::istream& is) {
  std::vector<AttentionMap> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto head = text::split_ws(line);
    if (head.empty()) continue;
    if (head.size() != 4 || head[0] != "attention") throw ParseError("expected 'attention <site> <rows> <cols>'", line_no);
    const auto rows = text::parse_uint(head[2], line_no), cols = text::parse_uint(head[3], line_no);
    std::string site(head[1]);  // `line` is reused for the rows below
    std::vector<double> values;
    for (std::uint64_t r = 0; r < rows; ++r) {
      if (!std::getline(is, line)) throw ParseError("attention matrix ends early", line_no);
      ++line_no;
      const auto tokens = text::split_ws(line);
      if (tokens.size() != cols) throw ParseError("expected " + std::to_string(cols) + " values", line_no);
      for (auto t : tokens) values.push_back(text::parse_double(t, line_no));
    }
    out.push_back({std::move(site), Tensor({rows, cols}, std::move(values))});
  }
  return out;
}

std::vector<AblationRun> ablation_grid(const RunConfig& base) {
  std::vector<AblationRun> runs;
  auto add = [&](std::string group, std::string name, auto edit) {
    RunConfig c = base;
    c.disable_fusion = c.disable_intra = c.disable_inter = false;
    edit(c);
    runs.push_back({std::move(group), std::move(name), std::move(c)});
  };
  auto no_regularizers = [](RunConfig& c) { c.disable_intra = c.disable_inter = true; };
  auto layers = [](RunConfig& c, std::size_t cross, std::size_t self) {
    c.model.fusion.cross_layers = cross;
    c.model.fusion.self_layers = self;
  };

  add("fusion", "concat", [&](RunConfig& c) {
    no_regularizers(c);
    c.disable_fusion = true;
  });
  add("fusion", "1cross", [&](RunConfig& c) {
    no_regularizers(c);
    layers(c, 1, 0);
  });
  add("fusion", "1cross+1self", [&](RunConfig& c) {
    no_regularizers(c);
    layers(c, 1, 1);
  });
  add("fusion", "1cross+2self", [&](RunConfig& c) {
    no_regularizers(c);
    layers(c, 1, 2);
  });

  for (int intra = 0; intra < 2; ++intra) {
    for (int inter = 0; inter < 2; ++inter) {
      std::string name = intra && inter ? "intra+inter" : intra ? "intra" : inter ? "inter" : "none";
      add("regularizer", name, [&](RunConfig& c) {
        c.disable_intra = !intra;
        c.disable_inter = !inter;
      });
    }
  }

  for (std::size_t n = 1; n <= 4; ++n) {
    add("tokens", "N=" + std::to_string(n), [&](RunConfig& c) { c.set_tokens(n); });
  }
  return runs;
}

std::vector<AblationRow> ablate(const RunConfig& base, std::ostream* progress) {
  base.validate();
  auto data = std::make_shared<const Dataset>(load_dataset(base));
  std::vector<AblationRow> rows;
  for (const auto& run : ablation_grid(base)) {
    Trainer t(run.config, data);
    t.run({});
    const auto acc = t.epoch_diagnostic().accuracy;
    const auto metrics = evaluate_model(t.model(), *data, run.config.normalize_features);
    rows.push_back({run.group, run.name, metrics.map, metrics.rank1(), acc.dino, acc.clip, acc.gap(),
                    t.last_regularizer_nodes()});
    if (progress) {
      *progress << "ablate " << run.group << '/' << run.name << ": mAP=" << text::number(metrics.map)
                << " R1=" << text::number(metrics.rank1()) << std::endl;
    }
  }
  return rows;
}

void write_ablation_table(std::ostream& os, const std::vector<AblationRow>& rows) {
  const std::vector<std::string> header = {"group", "run", "mAP", "R1", "acc_D", "acc_C", "gap", "reg_nodes"};
  std::vector<std::vector<std::string>> cells = {header};
  for (const auto& r : rows) {
    cells.push_back({r.group, r.name, text::number(r.map), text::number(r.rank1), text::number(r.acc_d),
                     text::number(r.acc_c), text::number(r.gap), std::to_string(r.reg_nodes)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      os << std::left << std::setw(static_cast<int>(width[c])) << row[c];
      if (c + 1 < row.size()) os << "  ";
    }
    os << '\n';
  }
}

std::vector<AblationRow> read_ablation_table(std::istream& is) {
  std::vector<AblationRow> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++line_no;
    const auto t = text::split_ws(line);
    if (t.empty() || t[0].front() == '#') continue;
    if (!header) {
      if (t.size() != 8 || t[0] != "group" || t[2] != "mAP") throw ParseError("expected ablation table header", line_no);
      header = true;
      continue;
    }
    if (t.size() != 8) throw ParseError("expected 8 columns, got " + std::to_string(t.size()), line_no);
    rows.push_back({std::string(t[0]), std::string(t[1]), text::parse_double(t[2], line_no),
                    text::parse_double(t[3], line_no), text::parse_double(t[4], line_no),
                    text::parse_double(t[5], line_no), text::parse_double(t[6], line_no),
                    static_cast<std::size_t>(text::parse_uint(t[7], line_no))});
  }
  if (!header) throw ParseError("empty ablation table", line_no);
  return rows;
}

void write_ablation_summary(std::ostream& os, const std::vector<AblationRow>& rows) {
  auto find = [&](std::string_view group, std::string_view name) -> const AblationRow* {
    for (const auto& r : rows)
      if (r.group == group && r.name == name) return &r;
    return nullptr;
  };
  auto delta = [](const AblationRow* a, const AblationRow* b) { return text::number(a->map - b->map); };
  const auto* concat = find("fusion", "concat");
  const auto* full = find("fusion", "1cross+2self");
  if (concat && full) os << "# fusion stack vs concat: delta mAP = " << delta(full, concat) << '\n';
  const auto* none = find("regularizer", "none");
  const auto* intra = find("regularizer", "intra");
  const auto* inter = find("regularizer", "inter");
  const auto* both = find("regularizer", "intra+inter");
  if (none && intra) os << "# intra regularizer: delta mAP = " << delta(intra, none) << '\n';
  if (none && inter) os << "# inter regularizer: delta mAP = " << delta(inter, none) << '\n';
  if (none && both) os << "# both regularizers: delta mAP = " << delta(both, none) << '\n';
  if (none && inter) {
    os << "# branch gap |acc_D - acc_C|: inter on = " << text::number(inter->gap)
       << ", inter off = " << text::number(none->gap) << '\n';
  }
  if (intra && both) {
    os << "# branch gap with intra: inter on = " << text::number(both->gap) << ", inter off = " << text::number(intra->gap)
       << '\n';
  }
}

}  // namespace drformer
