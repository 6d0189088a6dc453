#ifndef PRINTTRACE_EVAL_HPP
#define PRINTTRACE_EVAL_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <tuple>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "printtrace/common.hpp"
#include "printtrace/pipeline.hpp"
#include "printtrace/pooling.hpp"
#include "printtrace/predict.hpp"
#include "printtrace/synth.hpp"

namespace printtrace {

// ---------------------------------------------------------------------------
// Corpus

struct CorpusDocument {
  std::string id;
  std::string printer;
  std::string family;  // empty when unknown
  std::function<DocumentImage()> load;
};

enum class ManifestImages { Files, Render };

/// Documents of a synthetic corpus. `Render` regenerates pages from the
/// manifest instead of reading them from disk.
inline std::vector<CorpusDocument> corpus_from_manifest(const CorpusManifest& m,
                                                        ManifestImages images = ManifestImages::Files) {
  std::vector<CorpusDocument> docs;
  std::set<std::string> seen;
  for (const auto& e : m.documents) {
    if (!seen.insert(e.path).second) throw InvalidArgument("manifest lists '" + e.path + "' twice");
    CorpusDocument d{std::filesystem::path(e.path).stem().string(), e.printer_id, std::string(to_string(e.page.family)),
                     {}};
    if (images == ManifestImages::Render)
      d.load = [seed = m.master_seed, e] {
        return render_document(make_printer_profile(seed, e.printer_index), e.page, e.seed);
      };
    else
      d.load = [path = m.root / e.path] { return load_pgm(path); };
    docs.push_back(std::move(d));
  }
  return docs;
}

/// Label map: one `path,printer[,family]` line per document, paths relative
/// to `dir`. Blank lines, `#` comments and a `path,...` header are skipped.
inline std::vector<CorpusDocument> corpus_from_label_map(const std::filesystem::path& dir,
                                                         const std::filesystem::path& label_map) {
  std::ifstream in(label_map);
  if (!in) throw IoError("cannot open label map '" + label_map.string() + "'");
  std::vector<CorpusDocument> docs;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() >= 1 && fields[0] == "path") continue;
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty())
      throw InvalidArgument(label_map.string() + ":" + std::to_string(line_no) + ": expected path,printer[,family]");
    if (!seen.insert(fields[0]).second)
      throw InvalidArgument(label_map.string() + ":" + std::to_string(line_no) + ": duplicate path '" + fields[0] + "'");
    docs.push_back({fields[0], fields[1], fields.size() == 3 ? fields[2] : std::string(),
                    [path = dir / fields[0]] { return load_pgm(path); }});
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Configuration

struct SplitSpec {
  std::uint32_t iterations = 5;
  std::uint64_t seed = 1;
  std::uint32_t train_per_printer = 10;
  std::uint32_t test_per_printer = 0;  // 0: every remaining eligible document
  std::string train_family;           // empty: any
  std::string test_family;
  std::vector<std::string> train_ids;  // explicit split; overrides the random one
  std::vector<std::string> test_ids;

  bool is_explicit() const { return !train_ids.empty() || !test_ids.empty(); }
};

struct AnalysisSpec {
  bool enabled = true;
  PoolingSpec column = PoolingSpec::column();
  std::uint32_t consecutive_np = 20;
  std::uint32_t raw_per_block = 4;  // raw letters kept per document and block for the variance table
  std::vector<std::uint32_t> iid_group_sizes{4, 16};
};

struct ExperimentConfig {
  PoolingSpec pooling = PoolingSpec::grid();
  PredictorKind predictor = PredictorKind::Correlation;
  Variant variant = Variant::Approx;
  std::optional<DescriptorParams> params;
  FilterPolicy policy;
  SplitSpec split;
  std::optional<std::uint32_t> baseline_np;  // consecutive-pooling comparator on the same split
  AnalysisSpec analysis;
  unsigned jobs = 1;

  /// Every violation, not only the first.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    auto check = [&](auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        out.emplace_back(e.what());
      }
    };
    check([&] { pooling.validate(); });
    check([&] { policy.validate(); });
    if (params) check([&] { params->validate(16); });
    if (split.iterations == 0) out.emplace_back("iterations must be positive");
    if (!split.is_explicit() && split.train_per_printer == 0) out.emplace_back("train_per_printer must be positive");
    if (split.is_explicit() && (split.train_ids.empty() || split.test_ids.empty()))
      out.emplace_back("an explicit split needs both train and test documents");
    if (baseline_np && *baseline_np == 0) out.emplace_back("baseline_np must be positive");
    if (analysis.enabled) {
      check([&] { analysis.column.validate(); });
      if (analysis.column.mode != PoolingMode::Column) out.emplace_back("analysis pooling must be column pooling");
      if (analysis.consecutive_np == 0) out.emplace_back("analysis consecutive_np must be positive");
      for (auto k : analysis.iid_group_sizes)
        if (k < 2) out.emplace_back("iid group sizes must be at least 2");
    }
    return out;
  }

  void validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg;
    for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
    throw InvalidArgument(msg);
  }

  ExtractionOptions extraction() const { return {policy, params, variant}; }
};

inline std::string describe(const PoolingSpec& s) {
  switch (s.mode) {
    case PoolingMode::Grid:
      return "grid(" + std::to_string(s.n_w) + "x" + std::to_string(s.n_h) + ")";
    case PoolingMode::Column:
      return "column(n_c=" + std::to_string(s.n_c) + ",n_p=" + (s.n_p ? std::to_string(s.n_p) : "all") + ")";
    default:
      return "consecutive(n_p=" + (s.n_p ? std::to_string(s.n_p) : "all") + ")";
  }
}

// ---------------------------------------------------------------------------
// Splits

struct Split {
  std::vector<std::size_t> train;  // indices into the corpus, ascending
  std::vector<std::size_t> test;
};

inline std::vector<std::string> printer_labels(const std::vector<CorpusDocument>& docs) {
  std::set<std::string> s;
  for (const auto& d : docs) s.insert(d.printer);
  return {s.begin(), s.end()};
}

inline std::vector<Split> make_splits(const std::vector<CorpusDocument>& docs, const SplitSpec& spec) {
  if (docs.empty()) throw InvalidArgument("empty corpus");
  std::vector<Split> out;
  if (spec.is_explicit()) {
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < docs.size(); ++i) by_id[docs[i].id] = i;
    Split s;
    auto resolve = [&](const std::vector<std::string>& ids, std::vector<std::size_t>& into) {
      for (const auto& id : ids) {
        const auto it = by_id.find(id);
        if (it == by_id.end()) throw InvalidArgument("split names unknown document '" + id + "'");
        into.push_back(it->second);
      }
      std::sort(into.begin(), into.end());
      into.erase(std::unique(into.begin(), into.end()), into.end());
    };
    resolve(spec.train_ids, s.train);
    resolve(spec.test_ids, s.test);
    for (auto i : s.test)
      if (std::binary_search(s.train.begin(), s.train.end(), i))
        throw InvalidArgument("document '" + docs[i].id + "' is in both train and test sets");
    out.push_back(std::move(s));
  } else {
    const auto labels = printer_labels(docs);
    for (std::uint32_t it = 0; it < spec.iterations; ++it) {
      Split s;
      for (std::size_t p = 0; p < labels.size(); ++p) {
        std::vector<std::size_t> train_pool, test_pool;
        for (std::size_t i = 0; i < docs.size(); ++i) {
          if (docs[i].printer != labels[p]) continue;
          if (spec.train_family.empty() || docs[i].family == spec.train_family) train_pool.push_back(i);
          if (spec.test_family.empty() || docs[i].family == spec.test_family) test_pool.push_back(i);
        }
        Rng rng(derive_seed(derive_seed(spec.seed, it), p));
        rng.shuffle(train_pool);
        if (train_pool.size() < spec.train_per_printer)
          throw InvalidArgument("printer '" + labels[p] + "' has " + std::to_string(train_pool.size()) +
                                " eligible training documents, " + std::to_string(spec.train_per_printer) +
                                " requested");
        train_pool.resize(spec.train_per_printer);
        std::erase_if(test_pool, [&](std::size_t i) {
          return std::find(train_pool.begin(), train_pool.end(), i) != train_pool.end();
        });
        rng.shuffle(test_pool);
        if (spec.test_per_printer) {
          if (test_pool.size() < spec.test_per_printer)
            throw InvalidArgument("printer '" + labels[p] + "' has too few test documents");
          test_pool.resize(spec.test_per_printer);
        }
        s.train.insert(s.train.end(), train_pool.begin(), train_pool.end());
        s.test.insert(s.test.end(), test_pool.begin(), test_pool.end());
      }
      std::sort(s.train.begin(), s.train.end());
      std::sort(s.test.begin(), s.test.end());
      out.push_back(std::move(s));
    }
  }
  for (const auto& s : out) {
    if (s.test.empty()) throw InvalidArgument("degenerate split: no test documents");
    std::set<std::string> train_printers;
    for (auto i : s.train) train_printers.insert(docs[i].printer);
    if (train_printers.size() < 2) throw InvalidArgument("degenerate split: fewer than two training printers");
    for (auto i : s.test)
      if (!train_printers.count(docs[i].printer))
        throw InvalidArgument("degenerate split: printer '" + docs[i].printer + "' has test but no training documents");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-document processing

struct ProcessedDocument {
  std::uint32_t letters = 0;
  std::vector<std::vector<PooledFeature>> pooled;  // one list per spec of the store
  std::vector<std::pair<BlockId, std::vector<float>>> raw;  // raw subsample, when requested
};

struct FeatureStore {
  std::vector<PoolingSpec> specs;
  std::vector<ProcessedDocument> docs;

  std::size_t index_of(const PoolingSpec& s) const {
    for (std::size_t i = 0; i < specs.size(); ++i)
      if (specs[i] == s) return i;
    throw InvalidArgument("pooling layout " + describe(s) + " was not computed");
  }
  const std::vector<PooledFeature>& pooled(std::size_t doc, const PoolingSpec& s) const {
    return docs[doc].pooled[index_of(s)];
  }
};

struct RawSampling {
  std::optional<PoolingSpec> grouping;  // blocks used for grouping raw letters
  std::uint32_t per_block = 0;
  std::vector<bool> documents;           // which documents keep raw letters
};

/// Extracts and pools every document once. Letters are dropped as soon as a
/// document is pooled; only the requested raw subsample survives.
inline FeatureStore process_corpus(const std::vector<CorpusDocument>& docs, std::vector<PoolingSpec> specs,
                                   const ExtractionOptions& opts, unsigned jobs, const RawSampling& raw = {}) {
  std::vector<PoolingSpec> unique;
  for (const auto& s : specs)
    if (std::find(unique.begin(), unique.end(), s) == unique.end()) unique.push_back(s);
  FeatureStore store{unique, std::vector<ProcessedDocument>(docs.size())};
  parallel_for(docs.size(), jobs, [&](std::size_t i) {
    const auto letters = extract_document(docs[i].load(), opts);
    if (letters.empty()) throw InvalidArgument("document '" + docs[i].id + "' yielded no letters");
    auto& out = store.docs[i];
    out.letters = static_cast<std::uint32_t>(letters.size());
    for (const auto& s : store.specs) out.pooled.push_back(pool_for_storage(letters, s, static_cast<std::uint32_t>(i)));
    if (raw.grouping && raw.per_block && i < raw.documents.size() && raw.documents[i]) {
      std::vector<ConnectedComponent> comps;
      for (const auto& l : letters) comps.push_back(l.component);
      const auto layout = make_layout(text_extent(comps), *raw.grouping);
      std::vector<std::pair<BlockId, const LetterFeature*>> assigned;
      for (const auto& l : letters) assigned.emplace_back(assign_block(l.component.bbox, layout), &l);
      std::stable_sort(assigned.begin(), assigned.end(), [](const auto& x, const auto& y) {
        const auto& a = x.second->component;
        const auto& b = y.second->component;
        return std::tie(x.first, a.centroid_row, a.centroid_col, a.id) <
               std::tie(y.first, b.centroid_row, b.centroid_col, b.id);
      });
      std::map<BlockId, std::uint32_t> taken;
      for (const auto& [block, l] : assigned) {
        if (taken[block]++ >= raw.per_block) continue;
        const auto v = l->descriptor.values();
        out.raw.emplace_back(block, std::vector<float>(v.begin(), v.end()));
      }
    }
  });
  return store;
}

// ---------------------------------------------------------------------------
// Confusion matrices

struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::uint32_t>> counts;  // [truth][predicted]

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& r : counts)
      for (auto c : r) t += c;
    return t;
  }
  std::uint64_t correct() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
    return t;
  }
  double accuracy() const { return total() ? static_cast<double>(correct()) / static_cast<double>(total()) : 0.0; }
  std::uint64_t row_sum(std::size_t i) const {
    std::uint64_t t = 0;
    for (auto c : counts[i]) t += c;
    return t;
  }
};

inline ConfusionMatrix confusion_matrix(std::vector<std::string> labels,
                                        const std::vector<std::pair<std::string, std::string>>& preds) {
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  ConfusionMatrix m{labels, std::vector<std::vector<std::uint32_t>>(labels.size(),
                                                                    std::vector<std::uint32_t>(labels.size(), 0))};
  auto index = [&](const std::string& l) {
    const auto it = std::lower_bound(m.labels.begin(), m.labels.end(), l);
    if (it == m.labels.end() || *it != l) throw InvalidArgument("unknown label '" + l + "'");
    return static_cast<std::size_t>(it - m.labels.begin());
  };
  for (const auto& [truth, predicted] : preds) ++m.counts[index(truth)][index(predicted)];
  return m;
}

inline double round_to_hundredths(double x) { return std::round(x * 100.0) / 100.0; }

/// Mean over matrices of row-normalised percentages, rounded to 0.01. Rows
/// without documents stay at zero.
inline std::vector<std::vector<double>> mean_confusion_percent(const std::vector<ConfusionMatrix>& ms) {
  if (ms.empty()) return {};
  const auto n = ms.front().labels.size();
  std::vector<std::vector<double>> acc(n, std::vector<double>(n, 0.0));
  for (const auto& m : ms) {
    if (m.labels != ms.front().labels) throw InvalidArgument("confusion matrices use different labels");
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = m.row_sum(i);
      if (!row) continue;
      for (std::size_t j = 0; j < n; ++j) acc[i][j] += 100.0 * m.counts[i][j] / static_cast<double>(row);
    }
  }
  for (auto& r : acc)
    for (auto& x : r) x = round_to_hundredths(x / static_cast<double>(ms.size()));
  return acc;
}

// ---------------------------------------------------------------------------
// SC/CC correlation medians

struct LabelledFeature {
  std::string printer;
  BlockId block;
  std::span<const double> vector;
};

struct ScCcRow {
  std::string printer;
  double median_same = 0.0;
  double median_cross = 0.0;
  std::size_t same_pairs = 0;
  std::size_t cross_pairs = 0;
  std::string note;  // non-empty: skipped
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty set");
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

inline std::vector<ScCcRow> sc_cc_analysis(const std::vector<LabelledFeature>& features) {
  std::map<std::string, std::vector<const LabelledFeature*>> by_printer;
  for (const auto& f : features) by_printer[f.printer].push_back(&f);
  std::vector<ScCcRow> rows;
  for (const auto& [printer, list] : by_printer) {
    std::vector<std::vector<double>> unit;
    for (const auto* f : list) unit.push_back(standardize(f->vector));
    std::vector<double> same, cross;
    for (std::size_t i = 0; i < list.size(); ++i)
      for (std::size_t j = i + 1; j < list.size(); ++j) {
        const double r = std::clamp(dot(unit[i], unit[j]), -1.0, 1.0);
        (list[i]->block == list[j]->block ? same : cross).push_back(r);
      }
    ScCcRow row{printer, 0.0, 0.0, same.size(), cross.size(), {}};
    if (same.empty())
      row.note = "no same-block pairs";
    else if (cross.empty())
      row.note = "no cross-block pairs";
    else {
      row.median_same = median(std::move(same));
      row.median_cross = median(std::move(cross));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Pooled vs raw spread

inline double mean_pairwise_distance(const std::vector<std::vector<double>>& v) {
  if (v.size() < 2) throw InvalidArgument("mean pairwise distance needs two members");
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i + 1; j < v.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < v[i].size(); ++k) d += (v[i][k] - v[j][k]) * (v[i][k] - v[j][k]);
      sum += std::sqrt(d);
      ++pairs;
    }
  return sum / static_cast<double>(pairs);
}

struct VarianceRow {
  std::string group;
  std::size_t raw_members = 0;
  std::size_t pooled_members = 0;
  double raw_distance = 0.0;
  double pooled_distance = 0.0;
  double ratio = 0.0;
};

/// Groups present in both maps with at least two members each and a nonzero
/// raw spread.
inline std::vector<VarianceRow> variance_report(const std::map<std::string, std::vector<std::vector<double>>>& raw,
                                                const std::map<std::string, std::vector<std::vector<double>>>& pooled) {
  std::vector<VarianceRow> rows;
  for (const auto& [group, members] : raw) {
    const auto it = pooled.find(group);
    if (it == pooled.end() || members.size() < 2 || it->second.size() < 2) continue;
    VarianceRow row{group, members.size(), it->second.size(), mean_pairwise_distance(members),
                    mean_pairwise_distance(it->second), 0.0};
    if (row.raw_distance == 0.0) continue;
    row.ratio = row.pooled_distance / row.raw_distance;
    rows.push_back(std::move(row));
  }
  return rows;
}

struct IidControl {
  std::uint32_t k = 0;
  double ratio = 0.0;
  double expected = 0.0;  // 1/sqrt(k)
};

/// Standard-normal vectors pooled in groups of k.
inline IidControl iid_control(std::uint32_t k, std::uint64_t seed, std::size_t dim = 64, std::size_t groups = 64) {
  if (k < 2) throw InvalidArgument("iid control needs groups of at least 2");
  Rng rng(seed);
  std::vector<std::vector<double>> raw(groups * k, std::vector<double>(dim));
  for (auto& v : raw)
    for (auto& x : v) x = rng.normal();
  std::vector<std::vector<double>> pooled(groups, std::vector<double>(dim, 0.0));
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t m = 0; m < k; ++m)
      for (std::size_t i = 0; i < dim; ++i) pooled[g][i] += raw[g * k + m][i];
    for (auto& x : pooled[g]) x /= static_cast<double>(k);
  }
  const auto rows = variance_report({{"iid", raw}}, {{"iid", pooled}});
  return {k, rows.front().ratio, 1.0 / std::sqrt(static_cast<double>(k))};
}

// ---------------------------------------------------------------------------
// LDA

struct LdaResult {
  Eigen::MatrixXd directions;  // dim x out_dims, unit columns
  std::vector<double> eigenvalues;
  Eigen::MatrixXd points;      // samples x out_dims
};

/// Fisher LDA with S_w regularised by lambda = 1e-6 * trace(S_w) / dim. The
/// generalised problem is solved in the span of the class-mean offsets, with
/// the inverse applied through the sample Gram matrix when samples < dims.
inline LdaResult lda_project(const std::vector<std::span<const double>>& features, const std::vector<int>& labels,
                             int out_dims = 2) {
  if (features.size() != labels.size()) throw InvalidArgument("lda: one label per sample");
  if (out_dims < 1) throw InvalidArgument("lda: out_dims must be positive");
  std::map<int, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < labels.size(); ++i) classes[labels[i]].push_back(i);
  if (classes.size() < 2) throw InvalidArgument("lda: need at least two classes");
  for (const auto& [c, idx] : classes)
    if (idx.size() < 2) throw InvalidArgument("lda: need at least two samples per class");
  const auto n = static_cast<Eigen::Index>(features.size());
  const auto d = static_cast<Eigen::Index>(features.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(features[i].size()) != d) throw InvalidArgument("lda: ragged features");
    x.row(i) = Eigen::Map<const Eigen::RowVectorXd>(features[i].data(), d);
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd xc = x;
  Eigen::MatrixXd m(d, static_cast<Eigen::Index>(classes.size()));
  Eigen::Index col = 0;
  for (const auto& [c, idx] : classes) {
    Eigen::RowVectorXd mc = Eigen::RowVectorXd::Zero(d);
    for (auto i : idx) mc += x.row(static_cast<Eigen::Index>(i));
    mc /= static_cast<double>(idx.size());
    for (auto i : idx) xc.row(static_cast<Eigen::Index>(i)) -= mc;
    m.col(col++) = std::sqrt(static_cast<double>(idx.size())) * (mc - mean).transpose();
  }
  const double trace_sw = xc.squaredNorm();
  const double lambda = trace_sw > 0.0 ? 1e-6 * trace_sw / static_cast<double>(d) : 1e-6;

  Eigen::MatrixXd ainv_m;
  if (n < d) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
    g.selfadjointView<Eigen::Lower>().rankUpdate(xc);
    g = g.selfadjointView<Eigen::Lower>();
    g.diagonal().array() += lambda;
    const Eigen::MatrixXd z = g.ldlt().solve(xc * m);
    ainv_m = (m - xc.transpose() * z) / lambda;
  } else {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
    a.selfadjointView<Eigen::Lower>().rankUpdate(xc.transpose());
    a = a.selfadjointView<Eigen::Lower>();
    a.diagonal().array() += lambda;
    ainv_m = a.ldlt().solve(m);
  }
  Eigen::MatrixXd k = m.transpose() * ainv_m;
  k = (0.5 * (k + k.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
  const auto c = k.rows();
  const auto dims = std::min<Eigen::Index>(out_dims, c);

  LdaResult out;
  out.directions.resize(d, dims);
  for (Eigen::Index j = 0; j < dims; ++j) {
    const Eigen::Index src = c - 1 - j;  // eigenvalues ascend
    out.eigenvalues.push_back(eig.eigenvalues()(src));
    Eigen::VectorXd w = ainv_m * eig.eigenvectors().col(src);
    const double norm = w.norm();
    if (norm > 0.0) w /= norm;
    const double tol = 1e-12 * w.cwiseAbs().maxCoeff();
    for (Eigen::Index i = 0; i < d; ++i) {
      if (std::abs(w(i)) > tol) {
        if (w(i) < 0) w = -w;
        break;
      }
    }
    out.directions.col(j) = w;
  }
  out.points = x * out.directions;
  return out;
}

/// trace(S_b) / trace(S_w) of labelled points.
inline double fisher_ratio(const Eigen::MatrixXd& points, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(points.rows()) != labels.size()) throw InvalidArgument("fisher_ratio: one label per point");
  std::map<int, std::vector<Eigen::Index>> classes;
  for (std::size_t i = 0; i < labels.size(); ++i) classes[labels[i]].push_back(static_cast<Eigen::Index>(i));
  const Eigen::RowVectorXd mean = points.colwise().mean();
  double sb = 0.0, sw = 0.0;
  for (const auto& [c, idx] : classes) {
    Eigen::RowVectorXd mc = Eigen::RowVectorXd::Zero(points.cols());
    for (auto i : idx) mc += points.row(i);
    mc /= static_cast<double>(idx.size());
    sb += static_cast<double>(idx.size()) * (mc - mean).squaredNorm();
    for (auto i : idx) sw += (points.row(i) - mc).squaredNorm();
  }
  if (sw == 0.0) return sb > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return sb / sw;
}

// ---------------------------------------------------------------------------
// Experiments

struct PredictionRecord {
  std::uint32_t iteration = 0;
  std::string doc_id;
  std::string truth;
  std::string predicted;
  std::uint32_t features = 0;
  std::uint32_t votes = 0;  // for the predicted label
  std::uint32_t abstained = 0;
};

struct IterationResult {
  std::uint32_t iteration = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  ConfusionMatrix confusion;
  std::vector<PredictionRecord> predictions;
  std::optional<ConfusionMatrix> baseline;
};

struct LdaSummary {
  std::string pooling;
  double fisher_ratio = 0.0;
  std::vector<double> eigenvalues;
  std::vector<std::string> labels;  // per point
  Eigen::MatrixXd points;
};

struct Analysis {
  std::string pooling;  // grouping used for SC/CC and variance
  std::vector<ScCcRow> sc_cc;
  std::vector<VarianceRow> variance;
  std::vector<IidControl> iid;
  LdaSummary lda_column;
  LdaSummary lda_consecutive;
};

struct Report {
  std::vector<std::pair<std::string, std::string>> settings;
  std::vector<std::string> labels;
  std::vector<IterationResult> iterations;
  double mean_accuracy = 0.0;
  std::vector<std::vector<double>> mean_confusion_pct;
  std::optional<double> baseline_mean_accuracy;
  std::optional<std::vector<std::vector<double>>> baseline_confusion_pct;
  std::optional<Analysis> analysis;
};

inline std::vector<std::pair<std::string, std::string>> settings_of(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> s;
  s.emplace_back("pooling", describe(cfg.pooling));
  s.emplace_back("predictor", std::string(to_string(cfg.predictor)));
  s.emplace_back("variant", std::string(to_string(cfg.variant)));
  if (cfg.params)
    s.emplace_back("thresholds", std::to_string(cfg.params->t0) + "," + std::to_string(cfg.params->t1) + "," +
                                     std::to_string(cfg.params->g0));
  else
    s.emplace_back("thresholds", "by depth");
  s.emplace_back("iterations", cfg.split.is_explicit() ? "1 (explicit split)" : std::to_string(cfg.split.iterations));
  s.emplace_back("split_seed", std::to_string(cfg.split.seed));
  if (!cfg.split.is_explicit()) {
    s.emplace_back("train_per_printer", std::to_string(cfg.split.train_per_printer));
    s.emplace_back("test_per_printer", cfg.split.test_per_printer ? std::to_string(cfg.split.test_per_printer) : "rest");
    s.emplace_back("train_family", cfg.split.train_family.empty() ? "any" : cfg.split.train_family);
    s.emplace_back("test_family", cfg.split.test_family.empty() ? "any" : cfg.split.test_family);
  }
  if (cfg.baseline_np) s.emplace_back("baseline", describe(PoolingSpec::consecutive(*cfg.baseline_np)));
  return s;
}

/// Pooling layouts an experiment needs.
inline std::vector<PoolingSpec> required_specs(const ExperimentConfig& cfg) {
  std::vector<PoolingSpec> s{cfg.pooling};
  if (cfg.baseline_np) s.push_back(PoolingSpec::consecutive(*cfg.baseline_np));
  if (cfg.analysis.enabled) {
    s.push_back(cfg.analysis.column);
    s.push_back(PoolingSpec::consecutive(cfg.analysis.consecutive_np));
  }
  return s;
}

namespace detail {
inline std::pair<ConfusionMatrix, std::vector<PredictionRecord>> run_split(
    const std::vector<CorpusDocument>& docs, const FeatureStore& store, const Split& split, const PoolingSpec& spec,
    Variant variant, PredictorKind predictor, std::uint32_t iteration) {
  std::vector<TrainingDocument> train;
  for (auto i : split.train) train.push_back({docs[i].printer, spec, store.pooled(i, spec)});
  const auto bank = build_bank(train, spec, variant);
  const auto classifier = make_classifier(predictor);
  std::vector<PredictionRecord> records;
  std::vector<std::pair<std::string, std::string>> pairs;
  for (auto i : split.test) {
    const auto& features = store.pooled(i, spec);
    const auto p = predict_document(bank, features, *classifier, docs[i].id);
    records.push_back({iteration, docs[i].id, docs[i].printer, p.predicted, static_cast<std::uint32_t>(features.size()),
                       p.votes.count(p.predicted) ? p.votes.at(p.predicted) : 0u, p.abstained});
    pairs.emplace_back(docs[i].printer, p.predicted);
  }
  return {confusion_matrix(bank.printers(), pairs), std::move(records)};
}

inline LdaSummary lda_summary(const std::vector<CorpusDocument>& docs, const FeatureStore& store,
                              const std::vector<std::size_t>& members, const PoolingSpec& spec,
                              const std::vector<std::string>& labels) {
  std::vector<std::span<const double>> features;
  std::vector<int> ids;
  LdaSummary out;
  out.pooling = describe(spec);
  for (auto i : members) {
    const auto label = static_cast<int>(std::lower_bound(labels.begin(), labels.end(), docs[i].printer) - labels.begin());
    for (const auto& f : store.pooled(i, spec)) {
      features.emplace_back(f.vector);
      ids.push_back(label);
      out.labels.push_back(docs[i].printer);
    }
  }
  auto lda = lda_project(features, ids, 2);
  out.fisher_ratio = fisher_ratio(lda.points, ids);
  out.eigenvalues = lda.eigenvalues;
  out.points = std::move(lda.points);
  return out;
}

inline std::string block_name(const BlockId& b) { return std::to_string(b.a) + ":" + std::to_string(b.b); }
}  // namespace detail

/// Analyses over the training documents of the first iteration.
inline Analysis run_analysis(const ExperimentConfig& cfg, const std::vector<CorpusDocument>& docs,
                             const FeatureStore& store, const std::vector<std::size_t>& members) {
  const auto labels = printer_labels(docs);
  Analysis a;
  a.pooling = describe(cfg.analysis.column);
  std::vector<LabelledFeature> labelled;
  std::map<std::string, std::vector<std::vector<double>>> pooled_groups, raw_groups;
  for (auto i : members) {
    for (const auto& f : store.pooled(i, cfg.analysis.column)) {
      labelled.push_back({docs[i].printer, f.block, f.vector});
      pooled_groups[docs[i].printer + "/" + detail::block_name(f.block)].push_back(f.vector);
    }
    for (const auto& [block, v] : store.docs[i].raw)
      raw_groups[docs[i].printer + "/" + detail::block_name(block)].emplace_back(v.begin(), v.end());
  }
  a.sc_cc = sc_cc_analysis(labelled);
  a.variance = variance_report(raw_groups, pooled_groups);
  for (std::size_t j = 0; j < cfg.analysis.iid_group_sizes.size(); ++j)
    a.iid.push_back(iid_control(cfg.analysis.iid_group_sizes[j], derive_seed(cfg.split.seed, 0x11d0 + j)));
  a.lda_column = detail::lda_summary(docs, store, members, cfg.analysis.column, labels);
  a.lda_consecutive =
      detail::lda_summary(docs, store, members, PoolingSpec::consecutive(cfg.analysis.consecutive_np), labels);
  return a;
}

/// Runs every iteration on features already in `store`.
inline Report run_experiment(const ExperimentConfig& cfg, const std::vector<CorpusDocument>& docs,
                             const FeatureStore& store, const std::vector<Split>& splits) {
  cfg.validate();
  Report r;
  r.settings = settings_of(cfg);
  std::vector<IterationResult> results(splits.size());
  parallel_for(splits.size(), cfg.jobs, [&](std::size_t it) {
    auto& res = results[it];
    res.iteration = static_cast<std::uint32_t>(it);
    for (auto i : splits[it].train) res.train_ids.push_back(docs[i].id);
    for (auto i : splits[it].test) res.test_ids.push_back(docs[i].id);
    auto [cm, records] = detail::run_split(docs, store, splits[it], cfg.pooling, cfg.variant, cfg.predictor, res.iteration);
    res.confusion = std::move(cm);
    res.predictions = std::move(records);
    if (cfg.baseline_np)
      res.baseline = detail::run_split(docs, store, splits[it], PoolingSpec::consecutive(*cfg.baseline_np), cfg.variant,
                                       cfg.predictor, res.iteration)
                         .first;
  });
  r.iterations = std::move(results);
  r.labels = r.iterations.front().confusion.labels;
  std::vector<ConfusionMatrix> ms, bs;
  double acc = 0.0, bacc = 0.0;
  for (const auto& it : r.iterations) {
    ms.push_back(it.confusion);
    acc += it.confusion.accuracy();
    if (it.baseline) {
      bs.push_back(*it.baseline);
      bacc += it.baseline->accuracy();
    }
  }
  r.mean_accuracy = acc / static_cast<double>(ms.size());
  r.mean_confusion_pct = mean_confusion_percent(ms);
  if (!bs.empty()) {
    r.baseline_mean_accuracy = bacc / static_cast<double>(bs.size());
    r.baseline_confusion_pct = mean_confusion_percent(bs);
  }
  if (cfg.analysis.enabled) r.analysis = run_analysis(cfg, docs, store, splits.front().train);
  return r;
}

/// Splits, processes and evaluates a corpus.
inline Report run_experiment(const ExperimentConfig& cfg, const std::vector<CorpusDocument>& docs) {
  cfg.validate();
  const auto splits = make_splits(docs, cfg.split);
  std::vector<bool> used(docs.size(), false);
  for (const auto& s : splits) {
    for (auto i : s.train) used[i] = true;
    for (auto i : s.test) used[i] = true;
  }
  RawSampling raw;
  if (cfg.analysis.enabled) {
    raw.grouping = cfg.analysis.column;
    raw.per_block = cfg.analysis.raw_per_block;
    raw.documents.assign(docs.size(), false);
    for (auto i : splits.front().train) raw.documents[i] = true;
  }
  // Documents outside every split are never loaded.
  std::vector<CorpusDocument> subset;
  std::vector<std::size_t> remap(docs.size(), 0);
  RawSampling sub_raw = raw;
  sub_raw.documents.clear();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!used[i]) continue;
    remap[i] = subset.size();
    subset.push_back(docs[i]);
    if (raw.grouping) sub_raw.documents.push_back(raw.documents[i]);
  }
  auto sub_splits = splits;
  for (auto& s : sub_splits) {
    for (auto& i : s.train) i = remap[i];
    for (auto& i : s.test) i = remap[i];
  }
  const auto store = process_corpus(subset, required_specs(cfg), cfg.extraction(), cfg.jobs, sub_raw);
  return run_experiment(cfg, subset, store, sub_splits);
}

// ---------------------------------------------------------------------------
// Report output

namespace detail {
inline std::string fmt(double x, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string matrix_csv(const std::vector<std::string>& labels, const std::vector<std::vector<double>>& m) {
  std::string s = "truth\\predicted";
  for (const auto& l : labels) s += "," + l;
  s += "\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    s += labels[i];
    for (double x : m[i]) s += "," + fmt(x, 2);
    s += "\n";
  }
  return s;
}

inline std::string lda_csv(const LdaSummary& l) {
  std::string s = "printer,ld1,ld2\n";
  for (Eigen::Index i = 0; i < l.points.rows(); ++i) {
    s += l.labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < 2; ++j) s += "," + (j < l.points.cols() ? fmt(l.points(i, j), 9) : std::string("0"));
    s += "\n";
  }
  return s;
}

inline nlohmann::ordered_json matrix_json(const ConfusionMatrix& m) {
  return {{"labels", m.labels}, {"counts", m.counts}};
}
}  // namespace detail

inline nlohmann::ordered_json to_json(const Report& r) {
  nlohmann::ordered_json j;
  auto& s = j["settings"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.settings) s[k] = v;
  j["labels"] = r.labels;
  j["accuracy"] = r.mean_accuracy;
  j["mean_confusion_percent"] = r.mean_confusion_pct;
  if (r.baseline_mean_accuracy) {
    j["baseline_accuracy"] = *r.baseline_mean_accuracy;
    j["baseline_mean_confusion_percent"] = *r.baseline_confusion_pct;
  }
  auto& its = j["iterations"] = nlohmann::ordered_json::array();
  for (const auto& it : r.iterations) {
    nlohmann::ordered_json e;
    e["iteration"] = it.iteration;
    e["accuracy"] = it.confusion.accuracy();
    e["train"] = it.train_ids;
    e["test"] = it.test_ids;
    e["confusion"] = detail::matrix_json(it.confusion);
    if (it.baseline) {
      e["baseline_accuracy"] = it.baseline->accuracy();
      e["baseline_confusion"] = detail::matrix_json(*it.baseline);
    }
    auto& preds = e["predictions"] = nlohmann::ordered_json::array();
    for (const auto& p : it.predictions)
      preds.push_back({{"doc_id", p.doc_id},
                       {"truth", p.truth},
                       {"predicted", p.predicted},
                       {"features", p.features},
                       {"votes", p.votes},
                       {"abstained", p.abstained}});
    its.push_back(std::move(e));
  }
  if (r.analysis) {
    const auto& a = *r.analysis;
    auto& an = j["analysis"];
    an["pooling"] = a.pooling;
    auto& sc = an["sc_cc"] = nlohmann::ordered_json::array();
    for (const auto& row : a.sc_cc) {
      nlohmann::ordered_json e{{"printer", row.printer}, {"same_pairs", row.same_pairs}, {"cross_pairs", row.cross_pairs}};
      if (row.note.empty()) {
        e["median_same"] = row.median_same;
        e["median_cross"] = row.median_cross;
      } else {
        e["note"] = row.note;
      }
      sc.push_back(std::move(e));
    }
    auto& var = an["variance"] = nlohmann::ordered_json::array();
    for (const auto& row : a.variance)
      var.push_back({{"group", row.group},
                     {"raw_members", row.raw_members},
                     {"pooled_members", row.pooled_members},
                     {"raw_distance", row.raw_distance},
                     {"pooled_distance", row.pooled_distance},
                     {"ratio", row.ratio}});
    auto& iid = an["iid_control"] = nlohmann::ordered_json::array();
    for (const auto& c : a.iid) iid.push_back({{"k", c.k}, {"ratio", c.ratio}, {"expected", c.expected}});
    for (const auto* l : {&a.lda_column, &a.lda_consecutive})
      an["lda"].push_back({{"pooling", l->pooling}, {"fisher_ratio", l->fisher_ratio}, {"eigenvalues", l->eigenvalues},
                           {"points", l->points.rows()}});
  }
  return j;
}

inline std::string to_markdown(const Report& r) {
  using detail::fmt;
  std::string s = "# Printer identification report\n\n## Settings\n\n";
  for (const auto& [k, v] : r.settings) s += "- " + k + ": " + v + "\n";
  s += "\n## Accuracy\n\n| iteration | accuracy |";
  if (r.baseline_mean_accuracy) s += " baseline |";
  s += "\n|---|---|";
  if (r.baseline_mean_accuracy) s += "---|";
  s += "\n";
  for (const auto& it : r.iterations) {
    s += "| " + std::to_string(it.iteration) + " | " + fmt(100.0 * it.confusion.accuracy(), 2) + "% |";
    if (it.baseline) s += " " + fmt(100.0 * it.baseline->accuracy(), 2) + "% |";
    s += "\n";
  }
  s += "| mean | " + fmt(100.0 * r.mean_accuracy, 2) + "% |";
  if (r.baseline_mean_accuracy) s += " " + fmt(100.0 * *r.baseline_mean_accuracy, 2) + "% |";
  s += "\n\n## Mean confusion matrix (%)\n\n| truth \\ predicted |";
  for (const auto& l : r.labels) s += " " + l + " |";
  s += "\n|---|";
  for (std::size_t i = 0; i < r.labels.size(); ++i) s += "---|";
  s += "\n";
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    s += "| " + r.labels[i] + " |";
    for (double x : r.mean_confusion_pct[i]) s += " " + fmt(x, 2) + " |";
    s += "\n";
  }
  if (r.analysis) {
    const auto& a = *r.analysis;
    s += "\n## Same-block vs cross-block correlation (" + a.pooling + ")\n\n| printer | SC | CC |\n|---|---|---|\n";
    for (const auto& row : a.sc_cc)
      s += "| " + row.printer + " | " + (row.note.empty() ? fmt(row.median_same, 4) : row.note) + " | " +
           (row.note.empty() ? fmt(row.median_cross, 4) : "") + " |\n";
    double worst = 0.0;
    for (const auto& row : a.variance) worst = std::max(worst, row.ratio);
    s += "\n## Pooled vs raw spread\n\n- groups: " + std::to_string(a.variance.size()) +
         "\n- largest pooled/raw ratio: " + fmt(worst, 4) + "\n";
    for (const auto& c : a.iid)
      s += "- iid control k=" + std::to_string(c.k) + ": ratio " + fmt(c.ratio, 4) + " (1/sqrt(k) = " +
           fmt(c.expected, 4) + ")\n";
    s += "\n## LDA\n\n| pooling | Fisher ratio |\n|---|---|\n";
    for (const auto* l : {&a.lda_column, &a.lda_consecutive})
      s += "| " + l->pooling + " | " + fmt(l->fisher_ratio, 4) + " |\n";
  }
  return s;
}

/// Writes report.md, report.json and the CSV tables into `dir`.
inline void write_report(const Report& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_text(dir / "report.md", to_markdown(r));
  detail::write_text(dir / "report.json", to_json(r).dump(2) + "\n");
  detail::write_text(dir / "confusion.csv", detail::matrix_csv(r.labels, r.mean_confusion_pct));
  if (r.baseline_confusion_pct)
    detail::write_text(dir / "confusion_baseline.csv", detail::matrix_csv(r.labels, *r.baseline_confusion_pct));
  std::string preds = "iteration,doc_id,truth,predicted,features,votes,abstained\n";
  for (const auto& it : r.iterations)
    for (const auto& p : it.predictions)
      preds += std::to_string(p.iteration) + "," + p.doc_id + "," + p.truth + "," + p.predicted + "," +
               std::to_string(p.features) + "," + std::to_string(p.votes) + "," + std::to_string(p.abstained) + "\n";
  detail::write_text(dir / "predictions.csv", preds);
  if (!r.analysis) return;
  const auto& a = *r.analysis;
  std::string sc = "printer,median_same,median_cross,same_pairs,cross_pairs,note\n";
  for (const auto& row : a.sc_cc)
    sc += row.printer + "," + (row.note.empty() ? detail::fmt(row.median_same, 9) : "") + "," +
          (row.note.empty() ? detail::fmt(row.median_cross, 9) : "") + "," + std::to_string(row.same_pairs) + "," +
          std::to_string(row.cross_pairs) + "," + row.note + "\n";
  detail::write_text(dir / "sc_cc.csv", sc);
  std::string var = "group,raw_members,pooled_members,raw_distance,pooled_distance,ratio\n";
  for (const auto& row : a.variance)
    var += row.group + "," + std::to_string(row.raw_members) + "," + std::to_string(row.pooled_members) + "," +
           detail::fmt(row.raw_distance, 9) + "," + detail::fmt(row.pooled_distance, 9) + "," +
           detail::fmt(row.ratio, 9) + "\n";
  for (const auto& c : a.iid)
    var += "iid_k" + std::to_string(c.k) + ",,," + ",," + detail::fmt(c.ratio, 9) + "\n";
  detail::write_text(dir / "variance.csv", var);
  detail::write_text(dir / "lda_column.csv", detail::lda_csv(a.lda_column));
  detail::write_text(dir / "lda_consecutive.csv", detail::lda_csv(a.lda_consecutive));
}

}  // namespace printtrace

#endif  // PRINTTRACE_EVAL_HPP
