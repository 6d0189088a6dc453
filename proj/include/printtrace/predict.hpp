#ifndef PRINTTRACE_PREDICT_HPP
#define PRINTTRACE_PREDICT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "printtrace/common.hpp"
#include "printtrace/pooling.hpp"
#include "printtrace/psltd.hpp"

namespace printtrace {

/// Pearson correlation coefficient; 0 when either input has zero variance.
inline double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("pearson_r: length mismatch");
  if (x.size() < 2) throw InvalidArgument("pearson_r: need at least two samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

inline std::vector<double> round_to_float(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(static_cast<float>(v[i]));
  return out;
}

struct BankEntry {
  std::uint32_t printer = 0;  // index into ReferenceBank::printers
  std::vector<double> vector;
  std::vector<double> unit;   // centred, unit-norm copy (all-zero for constant vectors)
};

/// Centred and scaled so that pearson_r(x, y) == dot(standardize(x), standardize(y)).
inline std::vector<double> standardize(std::span<const double> v) {
  std::vector<double> out(v.size(), 0.0);
  if (v.empty()) return out;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] - mean;
    ss += out[i] * out[i];
  }
  if (ss == 0.0) return std::vector<double>(v.size(), 0.0);
  const double inv = 1.0 / std::sqrt(ss);
  for (auto& x : out) x *= inv;
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= a.size(); i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < a.size(); ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

/// Per-block, per-printer training pooled features: the trained model.
///
/// Entry vectors are held at 32-bit float precision so that a bank written to
/// disk and read back predicts identically.
class ReferenceBank {
 public:
  ReferenceBank(PoolingSpec spec, Variant variant, std::vector<std::string> printers,
                std::map<BlockId, std::vector<BankEntry>> entries)
      : spec_(spec), variant_(variant), printers_(std::move(printers)), entries_(std::move(entries)) {
    const auto dim = dimension(variant_);
    std::vector<bool> seen(printers_.size(), false);
    for (auto& [block, list] : entries_) {
      for (auto& e : list) {
        if (e.vector.size() != dim) throw InvalidArgument("bank entry length does not match the variant");
        if (e.printer >= printers_.size()) throw InvalidArgument("bank entry references an unknown printer");
        e.vector = round_to_float(e.vector);
        e.unit = standardize(e.vector);
        seen[e.printer] = true;
      }
    }
    for (std::size_t p = 0; p < printers_.size(); ++p)
      if (!seen[p]) throw InvalidArgument("printer '" + printers_[p] + "' has no bank entries");
    compute_centroids();
  }

  const PoolingSpec& spec() const noexcept { return spec_; }
  Variant variant() const noexcept { return variant_; }
  const std::vector<std::string>& printers() const noexcept { return printers_; }
  const std::map<BlockId, std::vector<BankEntry>>& entries() const noexcept { return entries_; }

  const std::vector<BankEntry>* block(const BlockId& id) const {
    const auto it = entries_.find(id);
    return it == entries_.end() ? nullptr : &it->second;
  }
  /// Per-printer mean vectors of a block (printer index order).
  const std::vector<BankEntry>* centroids(const BlockId& id) const {
    const auto it = centroids_.find(id);
    return it == centroids_.end() ? nullptr : &it->second;
  }

 private:
  void compute_centroids() {
    const auto dim = dimension(variant_);
    for (const auto& [block, list] : entries_) {
      std::vector<std::vector<double>> sums(printers_.size());
      std::vector<std::size_t> counts(printers_.size(), 0);
      for (const auto& e : list) {
        if (sums[e.printer].empty()) sums[e.printer].assign(dim, 0.0);
        for (std::size_t i = 0; i < dim; ++i) sums[e.printer][i] += e.vector[i];
        ++counts[e.printer];
      }
      auto& out = centroids_[block];
      for (std::uint32_t p = 0; p < printers_.size(); ++p) {
        if (!counts[p]) continue;
        for (auto& x : sums[p]) x /= static_cast<double>(counts[p]);
        auto unit = standardize(sums[p]);
        out.push_back({p, std::move(sums[p]), std::move(unit)});
      }
    }
  }

  PoolingSpec spec_;
  Variant variant_;
  std::vector<std::string> printers_;
  std::map<BlockId, std::vector<BankEntry>> entries_;
  std::map<BlockId, std::vector<BankEntry>> centroids_;
};

/// Pooled features of one training document.
struct TrainingDocument {
  std::string printer;
  PoolingSpec spec;
  std::vector<PooledFeature> features;
};

inline ReferenceBank build_bank(const std::vector<TrainingDocument>& train, const PoolingSpec& spec, Variant variant) {
  std::vector<std::string> printers;
  for (const auto& d : train) {
    if (!(d.spec == spec)) throw InvalidArgument("training documents use different pooling layouts");
    printers.push_back(d.printer);
  }
  std::sort(printers.begin(), printers.end());
  printers.erase(std::unique(printers.begin(), printers.end()), printers.end());
  if (printers.size() < 2) throw InvalidArgument("a reference bank needs at least two printers");

  std::map<BlockId, std::vector<BankEntry>> entries;
  for (const auto& d : train) {
    const auto p = static_cast<std::uint32_t>(std::lower_bound(printers.begin(), printers.end(), d.printer) -
                                              printers.begin());
    for (const auto& f : d.features) entries[f.block].push_back({p, f.vector});
  }
  return ReferenceBank(spec, variant, std::move(printers), std::move(entries));
}

enum class PredictorKind : std::uint8_t { Correlation = 0, Centroid = 1 };

inline std::string_view to_string(PredictorKind k) { return k == PredictorKind::Correlation ? "correlation" : "centroid"; }

inline PredictorKind parse_predictor(std::string_view s) {
  if (s == "correlation") return PredictorKind::Correlation;
  if (s == "centroid") return PredictorKind::Centroid;
  throw InvalidArgument("unknown predictor '" + std::string(s) + "'");
}

struct FeatureVote {
  std::uint32_t printer = 0;
  double score = 0.0;
};

/// Per-block classifier over a reference bank. Returns nullopt to abstain.
class BlockClassifier {
 public:
  virtual ~BlockClassifier() = default;
  virtual std::optional<FeatureVote> predict(const ReferenceBank& bank, const PooledFeature& f) const = 0;
  virtual std::vector<std::optional<FeatureVote>> predict_all(const ReferenceBank& bank,
                                                              const std::vector<PooledFeature>& fs) const {
    std::vector<std::optional<FeatureVote>> out;
    out.reserve(fs.size());
    for (const auto& f : fs) out.push_back(predict(bank, f));
    return out;
  }
};

namespace detail {
// Pearson r as a dot product of standardised vectors. Largest r wins; equal r goes to the lexicographically smaller label, which
// is the smaller printer index because the printer table is sorted.
inline std::optional<FeatureVote> argmax_correlation(const std::vector<BankEntry>* candidates,
                                                     std::span<const double> x) {
  if (!candidates || candidates->empty()) return std::nullopt;
  const auto ux = standardize(x);
  std::optional<FeatureVote> best;
  for (const auto& e : *candidates) {
    const double r = std::clamp(dot(ux, e.unit), -1.0, 1.0);
    if (!best || r > best->score || (r == best->score && e.printer < best->printer)) best = FeatureVote{e.printer, r};
  }
  return best;
}

// Same result as argmax_correlation per feature; walks each bank entry once
// per tile of features so large banks stay in cache.
template <class Candidates>
std::vector<std::optional<FeatureVote>> argmax_correlation_all(const std::vector<PooledFeature>& fs,
                                                               Candidates&& candidates_of) {
  constexpr std::size_t kTile = 32;
  std::vector<std::optional<FeatureVote>> out(fs.size());
  std::map<BlockId, std::vector<std::size_t>> by_block;
  for (std::size_t i = 0; i < fs.size(); ++i) by_block[fs[i].block].push_back(i);
  for (const auto& [block, idx] : by_block) {
    const std::vector<BankEntry>* cand = candidates_of(block);
    if (!cand || cand->empty()) continue;
    for (std::size_t t0 = 0; t0 < idx.size(); t0 += kTile) {
      const std::size_t t1 = std::min(idx.size(), t0 + kTile);
      std::vector<std::vector<double>> ux;
      for (std::size_t t = t0; t < t1; ++t) ux.push_back(standardize(fs[idx[t]].vector));
      for (const auto& e : *cand) {
        for (std::size_t t = t0; t < t1; ++t) {
          const double r = std::clamp(dot(ux[t - t0], e.unit), -1.0, 1.0);
          auto& best = out[idx[t]];
          if (!best || r > best->score || (r == best->score && e.printer < best->printer))
            best = FeatureVote{e.printer, r};
        }
      }
    }
  }
  return out;
}
}  // namespace detail

/// Best match against every training pooled vector of the same block.
inline std::optional<FeatureVote> predict_feature_correlation(const ReferenceBank& bank, const PooledFeature& f) {
  return detail::argmax_correlation(bank.block(f.block), f.vector);
}

/// Best match against the per-printer block centroids.
inline std::optional<FeatureVote> predict_feature_centroid(const ReferenceBank& bank, const PooledFeature& f) {
  return detail::argmax_correlation(bank.centroids(f.block), f.vector);
}

class CorrelationClassifier final : public BlockClassifier {
 public:
  std::optional<FeatureVote> predict(const ReferenceBank& bank, const PooledFeature& f) const override {
    return predict_feature_correlation(bank, f);
  }
  std::vector<std::optional<FeatureVote>> predict_all(const ReferenceBank& bank,
                                                      const std::vector<PooledFeature>& fs) const override {
    return detail::argmax_correlation_all(fs, [&](const BlockId& b) { return bank.block(b); });
  }
};

class CentroidClassifier final : public BlockClassifier {
 public:
  std::optional<FeatureVote> predict(const ReferenceBank& bank, const PooledFeature& f) const override {
    return predict_feature_centroid(bank, f);
  }
  std::vector<std::optional<FeatureVote>> predict_all(const ReferenceBank& bank,
                                                      const std::vector<PooledFeature>& fs) const override {
    return detail::argmax_correlation_all(fs, [&](const BlockId& b) { return bank.centroids(b); });
  }
};

inline std::unique_ptr<BlockClassifier> make_classifier(PredictorKind kind) {
  if (kind == PredictorKind::Centroid) return std::make_unique<CentroidClassifier>();
  return std::make_unique<CorrelationClassifier>();
}

struct FeatureDiagnostic {
  BlockId block;
  std::optional<std::string> predicted;  // nullopt: abstained (block not in bank)
  double r = 0.0;
};

struct DocumentPrediction {
  std::string doc_id;
  std::string predicted;
  std::map<std::string, std::uint32_t> votes;
  std::uint32_t abstained = 0;
  std::vector<FeatureDiagnostic> per_feature;
};

/// Majority vote of per-feature predictions. Vote ties go to the larger summed
/// score, then to the lexicographically smallest label.
inline DocumentPrediction predict_document(const ReferenceBank& bank, const std::vector<PooledFeature>& features,
                                           const BlockClassifier& classifier, std::string doc_id = {}) {
  DocumentPrediction out;
  out.doc_id = std::move(doc_id);
  std::vector<std::uint32_t> counts(bank.printers().size(), 0);
  std::vector<double> score_sums(bank.printers().size(), 0.0);
  for (const auto& f : features)
    if (f.vector.size() != dimension(bank.variant()))
      throw InvalidArgument("feature length does not match the bank variant");
  const auto votes = classifier.predict_all(bank, features);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const auto& f = features[i];
    const auto& vote = votes[i];
    if (!vote) {
      ++out.abstained;
      out.per_feature.push_back({f.block, std::nullopt, 0.0});
      continue;
    }
    ++counts[vote->printer];
    score_sums[vote->printer] += vote->score;
    out.per_feature.push_back({f.block, bank.printers()[vote->printer], vote->score});
  }
  if (out.abstained == features.size())
    throw InvalidArgument("document '" + out.doc_id + "': every feature abstained");

  std::size_t best = 0;
  for (std::size_t p = 1; p < counts.size(); ++p) {
    if (counts[p] > counts[best] || (counts[p] == counts[best] && score_sums[p] > score_sums[best])) best = p;
  }
  for (std::size_t p = 0; p < counts.size(); ++p)
    if (counts[p]) out.votes[bank.printers()[p]] = counts[p];
  out.predicted = bank.printers()[best];
  return out;
}

inline DocumentPrediction predict_document(const ReferenceBank& bank, const std::vector<PooledFeature>& features,
                                           PredictorKind kind, std::string doc_id = {}) {
  return predict_document(bank, features, *make_classifier(kind), std::move(doc_id));
}

inline nlohmann::ordered_json to_json(const DocumentPrediction& p) {
  nlohmann::ordered_json j;
  j["doc_id"] = p.doc_id;
  j["predicted"] = p.predicted;
  j["votes"] = nlohmann::ordered_json::object();
  for (const auto& [label, n] : p.votes) j["votes"][label] = n;
  j["abstained"] = p.abstained;
  auto& per = j["per_feature"] = nlohmann::ordered_json::array();
  for (const auto& f : p.per_feature) {
    nlohmann::ordered_json e;
    e["block"] = {f.block.a, f.block.b};
    if (f.predicted)
      e["predicted"] = *f.predicted;
    else
      e["predicted"] = nullptr;
    e["r"] = f.r;
    per.push_back(std::move(e));
  }
  return j;
}

}  // namespace printtrace

#endif  // PRINTTRACE_PREDICT_HPP
