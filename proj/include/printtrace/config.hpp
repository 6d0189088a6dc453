#ifndef PRINTTRACE_CONFIG_HPP
#define PRINTTRACE_CONFIG_HPP

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "printtrace/common.hpp"
#include "printtrace/eval.hpp"
#include "printtrace/synth.hpp"

namespace printtrace {

/// Raised with every problem found in a configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (const auto& p : v) s += (s.empty() ? "" : "; ") + p;
    return s;
  }
  std::vector<std::string> problems_;
};

struct ConfigKey {
  const char* name;
  const char* fallback;  // empty: unset
  const char* help;
};

// clang-format off
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"variant", "approx", "descriptor variant: approx | full"},
      {"t0", "", "intensity threshold T0 (default by bit depth)"},
      {"t1", "", "intensity threshold T1 (default by bit depth)"},
      {"g0", "", "gradient angle threshold in degrees (default 90)"},
      {"pooling", "column", "column | grid | consecutive"},
      {"n_c", "15", "columns for column pooling"},
      {"n_w", "8", "grid columns"},
      {"n_h", "8", "grid rows"},
      {"n_p", "all", "letters per pooled group (all or a count)"},
      {"predictor", "auto", "correlation | centroid | auto (correlation for 16-bit, centroid for 8-bit)"},
      {"area_low", "0.5", "components below area_low x median area are dropped"},
      {"area_high", "4.0", "components above area_high x median area are dropped"},
      {"width_range", "", "min,max letter width in pixels"},
      {"height_range", "", "min,max letter height in pixels"},
      {"manifest", "", "synthetic corpus manifest for evaluate"},
      {"corpus_dir", "", "image directory for evaluate (with label_map)"},
      {"label_map", "", "path,printer[,family] CSV"},
      {"render", "false", "evaluate: regenerate synthetic pages instead of reading them"},
      {"iterations", "5", "random train/test splits"},
      {"train_per_printer", "10", "training documents per printer and split"},
      {"test_per_printer", "all", "test documents per printer and split"},
      {"train_family", "", "restrict training documents to a glyph family"},
      {"test_family", "", "restrict test documents to a glyph family"},
      {"train_list", "", "explicit training document ids, comma separated"},
      {"test_list", "", "explicit test document ids, comma separated"},
      {"baseline_np", "", "also evaluate consecutive pooling with this group size"},
      {"analysis", "true", "evaluate: SC/CC, spread and LDA tables"},
      {"analysis_n_c", "15", "columns used by the analyses"},
      {"analysis_np", "20", "group size of the consecutive LDA comparison"},
      {"raw_per_block", "4", "raw letters kept per document and block for the spread table"},
      {"printers", "8", "synth: printers"},
      {"docs_per_printer", "15", "synth: pages per printer"},
      {"cross_family_docs", "0", "synth: extra pages per printer in the other glyph family"},
      {"family", "A", "synth: glyph family of the main pages"},
      {"page_width", "2550", "synth: page width"},
      {"page_height", "3300", "synth: page height"},
      {"glyph_rows", "40", "synth: glyph rows"},
      {"glyph_cols", "25", "synth: glyph columns"},
      {"glyph_size", "44", "synth: glyph height in pixels"},
      {"margin", "200", "synth: page margin"},
      {"seed", "1", "master seed"},
      {"jobs", "0", "worker threads (0: PRINTTRACE_JOBS or all cores)"},
      {"out", "", "output path"},
  };
  return keys;
}
// clang-format on

/// Flat `key = value` settings. Later assignments win.
class Config {
 public:
  /// Parses text; unknown keys and malformed lines are collected, not thrown one by one.
  void parse(std::string_view text, const std::string& origin, std::vector<std::string>& problems) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto stripped = trim(line);
      if (stripped.empty()) continue;
      const auto eq = stripped.find('=');
      const std::string where = origin + ":" + std::to_string(no);
      if (eq == std::string::npos) {
        problems.push_back(where + ": expected key = value");
        continue;
      }
      set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)), where, problems);
    }
  }

  void load(const std::filesystem::path& path, std::vector<std::string>& problems) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    parse(ss.str(), path.string(), problems);
  }

  void set(const std::string& key, const std::string& value, const std::string& where,
           std::vector<std::string>& problems) {
    if (!known(key)) {
      problems.push_back(where + ": unknown key '" + key + "'");
      return;
    }
    values_[key] = value;
  }

  std::optional<std::string> get(const std::string& key) const {
    if (const auto it = values_.find(key); it != values_.end()) return it->second;
    for (const auto& k : config_keys())
      if (key == k.name && *k.fallback) return std::string(k.fallback);
    return std::nullopt;
  }
  bool explicitly_set(const std::string& key) const { return values_.count(key) != 0; }

  static bool known(const std::string& key) {
    for (const auto& k : config_keys())
      if (key == k.name) return true;
    return false;
  }

  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }

 private:
  std::map<std::string, std::string> values_;
};

/// Typed reads that record problems instead of throwing.
class ConfigReader {
 public:
  explicit ConfigReader(const Config& c) : c_(c) {}

  std::vector<std::string>& problems() { return problems_; }

  template <typename T>
  std::optional<T> number(const std::string& key) {
    const auto v = c_.get(key);
    if (!v) return std::nullopt;
    T out{};
    const auto* end = v->data() + v->size();
    const auto [p, ec] = std::from_chars(v->data(), end, out);
    if (ec != std::errc() || p != end) {
      problems_.push_back(key + ": '" + *v + "' is not a valid number");
      return std::nullopt;
    }
    return out;
  }
  /// `all` reads as 0.
  std::optional<std::uint32_t> count_or_all(const std::string& key) {
    const auto v = c_.get(key);
    if (v && *v == "all") return 0u;
    return number<std::uint32_t>(key);
  }
  std::optional<bool> boolean(const std::string& key) {
    const auto v = c_.get(key);
    if (!v) return std::nullopt;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    problems_.push_back(key + ": '" + *v + "' is not a boolean");
    return std::nullopt;
  }
  std::optional<std::string> text(const std::string& key) { return c_.get(key); }

  template <typename Fn>
  auto parsed(const std::string& key, Fn&& fn) -> std::optional<decltype(fn(std::string()))> {
    const auto v = c_.get(key);
    if (!v) return std::nullopt;
    try {
      return fn(*v);
    } catch (const Error& e) {
      problems_.push_back(key + ": " + e.what());
      return std::nullopt;
    }
  }

  std::optional<std::pair<int, int>> range(const std::string& key) {
    const auto v = c_.get(key);
    if (!v) return std::nullopt;
    const auto comma = v->find(',');
    const auto whole = [](const std::string& t, int& out) {
      const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
      return !t.empty() && ec == std::errc() && p == t.data() + t.size();
    };
    int lo = 0, hi = 0;
    if (comma == std::string::npos || !whole(Config::trim(v->substr(0, comma)), lo) ||
        !whole(Config::trim(v->substr(comma + 1)), hi)) {
      problems_.push_back(key + ": expected min,max");
      return std::nullopt;
    }
    return std::pair{lo, hi};
  }

  std::vector<std::string> list(const std::string& key) {
    std::vector<std::string> out;
    const auto v = c_.get(key);
    if (!v) return out;
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ','))
      if (auto t = Config::trim(item); !t.empty()) out.push_back(std::move(t));
    return out;
  }

 private:
  const Config& c_;
  std::vector<std::string> problems_;
};

/// Predictor choice before the input depth is known.
struct PredictorChoice {
  std::optional<PredictorKind> kind;  // nullopt: by depth

  PredictorKind for_depth(int bit_depth) const {
    if (kind) return *kind;
    return bit_depth == 16 ? PredictorKind::Correlation : PredictorKind::Centroid;
  }
};

struct Settings {
  Variant variant = Variant::Approx;
  std::optional<DescriptorParams> params;
  PoolingSpec pooling;
  PredictorChoice predictor;
  FilterPolicy policy;
  ExperimentConfig experiment;
  CorpusConfig corpus;
  std::optional<std::string> manifest, corpus_dir, label_map, out;
  bool render = false;
  std::uint64_t seed = 1;
  unsigned jobs = 1;

  ExtractionOptions extraction() const { return {policy, params, variant}; }
};

/// Typed settings; throws ConfigError listing every problem.
inline Settings resolve_settings(const Config& c) {
  ConfigReader r(c);
  Settings s;
  if (auto v = r.parsed("variant", [](const std::string& x) { return parse_variant(x); })) s.variant = *v;

  const bool any_threshold = c.explicitly_set("t0") || c.explicitly_set("t1") || c.explicitly_set("g0");
  if (any_threshold) {
    if (!c.explicitly_set("t0") || !c.explicitly_set("t1"))
      r.problems().push_back("t0 and t1 must be given together");
    DescriptorParams p;
    if (auto v = r.number<double>("t0")) p.t0 = *v;
    if (auto v = r.number<double>("t1")) p.t1 = *v;
    if (auto v = r.number<double>("g0")) p.g0 = *v;
    s.params = p;
  }

  if (auto v = r.parsed("pooling", [](const std::string& x) { return parse_pooling_mode(x); })) s.pooling.mode = *v;
  if (auto v = r.number<std::uint32_t>("n_c")) s.pooling.n_c = *v;
  if (auto v = r.number<std::uint32_t>("n_w")) s.pooling.n_w = *v;
  if (auto v = r.number<std::uint32_t>("n_h")) s.pooling.n_h = *v;
  if (c.explicitly_set("n_p")) {
    if (auto v = r.count_or_all("n_p")) s.pooling.n_p = *v;
  } else if (s.pooling.mode == PoolingMode::Consecutive) {
    s.pooling.n_p = 20;
  }
  try {
    s.pooling.validate();
  } catch (const Error& e) {
    r.problems().push_back(e.what());
  }

  if (auto v = r.text("predictor"); v && *v != "auto") {
    if (auto k = r.parsed("predictor", [](const std::string& x) { return parse_predictor(x); })) s.predictor.kind = *k;
  }

  if (auto v = r.number<double>("area_low")) s.policy.area_median_low = *v;
  if (auto v = r.number<double>("area_high")) s.policy.area_median_high = *v;
  s.policy.width_range = r.range("width_range");
  s.policy.height_range = r.range("height_range");
  try {
    s.policy.validate();
  } catch (const Error& e) {
    r.problems().push_back(e.what());
  }

  s.manifest = r.text("manifest");
  s.corpus_dir = r.text("corpus_dir");
  s.label_map = r.text("label_map");
  s.out = r.text("out");
  if (auto v = r.boolean("render")) s.render = *v;
  if (auto v = r.number<std::uint64_t>("seed")) s.seed = *v;
  if (auto v = r.number<int>("jobs")) {
    if (*v < 0) r.problems().push_back("jobs must not be negative");
    s.jobs = resolve_jobs(*v);
  }

  auto& e = s.experiment;
  e.pooling = s.pooling;
  e.variant = s.variant;
  e.params = s.params;
  e.policy = s.policy;
  e.jobs = s.jobs;
  e.split.seed = s.seed;
  if (auto v = r.number<std::uint32_t>("iterations")) e.split.iterations = *v;
  if (auto v = r.number<std::uint32_t>("train_per_printer")) e.split.train_per_printer = *v;
  if (auto v = r.count_or_all("test_per_printer")) e.split.test_per_printer = *v;
  if (auto v = r.text("train_family")) e.split.train_family = *v;
  if (auto v = r.text("test_family")) e.split.test_family = *v;
  e.split.train_ids = r.list("train_list");
  e.split.test_ids = r.list("test_list");
  if (c.explicitly_set("baseline_np")) e.baseline_np = r.number<std::uint32_t>("baseline_np");
  if (auto v = r.boolean("analysis")) e.analysis.enabled = *v;
  if (auto v = r.number<std::uint32_t>("analysis_n_c")) e.analysis.column = PoolingSpec::column(*v);
  if (auto v = r.number<std::uint32_t>("analysis_np")) e.analysis.consecutive_np = *v;
  if (auto v = r.number<std::uint32_t>("raw_per_block")) e.analysis.raw_per_block = *v;
  for (auto& p : e.violations()) {
    if (std::find(r.problems().begin(), r.problems().end(), p) == r.problems().end()) r.problems().push_back(p);
  }

  auto& cc = s.corpus;
  cc.master_seed = s.seed;
  if (auto v = r.number<std::uint32_t>("printers")) cc.printers = *v;
  if (auto v = r.number<std::uint32_t>("docs_per_printer")) cc.docs_per_printer = *v;
  if (auto v = r.number<std::uint32_t>("cross_family_docs")) cc.cross_family_docs_per_printer = *v;
  if (auto v = r.parsed("family", [](const std::string& x) { return parse_family(x); })) cc.page.family = *v;
  if (auto v = r.number<int>("page_width")) cc.page.width = *v;
  if (auto v = r.number<int>("page_height")) cc.page.height = *v;
  if (auto v = r.number<int>("glyph_rows")) cc.page.glyph_rows = *v;
  if (auto v = r.number<int>("glyph_cols")) cc.page.glyph_cols = *v;
  if (auto v = r.number<int>("glyph_size")) cc.page.glyph_size = *v;
  if (auto v = r.number<int>("margin")) cc.page.margin = *v;
  try {
    cc.validate();
  } catch (const Error& ex) {
    r.problems().push_back(ex.what());
  }

  if (!r.problems().empty()) throw ConfigError(r.problems());
  return s;
}

}  // namespace printtrace

#endif  // PRINTTRACE_CONFIG_HPP
