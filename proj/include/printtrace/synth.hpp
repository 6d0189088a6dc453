#ifndef PRINTTRACE_SYNTH_HPP
#define PRINTTRACE_SYNTH_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "printtrace/common.hpp"
#include "printtrace/image.hpp"

// Synthetic "printed" pages. Each printer stamps its glyphs with a directional
// micro-streak texture whose mix of 0/45/90/135 degree streaks drifts linearly
// across the page width, plus edge noise and dot gain around the strokes.

namespace printtrace {

inline constexpr int kGeneratorVersion = 1;

struct PrinterProfile {
  std::string printer_id;
  std::uint64_t seed = 0;
  std::array<double, 4> orientation_bias{};  // 0, 45, 90, 135 degrees
  std::array<double, 4> bias_drift{};        // change across the full page width
  double edge_noise_sigma = 0.0;             // 16-bit intensity units
  double dot_gain = 0.0;                     // [0, 1]
  double texture_amplitude = 0.0;            // 16-bit intensity units
  double paper_noise_sigma = 0.0;

  /// Streak strengths at horizontal page fraction x in [0, 1].
  std::array<double, 4> strengths_at(double x) const {
    std::array<double, 4> s{};
    for (int o = 0; o < 4; ++o) s[o] = std::clamp(orientation_bias[o] + bias_drift[o] * x, 0.0, 1.0);
    return s;
  }

  PrinterProfile without_noise() const {
    auto p = *this;
    p.edge_noise_sigma = p.dot_gain = p.texture_amplitude = p.paper_noise_sigma = 0.0;
    return p;
  }
};

/// Generator noise defaults (16-bit units), frozen.
struct NoiseDefaults {
  static constexpr double texture_amplitude = 9000.0;
  static constexpr double paper_noise_sigma = 700.0;
  static constexpr double edge_noise_min = 1500.0;
  static constexpr double edge_noise_max = 4000.0;
  static constexpr double min_profile_distance = 0.3;  // L1 over orientation_bias
  static constexpr double max_drift = 0.3;
  static constexpr double min_peak_drift = 0.15;
};

inline double orientation_l1(const PrinterProfile& a, const PrinterProfile& b) {
  double d = 0.0;
  for (int o = 0; o < 4; ++o) d += std::fabs(a.orientation_bias[o] - b.orientation_bias[o]);
  return d;
}

namespace detail {
inline PrinterProfile draw_profile(std::uint64_t master_seed, std::uint32_t index, std::uint32_t attempt) {
  Rng rng(derive_seed(derive_seed(master_seed, 0x5052'0000ULL + index), attempt));
  PrinterProfile p;
  p.printer_id = "P" + std::string(index < 9 ? "0" : "") + std::to_string(index + 1);
  p.seed = derive_seed(master_seed, 0x5052'0000ULL + index);
  for (int o = 0; o < 4; ++o) p.orientation_bias[o] = rng.uniform();
  for (int o = 0; o < 4; ++o) {
    const double lo = std::max(-NoiseDefaults::max_drift, -p.orientation_bias[o]);
    const double hi = std::min(NoiseDefaults::max_drift, 1.0 - p.orientation_bias[o]);
    p.bias_drift[o] = rng.uniform(lo, hi);
  }
  p.edge_noise_sigma = rng.uniform(NoiseDefaults::edge_noise_min, NoiseDefaults::edge_noise_max);
  p.dot_gain = rng.uniform(0.1, 0.9);
  p.texture_amplitude = NoiseDefaults::texture_amplitude;
  p.paper_noise_sigma = NoiseDefaults::paper_noise_sigma;
  return p;
}

inline bool acceptable(const PrinterProfile& p, const std::vector<PrinterProfile>& earlier) {
  double peak = 0.0;
  for (double d : p.bias_drift) peak = std::max(peak, std::fabs(d));
  if (peak < NoiseDefaults::min_peak_drift) return false;
  for (const auto& q : earlier)
    if (orientation_l1(p, q) < NoiseDefaults::min_profile_distance) return false;
  return true;
}
}  // namespace detail

/// Deterministic profile `index` of the family seeded by `master_seed`.
/// Profiles are drawn in index order with rejection, so every profile keeps an
/// L1 distance of at least 0.3 to all lower-indexed ones.
inline PrinterProfile make_printer_profile(std::uint64_t master_seed, std::uint32_t index) {
  std::vector<PrinterProfile> accepted;
  for (std::uint32_t i = 0; i <= index; ++i) {
    for (std::uint32_t attempt = 0;; ++attempt) {
      auto p = detail::draw_profile(master_seed, i, attempt);
      if (detail::acceptable(p, accepted)) {
        accepted.push_back(std::move(p));
        break;
      }
      if (attempt > 100000) throw Error("printer profile rejection sampling did not converge");
    }
  }
  return accepted.back();
}

enum class GlyphFamily : std::uint8_t { A = 0, B = 1 };

inline std::string_view to_string(GlyphFamily f) { return f == GlyphFamily::A ? "A" : "B"; }
inline GlyphFamily parse_family(std::string_view s) {
  if (s == "A" || s == "a") return GlyphFamily::A;
  if (s == "B" || s == "b") return GlyphFamily::B;
  throw InvalidArgument("unknown glyph family '" + std::string(s) + "'");
}

struct PageParams {
  int width = 2550;
  int height = 3300;
  int glyph_rows = 40;
  int glyph_cols = 25;
  int glyph_size = 44;  // glyph box height; width is 3/4 of it
  int margin = 200;
  GlyphFamily family = GlyphFamily::A;

  int glyph_width() const { return glyph_size * 3 / 4; }
  int stroke() const { return std::max(3, glyph_size / 6); }
  double pitch_x() const { return static_cast<double>(width - 2 * margin) / glyph_cols; }
  double pitch_y() const { return static_cast<double>(height - 2 * margin) / glyph_rows; }

  void validate() const {
    if (glyph_rows < 1 || glyph_cols < 1 || glyph_size < 8 || margin < 4)
      throw InvalidArgument("page geometry: glyph grid and glyph size must be positive");
    if (pitch_x() < glyph_width() + 6 || pitch_y() < glyph_size + 6)
      throw InvalidArgument("page geometry overflow: glyphs do not fit the page with margins");
  }
};

namespace detail {

struct Segment {
  double x0, y0, x1, y1;
};
using Shape = std::vector<Segment>;

inline Shape arc(double cx, double cy, double rx, double ry, double from_deg, double to_deg, int steps = 16) {
  Shape s;
  for (int i = 0; i < steps; ++i) {
    const double a0 = (from_deg + (to_deg - from_deg) * i / steps) * std::numbers::pi / 180.0;
    const double a1 = (from_deg + (to_deg - from_deg) * (i + 1) / steps) * std::numbers::pi / 180.0;
    s.push_back({cx + rx * std::cos(a0), cy + ry * std::sin(a0), cx + rx * std::cos(a1), cy + ry * std::sin(a1)});
  }
  return s;
}

inline Shape join(std::initializer_list<Shape> parts) {
  Shape s;
  for (const auto& p : parts) s.insert(s.end(), p.begin(), p.end());
  return s;
}

// Unit-box stroke skeletons, x to the right and y downwards.
inline const std::vector<Shape>& family_shapes(GlyphFamily f) {
  static const std::vector<Shape> family_a{
      {{0, 0, 0, 1}, {0, 0, 1, 0}, {0, .5, .8, .5}, {0, 1, 1, 1}},          // E
      {{0, 0, 0, 1}, {0, 0, 1, 0}, {0, .5, .8, .5}},                        // F
      {{0, 0, 0, 1}, {1, 0, 1, 1}, {0, .5, 1, .5}},                         // H
      {{0, 0, 0, 1}, {0, 1, 1, 1}},                                         // L
      {{0, 0, 1, 0}, {.5, 0, .5, 1}},                                       // T
      {{0, 0, 0, 1}, {1, 0, 1, 1}, {0, 0, 1, 1}},                           // N
      {{0, 0, 1, 0}, {1, 0, 0, 1}, {0, 1, 1, 1}},                           // Z
      {{0, 0, 1, 1}, {1, 0, 0, 1}},                                         // X
      {{0, 0, .5, 1}, {1, 0, .5, 1}},                                       // V
      {{0, 0, 0, 1}, {1, 0, 0, .5}, {0, .5, 1, 1}},                         // K
      {{0, 1, .5, 0}, {.5, 0, 1, 1}, {.25, .5, .75, .5}},                   // A
      {{0, 0, .5, .5}, {1, 0, .5, .5}, {.5, .5, .5, 1}},                    // Y
      {{0, 1, 0, 0}, {0, 0, .5, .6}, {.5, .6, 1, 0}, {1, 0, 1, 1}},         // M
  };
  static const std::vector<Shape> family_b{
      arc(.5, .5, .5, .5, 0, 360, 24),                                                     // O
      arc(.5, .5, .5, .5, 45, 315, 20),                                                    // C
      join({{{0, 0, 0, .6}, {1, 0, 1, .6}}, arc(.5, .6, .5, .4, 0, 180, 12)}),             // U
      join({arc(.5, .25, .45, .25, 0, 270, 14), arc(.5, .75, .45, .25, -90, 180, 14)}),    // S
      join({{{0, 0, 0, 1}}, arc(0, .5, 1, .5, -90, 90, 16)}),                              // D
      join({{{0, 0, 0, 1}}, arc(.3, .28, .7, .28, -90, 90, 12), {{0, 0, .3, 0}, {0, .56, .3, .56}}}),  // P
      join({{{1, 0, 1, .7}}, arc(.5, .7, .5, .3, 0, 180, 12)}),                            // J
      join({arc(.5, .5, .5, .5, 30, 330, 20), {{1, .75, 1, .5}, {.6, .5, 1, .5}}}),        // G
      join({arc(.5, .45, .5, .45, 0, 360, 24), {{.6, .75, 1, 1}}}),                        // Q
      join({arc(.5, .5, .5, .5, 180, 360, 12), {{0, .5, 0, 1}, {1, .5, 1, 1}}}),           // n-arch
      join({arc(.5, .5, .5, .5, 0, 180, 12), {{0, 0, 0, .5}, {1, 0, 1, .5}}}),             // cup
  };
  return f == GlyphFamily::A ? family_a : family_b;
}

inline double segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0, dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = s.x0 + t * dx - px, ey = s.y0 + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

// Streak directions (dr, dc) along the 0, 45, 90 and 135 degree lines.
inline constexpr std::array<std::array<int, 2>, 4> kStreakStep{{{0, 1}, {-1, 1}, {1, 0}, {1, 1}}};
inline constexpr int kStreakHalf = 2;

}  // namespace detail

inline constexpr std::uint16_t kInkLevel = 12000;
inline constexpr std::uint16_t kInkCeiling = 26000;
inline constexpr std::uint16_t kPaperLevel = 58000;
inline constexpr std::uint16_t kPaperFloor = 40000;

/// Pixel-level ground truth of a rendered page.
struct RenderedPage {
  DocumentImage image;
  std::vector<std::uint8_t> ink_mask;
  std::size_t glyph_count = 0;
};

inline RenderedPage render_document_with_truth(const PrinterProfile& profile, const PageParams& page,
                                               std::uint64_t doc_seed) {
  page.validate();
  const int W = page.width, H = page.height;
  const std::size_t npx = static_cast<std::size_t>(W) * H;
  std::vector<double> value(npx, static_cast<double>(kPaperLevel));
  std::vector<std::uint8_t> ink(npx, 0);
  auto at = [W](int r, int c) { return static_cast<std::size_t>(r) * W + c; };

  Rng layout_rng(derive_seed(doc_seed, 1));
  const auto& shapes = detail::family_shapes(page.family);
  const int gw = page.glyph_width(), gh = page.glyph_size;
  const double half_stroke = page.stroke() / 2.0;
  const int pad = page.stroke() + detail::kStreakHalf + 2;

  std::size_t glyph_index = 0;
  std::vector<std::array<int, 4>> boxes;  // glyph boxes grown by one pixel
  for (int gr = 0; gr < page.glyph_rows; ++gr) {
    for (int gc = 0; gc < page.glyph_cols; ++gc, ++glyph_index) {
      const auto& shape = shapes[layout_rng.below(shapes.size())];
      const int jitter_x = static_cast<int>(layout_rng.below(5)) - 2;
      const int jitter_y = static_cast<int>(layout_rng.below(5)) - 2;
      const int x0 = page.margin + static_cast<int>(gc * page.pitch_x() + (page.pitch_x() - gw) / 2) + jitter_x;
      const int y0 = page.margin + static_cast<int>(gr * page.pitch_y() + (page.pitch_y() - gh) / 2) + jitter_y;

      // Box with padding so that streaks are defined at every ink pixel.
      const int bw = gw + 2 * pad, bh = gh + 2 * pad;
      boxes.push_back({y0 - 1, x0 - 1, y0 + gh, x0 + gw});
      const auto strengths = profile.strengths_at((x0 + gw / 2.0) / W);
      std::vector<double> noise;
      if (profile.texture_amplitude > 0.0) {
        Rng tex(derive_seed(doc_seed, 0x7000'0000ULL + glyph_index));
        noise.resize(static_cast<std::size_t>(bw) * bh);
        for (auto& n : noise) n = tex.normal();
      }
      const double inner_w = gw - 2 * half_stroke, inner_h = gh - 2 * half_stroke;
      for (int r = 0; r < gh; ++r) {
        for (int c = 0; c < gw; ++c) {
          const double ux = (c + 0.5 - half_stroke) / inner_w;
          const double uy = (r + 0.5 - half_stroke) / inner_h;
          double d = 1e9;
          for (const auto& s : shape) d = std::min(d, detail::segment_distance(ux * inner_w, uy * inner_h,
                                                                               {s.x0 * inner_w, s.y0 * inner_h,
                                                                                s.x1 * inner_w, s.y1 * inner_h}));
          if (d > half_stroke) continue;
          const int pr = y0 + r, pc = x0 + c;
          ink[at(pr, pc)] = 1;
          double v = kInkLevel;
          if (!noise.empty()) {
            double t = 0.0;
            for (int o = 0; o < 4; ++o) {
              if (strengths[o] == 0.0) continue;
              double acc = 0.0;
              for (int k = -detail::kStreakHalf; k <= detail::kStreakHalf; ++k) {
                const int nr = r + pad + k * detail::kStreakStep[o][0];
                const int nc = c + pad + k * detail::kStreakStep[o][1];
                acc += noise[static_cast<std::size_t>(nr) * bw + nc];
              }
              t += strengths[o] * acc / std::sqrt(2.0 * detail::kStreakHalf + 1.0);
            }
            v += profile.texture_amplitude * t;
          }
          value[at(pr, pc)] = v;
        }
      }
    }
  }

  // Paper grain everywhere off the strokes.
  Rng grain(derive_seed(doc_seed, 2));
  if (profile.paper_noise_sigma > 0.0)
    for (std::size_t i = 0; i < npx; ++i) {
      const double n = grain.approx_normal();
      if (!ink[i]) value[i] += profile.paper_noise_sigma * n;
    }

  // Dot gain halo and edge noise on pixels where ink meets paper.
  const double halo_shift = profile.dot_gain * 0.35 * (kPaperLevel - kInkLevel);
  for (std::size_t g = 0; g < boxes.size(); ++g) {
    Rng edge(derive_seed(doc_seed, 0x3000'0000ULL + g));
    const auto [br0, bc0, br1, bc1] = boxes[g];
    for (int r = std::max(0, br0); r <= std::min(H - 1, br1); ++r) {
      for (int c = std::max(0, bc0); c <= std::min(W - 1, bc1); ++c) {
        const auto i = at(r, c);
        bool touches_other = false;
        for (int dr = -1; dr <= 1 && !touches_other; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = r + dr, nc = c + dc;
            if (nr < 0 || nc < 0 || nr >= H || nc >= W) continue;
            if (ink[at(nr, nc)] != ink[i]) {
              touches_other = true;
              break;
            }
          }
        if (!touches_other) continue;
        const double edge_noise = profile.edge_noise_sigma > 0 ? profile.edge_noise_sigma * edge.normal() : 0.0;
        value[i] += ink[i] ? edge_noise : edge_noise - halo_shift;
      }
    }
  }
  for (std::size_t i = 0; i < npx; ++i)
    value[i] = ink[i] ? std::clamp(value[i], 0.0, static_cast<double>(kInkCeiling))
                      : std::clamp(value[i], static_cast<double>(kPaperFloor), 65535.0);

  std::vector<std::uint16_t> px(npx);
  for (std::size_t i = 0; i < npx; ++i) px[i] = static_cast<std::uint16_t>(std::lround(value[i]));
  return {DocumentImage(W, H, 16, std::move(px)).with_printer_label(profile.printer_id), std::move(ink), glyph_index};
}

inline DocumentImage render_document(const PrinterProfile& profile, const PageParams& page, std::uint64_t doc_seed) {
  return render_document_with_truth(profile, page, doc_seed).image;
}

// ---------------------------------------------------------------------------
// Corpora

struct CorpusConfig {
  std::uint32_t printers = 8;
  std::uint32_t docs_per_printer = 15;
  std::uint32_t cross_family_docs_per_printer = 0;  // extra pages in the other glyph family
  PageParams page;
  std::uint64_t master_seed = 1;

  void validate() const {
    if (printers < 2) throw InvalidArgument("corpus needs at least 2 printers");
    if (docs_per_printer < 2) throw InvalidArgument("corpus needs at least 2 documents per printer");
    page.validate();
  }
};

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  std::string printer_id;
  std::uint32_t printer_index = 0;
  std::uint64_t seed = 0;
  PageParams page;
};

struct CorpusManifest {
  int schema_version = 1;
  int generator_version = kGeneratorVersion;
  std::uint64_t master_seed = 0;
  std::vector<ManifestEntry> documents;
  std::filesystem::path root;  // directory holding the manifest
};

inline std::uint64_t document_seed(std::uint64_t master_seed, std::uint32_t printer, std::uint32_t doc,
                                   GlyphFamily family) {
  return derive_seed(master_seed, (static_cast<std::uint64_t>(family) << 48) |
                                      (static_cast<std::uint64_t>(printer) << 24) | doc | (1ULL << 60));
}

inline nlohmann::ordered_json to_json(const PageParams& p) {
  return {{"width", p.width},         {"height", p.height}, {"glyph_rows", p.glyph_rows},
          {"glyph_cols", p.glyph_cols}, {"glyph_size", p.glyph_size}, {"margin", p.margin},
          {"family", std::string(to_string(p.family))}};
}

inline PageParams page_from_json(const nlohmann::json& j) {
  PageParams p;
  p.width = j.at("width");
  p.height = j.at("height");
  p.glyph_rows = j.at("glyph_rows");
  p.glyph_cols = j.at("glyph_cols");
  p.glyph_size = j.at("glyph_size");
  p.margin = j.at("margin");
  p.family = parse_family(j.at("family").get<std::string>());
  return p;
}

inline nlohmann::ordered_json to_json(const CorpusManifest& m) {
  nlohmann::ordered_json j;
  j["schema_version"] = m.schema_version;
  j["generator_version"] = m.generator_version;
  j["master_seed"] = m.master_seed;
  auto& docs = j["documents"] = nlohmann::ordered_json::array();
  for (const auto& d : m.documents)
    docs.push_back({{"path", d.path},
                    {"printer_id", d.printer_id},
                    {"printer_index", d.printer_index},
                    {"seed", d.seed},
                    {"page", to_json(d.page)}});
  return j;
}

inline CorpusManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    CorpusManifest m;
    m.schema_version = j.at("schema_version");
    if (m.schema_version != 1) throw InvalidArgument("unsupported manifest schema version");
    m.generator_version = j.at("generator_version");
    m.master_seed = j.at("master_seed");
    for (const auto& d : j.at("documents"))
      m.documents.push_back({d.at("path"), d.at("printer_id"), d.at("printer_index"), d.at("seed"),
                             page_from_json(d.at("page"))});
    m.root = path.parent_path();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("manifest '" + path.string() + "': " + e.what());
  }
}

inline void save_manifest(const CorpusManifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << to_json(m).dump(2) << '\n';
}

/// Renders one manifest entry.
inline DocumentImage render_entry(const CorpusManifest& m, const ManifestEntry& e) {
  return render_document(make_printer_profile(m.master_seed, e.printer_index), e.page, e.seed);
}

/// Plans the corpus: per printer, pages in the configured family first, then
/// the cross-family pages.
inline CorpusManifest plan_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  CorpusManifest m;
  m.master_seed = cfg.master_seed;
  std::set<std::uint64_t> seeds;
  for (std::uint32_t p = 0; p < cfg.printers; ++p) {
    const auto profile = make_printer_profile(cfg.master_seed, p);
    auto add = [&](std::uint32_t d, GlyphFamily fam) {
      PageParams page = cfg.page;
      page.family = fam;
      const auto seed = document_seed(cfg.master_seed, p, d, fam);
      if (!seeds.insert(seed).second) throw Error("document seed collision");
      const std::string name = profile.printer_id + "_" + std::string(to_string(fam)) + "_" +
                               (d < 10 ? "0" : "") + std::to_string(d) + ".pgm";
      m.documents.push_back({name, profile.printer_id, p, seed, page});
    };
    for (std::uint32_t d = 0; d < cfg.docs_per_printer; ++d) add(d, cfg.page.family);
    const auto other = cfg.page.family == GlyphFamily::A ? GlyphFamily::B : GlyphFamily::A;
    for (std::uint32_t d = 0; d < cfg.cross_family_docs_per_printer; ++d) add(d, other);
  }
  return m;
}

/// Writes every page plus `manifest.json` into `dir`.
inline CorpusManifest generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& dir, unsigned jobs = 1) {
  auto m = plan_corpus(cfg);
  std::filesystem::create_directories(dir);
  m.root = dir;
  parallel_for(m.documents.size(), jobs, [&](std::size_t i) {
    save_pgm(render_entry(m, m.documents[i]), dir / m.documents[i].path);
  });
  save_manifest(m, dir / "manifest.json");
  return m;
}

}  // namespace printtrace

#endif  // PRINTTRACE_SYNTH_HPP
