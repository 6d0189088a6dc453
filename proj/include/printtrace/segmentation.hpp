#ifndef PRINTTRACE_SEGMENTATION_HPP
#define PRINTTRACE_SEGMENTATION_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <tuple>
#include <ostream>
#include <utility>
#include <vector>

#include "printtrace/common.hpp"
#include "printtrace/image.hpp"

namespace printtrace {

/// Ink mask: 1 = ink (dark), 0 = background.
struct BinaryImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  std::uint8_t at(int r, int c) const noexcept {
    return bits[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)];
  }
  std::size_t ink_count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
};

/// Inclusive pixel bounding box.
struct BoundingBox {
  int row_min = 0;
  int col_min = 0;
  int row_max = 0;
  int col_max = 0;

  int width() const noexcept { return col_max - col_min + 1; }
  int height() const noexcept { return row_max - row_min + 1; }
  std::int64_t area() const noexcept { return static_cast<std::int64_t>(width()) * height(); }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ConnectedComponent {
  std::uint32_t id = 0;
  BoundingBox bbox;
  std::int64_t area = 0;
  double centroid_row = 0.0;
  double centroid_col = 0.0;
};

struct FilterPolicy {
  double area_median_low = 0.5;
  double area_median_high = 4.0;
  std::optional<std::pair<int, int>> width_range;
  std::optional<std::pair<int, int>> height_range;

  void validate() const {
    if (!(area_median_low < area_median_high))
      throw InvalidArgument("filter policy: area_median_low must be below area_median_high");
    if (width_range && !(width_range->first < width_range->second))
      throw InvalidArgument("filter policy: width_range min must be below max");
    if (height_range && !(height_range->first < height_range->second))
      throw InvalidArgument("filter policy: height_range min must be below max");
  }

  /// Bounds used for the 8-bit public dataset layout (letters 15..90 wide, 30..100 tall).
  static FilterPolicy with_letter_bounds() {
    FilterPolicy p;
    p.width_range = std::pair{15, 90};
    p.height_range = std::pair{30, 100};
    return p;
  }
};

/// Otsu threshold over the full-depth histogram. Pixels strictly below the
/// returned value are ink. A single-intensity image yields that intensity.
inline std::uint32_t otsu_threshold(const DocumentImage& img) {
  const std::size_t levels = static_cast<std::size_t>(img.max_value()) + 1;
  std::vector<std::uint64_t> hist(levels, 0);
  for (auto v : img.pixels()) ++hist[v];

  const double total = static_cast<double>(img.pixels().size());
  double sum_all = 0.0;
  for (std::size_t v = 0; v < levels; ++v) sum_all += static_cast<double>(v) * static_cast<double>(hist[v]);

  // Split at t: class 0 = [0, t), class 1 = [t, levels).
  double w0 = 0.0;
  double sum0 = 0.0;
  double best = -1.0;
  std::size_t best_lo = 0;
  std::size_t best_hi = 0;
  bool in_plateau = false;
  for (std::size_t t = 1; t < levels; ++t) {
    w0 += static_cast<double>(hist[t - 1]);
    sum0 += static_cast<double>(t - 1) * static_cast<double>(hist[t - 1]);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) {
      in_plateau = false;
      continue;
    }
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_lo = best_hi = t;
      in_plateau = true;
    } else if (between == best && in_plateau) {
      best_hi = t;
    } else {
      in_plateau = false;
    }
  }
  if (best < 0.0) return img.pixels().empty() ? 0u : img.pixels()[0];  // single intensity
  // Center of the flat run between two occupied levels.
  return static_cast<std::uint32_t>((best_lo + best_hi) / 2);
}

inline BinaryImage binarize(const DocumentImage& img) {
  const auto threshold = otsu_threshold(img);
  BinaryImage out{img.width(), img.height(), std::vector<std::uint8_t>(img.pixels().size())};
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) out.bits[i] = px[i] < threshold ? 1 : 0;
  return out;
}

namespace detail {

class UnionFind {
 public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;  // smaller label is the root
  }

 private:
  std::vector<std::uint32_t> parent_;
};

}  // namespace detail

/// Per-pixel labels from the two-pass algorithm (0 = background, components
/// numbered 1.. in raster order of their first pixel).
inline std::vector<std::uint32_t> label_image(const BinaryImage& bin, std::uint32_t* count = nullptr) {
  const int w = bin.width;
  const int h = bin.height;
  std::vector<std::uint32_t> labels(bin.bits.size(), 0);
  detail::UnionFind uf;
  uf.make();  // label 0 is background
  auto idx = [w](int r, int c) { return static_cast<std::size_t>(r) * static_cast<std::size_t>(w) + c; };

  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!bin.bits[idx(r, c)]) continue;
      std::uint32_t current = 0;
      const std::array<std::pair<int, int>, 4> prior{{{r, c - 1}, {r - 1, c - 1}, {r - 1, c}, {r - 1, c + 1}}};
      for (auto [nr, nc] : prior) {
        if (nr < 0 || nc < 0 || nc >= w) continue;
        const auto l = labels[idx(nr, nc)];
        if (!l) continue;
        if (!current)
          current = l;
        else
          uf.unite(current, l);
      }
      labels[idx(r, c)] = current ? current : uf.make();
    }
  }

  // Second pass: resolve to roots, then renumber densely in raster order.
  std::vector<std::uint32_t> dense;
  std::uint32_t next = 0;
  for (auto& l : labels) {
    if (!l) continue;
    const auto root = uf.find(l);
    if (dense.size() <= root) dense.resize(root + 1, 0);
    if (!dense[root]) dense[root] = ++next;
    l = dense[root];
  }
  if (count) *count = next;
  return labels;
}

/// 8-connected components sorted by (row_min, col_min, id).
inline std::vector<ConnectedComponent> label_components(const BinaryImage& bin) {
  std::uint32_t count = 0;
  const auto labels = label_image(bin, &count);
  std::vector<ConnectedComponent> comps(count);
  std::vector<double> sum_r(count, 0.0), sum_c(count, 0.0);
  for (std::uint32_t i = 0; i < count; ++i) {
    comps[i].id = i;
    comps[i].bbox = {bin.height, bin.width, -1, -1};
  }
  for (int r = 0; r < bin.height; ++r) {
    for (int c = 0; c < bin.width; ++c) {
      const auto l = labels[static_cast<std::size_t>(r) * bin.width + c];
      if (!l) continue;
      auto& cc = comps[l - 1];
      cc.bbox.row_min = std::min(cc.bbox.row_min, r);
      cc.bbox.col_min = std::min(cc.bbox.col_min, c);
      cc.bbox.row_max = std::max(cc.bbox.row_max, r);
      cc.bbox.col_max = std::max(cc.bbox.col_max, c);
      ++cc.area;
      sum_r[l - 1] += r;
      sum_c[l - 1] += c;
    }
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    comps[i].centroid_row = sum_r[i] / static_cast<double>(comps[i].area);
    comps[i].centroid_col = sum_c[i] / static_cast<double>(comps[i].area);
  }
  std::sort(comps.begin(), comps.end(), [](const auto& a, const auto& b) {
    return std::tie(a.bbox.row_min, a.bbox.col_min, a.id) < std::tie(b.bbox.row_min, b.bbox.col_min, b.id);
  });
  return comps;
}

inline std::int64_t median_area(const std::vector<ConnectedComponent>& comps) {
  std::vector<std::int64_t> areas;
  areas.reserve(comps.size());
  for (const auto& c : comps) areas.push_back(c.area);
  return lower_median(std::move(areas));
}

/// Filtering against a precomputed median; lets callers re-filter with the original median.
inline std::vector<ConnectedComponent> filter_components_with_median(const std::vector<ConnectedComponent>& comps,
                                                                     const FilterPolicy& policy, double median) {
  policy.validate();
  std::vector<ConnectedComponent> kept;
  const double lo = policy.area_median_low * median;
  const double hi = policy.area_median_high * median;
  for (const auto& c : comps) {
    const auto area = static_cast<double>(c.area);
    if (area < lo || area > hi) continue;
    if (policy.width_range && (c.bbox.width() < policy.width_range->first || c.bbox.width() > policy.width_range->second))
      continue;
    if (policy.height_range &&
        (c.bbox.height() < policy.height_range->first || c.bbox.height() > policy.height_range->second))
      continue;
    kept.push_back(c);
  }
  return kept;
}

/// Drops components whose area is outside [low, high] x median(all areas) or
/// whose box violates the optional width/height ranges.
inline std::vector<ConnectedComponent> filter_components(const std::vector<ConnectedComponent>& comps,
                                                         const FilterPolicy& policy) {
  policy.validate();
  if (comps.empty()) return {};
  return filter_components_with_median(comps, policy, static_cast<double>(median_area(comps)));
}

/// Grayscale sub-image of exactly the component's bounding box, taken from the
/// original image. Returns nullopt when the box is smaller than 3x3.
inline std::optional<DocumentImage> crop_letter(const DocumentImage& img, const BoundingBox& box) {
  if (box.row_min < 0 || box.col_min < 0 || box.row_max >= img.height() || box.col_max >= img.width() ||
      box.row_min > box.row_max || box.col_min > box.col_max)
    throw InvalidArgument("bounding box lies outside the image");
  if (box.width() < 3 || box.height() < 3) return std::nullopt;
  std::vector<std::uint16_t> px;
  px.reserve(static_cast<std::size_t>(box.area()));
  for (int r = box.row_min; r <= box.row_max; ++r) {
    const auto row = img.row(r);
    px.insert(px.end(), row.begin() + box.col_min, row.begin() + box.col_max + 1);
  }
  return DocumentImage(box.width(), box.height(), img.bit_depth(), std::move(px))
      .with_origin(img.origin_row() + box.row_min, img.origin_col() + box.col_min);
}

inline std::optional<DocumentImage> crop_letter(const DocumentImage& img, const ConnectedComponent& comp) {
  return crop_letter(img, comp.bbox);
}

inline void write_components_csv(std::ostream& out, const std::vector<ConnectedComponent>& comps) {
  out << "id,row_min,col_min,row_max,col_max,area\n";
  for (const auto& c : comps)
    out << c.id << ',' << c.bbox.row_min << ',' << c.bbox.col_min << ',' << c.bbox.row_max << ',' << c.bbox.col_max
        << ',' << c.area << '\n';
}

inline void write_components_csv(const std::filesystem::path& path, const std::vector<ConnectedComponent>& comps) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_components_csv(out, comps);
}

/// Binarize, label, and filter in one step.
inline std::vector<ConnectedComponent> extract_letters(const DocumentImage& img, const FilterPolicy& policy) {
  return filter_components(label_components(binarize(img)), policy);
}

}  // namespace printtrace

#endif  // PRINTTRACE_SEGMENTATION_HPP
