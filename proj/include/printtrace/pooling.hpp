#ifndef PRINTTRACE_POOLING_HPP
#define PRINTTRACE_POOLING_HPP

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "printtrace/common.hpp"
#include "printtrace/psltd.hpp"
#include "printtrace/segmentation.hpp"

namespace printtrace {

/// Printed-text area of a page, in pixel coordinates.
struct TextExtent {
  int col_start = 0;  // P1
  int col_end = 0;    // P2
  int row_start = 0;
  int row_end = 0;

  void validate() const {
    if (!(col_start < col_end) || !(row_start < row_end)) throw InvalidArgument("degenerate text extent");
  }
  friend bool operator==(const TextExtent&, const TextExtent&) = default;
};

/// Equal-width division of [start, end] into `count` cells; the last cell
/// absorbs the integer remainder.
struct AxisDivision {
  int count = 1;
  int cell = 0;
  std::vector<int> boundaries;  // count + 1 entries

  int start() const { return boundaries.front(); }
  int end() const { return boundaries.back(); }

  /// Pixel overlap of [lo, hi] with cell k. The first and last cells extend
  /// to infinity so that nothing falls outside the division.
  std::int64_t overlap(int k, int lo, int hi) const {
    const std::int64_t cell_lo = k == 0 ? std::numeric_limits<int>::min() : boundaries[k];
    const std::int64_t cell_hi = k == count - 1 ? std::numeric_limits<int>::max() : boundaries[k + 1] - 1;
    return std::max<std::int64_t>(0, std::min<std::int64_t>(hi, cell_hi) - std::max<std::int64_t>(lo, cell_lo) + 1);
  }

  /// Cell holding pixel coordinate x (same infinite-edge convention).
  int cell_of(int x) const {
    for (int k = count - 1; k > 0; --k)
      if (x >= boundaries[k]) return k;
    return 0;
  }
};

inline AxisDivision divide_axis(int start, int end, int count) {
  if (count < 1) throw InvalidArgument("block count must be at least 1");
  const int span = end - start;
  if (span < count)
    throw InvalidArgument("text span of " + std::to_string(span) + " px is smaller than " + std::to_string(count) +
                          " blocks");
  AxisDivision d;
  d.count = count;
  d.cell = span / count;
  d.boundaries.reserve(count + 1);
  for (int k = 0; k < count; ++k) d.boundaries.push_back(start + k * d.cell);
  d.boundaries.push_back(end);
  return d;
}

struct ColumnLayout {
  TextExtent extent;
  AxisDivision columns;

  int n_columns() const { return columns.count; }
  int column_width() const { return columns.cell; }
};

struct GridLayout {
  TextExtent extent;
  AxisDivision columns;  // horizontal: N_w cells of width G_W
  AxisDivision rows;     // vertical: N_h cells of height G_H

  int cell_width() const { return columns.cell; }
  int cell_height() const { return rows.cell; }
};

/// Single block covering the whole page (reading-order baseline).
struct PageLayout {
  TextExtent extent;
};

using BlockLayout = std::variant<ColumnLayout, GridLayout, PageLayout>;

enum class PoolingMode : std::uint8_t { Consecutive = 0, Column = 1, Grid = 2 };

inline std::string_view to_string(PoolingMode m) {
  switch (m) {
    case PoolingMode::Consecutive: return "consecutive";
    case PoolingMode::Column: return "column";
    case PoolingMode::Grid: return "grid";
  }
  return "?";
}

inline PoolingMode parse_pooling_mode(std::string_view s) {
  if (s == "consecutive") return PoolingMode::Consecutive;
  if (s == "column") return PoolingMode::Column;
  if (s == "grid") return PoolingMode::Grid;
  throw InvalidArgument("unknown pooling mode '" + std::string(s) + "'");
}

/// Pooling configuration shared by every document of an experiment.
/// `n_p == 0` means all letters of a block form one group.
struct PoolingSpec {
  PoolingMode mode = PoolingMode::Column;
  std::uint32_t n_c = 15;
  std::uint32_t n_w = 8;
  std::uint32_t n_h = 8;
  std::uint32_t n_p = 0;

  static PoolingSpec column(std::uint32_t n_c = 15, std::uint32_t n_p = 0) {
    return {PoolingMode::Column, n_c, 8, 8, n_p};
  }
  static PoolingSpec grid(std::uint32_t n_w = 8, std::uint32_t n_h = 8) { return {PoolingMode::Grid, 15, n_w, n_h, 0}; }
  static PoolingSpec consecutive(std::uint32_t n_p = 20) { return {PoolingMode::Consecutive, 15, 8, 8, n_p}; }

  void validate() const {
    if (mode == PoolingMode::Column && n_c < 1) throw InvalidArgument("n_c must be at least 1");
    if (mode == PoolingMode::Grid && (n_w < 1 || n_h < 1)) throw InvalidArgument("grid counts must be at least 1");
    if (mode == PoolingMode::Consecutive && n_p < 1) throw InvalidArgument("consecutive pooling needs n_p >= 1");
  }
  friend bool operator==(const PoolingSpec&, const PoolingSpec&) = default;
};

/// Robust text extent: lower median of the smallest 1% of left (top) edges and
/// of the largest 1% of right (bottom) edges, at least one component each.
inline TextExtent text_extent(const std::vector<ConnectedComponent>& comps) {
  if (comps.empty()) throw InvalidArgument("text extent of an empty component list");
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.01 * comps.size())));
  auto low_slice = [&](auto edge) {
    std::vector<int> v;
    for (const auto& c : comps) v.push_back(edge(c));
    std::sort(v.begin(), v.end());
    return lower_median(std::vector<int>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k)));
  };
  auto high_slice = [&](auto edge) {
    std::vector<int> v;
    for (const auto& c : comps) v.push_back(edge(c));
    std::sort(v.begin(), v.end());
    return lower_median(std::vector<int>(v.end() - static_cast<std::ptrdiff_t>(k), v.end()));
  };
  TextExtent e;
  e.col_start = low_slice([](const auto& c) { return c.bbox.col_min; });
  e.col_end = high_slice([](const auto& c) { return c.bbox.col_max; });
  e.row_start = low_slice([](const auto& c) { return c.bbox.row_min; });
  e.row_end = high_slice([](const auto& c) { return c.bbox.row_max; });
  return e;
}

inline ColumnLayout column_layout(const TextExtent& extent, int n_c) {
  if (extent.col_start >= extent.col_end) throw InvalidArgument("degenerate horizontal text extent");
  return {extent, divide_axis(extent.col_start, extent.col_end, n_c)};
}

inline GridLayout grid_layout(const TextExtent& extent, int n_w, int n_h) {
  extent.validate();
  return {extent, divide_axis(extent.col_start, extent.col_end, n_w), divide_axis(extent.row_start, extent.row_end, n_h)};
}

inline BlockLayout make_layout(const TextExtent& extent, const PoolingSpec& spec) {
  spec.validate();
  switch (spec.mode) {
    case PoolingMode::Column: return column_layout(extent, static_cast<int>(spec.n_c));
    case PoolingMode::Grid: return grid_layout(extent, static_cast<int>(spec.n_w), static_cast<int>(spec.n_h));
    case PoolingMode::Consecutive: return PageLayout{extent};
  }
  throw InvalidArgument("unknown pooling mode");
}

/// Block with the largest bounding-box overlap; ties go to the left-most
/// column (grids: smaller grid row, then smaller grid column).
inline BlockId assign_block(const BoundingBox& box, const ColumnLayout& layout) {
  std::uint32_t best = 0;
  std::int64_t best_overlap = -1;
  for (int k = 0; k < layout.columns.count; ++k) {
    const auto o = layout.columns.overlap(k, box.col_min, box.col_max);
    if (o > best_overlap) {
      best_overlap = o;
      best = static_cast<std::uint32_t>(k);
    }
  }
  return {best, 0};
}

inline BlockId assign_block(const BoundingBox& box, const GridLayout& layout) {
  BlockId best;
  std::int64_t best_area = -1;
  for (int gr = 0; gr < layout.rows.count; ++gr) {
    const auto oy = layout.rows.overlap(gr, box.row_min, box.row_max);
    for (int gc = 0; gc < layout.columns.count; ++gc) {
      const auto area = oy * layout.columns.overlap(gc, box.col_min, box.col_max);
      if (area > best_area) {
        best_area = area;
        best = {static_cast<std::uint32_t>(gr), static_cast<std::uint32_t>(gc)};
      }
    }
  }
  return best;
}

inline BlockId assign_block(const BoundingBox&, const PageLayout&) { return {0, 0}; }

inline BlockId assign_block(const BoundingBox& box, const BlockLayout& layout) {
  return std::visit([&](const auto& l) { return assign_block(box, l); }, layout);
}

struct LetterFeature {
  ConnectedComponent component;
  Descriptor descriptor;
};

struct PooledFeature {
  BlockId block;
  std::vector<double> vector;
  std::uint32_t member_count = 0;
  std::uint32_t doc_id = 0;
};

/// Splits `n` ordered members into groups of n_p; a trailing partial group
/// keeps its own slot only with at least ceil(n_p / 2) members.
inline std::vector<std::pair<std::size_t, std::size_t>> group_ranges(std::size_t n, std::size_t n_p) {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  if (n == 0) return ranges;
  if (n_p == 0 || n_p >= n) {
    ranges.emplace_back(0, n);
    return ranges;
  }
  std::size_t begin = 0;
  for (; begin + n_p <= n; begin += n_p) ranges.emplace_back(begin, begin + n_p);
  const std::size_t rest = n - begin;
  if (rest > 0) {
    if (rest >= (n_p + 1) / 2)
      ranges.emplace_back(begin, n);
    else
      ranges.back().second = n;
  }
  return ranges;
}

namespace detail {
inline std::vector<double> mean_of(std::span<const LetterFeature* const> members) {
  std::vector<double> acc(members.front()->descriptor.size(), 0.0);
  for (const auto* m : members) {
    const auto v = m->descriptor.values();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
  }
  const double n = static_cast<double>(members.size());
  for (auto& x : acc) x /= n;
  return acc;
}
}  // namespace detail

/// Average-pools letter descriptors per block. Within a block letters are
/// ordered top-to-bottom by centroid; grid layouts always pool all letters.
inline std::vector<PooledFeature> pool_document(const std::vector<LetterFeature>& features, const BlockLayout& layout,
                                                std::uint32_t n_p, std::uint32_t doc_id = 0) {
  if (features.empty()) return {};
  const auto dim = features.front().descriptor.size();
  for (const auto& f : features)
    if (f.descriptor.size() != dim) throw InvalidArgument("pooled descriptors must share one variant");
  if (std::holds_alternative<GridLayout>(layout)) n_p = 0;

  std::vector<std::pair<BlockId, const LetterFeature*>> assigned;
  assigned.reserve(features.size());
  for (const auto& f : features) assigned.emplace_back(assign_block(f.component.bbox, layout), &f);
  std::stable_sort(assigned.begin(), assigned.end(), [](const auto& x, const auto& y) {
    const auto& a = x.second->component;
    const auto& b = y.second->component;
    return std::tie(x.first, a.centroid_row, a.centroid_col, a.id) <
           std::tie(y.first, b.centroid_row, b.centroid_col, b.id);
  });

  std::vector<PooledFeature> out;
  std::size_t i = 0;
  while (i < assigned.size()) {
    std::size_t j = i;
    while (j < assigned.size() && assigned[j].first == assigned[i].first) ++j;
    std::vector<const LetterFeature*> members;
    for (std::size_t k = i; k < j; ++k) members.push_back(assigned[k].second);
    for (auto [b, e] : group_ranges(members.size(), n_p)) {
      std::span<const LetterFeature* const> group(members.data() + b, e - b);
      out.push_back({assigned[i].first, detail::mean_of(group), static_cast<std::uint32_t>(e - b), doc_id});
    }
    i = j;
  }
  return out;
}

/// Extent, layout and pooled features of one document.
struct PooledDocument {
  BlockLayout layout;
  std::vector<PooledFeature> features;
};

inline PooledDocument pool_letters(const std::vector<LetterFeature>& letters, const PoolingSpec& spec,
                                   std::uint32_t doc_id = 0) {
  std::vector<ConnectedComponent> comps;
  comps.reserve(letters.size());
  for (const auto& l : letters) comps.push_back(l.component);
  auto layout = make_layout(text_extent(comps), spec);
  auto pooled = pool_document(letters, layout, spec.n_p, doc_id);
  return {std::move(layout), std::move(pooled)};
}

}  // namespace printtrace

#endif  // PRINTTRACE_POOLING_HPP
