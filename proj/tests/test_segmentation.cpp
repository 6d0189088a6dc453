#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>
#include <tuple>

#include "printtrace/segmentation.hpp"
#include "printtrace/synth.hpp"

using namespace printtrace;

namespace {

BinaryImage make_binary(int w, int h, const std::vector<std::pair<int, int>>& ink) {
  BinaryImage b{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, 0)};
  for (auto [r, c] : ink) b.bits[static_cast<std::size_t>(r) * w + c] = 1;
  return b;
}

ConnectedComponent comp_with_area(std::uint32_t id, std::int64_t area, int width = 20, int height = 40) {
  ConnectedComponent c;
  c.id = id;
  c.area = area;
  c.bbox = {0, 0, height - 1, width - 1};
  return c;
}

// Flood fill with an explicit stack; components as sorted pixel sets.
std::set<std::vector<int>> flood_fill_oracle(const BinaryImage& b) {
  std::vector<int> seen(b.bits.size(), 0);
  std::set<std::vector<int>> out;
  for (int r = 0; r < b.height; ++r)
    for (int c = 0; c < b.width; ++c) {
      const int start = r * b.width + c;
      if (!b.bits[start] || seen[start]) continue;
      std::vector<int> stack{start}, pixels;
      seen[start] = 1;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        pixels.push_back(p);
        const int pr = p / b.width, pc = p % b.width;
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = pr + dr, nc = pc + dc;
            if (nr < 0 || nc < 0 || nr >= b.height || nc >= b.width) continue;
            const int q = nr * b.width + nc;
            if (b.bits[q] && !seen[q]) {
              seen[q] = 1;
              stack.push_back(q);
            }
          }
      }
      std::sort(pixels.begin(), pixels.end());
      out.insert(pixels);
    }
  return out;
}

}  // namespace

TEST(Binarize, AllWhiteIsBackground) {
  const DocumentImage img(5, 5, 8, std::vector<std::uint16_t>(25, 255));
  EXPECT_EQ(binarize(img).ink_count(), 0u);
  EXPECT_EQ(otsu_threshold(img), 255u);
}

TEST(Binarize, TwoLevelSplit) {
  std::vector<std::uint16_t> px(25, 255);
  for (int i : {0, 6, 12, 18, 24}) px[i] = 0;
  const auto bin = binarize(DocumentImage(5, 5, 8, px));
  EXPECT_EQ(bin.ink_count(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(bin.at(i, i), 1);
}

TEST(Binarize, RecoversSyntheticInkMask) {
  PageParams page;
  page.width = 800;
  page.height = 600;
  page.glyph_rows = 8;
  page.glyph_cols = 10;
  page.margin = 60;
  const auto rendered = render_document_with_truth(make_printer_profile(3, 0), page, 99);
  const auto bin = binarize(rendered.image);
  std::size_t truth = 0, agree = 0;
  for (std::size_t i = 0; i < bin.bits.size(); ++i) {
    truth += rendered.ink_mask[i];
    agree += bin.bits[i] == rendered.ink_mask[i];
  }
  const double ink = static_cast<double>(bin.ink_count());
  EXPECT_NEAR(ink, static_cast<double>(truth), 0.02 * static_cast<double>(truth));
  EXPECT_EQ(agree, bin.bits.size());
}

TEST(Label, SingleSquare) {
  std::vector<std::pair<int, int>> ink;
  for (int r = 2; r < 5; ++r)
    for (int c = 3; c < 6; ++c) ink.emplace_back(r, c);
  const auto comps = label_components(make_binary(10, 10, ink));
  ASSERT_EQ(comps.size(), 1u);
  EXPECT_EQ(comps[0].area, 9);
  EXPECT_EQ(comps[0].bbox, (BoundingBox{2, 3, 4, 5}));
  EXPECT_DOUBLE_EQ(comps[0].centroid_row, 3.0);
  EXPECT_DOUBLE_EQ(comps[0].centroid_col, 4.0);
}

TEST(Label, DiagonalNeighboursJoin) {
  EXPECT_EQ(label_components(make_binary(4, 4, {{1, 1}, {2, 2}})).size(), 1u);
  EXPECT_EQ(label_components(make_binary(4, 4, {{1, 2}, {2, 1}})).size(), 1u);
  EXPECT_EQ(label_components(make_binary(4, 4, {{0, 0}, {2, 2}})).size(), 2u);
}

TEST(Label, BlankPageIsEmpty) { EXPECT_TRUE(label_components(make_binary(6, 6, {})).empty()); }

TEST(Label, MatchesFloodFillOnRandomImages) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    BinaryImage b{64, 64, std::vector<std::uint8_t>(64 * 64)};
    const double density = 0.2 + 0.4 * rng.uniform();
    for (auto& bit : b.bits) bit = rng.uniform() < density ? 1 : 0;
    std::uint32_t count = 0;
    const auto labels = label_image(b, &count);
    std::vector<std::vector<int>> groups(count);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      ASSERT_EQ(labels[i] != 0, b.bits[i] != 0);
      if (labels[i]) groups[labels[i] - 1].push_back(static_cast<int>(i));
    }
    const std::set<std::vector<int>> ours(groups.begin(), groups.end());
    ASSERT_EQ(ours, flood_fill_oracle(b)) << "trial " << trial;

    const auto comps = label_components(b);
    ASSERT_EQ(comps.size(), count);
    std::int64_t total = 0;
    for (const auto& c : comps) {
      total += c.area;
      EXPECT_LE(c.area, c.bbox.area());
    }
    EXPECT_EQ(static_cast<std::size_t>(total), b.ink_count());
    EXPECT_TRUE(std::is_sorted(comps.begin(), comps.end(), [](const auto& x, const auto& y) {
      return std::tie(x.bbox.row_min, x.bbox.col_min, x.id) < std::tie(y.bbox.row_min, y.bbox.col_min, y.id);
    }));
  }
}

TEST(Filter, MedianBounds) {
  const std::vector<ConnectedComponent> same{comp_with_area(0, 10), comp_with_area(1, 10), comp_with_area(2, 10)};
  EXPECT_EQ(filter_components(same, {}).size(), 3u);

  const std::vector<ConnectedComponent> big{comp_with_area(0, 10), comp_with_area(1, 10), comp_with_area(2, 41)};
  const auto kept = filter_components(big, {});
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].id, 0u);
  EXPECT_EQ(kept[1].id, 1u);

  const std::vector<ConnectedComponent> edge{comp_with_area(0, 10), comp_with_area(1, 10), comp_with_area(2, 40),
                                             comp_with_area(3, 5), comp_with_area(4, 4)};
  const auto e = filter_components(edge, {});
  EXPECT_EQ(e.size(), 4u);  // median 10: 40 and 5 stay, 4 goes
}

TEST(Filter, LowerMedianForEvenCounts) {
  EXPECT_EQ(median_area({comp_with_area(0, 8), comp_with_area(1, 2), comp_with_area(2, 4), comp_with_area(3, 100)}), 4);
}

TEST(Filter, WidthAndHeightBounds) {
  auto policy = FilterPolicy::with_letter_bounds();
  std::vector<ConnectedComponent> comps{comp_with_area(0, 100, 12, 40), comp_with_area(1, 100, 20, 40),
                                        comp_with_area(2, 100, 20, 101), comp_with_area(3, 100, 90, 30)};
  const auto kept = filter_components(comps, policy);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].id, 1u);
  EXPECT_EQ(kept[1].id, 3u);
}

TEST(Filter, EmptyInputAndCachedMedian) {
  EXPECT_TRUE(filter_components({}, {}).empty());
  const std::vector<ConnectedComponent> comps{comp_with_area(0, 3), comp_with_area(1, 10), comp_with_area(2, 12),
                                              comp_with_area(3, 30), comp_with_area(4, 41)};
  const auto median = median_area(comps);
  const auto once = filter_components_with_median(comps, {}, median);
  const auto twice = filter_components_with_median(once, {}, median);
  ASSERT_EQ(once.size(), twice.size());
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_EQ(once[i].id, twice[i].id);
}

TEST(Filter, PolicyValidation) {
  FilterPolicy p;
  p.area_median_low = 4.0;
  p.area_median_high = 0.5;
  EXPECT_THROW(p.validate(), InvalidArgument);
  FilterPolicy q;
  q.width_range = std::pair{90, 15};
  EXPECT_THROW(q.validate(), InvalidArgument);
}

TEST(Crop, ExactPixelsAndOrigin) {
  std::vector<std::uint16_t> px(100);
  for (int i = 0; i < 100; ++i) px[i] = static_cast<std::uint16_t>(i);
  const DocumentImage img(10, 10, 8, px);
  const auto crop = crop_letter(img, BoundingBox{0, 0, 2, 2});
  ASSERT_TRUE(crop);
  EXPECT_EQ(crop->width(), 3);
  EXPECT_EQ(crop->at(2, 2), 22);
  const auto inner = crop_letter(img, BoundingBox{4, 5, 7, 9});
  ASSERT_TRUE(inner);
  EXPECT_EQ(inner->origin_row(), 4);
  EXPECT_EQ(inner->origin_col(), 5);
  EXPECT_EQ(inner->at(0, 0), 45);
  const auto again = crop_letter(*inner, BoundingBox{0, 0, inner->height() - 1, inner->width() - 1});
  ASSERT_TRUE(again);
  EXPECT_EQ(*again, *inner);
}

TEST(Crop, TooSmallAndOutside) {
  const DocumentImage img(10, 10, 8, std::vector<std::uint16_t>(100));
  EXPECT_FALSE(crop_letter(img, BoundingBox{0, 0, 1, 1}));
  EXPECT_THROW(crop_letter(img, BoundingBox{8, 8, 10, 10}), InvalidArgument);
}

TEST(Csv, HeaderAndRows) {
  ConnectedComponent c = comp_with_area(7, 33);
  c.bbox = {1, 2, 3, 4};
  std::ostringstream out;
  write_components_csv(out, {c});
  EXPECT_EQ(out.str(), "id,row_min,col_min,row_max,col_max,area\n7,1,2,3,4,33\n");
}

TEST(Segmentation, NoiselessPageHasExactGlyphCount) {
  PageParams page;
  page.width = 900;
  page.height = 700;
  page.glyph_rows = 9;
  page.glyph_cols = 12;
  page.margin = 60;
  for (auto family : {GlyphFamily::A, GlyphFamily::B}) {
    page.family = family;
    const auto img = render_document(make_printer_profile(11, 2).without_noise(), page, 5);
    EXPECT_EQ(label_components(binarize(img)).size(), 108u);
    EXPECT_EQ(extract_letters(img, {}).size(), 108u);
  }
}

TEST(Segmentation, DeterministicOrdering) {
  PageParams page;
  page.width = 600;
  page.height = 500;
  page.glyph_rows = 6;
  page.glyph_cols = 8;
  page.margin = 50;
  const auto img = render_document(make_printer_profile(1, 1), page, 77);
  const auto a = extract_letters(img, {});
  const auto b = extract_letters(img, {});
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].bbox, b[i].bbox);
  }
}
