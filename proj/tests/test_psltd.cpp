#include <gtest/gtest.h>

#include <bit>
#include <numeric>

#include "printtrace/psltd.hpp"
#include "printtrace/segmentation.hpp"

using namespace printtrace;

namespace {

const DescriptorParams k8 = DescriptorParams::for_depth(8);

Patch constant_patch(int v) {
  Patch p;
  p.fill(v);
  return p;
}

GradientPatch valid_gradients(double deg) {
  GradientPatch g;
  g.fill({deg, GradientField::kValid});
  return g;
}

DocumentImage random_letter(int w, int h, int bits, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint16_t> px(static_cast<std::size_t>(w) * h);
  const std::uint64_t levels = bits == 8 ? 256 : 65536;
  for (auto& p : px) p = static_cast<std::uint16_t>(rng.below(levels));
  return DocumentImage(w, h, bits, std::move(px));
}

// Smooth blob letter: dark ellipse with soft ramp, for realistic gradients.
DocumentImage blob_letter(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint16_t> px(static_cast<std::size_t>(w) * h);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double dx = (c - w / 2.0) / (w / 3.0), dy = (r - h / 2.0) / (h / 3.0);
      const double v = 40.0 + 200.0 * std::min(1.0, dx * dx + dy * dy) + rng.uniform(-15.0, 15.0);
      px[static_cast<std::size_t>(r) * w + c] = static_cast<std::uint16_t>(std::clamp(v, 0.0, 255.0));
    }
  return DocumentImage(w, h, 8, std::move(px));
}

void expect_normalized(const Descriptor& d) {
  const auto v = d.values();
  for (std::size_t s = 0; s < v.size(); s += kUniformBins) {
    double sum = 0.0;
    for (std::size_t i = 0; i < kUniformBins; ++i) {
      ASSERT_GE(v[s + i], 0.0);
      sum += v[s + i];
    }
    EXPECT_TRUE(sum == 0.0 || std::abs(sum - 1.0) <= 1e-9) << "sub-histogram at " << s << " sums to " << sum;
  }
}

}  // namespace

TEST(Dimensions, ComponentSizes) {
  EXPECT_EQ(kF1Dim, 4425u);
  EXPECT_EQ(kF2Dim, 1475u);
  EXPECT_EQ(kF3Dim, 4425u);
  EXPECT_EQ(kBmpvDim, 177u);
  EXPECT_EQ(dimension(Variant::Full), 10502u);
  EXPECT_EQ(dimension(Variant::Approx), 4602u);
}

TEST(Params, DefaultsAndValidation) {
  EXPECT_EQ(DescriptorParams::for_depth(8).t0, 20.0);
  EXPECT_EQ(DescriptorParams::for_depth(8).t1, 80.0);
  EXPECT_EQ(DescriptorParams::for_depth(16).t0, 13000.0);
  EXPECT_EQ(DescriptorParams::for_depth(16).t1, 50000.0);
  EXPECT_EQ(DescriptorParams::for_depth(16).g0, 90.0);
  EXPECT_THROW((DescriptorParams{80, 20, 90}.validate(8)), InvalidArgument);
  EXPECT_THROW((DescriptorParams{20, 300, 90}.validate(8)), InvalidArgument);
  EXPECT_THROW((DescriptorParams{20, 80, 0}.validate(8)), InvalidArgument);
  EXPECT_THROW((DescriptorParams{20, 80, 181}.validate(8)), InvalidArgument);
  EXPECT_NO_THROW((DescriptorParams{20, 80, 180}.validate(8)));
}

TEST(Gradient, StepEdges) {
  std::vector<std::uint16_t> v(36), h(36);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) {
      v[r * 6 + c] = c < 3 ? 0 : 255;
      h[r * 6 + c] = r < 3 ? 0 : 255;
    }
  const auto gv = gradient_field(DocumentImage(6, 6, 8, v));
  const auto gh = gradient_field(DocumentImage(6, 6, 8, h));
  for (int r = 1; r < 5; ++r) {
    for (int c : {2, 3}) {
      EXPECT_EQ(gv.state[gv.index(r, c)], GradientField::kValid);
      EXPECT_DOUBLE_EQ(gv.orientation[gv.index(r, c)], 0.0);
    }
  }
  for (int c = 1; c < 5; ++c) {
    EXPECT_EQ(gh.state[gh.index(2, c)], GradientField::kValid);
    EXPECT_DOUBLE_EQ(gh.orientation[gh.index(2, c)], 90.0);
  }
  EXPECT_EQ(gv.state[gv.index(0, 3)], GradientField::kUndefined);
  EXPECT_EQ(gv.state[gv.index(2, 1)], GradientField::kZero);
}

TEST(Gradient, ConstantImageHasZeroMagnitude) {
  const auto g = gradient_field(DocumentImage(5, 4, 8, std::vector<std::uint16_t>(20, 9)));
  for (int r = 1; r < 3; ++r)
    for (int c = 1; c < 4; ++c) {
      EXPECT_EQ(g.state[g.index(r, c)], GradientField::kZero);
      EXPECT_EQ(g.orientation[g.index(r, c)], 0.0);
    }
}

TEST(Gradient, OrientationsFoldIntoHalfTurn) {
  const auto g = gradient_field(random_letter(20, 20, 16, 3));
  for (std::size_t i = 0; i < g.orientation.size(); ++i) {
    EXPECT_GE(g.orientation[i], 0.0);
    EXPECT_LT(g.orientation[i], 180.0);
  }
}

TEST(Pent, Bands) {
  EXPECT_EQ(quantize_pent(constant_patch(100), k8).codes, (std::array<std::uint8_t, 8>{2, 2, 2, 2, 2, 2, 2, 2}));
  auto p = constant_patch(100);
  p[0] = 200;  // neighbour 0
  p[1] = 75;   // neighbour 1
  p[2] = 20;   // d = -80
  p[5] = 120;  // d = 20
  p[8] = 81;   // d = -19
  p[7] = 180;  // d = 80
  p[6] = 179;  // d = 79
  p[3] = 0;    // d = -100
  const auto codes = quantize_pent(p, k8).codes;
  EXPECT_EQ(codes, (std::array<std::uint8_t, 8>{4, 1, 0, 3, 2, 4, 3, 0}));
}

TEST(Pent, FullScaleT0ForcesCentreBand) {
  const DescriptorParams wide{256.0, 257.0, 90.0};
  Rng rng(9);
  for (int t = 0; t < 500; ++t) {
    Patch p;
    for (auto& x : p) x = static_cast<std::int32_t>(rng.below(256));
    for (auto c : quantize_pent(p, wide).codes) EXPECT_EQ(c, 2);
  }
}

TEST(Bpv, OneHotSplit) {
  PentPattern all2;
  all2.codes.fill(2);
  const auto b = bpv_split(all2);
  EXPECT_EQ(b[2], 0xFF);
  EXPECT_EQ(b[0] | b[1] | b[3] | b[4], 0);

  // bit i is neighbour i: codes [0,1,2,3,4,4,3,2] set bits 4 and 5 of BPV_4
  const PentPattern p{{0, 1, 2, 3, 4, 4, 3, 2}};
  const auto s = bpv_split(p);
  EXPECT_EQ(s[4], 0x30);
  EXPECT_EQ(s[0], 0x01);
  EXPECT_EQ(s[3], 0x48);

  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    PentPattern q;
    for (auto& c : q.codes) c = static_cast<std::uint8_t>(rng.below(5));
    const auto parts = bpv_split(q);
    int pop = 0, uni = 0;
    for (auto x : parts) {
      pop += std::popcount(x);
      uni |= x;
    }
    EXPECT_EQ(pop, 8);
    EXPECT_EQ(uni, 0xFF);
  }
}

TEST(Uniform, ExhaustiveEnumeration) {
  // independent enumeration: count 0/1 changes around the ring of 8 bits
  std::vector<int> uniform_values;
  for (int v = 0; v < 256; ++v) {
    int changes = 0;
    for (int i = 0; i < 8; ++i) changes += ((v >> i) & 1) != ((v >> ((i + 1) % 8)) & 1);
    if (changes <= 2) uniform_values.push_back(v);
  }
  ASSERT_EQ(uniform_values.size(), 58u);
  std::set<std::size_t> bins;
  for (int v = 0; v < 256; ++v) {
    const auto bin = uniform_bin(static_cast<std::uint8_t>(v));
    const auto it = std::find(uniform_values.begin(), uniform_values.end(), v);
    if (it != uniform_values.end()) {
      EXPECT_EQ(bin, static_cast<std::size_t>(it - uniform_values.begin()));
      bins.insert(bin);
    } else {
      EXPECT_EQ(bin, 58u) << v;
    }
  }
  EXPECT_EQ(bins.size(), 58u);
  EXPECT_EQ(uniform_bin(0x00), 0u);
  EXPECT_EQ(uniform_bin(0xFF), 57u);
  EXPECT_EQ(uniform_bin(0x55), 58u);
}

TEST(Orientation, ConstantPatch) {
  GradientPatch zero;
  zero.fill({0.0, GradientField::kZero});
  const auto f = orientation_flags(constant_patch(7), zero, k8);
  for (std::size_t o = 0; o < 4; ++o) {
    EXPECT_TRUE(f.intensity_sim[o]);
    EXPECT_FALSE(f.gradient_sim[o]);
  }
}

TEST(Orientation, VerticalStroke) {
  Patch p = constant_patch(255);
  p[1] = p[4] = p[7] = 0;
  const auto f = orientation_flags(p, valid_gradients(0.0), k8);
  EXPECT_EQ(f.intensity_sim, (std::array<bool, 4>{false, false, true, false}));
}

TEST(Orientation, GradientTolerance) {
  auto g = valid_gradients(0.0);
  g[1].orientation = 10.0;
  g[4].orientation = 20.0;
  g[7].orientation = 30.0;
  EXPECT_TRUE(orientation_flags(constant_patch(0), g, k8).gradient_sim[2]);
  const DescriptorParams tight{20, 80, 15};
  EXPECT_FALSE(orientation_flags(constant_patch(0), g, tight).gradient_sim[2]);
  // circular: 5 and 175 are 10 degrees apart
  g[1].orientation = 5.0;
  g[4].orientation = 175.0;
  g[7].orientation = 0.0;
  EXPECT_TRUE(orientation_flags(constant_patch(0), g, tight).gradient_sim[2]);
  g[4].state = GradientField::kZero;
  EXPECT_FALSE(orientation_flags(constant_patch(0), g, k8).gradient_sim[2]);
  EXPECT_DOUBLE_EQ(angular_difference(5.0, 175.0), 10.0);
  EXPECT_DOUBLE_EQ(angular_difference(0.0, 90.0), 90.0);
}

TEST(Bmpv, Rules) {
  const auto zero = bmpv(constant_patch(50), k8);
  EXPECT_EQ(zero, (std::array<std::uint8_t, 3>{0, 0, 0}));

  auto p = constant_patch(100);
  p[kNeighbourIndex[3]] = 200;
  const auto one = bmpv(p, k8);
  EXPECT_EQ(one[0], 1 << 3);
  EXPECT_EQ(one[1], 1 << 3);

  // m = {10 x 7, 90}: mean 20, only the 90 neighbour reaches it
  Patch q = constant_patch(100);
  for (int i = 0; i < 8; ++i) q[kNeighbourIndex[i]] = i == 5 ? 190 : 110;
  const auto m = bmpv(q, k8);
  EXPECT_EQ(m[2], 1 << 5);
  EXPECT_EQ(m[0], 1 << 5);
  EXPECT_EQ(m[1], 1 << 5);
}

TEST(Extract, Lengths) {
  const auto letter = blob_letter(20, 30, 1);
  EXPECT_EQ(extract_psltd(letter, k8, Variant::Full).size(), 10502u);
  EXPECT_EQ(extract_psltd(letter, k8, Variant::Approx).size(), 4602u);
  EXPECT_THROW(extract_psltd(DocumentImage(3, 2 + 1, 8, std::vector<std::uint16_t>(9)), DescriptorParams{300, 400, 90}),
               InvalidArgument);
}

TEST(Extract, ConstantLetterTrace) {
  const DocumentImage letter(12, 9, 8, std::vector<std::uint16_t>(108, 128));
  const auto d = extract_psltd(letter, k8, Variant::Full);
  for (double x : d.f1()) EXPECT_EQ(x, 0.0);
  for (double x : d.f3()) EXPECT_EQ(x, 0.0);
  // every patch sees four flat lines, so F2 uses the "other" group only
  const auto f2 = d.f2();
  constexpr std::size_t group = kPentLevels * kUniformBins;
  for (std::size_t i = 0; i < 4 * group; ++i) EXPECT_EQ(f2[i], 0.0);
  for (std::size_t k = 0; k < kPentLevels; ++k) {
    const auto sub = f2.subspan(4 * group + k * kUniformBins, kUniformBins);
    const std::size_t hot = k == 2 ? uniform_bin(0xFF) : uniform_bin(0x00);
    for (std::size_t b = 0; b < kUniformBins; ++b) EXPECT_EQ(sub[b], b == hot ? 1.0 : 0.0);
  }
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t b = 0; b < kUniformBins; ++b)
      EXPECT_EQ(d.bmpv()[j * kUniformBins + b], b == uniform_bin(0x00) ? 1.0 : 0.0);
  expect_normalized(d);
}

TEST(Extract, NormalizationOnRandomLetters) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    expect_normalized(extract_psltd(random_letter(9 + s, 14, 8, s), k8, Variant::Full));
    expect_normalized(extract_psltd(blob_letter(25, 40, s), k8, Variant::Full));
    expect_normalized(extract_psltd(random_letter(12, 12, 16, s), DescriptorParams::for_depth(16), Variant::Full));
  }
}

TEST(Extract, Deterministic) {
  const auto letter = blob_letter(30, 40, 8);
  EXPECT_EQ(extract_psltd(letter, k8, Variant::Full), extract_psltd(letter, k8, Variant::Full));
}

TEST(Extract, TranslationCovariance) {
  const auto letter = blob_letter(18, 26, 5);
  const auto expected = extract_psltd(letter, k8, Variant::Full);
  for (auto [dr, dc] : {std::pair{0, 0}, std::pair{7, 3}, std::pair{40, 55}}) {
    const int w = 100, h = 90;
    std::vector<std::uint16_t> px(static_cast<std::size_t>(w) * h, 250);
    for (int r = 0; r < letter.height(); ++r)
      for (int c = 0; c < letter.width(); ++c) px[static_cast<std::size_t>(r + dr) * w + c + dc] = letter.at(r, c);
    const DocumentImage page(w, h, 8, px);
    const auto crop = crop_letter(page, BoundingBox{dr, dc, dr + letter.height() - 1, dc + letter.width() - 1});
    ASSERT_TRUE(crop);
    EXPECT_EQ(extract_psltd(*crop, k8, Variant::Full), expected);
  }
}

TEST(Approx, Projection) {
  const auto full = extract_psltd(blob_letter(22, 31, 2), k8, Variant::Full);
  const auto a = approx(full);
  EXPECT_EQ(a.size(), 4602u);
  EXPECT_EQ(approx(a), a);
  EXPECT_TRUE(std::equal(a.f1().begin(), a.f1().end(), full.f1().begin()));
  EXPECT_TRUE(std::equal(a.bmpv().begin(), a.bmpv().end(), full.bmpv().begin()));
  EXPECT_EQ(a, extract_psltd(blob_letter(22, 31, 2), k8, Variant::Approx));
}

TEST(Descriptor, RejectsWrongLength) {
  EXPECT_THROW(Descriptor(Variant::Approx, std::vector<double>(10502)), InvalidArgument);
}
