#ifndef PRINTTRACE_PSLTD_HPP
#define PRINTTRACE_PSLTD_HPP

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "printtrace/common.hpp"
#include "printtrace/image.hpp"

// Printer-specific local texture descriptor.
//
// Every interior pixel of a letter crop contributes one 3x3 patch. The eight
// neighbour differences are quantised into five levels (a pent pattern), the
// pattern is split into five one-hot binary patterns, and each binary pattern
// is binned into a 59-bin uniform-pattern histogram. Histograms are grouped by
// which of the four lines through the centre look like a line structure:
//
//   F1   15 orientation subsets (intensity AND gradient similar) x 5 x 59 = 4425
//   F2    4 single orientations + "other" (intensity similar)   x 5 x 59 = 1475
//   F3   15 orientation subsets (gradient similar)              x 5 x 59 = 4425
//   BMPV  3 magnitude patterns                                  x 59     =  177
//
// Every 59-bin block is L1-normalised on its own (or left all-zero).

namespace printtrace {

inline constexpr std::size_t kUniformBins = 59;
inline constexpr std::size_t kPentLevels = 5;
inline constexpr std::size_t kOrientations = 4;
inline constexpr std::size_t kSubsetGroups = 15;
inline constexpr std::size_t kSingleGroups = 5;
inline constexpr std::size_t kMagnitudePatterns = 3;

inline constexpr std::size_t kF1Dim = kSubsetGroups * kPentLevels * kUniformBins;
inline constexpr std::size_t kF2Dim = kSingleGroups * kPentLevels * kUniformBins;
inline constexpr std::size_t kF3Dim = kSubsetGroups * kPentLevels * kUniformBins;
inline constexpr std::size_t kBmpvDim = kMagnitudePatterns * kUniformBins;
inline constexpr std::size_t kFullDim = kF1Dim + kF2Dim + kF3Dim + kBmpvDim;
inline constexpr std::size_t kApproxDim = kF1Dim + kBmpvDim;

static_assert(kF1Dim == 4425 && kF2Dim == 1475 && kF3Dim == 4425 && kBmpvDim == 177);
static_assert(kFullDim == 10502 && kApproxDim == 4602);

inline constexpr std::size_t dimension(Variant v) { return v == Variant::Full ? kFullDim : kApproxDim; }

struct DescriptorParams {
  double t0 = 20.0;
  double t1 = 80.0;
  double g0 = 90.0;  // degrees

  /// Defaults for 8-bit (20/80/90) or 16-bit (13000/50000/90) scans.
  static DescriptorParams for_depth(int bit_depth) {
    if (bit_depth == 16) return {13000.0, 50000.0, 90.0};
    return {20.0, 80.0, 90.0};
  }

  void validate(int bit_depth) const {
    const double full = bit_depth == 16 ? 65536.0 : 256.0;
    if (!(t0 > 0.0 && t0 < t1 && t1 < full))
      throw InvalidArgument("descriptor thresholds must satisfy 0 < T0 < T1 < 2^depth");
    if (!(g0 > 0.0 && g0 <= 180.0)) throw InvalidArgument("G0 must lie in (0, 180] degrees");
  }
};

/// 3x3 intensities, row-major.
using Patch = std::array<std::int32_t, 9>;

/// Neighbour i (clockwise from top-left) as an index into a row-major Patch.
inline constexpr std::array<int, 8> kNeighbourIndex{0, 1, 2, 5, 8, 7, 6, 3};
inline constexpr int kCentre = 4;

/// The two end pixels of the line through the centre at 0, 45, 90 and 135 degrees.
inline constexpr std::array<std::array<int, 2>, kOrientations> kLineEnds{{{3, 5}, {6, 2}, {1, 7}, {0, 8}}};

struct PentPattern {
  std::array<std::uint8_t, 8> codes{};
  friend bool operator==(const PentPattern&, const PentPattern&) = default;
};

struct OrientationFlags {
  std::array<bool, kOrientations> intensity_sim{};
  std::array<bool, kOrientations> gradient_sim{};
};

/// Per-pixel gradient orientation in [0, 180). `state` is 0 for border pixels
/// (undefined), 1 for zero magnitude, 2 for a usable orientation.
struct GradientField {
  int width = 0;
  int height = 0;
  std::vector<double> orientation;
  std::vector<std::uint8_t> state;

  static constexpr std::uint8_t kUndefined = 0;
  static constexpr std::uint8_t kZero = 1;
  static constexpr std::uint8_t kValid = 2;

  std::size_t index(int r, int c) const noexcept { return static_cast<std::size_t>(r) * width + c; }
};

struct GradientSample {
  double orientation = 0.0;
  std::uint8_t state = GradientField::kUndefined;
};

using GradientPatch = std::array<GradientSample, 9>;

inline GradientField gradient_field(const DocumentImage& letter) {
  const int w = letter.width();
  const int h = letter.height();
  GradientField g{w, h, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0),
                  std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, GradientField::kUndefined)};
  for (int r = 1; r + 1 < h; ++r) {
    for (int c = 1; c + 1 < w; ++c) {
      auto p = [&](int dr, int dc) { return static_cast<double>(letter.at(r + dr, c + dc)); };
      const double gx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
      const double gy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
      const auto i = g.index(r, c);
      if (gx == 0.0 && gy == 0.0) {
        g.state[i] = GradientField::kZero;
        continue;
      }
      double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (deg < 0.0) deg += 180.0;
      if (deg >= 180.0) deg -= 180.0;
      g.orientation[i] = deg;
      g.state[i] = GradientField::kValid;
    }
  }
  return g;
}

inline PentPattern quantize_pent(const Patch& patch, const DescriptorParams& params) {
  PentPattern out;
  const double centre = patch[kCentre];
  for (int i = 0; i < 8; ++i) {
    const double d = patch[kNeighbourIndex[i]] - centre;
    std::uint8_t code;
    if (d <= -params.t1)
      code = 0;
    else if (d <= -params.t0)
      code = 1;
    else if (d < params.t0)
      code = 2;
    else if (d < params.t1)
      code = 3;
    else
      code = 4;
    out.codes[i] = code;
  }
  return out;
}

/// One-hot level decomposition: bit i of pattern k is set iff codes[i] == k.
/// Bit 0 is neighbour 0 (top-left).
inline std::array<std::uint8_t, kPentLevels> bpv_split(const PentPattern& pent) {
  std::array<std::uint8_t, kPentLevels> out{};
  for (int i = 0; i < 8; ++i) out[pent.codes[i]] |= static_cast<std::uint8_t>(1u << i);
  return out;
}

inline constexpr int circular_transitions(std::uint8_t p) {
  const std::uint8_t rotated = static_cast<std::uint8_t>((p >> 1) | (p << 7));
  return std::popcount(static_cast<unsigned>(p ^ rotated));
}

namespace detail {
inline constexpr std::array<std::uint8_t, 256> make_uniform_table() {
  std::array<std::uint8_t, 256> table{};
  std::uint8_t next = 0;
  for (int v = 0; v < 256; ++v)
    table[v] = circular_transitions(static_cast<std::uint8_t>(v)) <= 2 ? next++ : static_cast<std::uint8_t>(58);
  return table;
}
inline constexpr auto kUniformTable = make_uniform_table();
}  // namespace detail

/// 58 uniform patterns in ascending numeric order, then the catch-all bin 58.
inline constexpr std::size_t uniform_bin(std::uint8_t pattern) { return detail::kUniformTable[pattern]; }

inline double angular_difference(double a, double b) {
  double d = std::fmod(std::fabs(a - b), 180.0);
  return std::min(d, 180.0 - d);
}

inline OrientationFlags orientation_flags(const Patch& patch, const GradientPatch& grad,
                                          const DescriptorParams& params) {
  OrientationFlags f;
  for (std::size_t o = 0; o < kOrientations; ++o) {
    const std::array<int, 3> line{kLineEnds[o][0], kCentre, kLineEnds[o][1]};
    const auto [lo, hi] = std::minmax({patch[line[0]], patch[line[1]], patch[line[2]]});
    f.intensity_sim[o] = static_cast<double>(hi - lo) <= params.t0;

    bool similar = true;
    for (int i : line) similar = similar && grad[i].state == GradientField::kValid;
    if (similar) {
      double spread = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
          spread = std::max(spread, angular_difference(grad[line[i]].orientation, grad[line[j]].orientation));
      similar = spread <= params.g0;
    }
    f.gradient_sim[o] = similar;
  }
  return f;
}

/// Magnitude patterns against T0, T1 and the mean absolute difference.
inline std::array<std::uint8_t, kMagnitudePatterns> bmpv(const Patch& patch, const DescriptorParams& params) {
  std::array<double, 8> m{};
  double mean = 0.0;
  for (int i = 0; i < 8; ++i) {
    m[i] = std::fabs(static_cast<double>(patch[kNeighbourIndex[i]] - patch[kCentre]));
    mean += m[i];
  }
  mean /= 8.0;
  std::array<std::uint8_t, kMagnitudePatterns> out{};
  if (mean == 0.0) return out;
  for (int i = 0; i < 8; ++i) {
    const auto bit = static_cast<std::uint8_t>(1u << i);
    if (m[i] >= params.t0) out[0] |= bit;
    if (m[i] >= params.t1) out[1] |= bit;
    if (m[i] >= mean) out[2] |= bit;
  }
  return out;
}

class Descriptor {
 public:
  Descriptor(Variant variant, std::vector<double> values) : variant_(variant), values_(std::move(values)) {
    if (values_.size() != dimension(variant_))
      throw InvalidArgument("descriptor length " + std::to_string(values_.size()) + " does not match variant");
  }

  Variant variant() const noexcept { return variant_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<const double> f1() const noexcept { return values().subspan(0, kF1Dim); }
  std::span<const double> f2() const noexcept {
    return variant_ == Variant::Full ? values().subspan(kF1Dim, kF2Dim) : std::span<const double>{};
  }
  std::span<const double> f3() const noexcept {
    return variant_ == Variant::Full ? values().subspan(kF1Dim + kF2Dim, kF3Dim) : std::span<const double>{};
  }
  std::span<const double> bmpv() const noexcept { return values().subspan(values_.size() - kBmpvDim, kBmpvDim); }

  friend bool operator==(const Descriptor&, const Descriptor&) = default;

 private:
  Variant variant_;
  std::vector<double> values_;
};

/// Projection of a full descriptor onto [F1 | BMPV]. Already-approximate input is returned unchanged.
inline Descriptor approx(const Descriptor& d) {
  if (d.variant() == Variant::Approx) return d;
  std::vector<double> v;
  v.reserve(kApproxDim);
  v.insert(v.end(), d.f1().begin(), d.f1().end());
  v.insert(v.end(), d.bmpv().begin(), d.bmpv().end());
  return Descriptor(Variant::Approx, std::move(v));
}

inline void normalize_sub_histograms(std::span<double> values) {
  for (std::size_t start = 0; start < values.size(); start += kUniformBins) {
    double sum = 0.0;
    for (std::size_t i = 0; i < kUniformBins; ++i) sum += values[start + i];
    if (sum > 0.0)
      for (std::size_t i = 0; i < kUniformBins; ++i) values[start + i] /= sum;
  }
}

inline Descriptor extract_psltd(const DocumentImage& letter, const DescriptorParams& params,
                                Variant variant = Variant::Approx) {
  if (letter.width() < 3 || letter.height() < 3) throw InvalidArgument("letter must be at least 3x3");
  params.validate(letter.bit_depth());
  const bool full = variant == Variant::Full;
  const auto grad = gradient_field(letter);

  // Counts laid out in the full order; the approximate variant skips F2 and F3.
  std::vector<double> counts(kFullDim, 0.0);
  constexpr std::size_t f2_base = kF1Dim;
  constexpr std::size_t f3_base = kF1Dim + kF2Dim;
  constexpr std::size_t bmpv_base = kF1Dim + kF2Dim + kF3Dim;
  constexpr std::size_t group_stride = kPentLevels * kUniformBins;

  Patch patch;
  GradientPatch gpatch;
  for (int r = 1; r + 1 < letter.height(); ++r) {
    for (int c = 1; c + 1 < letter.width(); ++c) {
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int k = (dr + 1) * 3 + (dc + 1);
          patch[k] = letter.at(r + dr, c + dc);
          const auto gi = grad.index(r + dr, c + dc);
          gpatch[k] = {grad.orientation[gi], grad.state[gi]};
        }
      }
      const auto bpvs = bpv_split(quantize_pent(patch, params));
      std::array<std::size_t, kPentLevels> bins{};
      for (std::size_t k = 0; k < kPentLevels; ++k) bins[k] = uniform_bin(bpvs[k]);

      const auto flags = orientation_flags(patch, gpatch, params);
      unsigned joint = 0, gradient = 0, single_count = 0, single = 0;
      for (std::size_t o = 0; o < kOrientations; ++o) {
        if (flags.intensity_sim[o] && flags.gradient_sim[o]) joint |= 1u << o;
        if (flags.gradient_sim[o]) gradient |= 1u << o;
        if (flags.intensity_sim[o]) {
          ++single_count;
          single = static_cast<unsigned>(o);
        }
      }
      if (joint)
        for (std::size_t k = 0; k < kPentLevels; ++k)
          counts[(joint - 1) * group_stride + k * kUniformBins + bins[k]] += 1.0;
      if (full) {
        const std::size_t g2 = single_count == 1 ? single : 4;
        for (std::size_t k = 0; k < kPentLevels; ++k)
          counts[f2_base + g2 * group_stride + k * kUniformBins + bins[k]] += 1.0;
        if (gradient)
          for (std::size_t k = 0; k < kPentLevels; ++k)
            counts[f3_base + (gradient - 1) * group_stride + k * kUniformBins + bins[k]] += 1.0;
      }
      const auto mags = bmpv(patch, params);
      for (std::size_t j = 0; j < kMagnitudePatterns; ++j)
        counts[bmpv_base + j * kUniformBins + uniform_bin(mags[j])] += 1.0;
    }
  }

  normalize_sub_histograms(counts);
  Descriptor d(Variant::Full, std::move(counts));
  return full ? d : approx(d);
}

}  // namespace printtrace

#endif  // PRINTTRACE_PSLTD_HPP
