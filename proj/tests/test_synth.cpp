#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "printtrace/pipeline.hpp"
#include "printtrace/synth.hpp"

using namespace printtrace;
namespace fs = std::filesystem;

namespace {

PageParams small_page(GlyphFamily family = GlyphFamily::A) {
  PageParams p;
  p.width = 700;
  p.height = 560;
  p.glyph_rows = 6;
  p.glyph_cols = 9;
  p.margin = 40;
  p.family = family;
  return p;
}

std::vector<double> page_mean_descriptor(const DocumentImage& page) {
  const auto letters = extract_document(page, ExtractionOptions{});
  std::vector<double> mean(kApproxDim, 0.0);
  for (const auto& l : letters)
    for (std::size_t i = 0; i < kApproxDim; ++i) mean[i] += l.descriptor.values()[i];
  for (auto& x : mean) x /= static_cast<double>(letters.size());
  return mean;
}

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d;
}

}  // namespace

TEST(Profile, Deterministic) {
  const auto a = make_printer_profile(42, 3), b = make_printer_profile(42, 3);
  EXPECT_EQ(a.printer_id, b.printer_id);
  EXPECT_EQ(a.orientation_bias, b.orientation_bias);
  EXPECT_EQ(a.bias_drift, b.bias_drift);
  EXPECT_EQ(a.edge_noise_sigma, b.edge_noise_sigma);
  EXPECT_NE(make_printer_profile(43, 3).orientation_bias, a.orientation_bias);
}

TEST(Profile, PairwiseSeparationAndDrift) {
  for (std::uint64_t seed : {1ull, 7ull, 2024ull}) {
    std::vector<PrinterProfile> ps;
    std::set<std::string> ids;
    for (std::uint32_t i = 0; i < 8; ++i) {
      ps.push_back(make_printer_profile(seed, i));
      ids.insert(ps.back().printer_id);
    }
    EXPECT_EQ(ids.size(), 8u);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      for (std::size_t j = i + 1; j < ps.size(); ++j) EXPECT_GE(orientation_l1(ps[i], ps[j]), 0.3);
      const auto& p = ps[i];
      for (int o = 0; o < 4; ++o) {
        EXPECT_GE(p.orientation_bias[o], 0.0);
        EXPECT_LE(p.orientation_bias[o], 1.0);
        EXPECT_GE(p.orientation_bias[o] + p.bias_drift[o], 0.0);
        EXPECT_LE(p.orientation_bias[o] + p.bias_drift[o], 1.0);
      }
      // centres of the first and last of 15 columns
      const auto s0 = p.strengths_at(0.5 / 15), s14 = p.strengths_at(14.5 / 15);
      double largest = 0.0;
      for (int o = 0; o < 4; ++o) largest = std::max(largest, std::abs(s14[o] - s0[o]));
      EXPECT_GE(largest, 0.1) << "seed " << seed << " printer " << i;
    }
  }
}

TEST(Render, DeterministicSixteenBit) {
  const auto profile = make_printer_profile(5, 2);
  const auto a = render_document(profile, small_page(), 1234);
  const auto b = render_document(profile, small_page(), 1234);
  EXPECT_EQ(a.bit_depth(), 16);
  EXPECT_EQ(a.width(), 700);
  EXPECT_EQ(a.height(), 560);
  EXPECT_EQ(encode_pgm(a), encode_pgm(b));
  EXPECT_NE(encode_pgm(a), encode_pgm(render_document(profile, small_page(), 1235)));
}

TEST(Render, NoiselessTruthIsExact) {
  for (auto family : {GlyphFamily::A, GlyphFamily::B}) {
    const auto truth = render_document_with_truth(make_printer_profile(5, 0).without_noise(), small_page(family), 77);
    EXPECT_EQ(truth.glyph_count, 54u);
    const auto bin = binarize(truth.image);
    std::uint32_t count = 0;
    label_image(bin, &count);
    EXPECT_EQ(count, 54u);
  }
}

TEST(Render, GeometryOverflow) {
  auto p = small_page();
  p.glyph_cols = 30;
  EXPECT_THROW(render_document(make_printer_profile(5, 0), p, 1), InvalidArgument);
  p = small_page();
  p.glyph_size = 4;
  EXPECT_THROW(p.validate(), InvalidArgument);
}

TEST(Render, DefaultPageYieldsAboutOneThousandLetters) {
  const auto page = render_document(make_printer_profile(7, 4), PageParams{}, 31337);
  const auto n = static_cast<double>(extract_letters(page, FilterPolicy{}).size());
  EXPECT_GE(n, 950.0);
  EXPECT_LE(n, 1050.0);
}

TEST(Render, PrintersDifferMoreThanPages) {
  // page-mean descriptors: same layout seed across printers, two seeds per printer
  std::vector<std::array<std::vector<double>, 2>> means;
  for (std::uint32_t p = 0; p < 4; ++p) {
    const auto profile = make_printer_profile(7, p);
    means.push_back({page_mean_descriptor(render_document(profile, small_page(), 500)),
                     page_mean_descriptor(render_document(profile, small_page(), 501))});
  }
  double within = 0.0, between = 0.0;
  int nw = 0, nb = 0;
  for (std::size_t p = 0; p < means.size(); ++p) {
    within += l1(means[p][0], means[p][1]);
    ++nw;
    for (std::size_t q = p + 1; q < means.size(); ++q)
      for (int s = 0; s < 2; ++s) {
        between += l1(means[p][s], means[q][s]);
        ++nb;
      }
  }
  EXPECT_GT(between / nb, within / nw);
}

TEST(Corpus, PlanCountsAndSeeds) {
  CorpusConfig cfg;
  cfg.master_seed = 9;
  const auto m = plan_corpus(cfg);
  ASSERT_EQ(m.documents.size(), 120u);
  std::set<std::string> paths;
  std::set<std::uint64_t> seeds;
  for (const auto& d : m.documents) {
    paths.insert(d.path);
    seeds.insert(d.seed);
  }
  EXPECT_EQ(paths.size(), 120u);
  EXPECT_EQ(seeds.size(), 120u);
  EXPECT_EQ(m.documents.front().path, m.documents.front().printer_id + "_A_00.pgm");

  cfg.cross_family_docs_per_printer = 5;
  const auto both = plan_corpus(cfg);
  EXPECT_EQ(both.documents.size(), 160u);
  EXPECT_EQ(both.documents[15].page.family, GlyphFamily::B);
  EXPECT_EQ(both.documents[15].seed, document_seed(9, 0, 0, GlyphFamily::B));

  cfg.printers = 1;
  EXPECT_THROW(plan_corpus(cfg), InvalidArgument);
  cfg.printers = 2;
  cfg.docs_per_printer = 1;
  EXPECT_THROW(plan_corpus(cfg), InvalidArgument);
}

TEST(Corpus, RegenerationIsByteIdentical) {
  const auto dir = fs::temp_directory_path() / "printtrace_synth_corpus";
  fs::remove_all(dir);
  CorpusConfig cfg;
  cfg.printers = 2;
  cfg.docs_per_printer = 2;
  cfg.cross_family_docs_per_printer = 1;
  cfg.page = small_page();
  cfg.master_seed = 3;
  generate_corpus(cfg, dir, 2);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir)) files += e.path().extension() == ".pgm";
  EXPECT_EQ(files, 6u);

  const auto m = load_manifest(dir / "manifest.json");
  EXPECT_EQ(m.master_seed, 3u);
  ASSERT_EQ(m.documents.size(), 6u);
  for (const auto& d : m.documents) {
    const auto stored = detail::read_file_bytes(dir / d.path);
    EXPECT_EQ(encode_pgm(render_entry(m, d)), stored) << d.path;
  }
  EXPECT_THROW(load_manifest(dir / "absent.json"), IoError);
}
