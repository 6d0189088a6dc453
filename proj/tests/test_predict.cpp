#include <gtest/gtest.h>

#include "printtrace/predict.hpp"

using namespace printtrace;

namespace {

std::vector<double> random_vector(Rng& rng, std::size_t n = kApproxDim) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

std::vector<double> noisy(Rng& rng, const std::vector<double>& base, double sigma) {
  auto v = base;
  for (auto& x : v) x += sigma * rng.normal();
  return v;
}

PooledFeature feature(BlockId b, std::vector<double> v) { return {b, std::move(v), 1, 0}; }

// Three printers with one base signature each; docs are noisy copies per block.
struct Fixture {
  std::vector<std::string> labels{"P1", "P2", "P3"};
  std::vector<std::vector<double>> bases;
  std::vector<TrainingDocument> train;
  PoolingSpec spec = PoolingSpec::column(4);

  explicit Fixture(std::uint64_t seed, int docs_per_printer = 3, double sigma = 0.3) {
    Rng rng(seed);
    for (std::size_t p = 0; p < labels.size(); ++p) bases.push_back(random_vector(rng));
    for (std::size_t p = 0; p < labels.size(); ++p)
      for (int d = 0; d < docs_per_printer; ++d) {
        TrainingDocument doc{labels[p], spec, {}};
        for (std::uint32_t b = 0; b < 4; ++b) doc.features.push_back(feature({b, 0}, noisy(rng, bases[p], sigma)));
        train.push_back(std::move(doc));
      }
  }
  ReferenceBank bank() const { return build_bank(train, spec, Variant::Approx); }
};

// Returns preset votes in feature order.
class ScriptedClassifier final : public BlockClassifier {
 public:
  explicit ScriptedClassifier(std::vector<std::optional<FeatureVote>> votes) : votes_(std::move(votes)) {}
  std::optional<FeatureVote> predict(const ReferenceBank&, const PooledFeature& f) const override {
    return votes_.at(f.doc_id);
  }

 private:
  std::vector<std::optional<FeatureVote>> votes_;
};

std::vector<PooledFeature> indexed_features(std::size_t n) {
  std::vector<PooledFeature> fs;
  for (std::uint32_t i = 0; i < n; ++i) fs.push_back({{0, 0}, std::vector<double>(kApproxDim, 0.0), 1, i});
  return fs;
}

}  // namespace

TEST(Pearson, Examples) {
  const std::vector<double> x{1, 2, 3};
  EXPECT_DOUBLE_EQ(pearson_r(x, x), 1.0);
  EXPECT_DOUBLE_EQ(pearson_r(x, std::vector<double>{3, 2, 1}), -1.0);
  EXPECT_DOUBLE_EQ(pearson_r(x, std::vector<double>{1, 3, 2}), 0.5);
  EXPECT_EQ(pearson_r(x, std::vector<double>{5, 5, 5}), 0.0);
  EXPECT_DOUBLE_EQ(pearson_r(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}), 0.8);
}

TEST(Pearson, Errors) {
  EXPECT_THROW(pearson_r(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), InvalidArgument);
  EXPECT_THROW(pearson_r(std::vector<double>{1}, std::vector<double>{1}), InvalidArgument);
}

TEST(Pearson, Properties) {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(300);
    const auto x = random_vector(rng, n), y = random_vector(rng, n);
    const double r = pearson_r(x, y);
    EXPECT_EQ(r, pearson_r(y, x));
    EXPECT_LE(std::abs(r), 1.0 + 1e-12);
    const double a = rng.uniform(-5, 5), b = rng.uniform(0.1, 10);
    std::vector<double> pos(n), neg(n);
    for (std::size_t i = 0; i < n; ++i) {
      pos[i] = a + b * x[i];
      neg[i] = a - b * x[i];
    }
    EXPECT_NEAR(pearson_r(pos, y), r, 1e-12);
    EXPECT_NEAR(pearson_r(neg, y), -r, 1e-12);
    EXPECT_NEAR(dot(standardize(x), standardize(y)), r, 1e-12);
  }
}

TEST(Bank, StructureAndCentroids) {
  Fixture fx(3);
  const auto bank = fx.bank();
  EXPECT_EQ(bank.printers(), fx.labels);
  EXPECT_EQ(bank.entries().size(), 4u);
  for (const auto& [block, list] : bank.entries()) {
    EXPECT_EQ(list.size(), 9u);
    const auto* cents = bank.centroids(block);
    ASSERT_NE(cents, nullptr);
    ASSERT_EQ(cents->size(), 3u);
    for (const auto& c : *cents) {
      std::vector<double> mean(kApproxDim, 0.0);
      int n = 0;
      for (const auto& e : list)
        if (e.printer == c.printer) {
          for (std::size_t i = 0; i < kApproxDim; ++i) mean[i] += e.vector[i];
          ++n;
        }
      for (std::size_t i = 0; i < kApproxDim; i += 13) EXPECT_NEAR(c.vector[i], mean[i] / n, 1e-12);
    }
  }
}

TEST(Bank, CentroidOfIdenticalVectors) {
  Rng rng(4);
  const auto v = round_to_float(random_vector(rng));
  const auto spec = PoolingSpec::column(1);
  std::vector<TrainingDocument> train;
  for (int i = 0; i < 3; ++i) train.push_back({"A", spec, {feature({0, 0}, v)}});
  train.push_back({"B", spec, {feature({0, 0}, random_vector(rng))}});
  const auto bank = build_bank(train, spec, Variant::Approx);
  EXPECT_EQ(bank.centroids({0, 0})->front().vector, v);
}

TEST(Bank, BuildErrors) {
  const auto spec = PoolingSpec::column(2);
  const std::vector<double> v(kApproxDim, 0.5);
  EXPECT_THROW(build_bank({{"A", spec, {feature({0, 0}, v)}}}, spec, Variant::Approx), InvalidArgument);
  EXPECT_THROW(build_bank({{"A", spec, {feature({0, 0}, v)}}, {"B", PoolingSpec::column(3), {feature({0, 0}, v)}}},
                          spec, Variant::Approx),
               InvalidArgument);
  EXPECT_THROW(build_bank({{"A", spec, {feature({0, 0}, v)}}, {"B", spec, {feature({0, 0}, {1.0, 2.0})}}}, spec,
                          Variant::Approx),
               InvalidArgument);
  EXPECT_THROW(parse_predictor("svm"), InvalidArgument);
}

TEST(Correlation, SelfAndAffineMatch) {
  Fixture fx(5);
  const auto bank = fx.bank();
  const auto& entry = bank.block({2, 0})->at(7);
  const auto self = predict_feature_correlation(bank, feature({2, 0}, entry.vector));
  ASSERT_TRUE(self);
  EXPECT_EQ(self->printer, entry.printer);
  EXPECT_NEAR(self->score, 1.0, 1e-12);

  std::vector<double> affine(entry.vector.size());
  for (std::size_t i = 0; i < affine.size(); ++i) affine[i] = 3.0 + 0.25 * entry.vector[i];
  const auto moved = predict_feature_correlation(bank, feature({2, 0}, affine));
  EXPECT_EQ(moved->printer, entry.printer);
  EXPECT_NEAR(moved->score, 1.0, 1e-9);

  EXPECT_FALSE(predict_feature_correlation(bank, feature({9, 0}, entry.vector)));
  EXPECT_FALSE(predict_feature_centroid(bank, feature({9, 0}, entry.vector)));
}

TEST(Correlation, MatchesDoubleLoopOracle) {
  Fixture fx(6, 4, 2.0);
  const auto bank = fx.bank();
  Rng rng(60);
  std::vector<PooledFeature> fs;
  for (int i = 0; i < 100; ++i) {
    const auto p = rng.below(3);
    const std::uint32_t b = static_cast<std::uint32_t>(rng.below(5));  // block 4 is unseen
    fs.push_back(feature({b, 0}, noisy(rng, fx.bases[p], 2.0)));
  }
  CorrelationClassifier clf;
  const auto batched = clf.predict_all(bank, fs);
  ASSERT_EQ(batched.size(), fs.size());
  for (std::size_t i = 0; i < fs.size(); ++i) {
    const auto* list = bank.block(fs[i].block);
    if (!list) {
      EXPECT_FALSE(batched[i]);
      continue;
    }
    std::uint32_t best = 0;
    double best_r = -2.0;
    for (const auto& e : *list) {
      const double r = pearson_r(fs[i].vector, e.vector);
      if (r > best_r || (r == best_r && e.printer < best)) best_r = r, best = e.printer;
    }
    ASSERT_TRUE(batched[i]);
    EXPECT_EQ(batched[i]->printer, best);
    EXPECT_NEAR(batched[i]->score, best_r, 1e-12);
    const auto single = clf.predict(bank, fs[i]);
    EXPECT_EQ(single->printer, batched[i]->printer);
    EXPECT_EQ(single->score, batched[i]->score);
  }
}

TEST(Centroid, MatchesOracleAndSingleVectorBanks) {
  Fixture fx(8, 4, 2.0);
  const auto bank = fx.bank();
  Rng rng(80);
  CentroidClassifier clf;
  for (int i = 0; i < 50; ++i) {
    const auto f = feature({static_cast<std::uint32_t>(rng.below(4)), 0}, noisy(rng, fx.bases[rng.below(3)], 2.0));
    std::uint32_t best = 0;
    double best_r = -2.0;
    for (const auto& c : *bank.centroids(f.block)) {
      const double r = pearson_r(f.vector, c.vector);
      if (r > best_r) best_r = r, best = c.printer;
    }
    const auto vote = clf.predict(bank, f);
    EXPECT_EQ(vote->printer, best);
    EXPECT_NEAR(vote->score, best_r, 1e-12);
  }

  Fixture single(9, 1, 0.5);
  const auto sbank = single.bank();
  CorrelationClassifier corr;
  for (int i = 0; i < 30; ++i) {
    const auto f = feature({static_cast<std::uint32_t>(rng.below(4)), 0}, noisy(rng, single.bases[rng.below(3)], 1.0));
    const auto a = corr.predict(sbank, f), b = clf.predict(sbank, f);
    EXPECT_EQ(a->printer, b->printer);
    EXPECT_NEAR(a->score, b->score, 1e-12);
  }
  const auto& cent = sbank.centroids({1, 0})->at(2);
  EXPECT_EQ(clf.predict(sbank, feature({1, 0}, cent.vector))->printer, 2u);
}

TEST(Correlation, TiesGoToSmallestLabel) {
  Rng rng(12);
  const auto v = random_vector(rng);
  const auto spec = PoolingSpec::column(1);
  const auto bank = build_bank({{"Zeta", spec, {feature({0, 0}, v)}}, {"Alpha", spec, {feature({0, 0}, v)}}}, spec,
                               Variant::Approx);
  const auto vote = predict_feature_correlation(bank, feature({0, 0}, v));
  EXPECT_EQ(bank.printers()[vote->printer], "Alpha");
  const auto doc = predict_document(bank, {feature({0, 0}, v)}, PredictorKind::Centroid);
  EXPECT_EQ(doc.predicted, "Alpha");
}

TEST(Vote, Rules) {
  Fixture fx(13);
  const auto bank = fx.bank();
  std::vector<std::optional<FeatureVote>> votes;
  for (int i = 0; i < 10; ++i) votes.push_back(FeatureVote{0, 0.1});
  for (int i = 0; i < 5; ++i) votes.push_back(FeatureVote{1, 0.99});
  auto doc = predict_document(bank, indexed_features(15), ScriptedClassifier(votes), "d");
  EXPECT_EQ(doc.predicted, "P1");
  EXPECT_EQ(doc.votes, (std::map<std::string, std::uint32_t>{{"P1", 10}, {"P2", 5}}));

  doc = predict_document(bank, indexed_features(1), ScriptedClassifier({FeatureVote{2, 0.3}}));
  EXPECT_EQ(doc.predicted, "P3");

  // 5/5 tie, summed r 4.9 for P1 against 4.7 for P2
  votes.clear();
  for (int i = 0; i < 5; ++i) votes.push_back(FeatureVote{1, 0.94});
  for (int i = 0; i < 5; ++i) votes.push_back(FeatureVote{0, 0.98});
  EXPECT_EQ(predict_document(bank, indexed_features(10), ScriptedClassifier(votes)).predicted, "P1");

  // full tie falls back to the smallest label
  votes = {FeatureVote{2, 0.5}, FeatureVote{1, 0.5}};
  EXPECT_EQ(predict_document(bank, indexed_features(2), ScriptedClassifier(votes)).predicted, "P2");
}

TEST(Vote, AbstentionAndConservation) {
  Fixture fx(14);
  const auto bank = fx.bank();
  const std::vector<std::optional<FeatureVote>> votes{std::nullopt, FeatureVote{1, 0.7}, std::nullopt,
                                                      FeatureVote{1, 0.6}, FeatureVote{0, 0.9}};
  const auto doc = predict_document(bank, indexed_features(5), ScriptedClassifier(votes), "doc");
  EXPECT_EQ(doc.predicted, "P2");
  EXPECT_EQ(doc.abstained, 2u);
  std::uint32_t total = doc.abstained;
  for (const auto& [label, n] : doc.votes) total += n;
  EXPECT_EQ(total, 5u);
  ASSERT_EQ(doc.per_feature.size(), 5u);
  EXPECT_FALSE(doc.per_feature[0].predicted);
  EXPECT_EQ(doc.per_feature[4].predicted, "P1");
  EXPECT_EQ(to_json(doc).dump(),
            R"({"doc_id":"doc","predicted":"P2","votes":{"P1":1,"P2":2},"abstained":2,"per_feature":[)"
            R"({"block":[0,0],"predicted":null,"r":0.0},{"block":[0,0],"predicted":"P2","r":0.7},)"
            R"({"block":[0,0],"predicted":null,"r":0.0},{"block":[0,0],"predicted":"P2","r":0.6},)"
            R"({"block":[0,0],"predicted":"P1","r":0.9}]})");

  EXPECT_THROW(predict_document(bank, indexed_features(2), ScriptedClassifier({std::nullopt, std::nullopt})),
               InvalidArgument);
  std::vector<PooledFeature> wrong{{{0, 0}, std::vector<double>(10, 0.0), 1, 0}};
  EXPECT_THROW(predict_document(bank, wrong, PredictorKind::Correlation), InvalidArgument);
}

TEST(Document, ScaleStableAndDeterministic) {
  Fixture fx(15, 3, 1.5);
  const auto bank = fx.bank();
  Rng rng(150);
  for (auto kind : {PredictorKind::Correlation, PredictorKind::Centroid}) {
    for (int d = 0; d < 10; ++d) {
      std::vector<PooledFeature> fs, scaled;
      const auto p = rng.below(3);
      for (std::uint32_t b = 0; b < 4; ++b) fs.push_back(feature({b, 0}, noisy(rng, fx.bases[p], 1.5)));
      const double c = rng.uniform(0.01, 100.0);
      for (auto f : fs) {
        for (auto& x : f.vector) x *= c;
        scaled.push_back(std::move(f));
      }
      const auto a = predict_document(bank, fs, kind), b = predict_document(bank, scaled, kind);
      ASSERT_EQ(a.per_feature.size(), b.per_feature.size());
      for (std::size_t i = 0; i < a.per_feature.size(); ++i)
        EXPECT_EQ(a.per_feature[i].predicted, b.per_feature[i].predicted);
      EXPECT_EQ(a.predicted, fx.labels[p]);
      EXPECT_EQ(to_json(a).dump(), to_json(predict_document(bank, fs, kind)).dump());
    }
  }
}
