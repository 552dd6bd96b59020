#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "dyntask/data.hpp"
#include "dyntask/errors.hpp"
#include "helpers.hpp"

using namespace dyntask;

namespace {

SynthSpec small_spec() {
  SynthSpec s;
  s.k_id = 6;
  s.k_expr = 7;
  s.per_cell = 4;
  s.height = 12;
  s.width = 12;
  s.seed = 3;
  return s;
}

std::vector<std::size_t> all_records(const Dataset& d) {
  std::vector<std::size_t> v(d.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

// Nearest class-mean accuracy in pixel space. For expressions each image
// first has its identity's mean image removed.
double nearest_prototype_accuracy(Dataset d, bool by_identity) {
  const std::size_t k = by_identity ? d.k_id : d.k_expr;
  const std::size_t n = d.images[0].numel();
  if (!by_identity) {
    std::vector<std::vector<double>> id_mean(d.k_id, std::vector<double>(n, 0.0));
    std::vector<std::size_t> id_count(d.k_id, 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      ++id_count[d.records[i].identity];
      for (std::size_t p = 0; p < n; ++p) id_mean[d.records[i].identity][p] += d.images[i][p];
    }
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t p = 0; p < n; ++p)
        d.images[i][p] -= id_mean[d.records[i].identity][p] / static_cast<double>(id_count[d.records[i].identity]);
  }
  std::vector<std::vector<double>> mean(k, std::vector<double>(n, 0.0));
  std::vector<std::size_t> count(k, 0);
  auto label = [&](std::size_t i) { return by_identity ? d.records[i].identity : d.records[i].expression; };
  for (std::size_t i = 0; i < d.size(); ++i) {
    ++count[label(i)];
    for (std::size_t p = 0; p < n; ++p) mean[label(i)][p] += d.images[i][p];
  }
  for (std::size_t c = 0; c < k; ++c)
    for (double& v : mean[c]) v /= static_cast<double>(count[c]);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < k; ++c) {
      double s = 0;
      for (std::size_t p = 0; p < n; ++p) s += (d.images[i][p] - mean[c][p]) * (d.images[i][p] - mean[c][p]);
      if (s < best_d) best_d = s, best = c;
    }
    correct += best == label(i);
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

}  // namespace

TEST(Synth, DefaultSpecRowCount) {
  SynthSpec s;
  s.height = 8;
  s.width = 8;
  EXPECT_EQ(generate_synthetic(s).size(), 1400u);
}

TEST(Synth, NoiselessIsDeterministicPerCell) {
  SynthSpec s = small_spec();
  s.noise_sigma = 0;
  EXPECT_EQ(synth_image(s, 2, 3, 0), synth_image(s, 2, 3, 1));
  s.noise_sigma = 0.1;
  EXPECT_NE(synth_image(s, 2, 3, 0), synth_image(s, 2, 3, 1));
  EXPECT_EQ(synth_image(s, 2, 3, 1), synth_image(s, 2, 3, 1));
  for (double v : synth_image(s, 1, 1, 1).raw()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Synth, NoiselessIsNearestPrototypeSeparable) {
  SynthSpec s;
  s.noise_sigma = 0;
  s.per_cell = 2;
  Dataset d = generate_synthetic(s);
  EXPECT_EQ(nearest_prototype_accuracy(d, true), 1.0);
  EXPECT_EQ(nearest_prototype_accuracy(d, false), 1.0);
}

TEST(Synth, SpecValidation) {
  SynthSpec s = small_spec();
  s.noise_sigma = -1;
  EXPECT_THROW(s.validate(), ConfigError);
  s = small_spec();
  s.per_cell = 0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Manifest, RoundTripAndCounts) {
  auto dir = testutil::temp_dir("manifest");
  SynthSpec s = small_spec();
  Dataset gen = generate_synthetic(s, dir);
  Dataset back = load_manifest(dir);
  ASSERT_EQ(back.size(), gen.size());
  EXPECT_EQ(back.k_id, s.k_id);
  EXPECT_EQ(back.k_expr, s.k_expr);
  for (std::size_t i = 0; i < gen.size(); ++i) {
    EXPECT_EQ(back.records[i].identity, gen.records[i].identity);
    EXPECT_EQ(back.records[i].expression, gen.records[i].expression);
    // f32 container
    EXPECT_LT(testutil::max_abs_diff(back.images[i], gen.images[i]), 1e-6);
  }
  for (const auto& row : back.cell_counts())
    for (std::size_t c : row) EXPECT_EQ(c, s.per_cell);
  EXPECT_NE(back.summary().find("Ha"), std::string::npos);
}

TEST(Manifest, BadLabelNamesLine) {
  auto dir = testutil::temp_dir("manifest_bad");
  Dataset d = generate_synthetic(small_spec(), dir);
  std::vector<SampleRecord> recs = d.records;
  recs[4].expression = 9;
  write_manifest(dir / "manifest.csv", recs);
  try {
    load_manifest(dir, 6, 7);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 6"), std::string::npos) << e.what();
  }
}

TEST(Manifest, DanglingLocatorAndMissingFiles) {
  auto dir = testutil::temp_dir("manifest_dangling");
  Dataset d = generate_synthetic(small_spec(), dir);
  std::vector<SampleRecord> recs = d.records;
  recs[2].index = 100000;
  write_manifest(dir / "manifest.csv", recs);
  EXPECT_THROW(load_manifest(dir, 6, 7), DataError);
  EXPECT_THROW(load_manifest(testutil::temp_dir("manifest_empty")), DataError);
}

TEST(Container, BadMagicAndTruncation) {
  auto dir = testutil::temp_dir("container");
  std::vector<Tensor> imgs{testutil::random_tensor({1, 3, 4}, 1), testutil::random_tensor({1, 3, 4}, 2)};
  write_container(dir / "x.tnsc", imgs);
  auto back = read_container(dir / "x.tnsc");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].shape(), (Shape{1, 3, 4}));
  std::string bytes;
  {
    std::ifstream in(dir / "x.tnsc", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(dir / "t.tnsc", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 5);
  }
  EXPECT_THROW(read_container(dir / "t.tnsc"), FormatError);
  bytes[0] = 'Q';
  {
    std::ofstream out(dir / "m.tnsc", std::ios::binary);
    out << bytes;
  }
  EXPECT_THROW(read_container(dir / "m.tnsc"), FormatError);
}

TEST(Split, HoldoutPerCellIsDisjointAndCovering) {
  Dataset d = generate_synthetic(small_spec());
  Split sp = split_holdout(d, 1, 5);
  EXPECT_EQ(sp.test.size(), 6u * 7u);
  std::set<std::size_t> seen(sp.train.begin(), sp.train.end());
  for (std::size_t t : sp.test) EXPECT_TRUE(seen.insert(t).second);
  EXPECT_EQ(seen.size(), d.size());
  Split again = split_holdout(d, 1, 5);
  EXPECT_EQ(sp.test, again.test);
}

TEST(Batches, DeterministicPartitionAndStratified) {
  Dataset d = generate_synthetic(small_spec());
  auto pool = all_records(d);
  BatchStream a(d, pool, 10, 9, true), b(d, pool, 10, 9, true);
  const std::size_t per = a.batches_per_epoch();
  EXPECT_EQ(per, (d.size() + 9) / 10);
  for (int epoch = 0; epoch < 100; ++epoch) {
    std::vector<std::size_t> seen;
    std::size_t lo = SIZE_MAX, hi = 0;
    for (std::size_t i = 0; i < per; ++i) {
      auto x = a.next();
      ASSERT_EQ(x, b.next());
      lo = std::min(lo, x.size());
      hi = std::max(hi, x.size());
      std::set<std::size_t> ids;
      for (std::size_t r : x) ids.insert(d.records[r].identity);
      ASSERT_GE(ids.size(), 2u);
      seen.insert(seen.end(), x.begin(), x.end());
    }
    EXPECT_LE(hi - lo, 1u);
    std::sort(seen.begin(), seen.end());
    ASSERT_EQ(seen, pool);
  }
}

TEST(Batches, OversizedBatchIsRejected) {
  Dataset d = generate_synthetic(small_spec());
  EXPECT_THROW(BatchStream(d, {0, 1, 2}, 10, 1, false), ConfigError);
}

TEST(Pairs, CountsFoldsAndLabels) {
  Dataset d = generate_synthetic(small_spec());
  PairSet ps = build_pairs(d, all_records(d), 300, 300, 10, 4);
  ASSERT_EQ(ps.pairs.size(), 600u);
  std::vector<std::size_t> per_fold(10, 0), pos(10, 0);
  for (const Pair& p : ps.pairs) {
    EXPECT_EQ(p.same, d.records[p.a].identity == d.records[p.b].identity);
    EXPECT_NE(p.a, p.b);
    ++per_fold[p.fold];
    pos[p.fold] += p.same;
  }
  for (std::size_t f = 0; f < 10; ++f) {
    EXPECT_EQ(per_fold[f], 60u);
    EXPECT_GT(pos[f], 0u);
    EXPECT_LT(pos[f], 60u);
  }
  PairSet again = build_pairs(d, all_records(d), 300, 300, 10, 4);
  for (std::size_t i = 0; i < ps.pairs.size(); ++i) {
    EXPECT_EQ(ps.pairs[i].a, again.pairs[i].a);
    EXPECT_EQ(ps.pairs[i].fold, again.pairs[i].fold);
  }
}

TEST(Pairs, UnevenFoldsDifferByOne) {
  Dataset d = generate_synthetic(small_spec());
  PairSet ps = build_pairs(d, all_records(d), 23, 30, 7, 1);
  std::vector<std::size_t> per_fold(7, 0);
  for (const Pair& p : ps.pairs) ++per_fold[p.fold];
  auto [lo, hi] = std::minmax_element(per_fold.begin(), per_fold.end());
  EXPECT_LE(*hi - *lo, 1u);
}

TEST(Pairs, SingletonIdentityIsDataError) {
  Dataset d = generate_synthetic(small_spec());
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.records[i].identity != 2 || pool.empty() ||
        std::none_of(pool.begin(), pool.end(), [&](std::size_t r) { return d.records[r].identity == 2; }))
      pool.push_back(i);
  EXPECT_THROW(build_pairs(d, pool, 20, 20, 2, 1), DataError);
}

TEST(Pairs, CsvRoundTrip) {
  auto dir = testutil::temp_dir("pairs");
  Dataset d = generate_synthetic(small_spec());
  PairSet ps = build_pairs(d, all_records(d), 20, 20, 4, 2);
  write_pairs(dir / "p.csv", ps);
  PairSet back = read_pairs(dir / "p.csv", d);
  ASSERT_EQ(back.pairs.size(), ps.pairs.size());
  EXPECT_EQ(back.folds, 4u);
  for (std::size_t i = 0; i < ps.pairs.size(); ++i) EXPECT_EQ(back.pairs[i].b, ps.pairs[i].b);
}

TEST(AuthSet, QuadrantLayoutFromPublishedCounts) {
  SynthSpec s = small_spec();
  s.per_cell = 10;
  Dataset d = generate_synthetic(s);
  const QuadrantCounts want{114, 1062, 494, 429};
  auto set = build_auth_set(d, all_records(d), {kHappy, kSurprise}, want, 6);
  QuadrantCounts got{};
  for (const AuthSample& a : set) {
    ++got[quadrant_of(a)];
    EXPECT_EQ(a.same_identity, d.records[a.user].identity == d.records[a.reference].identity);
    EXPECT_EQ(a.user_expression, d.records[a.user].expression);
    EXPECT_EQ(a.expression_match, a.user_expression == a.required_expression);
    EXPECT_TRUE(a.required_expression == kHappy || a.required_expression == kSurprise);
  }
  EXPECT_EQ(got, want);
  EXPECT_EQ(set.size(), 114u + 1062 + 494 + 429);
}

TEST(AuthSet, HappyWhenHappyRequiredIsExTrue) {
  AuthSample a;
  a.user_expression = kHappy;
  a.required_expression = kHappy;
  a.expression_match = true;
  a.same_identity = true;
  EXPECT_EQ(quadrant_of(a), 0u);
  EXPECT_STREQ(kExpressionNames[kHappy], "Happy");
  EXPECT_STREQ(kExpressionNames[kSurprise], "Surprise");
}

TEST(AuthSet, EmptyQuadrantIsProtocolError) {
  SynthSpec s = small_spec();
  s.k_id = 1;
  Dataset d = generate_synthetic(s);
  try {
    build_auth_set(d, all_records(d), {kHappy}, {5, 5, 5, 5}, 1);
    FAIL();
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("ID-False"), std::string::npos) << e.what();
  }
}
