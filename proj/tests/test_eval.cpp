#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "dyntask/errors.hpp"
#include "dyntask/eval.hpp"
#include "helpers.hpp"

using namespace dyntask;

namespace {

std::size_t correct_at(const std::vector<double>& d, const std::vector<bool>& same, double t) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < d.size(); ++i) c += (d[i] <= t) == same[i];
  return c;
}

// Exhaustive sweep: below the minimum, every midpoint, above the maximum.
std::pair<double, std::size_t> oracle_threshold(const std::vector<double>& d, const std::vector<bool>& same) {
  std::set<double> s(d.begin(), d.end());
  std::vector<double> v(s.begin(), s.end());
  std::vector<double> cand{v.front() - 1.0};
  for (std::size_t i = 0; i + 1 < v.size(); ++i) cand.push_back(0.5 * (v[i] + v[i + 1]));
  cand.push_back(v.back() + 1.0);
  double best_t = cand[0];
  std::size_t best = correct_at(d, same, cand[0]);
  for (double t : cand) {
    const std::size_t c = correct_at(d, same, t);
    if (c > best) best = c, best_t = t;
  }
  return {best_t, best};
}

struct Instance {
  std::vector<double> d;
  std::vector<bool> same;
  std::vector<std::size_t> fold;
};

Instance random_instance(std::size_t n, std::size_t folds, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Instance in;
  for (std::size_t i = 0; i < n; ++i) {
    const bool s = i % 2 == 0;
    in.same.push_back(s);
    // Overlapping classes, coarse grid so ties occur.
    in.d.push_back(std::round((s ? 0.6 : 1.0) * u(rng) * 40.0 + (s ? 0 : 8)) / 20.0);
    in.fold.push_back((i / 2) % folds);
  }
  return in;
}

ModelState tiny_model(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.trunk = {{3, 3, true}};
  cfg.embedding_dim = 6;
  cfg.k_id = 3;
  cfg.k_expr = 7;
  Rng rng(seed);
  return ModelState::init(cfg, rng);
}

AuthSample sample(bool id, bool ex) {
  AuthSample s;
  s.same_identity = id;
  s.required_expression = kHappy;
  s.user_expression = ex ? kHappy : kSurprise;
  s.expression_match = ex;
  return s;
}

}  // namespace

TEST(Threshold, MatchesExhaustiveOracle) {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    Instance in = random_instance(2 + seed % 199, 2, seed);
    auto [t, c] = oracle_threshold(in.d, in.same);
    ThresholdChoice got = select_threshold(in.d, in.same);
    EXPECT_EQ(got.correct, c) << seed;
    EXPECT_EQ(got.threshold, t) << seed;
    EXPECT_EQ(got.total, in.d.size());
  }
}

TEST(Verify, SixtyPairFoldsMatchOracle) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Instance in = random_instance(60, 10, 100 + seed);
    VerifReport r = verify_distances(in.d, in.same, in.fold, 10);
    ASSERT_EQ(r.fold_accuracy.size(), 10u);
    double mean = 0;
    for (std::size_t f = 0; f < 10; ++f) {
      std::vector<double> td, vd;
      std::vector<bool> ts, vs;
      for (std::size_t i = 0; i < 60; ++i) {
        (in.fold[i] == f ? vd : td).push_back(in.d[i]);
        (in.fold[i] == f ? vs : ts).push_back(in.same[i]);
      }
      const double t = oracle_threshold(td, ts).first;
      EXPECT_EQ(r.thresholds[f], t);
      const double acc = static_cast<double>(correct_at(vd, vs, t)) / static_cast<double>(vd.size());
      EXPECT_EQ(r.fold_accuracy[f], acc);
      mean += acc / 10.0;
    }
    EXPECT_NEAR(r.mean, mean, 1e-15);
  }
}

TEST(Verify, SeparableCase) {
  std::vector<double> d;
  std::vector<bool> s;
  std::vector<std::size_t> f;
  for (std::size_t i = 0; i < 40; ++i) {
    s.push_back(i % 2 == 0);
    d.push_back(i % 2 == 0 ? 0.0 : 2.0);
    f.push_back((i / 2) % 4);
  }
  VerifReport r = verify_distances(d, s, f, 4);
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_EQ(r.stddev, 0.0);
  for (double t : r.thresholds) {
    EXPECT_GT(t, 0.0);
    EXPECT_LT(t, 2.0);
  }
  EXPECT_NEAR(r.auc, 1.0, 1e-12);
}

TEST(Verify, EqualDistancesGiveMajorityPrior) {
  std::vector<double> d(30, 0.7);
  std::vector<bool> s;
  std::vector<std::size_t> f;
  for (std::size_t i = 0; i < 30; ++i) {
    s.push_back(i % 3 == 0);  // one third positive per fold
    f.push_back((i / 3) % 5);
  }
  VerifReport r = verify_distances(d, s, f, 5);
  for (double a : r.fold_accuracy) EXPECT_NEAR(a, 2.0 / 3.0, 1e-15);
}

TEST(Verify, DegenerateFoldAndTooFewFolds) {
  std::vector<double> d{0.1, 0.2, 0.3, 0.4};
  std::vector<bool> s{true, true, false, false};
  EXPECT_THROW(verify_distances(d, s, {0, 0, 1, 1}, 2), ProtocolError);
  EXPECT_THROW(verify_distances(d, s, {0, 0, 0, 0}, 1), ProtocolError);
  EXPECT_NO_THROW(verify_distances(d, s, {0, 1, 0, 1}, 2));
}

TEST(Roc, EndpointsMonotoneAndAucRange) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Instance in = random_instance(80, 4, seed);
    VerifReport r = verify_distances(in.d, in.same, in.fold, 4);
    ASSERT_GE(r.roc.size(), 2u);
    EXPECT_EQ(r.roc.front().fpr, 0.0);
    EXPECT_EQ(r.roc.front().tpr, 0.0);
    EXPECT_EQ(r.roc.back().fpr, 1.0);
    EXPECT_EQ(r.roc.back().tpr, 1.0);
    EXPECT_EQ(r.roc.size(), kRocSweepPoints + 1);
    for (std::size_t i = 1; i < r.roc.size(); ++i) {
      EXPECT_GE(r.roc[i].fpr, r.roc[i - 1].fpr);
      EXPECT_GE(r.roc[i].tpr, r.roc[i - 1].tpr);
    }
    EXPECT_GE(r.auc, 0.0);
    EXPECT_LE(r.auc, 1.0);
    EXPECT_EQ(r.roc_csv().substr(0, 16), "threshold,fpr,tp");
  }
}

TEST(Embed, UnitRowsDeterministicAndSized) {
  ModelState m = tiny_model(1);
  Tensor a = testutil::random_tensor({1, 8, 8}, 1, 0, 1), b = testutil::random_tensor({1, 8, 8}, 2, 0, 1);
  Tensor e = embed(m, {&a, &b, &a}, 2);
  EXPECT_EQ(e.shape(), (Shape{3, 6}));
  for (std::size_t r = 0; r < 3; ++r) {
    double n = 0;
    for (std::size_t c = 0; c < 6; ++c) n += e.at(r, c) * e.at(r, c);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-12);
  }
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(e.at(0, c), e.at(2, c));
  EXPECT_EQ(embed(m, {&a, &b, &a}, 128), e);
}

TEST(Confusion, PerfectConstantAndPermutation) {
  ConfusionMatrix perfect(7), happy(7);
  std::vector<std::size_t> truth{0, 1, 2, 3, 4, 5, 6, 4, 4, 1};
  for (std::size_t t : truth) {
    perfect.add(t, t);
    happy.add(t, kHappy);
  }
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j) {
      if (i != j) EXPECT_EQ(perfect.at(i, j), 0u);
      if (j != kHappy) EXPECT_EQ(happy.at(i, j), 0u);
    }
  EXPECT_EQ(perfect.accuracy(), 1.0);
  EXPECT_DOUBLE_EQ(happy.accuracy(), 0.3);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(perfect.row_sum(i), happy.row_sum(i));
  EXPECT_EQ(happy.to_csv().substr(0, 23), "truth,predicted,count\n0");
}

TEST(Confusion, ArgmaxTiesGoLow) {
  Tensor s = Tensor::matrix({{1, 3, 3, 0}, {2, 2, 2, 2}});
  EXPECT_EQ(argmax_row(s, 0), 1u);
  EXPECT_EQ(argmax_row(s, 1), 0u);
}

TEST(Classify, StreamingAccuracyEqualsMatrix) {
  SynthSpec spec;
  spec.k_id = 3;
  spec.per_cell = 2;
  spec.height = 8;
  spec.width = 8;
  Dataset d = generate_synthetic(spec);
  std::vector<std::size_t> recs(d.size());
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i] = i;
  ExprResult r = classify_expressions(tiny_model(2), d, recs);
  EXPECT_EQ(r.accuracy, r.confusion.accuracy());
  EXPECT_EQ(r.confusion.total(), d.size());
  for (std::size_t e = 0; e < 7; ++e) EXPECT_EQ(r.confusion.row_sum(e), 6u);
}

TEST(Auth, FuseDecision) {
  AuthDecision a = fuse_decision(0.3, 0.5, kHappy, kHappy);
  EXPECT_TRUE(a.verif && a.live && a.auth);
  AuthDecision b = fuse_decision(0.5, 0.5, kSurprise, kHappy);
  EXPECT_TRUE(b.verif);
  EXPECT_FALSE(b.live || b.auth);
  AuthDecision c = fuse_decision(0.51, 0.5, kHappy, kHappy);
  EXPECT_FALSE(c.verif || c.auth);
}

TEST(Auth, EightSampleTruthTable) {
  // Two samples per quadrant; decisions chosen by hand.
  std::vector<AuthSample> s{sample(true, true),   sample(true, true),  sample(false, true), sample(false, true),
                            sample(true, false),  sample(true, false), sample(false, false), sample(false, false)};
  // verif, live per sample
  const bool v[8] = {true, false, false, true, true, true, false, false};
  const bool l[8] = {true, true, true, true, false, true, false, true};
  std::vector<AuthDecision> dec;
  for (std::size_t i = 0; i < 8; ++i) {
    AuthDecision a;
    a.verif = v[i];
    a.live = l[i];
    a.auth = v[i] && l[i];
    a.predicted_expression = l[i] ? s[i].required_expression : kSurprise;
    if (!l[i] && s[i].user_expression == kSurprise) a.predicted_expression = kSurprise;
    dec.push_back(a);
  }
  AuthReport r = auth_metrics(dec, s);
  // auth = [T F F T F T F F], truth = [T T F F F F F F] -> correct: 1, 3, 5, 7, 8
  EXPECT_DOUBLE_EQ(r.acc_auth, 5.0 / 8.0);
  // verif vs ID [T T F F T T F F] -> correct: 1, 3, 5, 6, 7, 8
  EXPECT_DOUBLE_EQ(r.acc_verif, 6.0 / 8.0);
  // live vs Ex [T T T T F F F F] -> correct: 1-5, 7
  EXPECT_DOUBLE_EQ(r.acc_live, 6.0 / 8.0);
  EXPECT_EQ(r.fused[1][1], 1u);
  EXPECT_EQ(r.fused[1][0], 1u);
  EXPECT_EQ(r.fused[0][1], 2u);
  EXPECT_EQ(r.fused[0][0], 4u);
  EXPECT_EQ(r.quadrant_total, (std::array<std::size_t, 4>{2, 2, 2, 2}));
  EXPECT_EQ(r.quadrant_accepted, (std::array<std::size_t, 4>{1, 1, 1, 0}));
  EXPECT_GE(r.acc_auth, r.acc_verif + r.acc_live - 1.0);
}

TEST(Auth, PerfectComponentsConjunctionAndComplement) {
  Rng rng(5);
  std::vector<AuthSample> s;
  for (int i = 0; i < 200; ++i) s.push_back(sample(rng() % 2, rng() % 3 == 0));
  auto decide = [&](auto verif_of, auto live_of) {
    std::vector<AuthDecision> out;
    for (std::size_t i = 0; i < s.size(); ++i) {
      AuthDecision a;
      a.verif = verif_of(i);
      a.live = live_of(i);
      a.auth = a.verif && a.live;
      a.predicted_expression = a.live ? kHappy : kSurprise;
      out.push_back(a);
    }
    return out;
  };
  AuthReport perfect = auth_metrics(
      decide([&](std::size_t i) { return s[i].same_identity; }, [&](std::size_t i) { return s[i].expression_match; }), s);
  EXPECT_EQ(perfect.acc_auth, 1.0);
  EXPECT_EQ(perfect.acc_verif, 1.0);
  EXPECT_EQ(perfect.acc_live, 1.0);
  EXPECT_EQ(perfect.acc_expre, 1.0);

  auto never = decide([](std::size_t) { return true; }, [](std::size_t) { return false; });
  for (const auto& a : never) EXPECT_FALSE(a.auth);

  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng r2(seed);
    std::vector<bool> lv(s.size()), vf(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) lv[i] = r2() % 2, vf[i] = r2() % 2;
    AuthReport a = auth_metrics(decide([&](std::size_t i) { return vf[i]; }, [&](std::size_t i) { return lv[i]; }), s);
    AuthReport b =
        auth_metrics(decide([&](std::size_t i) { return vf[i]; }, [&](std::size_t i) { return !lv[i]; }), s);
    EXPECT_NEAR(b.acc_live, 1.0 - a.acc_live, 1e-15);
    EXPECT_GE(a.acc_auth, a.acc_verif + a.acc_live - 1.0 - 1e-15);
    EXPECT_GE(a.acc_auth, 0.0);
    EXPECT_LE(a.acc_auth, 1.0);
  }
}

TEST(Auth, ReportsRender) {
  std::vector<AuthSample> s{sample(true, true), sample(false, false)};
  std::vector<AuthDecision> d{fuse_decision(0.1, 0.5, kHappy, kHappy), fuse_decision(0.9, 0.5, kSurprise, kHappy)};
  AuthReport r = auth_metrics(d, s);
  EXPECT_EQ(r.acc_auth, 1.0);
  EXPECT_NE(r.to_text().find("Acc_auth"), std::string::npos);
  EXPECT_EQ(r.quadrant_csv().substr(0, 31), "quadrant,total,accepted,correct");
}
