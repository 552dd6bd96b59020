// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failing criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <string>

#include "dyntask/eval.hpp"
#include "dyntask/experiment.hpp"
#include "dyntask/gradcheck.hpp"
#include "dyntask/kernels.hpp"
#include "dyntask/losses.hpp"

using namespace dyntask;
using clock_type = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

void criterion1() {
  const auto t0 = clock_type::now();
  const auto results = run_gradcheck_suite(gradcheck_names(), 1);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  std::set<std::string> names;
  for (const auto& r : results) names.insert(r.name);
  bool losses = true;
  for (const auto& l : gradcheck_loss_names()) losses = losses && names.count(l);
  verdict(1, failed.empty() && losses && worst < 1e-4 && secs < 60.0,
          fmt("%zu checks, max rel err %.3g, %.2fs%s", results.size(), worst, secs,
              failed.empty() ? "" : (" failed:" + failed).c_str()));
}

double brute_triplet(const Tensor& x, const std::vector<std::size_t>& y, const Tensor& c,
                     const std::vector<bool>& init, double margin) {
  double total = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto d = [&](std::size_t l) {
      double s = 0;
      for (std::size_t e = 0; e < x.cols(); ++e) s += (x.at(i, e) - c.at(l, e)) * (x.at(i, e) - c.at(l, e));
      return std::sqrt(s);
    };
    for (std::size_t l = 0; l < c.rows(); ++l)
      if (l != y[i] && init[l]) total += std::max(d(y[i]) + margin - d(l), 0.0);
  }
  return total;
}

std::size_t correct_at(const std::vector<double>& d, const std::vector<bool>& s, double t) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < d.size(); ++i) c += (d[i] <= t) == s[i];
  return c;
}

void criterion2() {
  Rng rng(77);
  std::uniform_real_distribution<double> u(-3, 3);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + rng() % 8, k = 2 + rng() % 4, e = 1 + rng() % 4;
    Tensor x({m, e}), c({k, e});
    for (double& v : x.raw()) v = u(rng);
    for (double& v : c.raw()) v = u(rng);
    std::vector<bool> init(k, false);
    CenterBank bank(k, e);
    for (std::size_t l = 0; l < k; ++l) {
      if (l != 0 && rng() % 4 == 0) continue;
      init[l] = true;
      std::vector<std::size_t> lab{l};
      bank.update(c.row(l), lab);
    }
    std::vector<std::size_t> y(m);
    for (auto& l : y) do l = rng() % k; while (!init[l]);
    const double margin = 0.5 + (rng() % 1000) / 250.0;
    Tape tape;
    const double got = loss::class_wise_triplet(tape.constant(x), y, bank, margin).value().item();
    worst = std::max(worst, std::abs(got - brute_triplet(x, y, c, init, margin)));
  }
  std::size_t mismatches = 0;
  for (std::size_t n = 2; n <= 200; ++n) {
    std::vector<double> d;
    std::vector<bool> s;
    for (std::size_t i = 0; i < n; ++i) {
      s.push_back(rng() % 2);
      d.push_back(std::round((s.back() ? 0.7 : 1.0) * (rng() % 1000) / 25.0 + (s.back() ? 0 : 6)) / 10.0);
    }
    std::set<double> uniq(d.begin(), d.end());
    std::vector<double> v(uniq.begin(), uniq.end());
    std::vector<double> cand{v.front() - 1.0};
    for (std::size_t i = 0; i + 1 < v.size(); ++i) cand.push_back(0.5 * (v[i] + v[i + 1]));
    cand.push_back(v.back() + 1.0);
    double best_t = cand[0];
    std::size_t best = correct_at(d, s, cand[0]);
    for (double t : cand)
      if (correct_at(d, s, t) > best) best = correct_at(d, s, t), best_t = t;
    const ThresholdChoice got = select_threshold(d, s);
    mismatches += got.correct != best || got.threshold != best_t;
  }
  verdict(2, worst <= 1e-10 && mismatches == 0,
          fmt("triplet max |diff| %.3g over 100 instances; threshold mismatches %zu over 199 instances", worst,
              mismatches));
}

void criterion3(const RunLog& log) {
  double simplex = 0, l3 = 0;
  bool range = true, complete = true;
  for (const auto& r : log.records) {
    if (!(r.w1 && r.w2 && r.l1 && r.l2 && r.l3)) {
      complete = false;
      continue;
    }
    simplex = std::max(simplex, std::abs(*r.w1 + *r.w2 - 1.0));
    range = range && *r.w1 >= 0 && *r.w1 <= 1 && *r.w2 >= 0 && *r.w2 <= 1;
    l3 = std::max(l3, std::abs(*r.l3 - ((1 + *r.w1) * *r.l1 + *r.w2 * *r.l2)));
  }
  verdict(3, complete && log.records.size() == 2000 && simplex <= 1e-12 && range && l3 <= 1e-9,
          fmt("%zu steps, max |w1+w2-1| %.3g, max |L3 - recomputed| %.3g", log.records.size(), simplex, l3));
}

void criterion4(const RunLog& log) {
  std::vector<double> w2;
  std::size_t nonzero = 0;
  for (const auto& r : log.records) {
    if (r.w2) w2.push_back(*r.w2);
    if (r.dwu_grad && *r.dwu_grad > 0.0) ++nonzero;
  }
  const double mean = std::accumulate(w2.begin(), w2.end(), 0.0) / static_cast<double>(w2.size());
  double var = 0;
  for (double v : w2) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(w2.size()));
  const double frac = static_cast<double>(nonzero) / static_cast<double>(log.records.size());
  const auto [lo, hi] = std::minmax_element(w2.begin(), w2.end());
  verdict(4, sd > 0.01 && frac >= 0.99,
          fmt("std(w2) %.4f (range %.4f..%.4f), dwu gradient nonzero on %.2f%% of steps", sd, *lo, *hi, 100 * frac));
}

void criterion7(const std::vector<AuthReport>& generated) {
  // Two samples per quadrant with hand-picked component outputs.
  const bool id[8] = {true, true, false, false, true, true, false, false};
  const bool ex[8] = {true, true, true, true, false, false, false, false};
  const bool vd[8] = {true, false, false, true, true, true, false, false};
  const bool ld[8] = {true, true, true, true, false, true, false, true};
  const bool expr_ok[8] = {true, true, true, false, true, false, true, true};
  std::vector<AuthSample> samples;
  std::vector<AuthDecision> dec;
  for (int i = 0; i < 8; ++i) {
    AuthSample s;
    s.same_identity = id[i];
    s.required_expression = kHappy;
    s.user_expression = ex[i] ? kHappy : kSurprise;
    s.expression_match = ex[i];
    samples.push_back(s);
    AuthDecision d;
    d.verif = vd[i];
    d.live = ld[i];
    d.auth = vd[i] && ld[i];
    d.predicted_expression = expr_ok[i] ? s.user_expression : (s.user_expression == kHappy ? 0 : 1);
    dec.push_back(d);
  }
  // Truth table: auth [T F F T F T F F] vs truth [T T F F F F F F] -> 5/8;
  // verif vs ID -> 6/8; live vs Ex -> 6/8; expression -> 6/8.
  const AuthReport r = auth_metrics(dec, samples);
  const bool exact = r.acc_auth == 5.0 / 8 && r.acc_verif == 6.0 / 8 && r.acc_live == 6.0 / 8 && r.acc_expre == 6.0 / 8;
  bool bound = r.acc_auth >= r.acc_verif + r.acc_live - 1.0;
  Rng rng(5);
  std::size_t reports = 1;
  for (int t = 0; t < 1000; ++t, ++reports) {
    std::vector<AuthDecision> rd;
    for (const auto& s : samples) {
      AuthDecision d;
      d.verif = rng() % 2;
      d.live = rng() % 2;
      d.auth = d.verif && d.live;
      d.predicted_expression = rng() % 7;
      (void)s;
      rd.push_back(d);
    }
    const AuthReport a = auth_metrics(rd, samples);
    bound = bound && a.acc_auth >= a.acc_verif + a.acc_live - 1.0;
  }
  for (const auto& a : generated) {
    bound = bound && a.acc_auth >= a.acc_verif + a.acc_live - 1.0;
    ++reports;
  }
  verdict(7, exact && bound,
          fmt("truth table (%.3f, %.3f, %.3f, %.3f) %s; conjunction bound over %zu reports %s", r.acc_auth,
              r.acc_verif, r.acc_expre, r.acc_live, exact ? "exact" : "MISMATCH", reports, bound ? "holds" : "VIOLATED"));
}

void criterion8(const ExperimentConfig& exp, const PreparedData& prep, const Dataset& pretrain_data) {
  // Short version of the full protocol, twice.
  ExperimentConfig short_exp = exp;
  short_exp.target.stage.steps = 100;
  auto once = [&] { return run_seed(short_exp, prep, pretrain_data, 9, {{1.0, 0.5}}); };
  const SeedOutcome a = once(), b = once();
  const bool logs = a.dynamic_log.digest() == b.dynamic_log.digest();
  const std::string ca = encode_checkpoint(a.dynamic_model), cb = encode_checkpoint(b.dynamic_model);
  const bool scores = a.dynamic.verif == b.dynamic.verif && a.statics[0].verif == b.statics[0].verif &&
                      a.single_expr.expr == b.single_expr.expr;
  const auto dir = std::filesystem::temp_directory_path() / "dyntask_acceptance";
  std::filesystem::create_directories(dir);
  save_checkpoint(a.dynamic_model, dir / "a.ckpt");
  save_checkpoint(load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
  const bool idem = encode_checkpoint(load_checkpoint(dir / "b.ckpt")) == ca &&
                    std::filesystem::file_size(dir / "a.ckpt") == std::filesystem::file_size(dir / "b.ckpt");
  verdict(8, logs && ca == cb && scores && idem,
          fmt("runlog digests %s, checkpoints %s, save-load-save %s", logs ? "equal" : "DIFFER",
              ca == cb ? "byte-identical" : "DIFFER", idem ? "byte-identical" : "DIFFERS"));
}

}  // namespace

int main() {
  kernels::configure_threads_from_env();
  criterion1();
  criterion2();

  const ExperimentConfig exp = benchmark_experiment();
  const PreparedData prep = prepare_data(exp.target);
  const Dataset pretrain_data = generate_synthetic(exp.pretrain_data);
  std::vector<SeedOutcome> outcomes;
  std::vector<AuthReport> auth_reports;
  for (std::uint64_t seed = 1; seed <= exp.seeds; ++seed) {
    outcomes.push_back(run_seed(exp, prep, pretrain_data, seed, kStaticSettings,
                                [](const std::string& line) { std::printf("  %s\n", line.c_str()); std::fflush(stdout); }));
    const SeedOutcome& o = outcomes.back();
    const VerifReport vr = verify_pairs(embed_all(o.dynamic_model, prep.data), prep.pairs);
    const auto auth = build_auth_set(prep.data, prep.split.test, exp.target.eval.required,
                                     exp.target.eval.auth_counts, exp.target.eval.seed);
    const AuthReport ar = auth_metrics(authenticate_all(o.dynamic_model, prep.data, auth, vr.calibrated_threshold), auth);
    auth_reports.push_back(ar);
    std::printf("  seed %llu three-stage %.1fs, auth (%.4f, %.4f, %.4f, %.4f)\n",
                static_cast<unsigned long long>(seed), o.three_stage_seconds, ar.acc_auth, ar.acc_verif, ar.acc_expre,
                ar.acc_live);
  }

  criterion3(outcomes.front().dynamic_log);
  criterion4(outcomes.front().dynamic_log);

  auto med = [&](auto field) {
    std::vector<double> v;
    for (const auto& o : outcomes) v.push_back(field(o));
    return median(v);
  };
  const double sv = med([](const SeedOutcome& o) { return o.single_verif.verif; });
  const double se = med([](const SeedOutcome& o) { return o.single_expr.expr; });
  const double dv = med([](const SeedOutcome& o) { return o.dynamic.verif; });
  const double de = med([](const SeedOutcome& o) { return o.dynamic.expr; });
  double slowest = 0;
  for (const auto& o : outcomes) slowest = std::max(slowest, o.three_stage_seconds);
  const bool band = sv >= 0.80 && sv <= 0.95;
  verdict(5, dv >= sv - 0.01 && de >= se - 0.01 && slowest < 600.0 && band,
          fmt("median verif dynamic %.4f vs single %.4f; median expr dynamic %.4f vs single %.4f; "
              "single verif in 80-95%% band: %s; slowest three-stage run %.1fs",
              dv, sv, de, se, band ? "yes" : "no", slowest));

  double best_static = 0;
  std::string statics;
  for (std::size_t i = 0; i < kStaticSettings.size(); ++i) {
    const double m = med([i](const SeedOutcome& o) { return o.statics[i].verif; });
    best_static = std::max(best_static, m);
    statics += fmt(" (%g,%g)=%.4f", kStaticSettings[i][0], kStaticSettings[i][1], m);
  }
  verdict(6, dv >= best_static - 0.01,
          fmt("median verif dynamic %.4f vs best static %.4f;%s", dv, best_static, statics.c_str()));

  criterion7(auth_reports);
  criterion8(exp, prep, pretrain_data);

  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
