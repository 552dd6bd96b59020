#include "dyntask/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>

namespace dyntask {

ExperimentConfig benchmark_experiment() {
  ExperimentConfig exp;
  exp.target = benchmark_config();
  exp.pretrain_data = exp.target.data.synth;
  exp.pretrain_data.k_id = 40;
  exp.pretrain_data.seed = exp.target.data.synth.seed + 1000;
  return exp;
}

RunConfig pretrain_run_config(const ExperimentConfig& exp) {
  RunConfig cfg = exp.target;
  cfg.model.k_id = exp.pretrain_data.k_id;
  cfg.model.k_expr = exp.pretrain_data.k_expr;
  cfg.loss.k_id = cfg.model.k_id;
  cfg.loss.k_expr = cfg.model.k_expr;
  cfg.data.dir.reset();
  cfg.data.synth = exp.pretrain_data;
  cfg.validate();
  return cfg;
}

ModelScores score_model(const ModelState& model, const PreparedData& prep) {
  const Tensor emb = embed_all(model, prep.data);
  return {verify_pairs(emb, prep.pairs).mean,
          classify_expressions(model, prep.data, prep.split.test).accuracy};
}

SeedOutcome run_seed(const ExperimentConfig& exp, const PreparedData& target,
                     const Dataset& pretrain_data, std::uint64_t seed,
                     const std::vector<std::array<double, 2>>& statics,
                     const std::function<void(const std::string&)>& progress) {
  RunConfig cfg = exp.target;
  cfg.seed = seed;
  RunConfig pcfg = pretrain_run_config(exp);
  pcfg.seed = seed;
  SeedOutcome out;
  out.seed = seed;
  using clock = std::chrono::steady_clock;
  auto report = [&](const std::string& stage, const ModelScores& s, double secs) {
    if (!progress) return;
    char buf[200];
    std::snprintf(buf, sizeof buf, "seed %llu %-16s verif %.4f expr %.4f (%.1fs)",
                  static_cast<unsigned long long>(seed), stage.c_str(), s.verif, s.expr, secs);
    progress(buf);
  };
  auto context = [&](Stage stage, const StageConfig& sc) {
    TrainContext ctx = make_context(cfg, target);
    ctx.stage = sc;
    ctx.stage.stage = stage;
    ctx.stage.seed = seed;
    return ctx;
  };
  auto timed = [&](auto&& fn) {
    const auto t0 = clock::now();
    TrainResult r = fn();
    return std::pair{std::move(r), std::chrono::duration<double>(clock::now() - t0).count()};
  };

  Rng rng(seed);
  const ModelState init = ModelState::init(pcfg.model, rng);
  std::vector<std::size_t> all(pretrain_data.size());
  std::iota(all.begin(), all.end(), 0);
  TrainContext pctx{pretrain_data, all, pcfg.optim, pcfg.loss, pcfg.stage, config_hash(pcfg), {}};
  pctx.stage.stage = Stage::PretrainVerif;
  pctx.stage.seed = seed;
  auto [pre, t_pre] = timed([&] { return train_pretrain_verif(init, pctx); });
  out.pretrained = score_model(pre.model, target);
  report("pretrain", out.pretrained, t_pre);

  const TrainContext fctx = context(Stage::PretrainVerif, cfg.stage);
  auto [fine, t_fine] = timed([&] { return train_pretrain_verif(fine_tune_start(pre.model, fctx), fctx); });
  out.single_verif = score_model(fine.model, target);
  report("single-verif", out.single_verif, t_fine);

  auto [single, t_single] =
      timed([&] { return train_single_expr(pre.model, context(Stage::SingleExpr, cfg.stage)); });
  out.single_expr = score_model(single.model, target);
  report("single-expr", out.single_expr, t_single);

  auto [dyn, t_dyn] =
      timed([&] { return train_multi_dynamic(pre.model, context(Stage::MultiDynamic, cfg.stage)); });
  out.dynamic = score_model(dyn.model, target);
  out.dynamic_log = std::move(dyn.log);
  out.dynamic_model = std::move(dyn.model);
  out.three_stage_seconds = t_pre + t_fine + t_single + t_dyn;
  report("multi-dynamic", out.dynamic, t_dyn);

  for (const auto& w : statics) {
    StageConfig sc = cfg.stage;
    sc.static_w1 = w[0];
    sc.static_w2 = w[1];
    auto [st, t_st] = timed([&] { return train_multi_static(pre.model, context(Stage::MultiStatic, sc)); });
    out.statics.push_back(score_model(st.model, target));
    char name[64];
    std::snprintf(name, sizeof name, "static(%g,%g)", w[0], w[1]);
    report(name, out.statics.back(), t_st);
  }
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace dyntask
