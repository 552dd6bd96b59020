#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dyntask/experiment.hpp"
#include "dyntask/gradcheck.hpp"
#include "dyntask/kernels.hpp"
#include "dyntask/plot.hpp"

namespace fs = std::filesystem;
using namespace dyntask;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

Json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(f);
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

ModelState load_model(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

struct GenArgs {
  std::string spec, out;
};

int cmd_gen(const GenArgs& a) {
  const SynthSpec spec = synth_spec_from_json(read_json(a.spec), "spec");
  fs::create_directories(a.out);
  const Dataset data = generate_synthetic(spec, a.out);
  std::cout << data.summary();
  std::cout << "wrote " << data.size() << " records to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string stage, config, from, out;
};

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  if (!a.out.empty()) cfg.output_dir = a.out;
  cfg.stage.stage = parse_stage(a.stage);
  cfg.stage.validate();
  if (cfg.stage.stage != Stage::PretrainVerif && a.from.empty()) {
    throw ConfigError(std::string("stage ") + stage_name(cfg.stage.stage) + " needs --from <checkpoint>");
  }
  std::optional<ModelState> start;
  if (!a.from.empty()) start = load_model(a.from);

  const PreparedData prep = prepare_data(cfg);
  TrainContext ctx = make_context(cfg, prep);
  ctx.on_eval = [&](std::size_t step, const ModelState&, const StepRecord& r) {
    std::ostringstream os;
    os << "step " << step << " lr " << r.lr;
    if (r.l1) os << " l1 " << *r.l1;
    if (r.l2) os << " l2 " << *r.l2;
    if (r.l3) os << " l3 " << *r.l3;
    if (r.w1) os << " w1 " << *r.w1 << " w2 " << *r.w2;
    std::cout << os.str() << std::endl;
  };

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  write_run_config(cfg, out / "resolved_config.json");
  ModelState init;
  if (start) {
    init = cfg.stage.stage == Stage::PretrainVerif ? fine_tune_start(*start, ctx) : *start;
  } else {
    Rng rng(cfg.seed);
    init = ModelState::init(cfg.model, rng);
  }
  try {
    TrainResult r = run_stage(init, ctx);
    save_checkpoint(r.model, out / "model.ckpt");
    r.log.write(out / "runlog.csv");
    std::cout << "stage " << stage_name(cfg.stage.stage) << " finished: " << r.log.records.size()
              << " steps, runlog digest " << r.log.digest() << "\n";
    std::cout << "checkpoint " << (out / "model.ckpt").string() << "\n";
  } catch (const TrainingAborted& e) {
    save_checkpoint(e.last_good, out / "last_good.ckpt");
    e.log.write(out / "runlog.csv");
    std::cerr << "training aborted: " << e.what() << "\n";
    std::cerr << "last good checkpoint " << (out / "last_good.ckpt").string() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt, data, pairs, report, config, split = "test";
};

std::vector<std::size_t> eval_pool(const Dataset& data, const RunConfig& cfg, const std::string& split) {
  if (split == "all") {
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
  }
  if (split != "test") throw ConfigError("--split must be 'test' or 'all'");
  return split_holdout(data, cfg.data.holdout, cfg.data.split_seed).test;
}

struct EvalSetup {
  RunConfig cfg;
  ModelState model;
  Dataset data;
  std::vector<std::size_t> pool;
  fs::path report;
};

EvalSetup eval_setup(const EvalArgs& a, const std::string& mode) {
  EvalSetup s;
  if (!a.config.empty()) s.cfg = load_run_config(a.config);
  s.model = load_model(a.ckpt);
  s.data = load_manifest(a.data);
  s.pool = eval_pool(s.data, s.cfg, a.split);
  s.report = a.report;
  fs::create_directories(s.report);
  Json resolved{{"mode", mode},
                {"ckpt", fs::absolute(a.ckpt).string()},
                {"data", fs::absolute(a.data).string()},
                {"split", a.split},
                {"config", to_json(s.cfg)}};
  if (mode != "expr") resolved["pairs"] = (fs::absolute(s.report) / "pairs.csv").string();
  write_text(s.report / "eval_config.json", resolved.dump(2) + "\n");
  write_run_config(s.cfg, s.report / "run_config.json");
  return s;
}

PairSet eval_pairs(const EvalArgs& a, const EvalSetup& s) {
  PairSet pairs = a.pairs.empty()
                      ? build_pairs(s.data, s.pool, s.cfg.eval.pairs_pos, s.cfg.eval.pairs_neg,
                                    s.cfg.eval.folds, s.cfg.eval.seed)
                      : read_pairs(a.pairs, s.data);
  const fs::path copy = s.report / "pairs.csv";
  if (a.pairs.empty() || !fs::exists(copy) || !fs::equivalent(a.pairs, copy)) write_pairs(copy, pairs);
  return pairs;
}

int cmd_eval_verif(const EvalArgs& a) {
  EvalSetup s = eval_setup(a, "verif");
  const PairSet pairs = eval_pairs(a, s);
  const VerifReport rep = verify_pairs(embed_all(s.model, s.data), pairs);
  write_text(s.report / "verif_report.txt", rep.to_text());
  write_text(s.report / "roc.csv", rep.roc_csv());
  std::cout << rep.to_text();
  return kExitOk;
}

int cmd_eval_expr(const EvalArgs& a) {
  EvalSetup s = eval_setup(a, "expr");
  const ExprResult res = classify_expressions(s.model, s.data, s.pool);
  write_text(s.report / "expr_report.txt", res.confusion.to_text());
  write_text(s.report / "confusion.csv", res.confusion.to_csv());
  std::string preds = "record,truth,predicted\n";
  for (std::size_t i = 0; i < s.pool.size(); ++i) {
    preds += std::to_string(s.pool[i]) + "," + std::to_string(s.data.records[s.pool[i]].expression) + "," +
             std::to_string(res.predictions[i]) + "\n";
  }
  write_text(s.report / "predictions.csv", preds);
  std::cout << res.confusion.to_text();
  return kExitOk;
}

int cmd_eval_auth(const EvalArgs& a) {
  EvalSetup s = eval_setup(a, "auth");
  const PairSet pairs = eval_pairs(a, s);
  const VerifReport verif = verify_pairs(embed_all(s.model, s.data), pairs);
  const auto samples =
      build_auth_set(s.data, s.pool, s.cfg.eval.required, s.cfg.eval.auth_counts, s.cfg.eval.seed);
  const auto decisions = authenticate_all(s.model, s.data, samples, verif.calibrated_threshold);
  const AuthReport rep = auth_metrics(decisions, samples);
  std::string text = rep.to_text();
  text += "threshold: " + std::to_string(verif.calibrated_threshold) + "\n";
  write_text(s.report / "auth_report.txt", text);
  write_text(s.report / "quadrants.csv", rep.quadrant_csv());
  std::string rows = "user,reference,same_identity,required,user_expression,distance,predicted,verif,live,auth\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& x = samples[i];
    const auto& d = decisions[i];
    char dist[32];
    std::snprintf(dist, sizeof dist, "%.10g", d.distance);
    rows += std::to_string(x.user) + "," + std::to_string(x.reference) + "," + std::to_string(x.same_identity) +
            "," + std::to_string(x.required_expression) + "," + std::to_string(x.user_expression) + "," + dist +
            "," + std::to_string(d.predicted_expression) + "," + std::to_string(d.verif) + "," +
            std::to_string(d.live) + "," + std::to_string(d.auth) + "\n";
  }
  write_text(s.report / "decisions.csv", rows);
  std::cout << text;
  return kExitOk;
}

struct GradArgs {
  std::string ops = "all";
  std::uint64_t seed = 1;
};

int cmd_gradcheck(const GradArgs& a) {
  std::vector<std::string> names;
  if (a.ops == "all") {
    names = gradcheck_names();
  } else {
    std::stringstream ss(a.ops);
    std::string n;
    while (std::getline(ss, n, ',')) names.push_back(n);
  }
  bool ok = true;
  double total = 0.0;
  for (const auto& n : names) {
    const GradCheckResult r = run_gradcheck(make_gradcheck_case(n, a.seed), a.seed);
    total += r.seconds;
    std::printf("%-22s %s max_rel_error %.3e coords %zu seed %llu\n", r.name.c_str(), r.passed ? "pass" : "FAIL",
                r.max_rel_error, r.coords, static_cast<unsigned long long>(r.seed));
    ok = ok && r.passed;
  }
  std::printf("%zu checks, %.2fs, %s\n", names.size(), total, ok ? "all passed" : "FAILURES");
  return ok ? kExitOk : kExitNumerical;
}

struct PlotArgs {
  std::string in, out;
};

int cmd_plot(const std::string& kind, const PlotArgs& a) {
  write_text(a.out, plot_csv(kind, CsvTable::read(a.in)));
  std::cout << "wrote " << a.out << "\n";
  return kExitOk;
}

struct ExperimentArgs {
  std::size_t seeds = 5;
  std::size_t steps = 0;
  std::string out;
};

int cmd_experiment(const ExperimentArgs& a) {
  ExperimentConfig exp = benchmark_experiment();
  exp.seeds = a.seeds;
  if (a.steps) exp.target.stage.steps = a.steps;
  const PreparedData prep = prepare_data(exp.target);
  const Dataset pre = generate_synthetic(exp.pretrain_data);
  std::string csv = "seed,model,verif,expr\n";
  auto row = [&](std::uint64_t seed, const std::string& model, const ModelScores& s) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%llu,%s,%.6f,%.6f\n", static_cast<unsigned long long>(seed), model.c_str(),
                  s.verif, s.expr);
    csv += buf;
  };
  for (std::uint64_t seed = 1; seed <= exp.seeds; ++seed) {
    const SeedOutcome o = run_seed(exp, prep, pre, seed, kStaticSettings,
                                   [](const std::string& line) { std::cout << line << std::endl; });
    row(seed, "pretrained", o.pretrained);
    row(seed, "single", ModelScores{o.single_verif.verif, o.single_expr.expr});
    row(seed, "dynamic", o.dynamic);
    for (std::size_t i = 0; i < kStaticSettings.size(); ++i) {
      char name[48];
      std::snprintf(name, sizeof name, "static(%g;%g)", kStaticSettings[i][0], kStaticSettings[i][1]);
      row(seed, name, o.statics[i]);
    }
  }
  std::cout << csv;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "experiment.csv", csv);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  CLI::App app{"Multi-task face verification and expression recognition toolkit"};
  app.require_subcommand(1);
  int rc = kExitOk;

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic identity x expression dataset");
  g->add_option("--spec", gen.spec, "Synthetic spec (JSON)")->required()->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->callback([&] { rc = cmd_gen(gen); });

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Run one training stage");
  t->add_option("--stage", tr.stage, "pretrain | single-expr | multi-dynamic | multi-static")
      ->required()
      ->check(CLI::IsMember({"pretrain", "single-expr", "multi-dynamic", "multi-static"}));
  t->add_option("--config", tr.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--from", tr.from, "Starting checkpoint (required after pretrain; fine-tunes for pretrain)");
  t->add_option("--out", tr.out, "Output directory (overrides output_dir)");
  t->callback([&] { rc = cmd_train(tr); });

  std::deque<EvalArgs> eval_args;
  std::deque<PlotArgs> plot_args;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->require_subcommand(1);
  for (const std::string mode : {"verif", "expr", "auth"}) {
    EvalArgs* args = &eval_args.emplace_back();
    auto* sub = e->add_subcommand(mode, mode == "verif"  ? "Pair verification with 10-fold thresholds and ROC"
                                        : mode == "expr" ? "Expression accuracy and confusion matrix"
                                                         : "Verification + expression liveness fusion");
    sub->add_option("--ckpt", args->ckpt, "Checkpoint file")->required();
    sub->add_option("--data", args->data, "Dataset directory (manifest.csv + images.tnsc)")->required();
    sub->add_option("--report", args->report, "Report output directory")->required();
    sub->add_option("--config", args->config, "Run configuration supplying split and eval settings");
    sub->add_option("--split", args->split, "Records to evaluate: test (held-out) or all")
        ->check(CLI::IsMember({"test", "all"}));
    if (mode != "expr") sub->add_option("--pairs", args->pairs, "Pair list CSV (a,b,same,fold)");
    sub->callback([&rc, mode, args] {
      rc = mode == "verif" ? cmd_eval_verif(*args) : mode == "expr" ? cmd_eval_expr(*args) : cmd_eval_auth(*args);
    });
  }

  GradArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--ops", ga.ops, "all, or a comma-separated list of registered names");
  gc->add_option("--seed", ga.seed, "Input seed");
  auto* list = gc->add_flag("--list", "Print the registered names and exit");
  gc->callback([&] {
    if (list->count()) {
      for (const auto& n : gradcheck_names()) std::cout << n << "\n";
      return;
    }
    rc = cmd_gradcheck(ga);
  });

  auto* p = app.add_subcommand("plot", "Render a CSV artifact as SVG");
  p->require_subcommand(1);
  for (const std::string kind : {"weights", "loss", "roc", "confusion"}) {
    PlotArgs* args = &plot_args.emplace_back();
    auto* sub = p->add_subcommand(kind, kind == "weights"  ? "Task weights w1, w2 from a run log"
                                        : kind == "loss"   ? "Losses l1, l2, l3 from a run log"
                                        : kind == "roc"    ? "ROC curve from roc.csv"
                                                           : "Confusion heatmap from confusion.csv");
    sub->add_option("--in", args->in, "Input CSV")->required();
    sub->add_option("--out", args->out, "Output SVG")->required();
    sub->callback([&rc, kind, args] { rc = cmd_plot(kind, *args); });
  }

  ExperimentArgs ex;
  auto* x = app.add_subcommand("experiment", "Multi-seed single-task / dynamic / static comparison");
  x->add_option("--seeds", ex.seeds, "Number of seeds");
  x->add_option("--steps", ex.steps, "Steps per stage (default from the benchmark config)");
  x->add_option("--out", ex.out, "Directory for experiment.csv");
  x->callback([&] { rc = cmd_experiment(ex); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return kExitNumerical;
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  }
  return rc;
}
