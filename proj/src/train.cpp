#include "dyntask/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dyntask/tape.hpp"

namespace dyntask {

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::PretrainVerif: return "pretrain";
    case Stage::SingleExpr: return "single-expr";
    case Stage::MultiDynamic: return "multi-dynamic";
    case Stage::MultiStatic: return "multi-static";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : {Stage::PretrainVerif, Stage::SingleExpr, Stage::MultiDynamic, Stage::MultiStatic}) {
    if (name == stage_name(s)) return s;
  }
  throw ConfigError("unknown stage '" + name +
                    "' (expected pretrain, single-expr, multi-dynamic or multi-static)");
}

void StageConfig::validate() const {
  if (steps < 1) throw ConfigError("stage.steps must be >= 1");
  if (batch_size < 2) throw ConfigError("stage.batch_size must be >= 2");
  if (!(center_rate > 0.0 && center_rate <= 1.0)) throw ConfigError("stage.center_rate must lie in (0, 1]");
  if (stage == Stage::MultiStatic) {
    if (!static_w1 || !static_w2) throw ConfigError("multi-static needs stage.static_w1 and stage.static_w2");
    if (*static_w1 < 0.0 || *static_w2 < 0.0) throw ConfigError("static weights must be >= 0");
  }
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return {};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string csv_row(const StepRecord& r, bool with_time) {
  std::ostringstream os;
  os << r.step << ',' << fmt(r.lr) << ',' << fmt(r.l1) << ',' << fmt(r.l2) << ',' << fmt(r.l3)
     << ',' << fmt(r.w1) << ',' << fmt(r.w2);
  if (with_time) os << ',' << fmt(r.seconds);
  return os.str();
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.raw()) m = std::max(m, std::abs(v));
  return m;
}

unsigned trainable_groups(Stage s) {
  switch (s) {
    case Stage::PretrainVerif: return kTrunk | kBranch1;
    case Stage::SingleExpr: return kTrunk | kBranch2;
    case Stage::MultiDynamic: return kAllGroups;
    case Stage::MultiStatic: return kTrunk | kBranch1 | kBranch2;
  }
  return 0;
}

Rng stage_rng(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return Rng(seq);
}

TrainResult run_loop(ModelState model, const TrainContext& ctx) {
  const StageConfig& sc = ctx.stage;
  sc.validate();
  ctx.optim.validate();
  ctx.loss.validate();
  const Stage stage = sc.stage;
  const unsigned groups = trainable_groups(stage);
  const bool uses_l1 = stage != Stage::SingleExpr;
  const bool uses_l2 = stage != Stage::PretrainVerif;
  const bool multi = uses_l1 && uses_l2;

  RunLog log;
  log.stage = stage_name(stage);
  log.seed = sc.seed;
  log.config_hash = ctx.config_hash;

  RmsProp optim(ctx.optim);
  // Fresh centers per stage: the embedding space moves after transfer.
  CenterBank bank(model.config.k_id, model.config.embedding_dim, sc.center_rate);
  BatchStream stream(ctx.data, ctx.pool, sc.batch_size, sc.seed, multi || uses_l1);
  Rng dropout_rng = stage_rng(sc.seed, 11);
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < sc.steps; ++step) {
    const auto batch = stream.next();
    std::vector<const Tensor*> imgs;
    std::vector<std::size_t> ids, exprs;
    for (auto r : batch) {
      imgs.push_back(&ctx.data.images[r]);
      ids.push_back(ctx.data.records[r].identity);
      exprs.push_back(ctx.data.records[r].expression);
    }
    ModelState before = model;
    StepRecord rec;
    rec.step = step;
    rec.lr = lr_schedule(ctx.optim, step);
    try {
      Tape tape;
      Binding b(tape, model, groups);
      Var shared = forward_shared(b, tape.constant(stack_images(imgs), "images"), Mode::Train);
      std::optional<Var> l1, l2, embedding, w1, w2;
      if (uses_l1) {
        Branch1Out br = forward_branch1(b, shared, Mode::Train, dropout_rng);
        bank.seed_missing(br.embedding.value(), ids);
        l1 = loss::verification_loss(br.logits, ids, br.embedding, bank, ctx.loss);
        embedding = br.embedding;
      }
      if (uses_l2) {
        l2 = loss::expression_loss(forward_branch2(b, shared, Mode::Train, dropout_rng), exprs);
      }
      Var objective = uses_l1 ? *l1 : *l2;
      if (stage == Stage::MultiDynamic) {
        TaskWeights tw = dynamic_weights(b, shared);
        w1 = tw.w1;
        w2 = tw.w2;
      } else if (stage == Stage::MultiStatic) {
        w1 = tape.constant(Tensor::scalar(*sc.static_w1), "w1");
        w2 = tape.constant(Tensor::scalar(*sc.static_w2), "w2");
      }
      if (multi) objective = loss::overall_loss(*l1, *l2, *w1, *w2);
      tape.backward(objective);

      if (l1) rec.l1 = l1->value().item();
      if (l2) rec.l2 = l2->value().item();
      if (multi) {
        rec.l3 = objective.value().item();
        rec.w1 = w1->value().item();
        rec.w2 = w2->value().item();
      }
      auto grads = b.gradients();
      if (stage == Stage::MultiDynamic) {
        double g = 0.0;
        for (const auto& pg : grads) {
          if (pg.name.rfind("dwu.", 0) == 0) g = std::max(g, max_abs(*pg.grad));
        }
        rec.dwu_grad = g;
      }
      optim.step(grads, step);
      for (const auto& pg : grads) {
        if (!pg.value->all_finite()) {
          throw NumericalError("parameter '" + pg.name + "' became non-finite at step " +
                               std::to_string(step));
        }
      }
      if (embedding) bank.update(embedding->value(), ids);
    } catch (const NumericalError& e) {
      throw TrainingAborted(std::string(e.what()) + " (stage " + log.stage + ", step " +
                                std::to_string(step) + ")",
                            std::move(before), log);
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.records.push_back(rec);
    if (ctx.on_eval && sc.eval_every > 0 && (step + 1) % sc.eval_every == 0) {
      ctx.on_eval(step + 1, model, rec);
    }
  }
  return {std::move(model), std::move(log)};
}

void require_stage(const TrainContext& ctx, Stage s) {
  if (ctx.stage.stage != s) {
    throw ConfigError(std::string("context configured for stage ") + stage_name(ctx.stage.stage) +
                      ", expected " + stage_name(s));
  }
}

void require_label_space(const ModelState& m, const TrainContext& ctx) {
  if (m.config.k_id != ctx.loss.k_id || m.config.k_expr != ctx.loss.k_expr) {
    throw ConfigError("model label space (" + std::to_string(m.config.k_id) + ", " +
                      std::to_string(m.config.k_expr) + ") differs from training data (" +
                      std::to_string(ctx.loss.k_id) + ", " + std::to_string(ctx.loss.k_expr) + ")");
  }
}

ModelState transferred(const ModelState& pretrained, const TrainContext& ctx, bool fresh_head) {
  Rng rng = stage_rng(ctx.stage.seed, 13);
  ModelConfig target = pretrained.config;
  target.k_expr = ctx.loss.k_expr;
  ModelState out = transfer_branch1_to_branch2(pretrained, target, rng);
  if (fresh_head) {
    Rng head_rng = stage_rng(ctx.stage.seed, 17);
    out = with_fresh_identity_head(out, ctx.loss.k_id, head_rng);
  }
  return out;
}

}  // namespace

std::string RunLog::to_csv() const {
  std::string out = "step,lr,l1,l2,l3,w1,w2,seconds\n";
  for (const auto& r : records) out += csv_row(r, true) + "\n";
  return out;
}

void RunLog::write(const std::filesystem::path& csv_path) const {
  {
    std::ofstream f(csv_path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + csv_path.string());
    f << to_csv();
  }
  std::ofstream meta(csv_path.string() + ".meta.json", std::ios::binary | std::ios::trunc);
  if (!meta) throw IoError("cannot write metadata for " + csv_path.string());
  meta << Json{{"stage", stage},
               {"seed", seed},
               {"config_hash", config_hash},
               {"steps", records.size()},
               {"digest", digest()}}
              .dump(2)
       << '\n';
}

std::string RunLog::digest() const {
  std::string body = stage + "\n";
  for (const auto& r : records) body += csv_row(r, false) + "\n";
  return fnv1a_hex(body);
}

TrainResult train_pretrain_verif(ModelState init, const TrainContext& ctx) {
  require_stage(ctx, Stage::PretrainVerif);
  require_label_space(init, ctx);
  return run_loop(std::move(init), ctx);
}

TrainResult train_single_expr(const ModelState& pretrained, const TrainContext& ctx) {
  require_stage(ctx, Stage::SingleExpr);
  // The identity classifier plays no part in L2 and stays as pretrained.
  return run_loop(transferred(pretrained, ctx, false), ctx);
}

TrainResult train_multi_dynamic(const ModelState& pretrained, const TrainContext& ctx) {
  require_stage(ctx, Stage::MultiDynamic);
  ModelState start = transferred(pretrained, ctx, ctx.stage.fresh_identity_head);
  require_label_space(start, ctx);
  return run_loop(std::move(start), ctx);
}

TrainResult train_multi_static(const ModelState& pretrained, const TrainContext& ctx) {
  require_stage(ctx, Stage::MultiStatic);
  ModelState start = transferred(pretrained, ctx, ctx.stage.fresh_identity_head);
  require_label_space(start, ctx);
  return run_loop(std::move(start), ctx);
}

ModelState fine_tune_start(const ModelState& pretrained, const TrainContext& ctx) {
  Rng rng = stage_rng(ctx.stage.seed, 17);
  return with_fresh_identity_head(pretrained, ctx.loss.k_id, rng);
}

TrainResult run_stage(const ModelState& start, const TrainContext& ctx) {
  switch (ctx.stage.stage) {
    case Stage::PretrainVerif: return train_pretrain_verif(start, ctx);
    case Stage::SingleExpr: return train_single_expr(start, ctx);
    case Stage::MultiDynamic: return train_multi_dynamic(start, ctx);
    case Stage::MultiStatic: return train_multi_static(start, ctx);
  }
  throw ConfigError("unknown stage");
}

}  // namespace dyntask
