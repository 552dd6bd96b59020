#include "dyntask/run_config.hpp"

#include <fstream>
#include <sstream>

namespace dyntask {

namespace {

Json optim_json(const OptimConfig& o) {
  return Json{{"lr", o.lr},
              {"decay_points", o.decay_points},
              {"decay_factor", o.decay_factor},
              {"rho", o.rho},
              {"epsilon", o.epsilon},
              {"weight_decay", o.weight_decay}};
}

OptimConfig optim_from(const Json& j) {
  OptimConfig o;
  ObjectReader r(j, "optim");
  r.get("lr", o.lr);
  r.get("decay_points", o.decay_points);
  r.get("decay_factor", o.decay_factor);
  r.get("rho", o.rho);
  r.get("epsilon", o.epsilon);
  r.get("weight_decay", o.weight_decay);
  r.finish();
  return o;
}

Json stage_json(const StageConfig& s) {
  Json j{{"steps", s.steps},
         {"eval_every", s.eval_every},
         {"batch_size", s.batch_size},
         {"center_rate", s.center_rate},
         {"fresh_identity_head", s.fresh_identity_head}};
  if (s.static_w1) j["static_w1"] = *s.static_w1;
  if (s.static_w2) j["static_w2"] = *s.static_w2;
  return j;
}

StageConfig stage_from(const Json& j) {
  StageConfig s;
  ObjectReader r(j, "stage");
  r.get("steps", s.steps);
  r.get("eval_every", s.eval_every);
  r.get("batch_size", s.batch_size);
  r.get("center_rate", s.center_rate);
  r.get("fresh_identity_head", s.fresh_identity_head);
  double w = 0.0;
  if (r.has("static_w1")) {
    r.get("static_w1", w);
    s.static_w1 = w;
  }
  if (r.has("static_w2")) {
    r.get("static_w2", w);
    s.static_w2 = w;
  }
  r.finish();
  return s;
}

Json data_json(const DataSection& d) {
  Json j{{"synth", to_json(d.synth)}, {"holdout", d.holdout}, {"split_seed", d.split_seed}};
  if (d.dir) j["dir"] = *d.dir;
  return j;
}

DataSection data_from(const Json& j) {
  DataSection d;
  ObjectReader r(j, "data");
  if (r.has("dir")) {
    std::string dir;
    r.get("dir", dir);
    d.dir = dir;
  }
  if (const Json* s = r.child("synth")) d.synth = synth_spec_from_json(*s, "data.synth");
  r.get("holdout", d.holdout);
  r.get("split_seed", d.split_seed);
  r.finish();
  return d;
}

Json eval_json(const EvalSection& e) {
  return Json{{"pairs_pos", e.pairs_pos}, {"pairs_neg", e.pairs_neg}, {"folds", e.folds},
              {"auth_counts", e.auth_counts}, {"required", e.required}, {"seed", e.seed}};
}

EvalSection eval_from(const Json& j) {
  EvalSection e;
  ObjectReader r(j, "eval");
  r.get("pairs_pos", e.pairs_pos);
  r.get("pairs_neg", e.pairs_neg);
  r.get("folds", e.folds);
  r.get("auth_counts", e.auth_counts);
  r.get("required", e.required);
  r.get("seed", e.seed);
  r.finish();
  return e;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  optim.validate();
  loss.validate();
  if (data.synth.k_id != model.k_id || data.synth.k_expr != model.k_expr) {
    throw ConfigError("data.synth label space (" + std::to_string(data.synth.k_id) + ", " +
                      std::to_string(data.synth.k_expr) + ") differs from model (" +
                      std::to_string(model.k_id) + ", " + std::to_string(model.k_expr) + ")");
  }
  if (!data.dir && (data.synth.height != model.height || data.synth.width != model.width)) {
    throw ConfigError("data.synth image size differs from model input size");
  }
  if (data.holdout >= data.synth.per_cell && !data.dir) {
    throw ConfigError("data.holdout must leave training samples in every cell");
  }
  if (eval.folds < 2) throw ConfigError("eval.folds must be >= 2");
  if (eval.required.empty()) throw ConfigError("eval.required must name at least one expression");
  for (auto e : eval.required) {
    if (e >= model.k_expr) throw ConfigError("eval.required expression " + std::to_string(e) + " out of range");
  }
}

Json to_json(const RunConfig& cfg) {
  Json loss{{"alpha", cfg.loss.alpha}, {"margin", cfg.loss.margin}};
  return Json{{"seed", cfg.seed},
              {"output_dir", cfg.output_dir},
              {"model", to_json(cfg.model)},
              {"optim", optim_json(cfg.optim)},
              {"loss", loss},
              {"data", data_json(cfg.data)},
              {"stage", stage_json(cfg.stage)},
              {"eval", eval_json(cfg.eval)}};
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig cfg;
  ObjectReader r(j, "config");
  r.get("seed", cfg.seed);
  r.get("output_dir", cfg.output_dir);
  if (const Json* m = r.child("model")) cfg.model = model_config_from_json(*m, "model");
  if (const Json* o = r.child("optim")) cfg.optim = optim_from(*o);
  if (const Json* l = r.child("loss")) {
    ObjectReader lr(*l, "loss");
    lr.get("alpha", cfg.loss.alpha);
    lr.get("margin", cfg.loss.margin);
    lr.finish();
  }
  if (const Json* d = r.child("data")) {
    cfg.data = data_from(*d);
  } else {
    cfg.data.synth.k_id = cfg.model.k_id;
    cfg.data.synth.k_expr = cfg.model.k_expr;
    cfg.data.synth.height = cfg.model.height;
    cfg.data.synth.width = cfg.model.width;
  }
  if (const Json* s = r.child("stage")) cfg.stage = stage_from(*s);
  if (const Json* e = r.child("eval")) cfg.eval = eval_from(*e);
  r.finish();
  cfg.loss.k_id = cfg.model.k_id;
  cfg.loss.k_expr = cfg.model.k_expr;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  Json j;
  try {
    j = Json::parse(f);
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

void write_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_json(cfg).dump(2) << '\n';
}

std::string config_hash(const RunConfig& cfg) { return fnv1a_hex(to_json(cfg).dump()); }

RunConfig benchmark_config() {
  RunConfig cfg;
  cfg.model.height = 16;
  cfg.model.width = 16;
  cfg.model.trunk = {{8, 3, true}, {16, 3, true}};
  cfg.model.embedding_dim = 32;
  cfg.data.synth.height = 16;
  cfg.data.synth.width = 16;
  cfg.data.synth.noise_sigma = 0.35;
  cfg.optim.lr = 1e-3;
  cfg.optim.decay_points = {1200, 1600};
  cfg.stage.steps = 2000;
  cfg.validate();
  return cfg;
}

Dataset load_data(const DataSection& section) {
  if (section.dir) return load_manifest(*section.dir);
  return generate_synthetic(section.synth);
}

PreparedData prepare_data(const RunConfig& cfg) { return prepare_data(cfg, load_data(cfg.data)); }

PreparedData prepare_data(const RunConfig& cfg, Dataset data) {
  if (data.k_id != cfg.model.k_id || data.k_expr != cfg.model.k_expr) {
    throw ConfigError("dataset label space (" + std::to_string(data.k_id) + ", " +
                      std::to_string(data.k_expr) + ") differs from model config");
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Shape& s = data.images[i].shape();
    if (s[0] != cfg.model.channels || s[1] != cfg.model.height || s[2] != cfg.model.width) {
      throw DataError("record " + std::to_string(i) + " has image shape " + shape_str(s) +
                      ", model expects " + std::to_string(cfg.model.channels) + "x" +
                      std::to_string(cfg.model.height) + "x" + std::to_string(cfg.model.width));
    }
  }
  PreparedData p{std::move(data), {}, {}};
  p.split = split_holdout(p.data, cfg.data.holdout, cfg.data.split_seed);
  p.pairs = build_pairs(p.data, p.split.test, cfg.eval.pairs_pos, cfg.eval.pairs_neg, cfg.eval.folds,
                        cfg.eval.seed);
  return p;
}

TrainContext make_context(const RunConfig& cfg, const PreparedData& prep) {
  TrainContext ctx{prep.data, prep.split.train, cfg.optim, cfg.loss, cfg.stage, config_hash(cfg), {}};
  ctx.stage.seed = cfg.seed;
  return ctx;
}

}  // namespace dyntask
