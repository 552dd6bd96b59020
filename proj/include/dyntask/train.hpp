#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dyntask/data.hpp"
#include "dyntask/errors.hpp"
#include "dyntask/losses.hpp"
#include "dyntask/model.hpp"
#include "dyntask/optim.hpp"

namespace dyntask {

enum class Stage { PretrainVerif, SingleExpr, MultiDynamic, MultiStatic };

// CLI spellings: pretrain, single-expr, multi-dynamic, multi-static.
const char* stage_name(Stage s);
Stage parse_stage(const std::string& name);

struct StageConfig {
  Stage stage = Stage::PretrainVerif;
  std::optional<double> static_w1;  // required for MultiStatic
  std::optional<double> static_w2;
  std::size_t steps = 2000;
  std::size_t eval_every = 200;
  std::size_t batch_size = 32;
  double center_rate = 0.5;
  // Multi-task stages start with a new identity classifier sized to the
  // training data instead of the pretrained one.
  bool fresh_identity_head = true;
  std::uint64_t seed = 1;

  void validate() const;
};

struct StepRecord {
  std::size_t step = 0;
  double lr = 0.0;
  std::optional<double> l1, l2, l3;
  std::optional<double> w1, w2;
  double seconds = 0.0;  // wall time since the stage started
  // Max-abs gradient reaching the dynamic-weight unit (dynamic runs only).
  std::optional<double> dwu_grad;
};

struct RunLog {
  std::string stage;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<StepRecord> records;

  // step,lr,l1,l2,l3,w1,w2,seconds; absent values are empty cells.
  std::string to_csv() const;
  void write(const std::filesystem::path& csv_path) const;  // plus <csv>.meta.json
  // FNV-1a over every column except wall time; equal for reproducible runs.
  std::string digest() const;
};

struct TrainResult {
  ModelState model;
  RunLog log;
};

// Raised on a non-finite loss or gradient; carries the state before the
// failing step.
class TrainingAborted : public NumericalError {
 public:
  TrainingAborted(const std::string& what, ModelState last_good, RunLog log)
      : NumericalError(what), last_good(std::move(last_good)), log(std::move(log)) {}
  ModelState last_good;
  RunLog log;
};

struct TrainContext {
  const Dataset& data;
  std::vector<std::size_t> pool;  // training records
  OptimConfig optim;
  LossConfig loss;
  StageConfig stage;
  std::string config_hash;
  // Called every stage.eval_every steps with the current state.
  std::function<void(std::size_t step, const ModelState&, const StepRecord&)> on_eval;
};

// Trunk + BRANCH 1 under L1. BRANCH 2 and the weight unit are untouched.
// Continuing from a network pretrained on other identities needs
// with_fresh_identity_head first (see fine_tune_start).
TrainResult train_pretrain_verif(ModelState init, const TrainContext& ctx);
// Transfer BRANCH 1 -> BRANCH 2, then trunk + BRANCH 2 under L2.
TrainResult train_single_expr(const ModelState& pretrained, const TrainContext& ctx);
// Transfer, then everything (weight unit included) under L3 with learned weights.
TrainResult train_multi_dynamic(const ModelState& pretrained, const TrainContext& ctx);
// Transfer, then trunk + both branches under L3 with constant weights.
TrainResult train_multi_static(const ModelState& pretrained, const TrainContext& ctx);

// Dispatch on ctx.stage.stage; `start` is the fresh init for pretraining and
// the pretrained state otherwise.
TrainResult run_stage(const ModelState& start, const TrainContext& ctx);

// Pretrained state with a new identity classifier for ctx's label space.
ModelState fine_tune_start(const ModelState& pretrained, const TrainContext& ctx);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace dyntask
