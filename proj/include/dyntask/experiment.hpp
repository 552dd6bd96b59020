#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dyntask/run_config.hpp"

namespace dyntask {

// Pretraining uses its own identity population (a stand-in for a large face
// corpus); every later stage trains on the target data.
struct ExperimentConfig {
  RunConfig target;
  SynthSpec pretrain_data;
  std::size_t seeds = 5;
};

ExperimentConfig benchmark_experiment();
// Target config with the model and loss label space of the pretraining data.
RunConfig pretrain_run_config(const ExperimentConfig& exp);

struct ModelScores {
  double verif = 0.0;  // 10-fold mean on held-out pairs
  double expr = 0.0;   // held-out expression accuracy
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  ModelScores pretrained;    // before seeing target identities
  ModelScores single_verif;  // pretrained, fine-tuned with L1 on the target data
  ModelScores single_expr;   // transferred trunk + BRANCH 2 under L2
  ModelScores dynamic;
  std::vector<ModelScores> statics;  // one per requested static setting
  double three_stage_seconds = 0.0;  // pretrain + single-task + multi-dynamic
  RunLog dynamic_log;
  ModelState dynamic_model;
};

inline const std::vector<std::array<double, 2>> kStaticSettings{{1.0, 1.0}, {1.0, 2.0}, {1.0, 0.5}};

ModelScores score_model(const ModelState& model, const PreparedData& prep);

// Trains every stage for one seed. `progress` receives one line per stage.
SeedOutcome run_seed(const ExperimentConfig& exp, const PreparedData& target,
                     const Dataset& pretrain_data, std::uint64_t seed,
                     const std::vector<std::array<double, 2>>& statics,
                     const std::function<void(const std::string&)>& progress = {});

double median(std::vector<double> v);

}  // namespace dyntask
