#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dyntask/data.hpp"
#include "dyntask/eval.hpp"
#include "dyntask/losses.hpp"
#include "dyntask/model.hpp"
#include "dyntask/optim.hpp"
#include "dyntask/train.hpp"

namespace dyntask {

struct DataSection {
  std::optional<std::string> dir;  // generated dataset; otherwise `synth` is built in memory
  SynthSpec synth;
  std::size_t holdout = 3;  // test records per (identity, expression) cell
  std::uint64_t split_seed = 7;
};

struct EvalSection {
  std::size_t pairs_pos = 300;
  std::size_t pairs_neg = 300;
  std::size_t folds = 10;
  QuadrantCounts auth_counts{114, 1062, 494, 429};
  std::vector<std::size_t> required{kHappy, kSurprise};
  std::uint64_t seed = 11;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "run";
  ModelConfig model;
  OptimConfig optim;
  LossConfig loss;  // k_id / k_expr follow the model section
  DataSection data;
  StageConfig stage;  // stage kind comes from the command line
  EvalSection eval;

  void validate() const;
};

Json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void write_run_config(const RunConfig& cfg, const std::filesystem::path& path);
std::string config_hash(const RunConfig& cfg);

// Small network and step budget that trains in seconds per hundred steps on
// one core; used by the experiment harness and the acceptance suite.
RunConfig benchmark_config();

struct PreparedData {
  Dataset data;
  Split split;
  PairSet pairs;  // drawn from split.test
};

Dataset load_data(const DataSection& section);
PreparedData prepare_data(const RunConfig& cfg);
PreparedData prepare_data(const RunConfig& cfg, Dataset data);
TrainContext make_context(const RunConfig& cfg, const PreparedData& prep);

}  // namespace dyntask
