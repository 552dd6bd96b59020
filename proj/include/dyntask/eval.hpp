#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "dyntask/data.hpp"
#include "dyntask/model.hpp"

namespace dyntask {

// Eval-mode BRANCH 1 bottleneck activations scaled to unit length, one row
// per image. Processed in chunks of `chunk` images.
Tensor embed(const ModelState& model, const std::vector<const Tensor*>& images,
             std::size_t chunk = 128);
Tensor embed(const ModelState& model, const Dataset& data, const std::vector<std::size_t>& records);
Tensor embed_all(const ModelState& model, const Dataset& data);

double row_distance(const Tensor& emb, std::size_t a, std::size_t b);

struct ThresholdChoice {
  double threshold = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
};

// Best "same iff d <= t" threshold over the midpoints of sorted distinct
// distances plus one value below and one above the range. Ties keep the
// smallest threshold.
ThresholdChoice select_threshold(const std::vector<double>& distances, const std::vector<bool>& same);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct VerifReport {
  std::size_t folds = 0;
  std::vector<double> fold_accuracy;
  std::vector<double> thresholds;
  double mean = 0.0;
  double stddev = 0.0;  // population deviation over folds
  std::vector<RocPoint> roc;  // (0,0) first, then the sweep ending at (1,1)
  double auc = 0.0;
  double calibrated_threshold = 0.0;  // chosen on all pairs, for deployment

  std::string to_text() const;
  std::string roc_csv() const;  // threshold,fpr,tpr
};

inline constexpr std::size_t kRocSweepPoints = 1000;

VerifReport verify_distances(const std::vector<double>& distances, const std::vector<bool>& same,
                             const std::vector<std::size_t>& fold, std::size_t folds);
// Embedding rows are indexed by dataset record.
VerifReport verify_pairs(const Tensor& embeddings, const PairSet& pairs);

struct ConfusionMatrix {
  explicit ConfusionMatrix(std::size_t k = 0) : k(k), counts(k * k, 0) {}
  std::size_t k;
  std::vector<std::size_t> counts;  // row = truth, column = predicted

  void add(std::size_t truth, std::size_t predicted);
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * k + predicted]; }
  std::size_t total() const;
  std::size_t row_sum(std::size_t truth) const;
  double accuracy() const;
  std::string to_csv() const;  // truth,predicted,count
  std::string to_text() const;
};

// Argmax with ties going to the lowest id.
std::size_t argmax_row(const Tensor& scores, std::size_t row);

// Eval-mode BRANCH 2 predictions, chunked like embed().
std::vector<std::size_t> predict_expressions(const ModelState& model,
                                             const std::vector<const Tensor*>& images,
                                             std::size_t chunk = 128);

struct ExprResult {
  std::vector<std::size_t> predictions;
  ConfusionMatrix confusion;
  double accuracy = 0.0;  // streaming count, equals confusion.accuracy()
};

ExprResult classify_expressions(const ModelState& model, const Dataset& data,
                                const std::vector<std::size_t>& records);

struct AuthDecision {
  double distance = 0.0;
  std::size_t predicted_expression = 0;
  bool verif = false;
  bool live = false;
  bool auth = false;
};

AuthDecision fuse_decision(double distance, double threshold, std::size_t predicted,
                           std::size_t required);
AuthDecision authenticate(const ModelState& model, const Dataset& data, const AuthSample& sample,
                          double threshold);
std::vector<AuthDecision> authenticate_all(const ModelState& model, const Dataset& data,
                                           const std::vector<AuthSample>& samples,
                                           double threshold);

struct AuthReport {
  double acc_auth = 0.0;
  double acc_verif = 0.0;
  double acc_expre = 0.0;
  double acc_live = 0.0;
  // [truth][decision] for the fused decision; truth = ID flag AND Ex flag.
  std::array<std::array<std::size_t, 2>, 2> fused{};
  // Per quadrant: samples and accepted samples.
  std::array<std::size_t, 4> quadrant_total{};
  std::array<std::size_t, 4> quadrant_accepted{};

  std::string to_text() const;
  std::string quadrant_csv() const;  // quadrant,total,accepted,correct
};

AuthReport auth_metrics(const std::vector<AuthDecision>& decisions,
                        const std::vector<AuthSample>& samples);

}  // namespace dyntask
