#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dyntask/ops.hpp"
#include "dyntask/tensor.hpp"

namespace dyntask {

struct LossConfig {
  double alpha = 1e-4;   // weight of the class-wise triplet term inside L1
  double margin = 10.0;  // beta_0
  std::size_t k_id = 20;
  std::size_t k_expr = 7;

  // Throws ConfigError on alpha < 0, margin <= 0 or k_expr outside {7, 8}.
  void validate() const;
};

/// Per-identity embedding centers. A center takes part in the triplet loss
/// only once initialized; centers are constants within a training step and
/// are refreshed from detached batch embeddings afterwards.
class CenterBank {
 public:
  CenterBank(std::size_t classes, std::size_t dim, double rate = 0.5);

  std::size_t classes() const { return initialized_.size(); }
  std::size_t dim() const { return centers_.dim(1); }
  double rate() const { return rate_; }
  bool initialized(std::size_t c) const { return initialized_.at(c); }
  std::size_t initialized_count() const;
  const Tensor& centers() const { return centers_; }

  // For each class present in the batch: first sighting copies the batch
  // mean, later sightings blend (1 - rate) * center + rate * mean.
  void update(const Tensor& embeddings, std::span<const std::size_t> labels);
  // Initializes classes present in the batch that have no center yet;
  // initialized centers are left alone.
  void seed_missing(const Tensor& embeddings, std::span<const std::size_t> labels);
  void reset();

 private:
  // Per-class batch means for classes present in the batch.
  std::vector<std::pair<std::size_t, std::vector<double>>> batch_means(
      const Tensor& embeddings, std::span<const std::size_t> labels) const;

  Tensor centers_;
  std::vector<bool> initialized_;
  double rate_;
};

namespace loss {

// Batch sum of -log softmax(logits)[label]. DataError names the offending row
// when a label is out of range.
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

// sum_i sum_{l != y_i, l initialized} max(d(x_i, c_{y_i}) + margin - d(x_i, c_l), 0)
// with Euclidean d. Gradients reach the embeddings only. ProtocolError when
// an anchor's own center is uninitialized.
Var class_wise_triplet(Var embeddings, std::span<const std::size_t> labels,
                       const CenterBank& bank, double margin);

// L1 = cross_entropy + alpha * class_wise_triplet
Var verification_loss(Var logits, std::span<const std::size_t> labels, Var embeddings,
                      const CenterBank& bank, const LossConfig& cfg);

// L2: cross entropy over expression logits.
Var expression_loss(Var logits, std::span<const std::size_t> labels);

// L3 = (1 + w1) * L1 + w2 * L2, with w1, w2 live tape nodes.
Var overall_loss(Var l1, Var l2, Var w1, Var w2);

}  // namespace loss

}  // namespace dyntask
