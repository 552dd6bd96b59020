#include "dyntask/losses.hpp"

#include <string>

#include "dyntask/errors.hpp"

namespace dyntask {

void LossConfig::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("loss.alpha must be >= 0");
  if (!(margin > 0.0)) throw ConfigError("loss.margin must be > 0");
  if (k_id < 2) throw ConfigError("loss.k_id must be >= 2");
  if (k_expr != 7 && k_expr != 8) throw ConfigError("loss.k_expr must be 7 or 8");
}

CenterBank::CenterBank(std::size_t classes, std::size_t dim, double rate)
    : centers_({classes, dim}), initialized_(classes, false), rate_(rate) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw ConfigError("center update rate must lie in (0, 1], got " + std::to_string(rate));
  }
}

std::size_t CenterBank::initialized_count() const {
  std::size_t n = 0;
  for (bool b : initialized_) n += b ? 1 : 0;
  return n;
}

std::vector<std::pair<std::size_t, std::vector<double>>> CenterBank::batch_means(
    const Tensor& embeddings, std::span<const std::size_t> labels) const {
  if (embeddings.rank() != 2 || embeddings.cols() != dim()) {
    throw DimensionError("center bank: embeddings " + shape_str(embeddings.shape()) +
                         " do not match center width " + std::to_string(dim()));
  }
  if (labels.size() != embeddings.rows()) {
    throw DimensionError("center bank: label count does not match embedding rows");
  }
  std::vector<std::vector<double>> sums(classes());
  std::vector<std::size_t> counts(classes(), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = labels[i];
    if (c >= classes()) {
      throw DataError("center bank: label " + std::to_string(c) + " out of range at row " +
                      std::to_string(i));
    }
    if (sums[c].empty()) sums[c].assign(dim(), 0.0);
    for (std::size_t d = 0; d < dim(); ++d) sums[c][d] += embeddings.at(i, d);
    ++counts[c];
  }
  std::vector<std::pair<std::size_t, std::vector<double>>> out;
  for (std::size_t c = 0; c < classes(); ++c) {
    if (counts[c] == 0) continue;
    for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
    out.emplace_back(c, std::move(sums[c]));
  }
  return out;
}

void CenterBank::update(const Tensor& embeddings, std::span<const std::size_t> labels) {
  for (auto& [c, mean] : batch_means(embeddings, labels)) {
    for (std::size_t d = 0; d < dim(); ++d) {
      centers_.at(c, d) =
          initialized_[c] ? (1.0 - rate_) * centers_.at(c, d) + rate_ * mean[d] : mean[d];
    }
    initialized_[c] = true;
  }
}

void CenterBank::seed_missing(const Tensor& embeddings, std::span<const std::size_t> labels) {
  for (auto& [c, mean] : batch_means(embeddings, labels)) {
    if (initialized_[c]) continue;
    for (std::size_t d = 0; d < dim(); ++d) centers_.at(c, d) = mean[d];
    initialized_[c] = true;
  }
}

void CenterBank::reset() {
  centers_ = Tensor::zeros(centers_.shape());
  initialized_.assign(initialized_.size(), false);
}

namespace loss {

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw DimensionError("cross_entropy: logits must be m x k");
  if (labels.size() != z.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(z.rows()) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= z.cols()) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0, " +
                      std::to_string(z.cols()) + ") at row " + std::to_string(i));
    }
  }
  // -log softmax = log sum exp(z - max) - (z - max)[label]
  Var shifted = ag::sub_rowmax(logits);
  Var log_norm = ag::log(ag::row_sum(ag::exp(shifted)));
  Var picked = ag::gather_cols(shifted, labels);
  return ag::sub(ag::reduce_sum(log_norm), ag::reduce_sum(picked));
}

Var class_wise_triplet(Var embeddings, std::span<const std::size_t> labels,
                       const CenterBank& bank, double margin) {
  const Tensor& x = embeddings.value();
  if (x.rank() != 2 || x.cols() != bank.dim()) {
    throw DimensionError("class_wise_triplet: embeddings " + shape_str(x.shape()) +
                         " do not match center width " + std::to_string(bank.dim()));
  }
  const std::size_t m = x.rows(), k = bank.classes();
  if (labels.size() != m) throw DimensionError("class_wise_triplet: label count mismatch");
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= k) {
      throw DataError("class_wise_triplet: label " + std::to_string(labels[i]) +
                      " out of range at row " + std::to_string(i));
    }
    if (!bank.initialized(labels[i])) {
      throw ProtocolError("class_wise_triplet: center of class " + std::to_string(labels[i]) +
                          " is not initialized (seed centers before computing the loss)");
    }
  }
  Tensor mask({m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l)
      mask.at(i, l) = (l != labels[i] && bank.initialized(l)) ? 1.0 : 0.0;

  Tape& tape = *embeddings.tape;
  Var centers = tape.constant(bank.centers(), "centers");
  Var dist = ag::pairwise_distance(embeddings, centers);
  Var positive = ag::broadcast_cols(ag::gather_cols(dist, labels), k);
  Var hinge = ag::relu(ag::add_scalar(ag::sub(positive, dist), margin));
  return ag::reduce_sum(ag::mul(hinge, tape.constant(std::move(mask), "negative_mask")));
}

Var verification_loss(Var logits, std::span<const std::size_t> labels, Var embeddings,
                      const CenterBank& bank, const LossConfig& cfg) {
  Var ce = cross_entropy(logits, labels);
  Var triplet = class_wise_triplet(embeddings, labels, bank, cfg.margin);
  return ag::add(ce, ag::scale(triplet, cfg.alpha));
}

Var expression_loss(Var logits, std::span<const std::size_t> labels) {
  return cross_entropy(logits, labels);
}

Var overall_loss(Var l1, Var l2, Var w1, Var w2) {
  for (Var v : {l1, l2, w1, w2}) {
    if (v.value().numel() != 1) throw ContractError("overall_loss: all inputs must be scalars");
  }
  return ag::add(ag::mul(ag::add_scalar(w1, 1.0), l1), ag::mul(w2, l2));
}

}  // namespace loss

}  // namespace dyntask
