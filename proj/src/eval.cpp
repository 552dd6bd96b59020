#include "dyntask/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "dyntask/tape.hpp"

namespace dyntask {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <typename Fn>
Tensor run_chunks(const ModelState& model, const std::vector<const Tensor*>& images,
                  std::size_t chunk, Fn&& head) {
  if (chunk == 0) throw ConfigError("chunk size must be >= 1");
  ModelState state = model;
  Rng unused(0);
  std::vector<double> out;
  std::size_t cols = 0;
  for (std::size_t lo = 0; lo < images.size(); lo += chunk) {
    const std::size_t hi = std::min(images.size(), lo + chunk);
    std::vector<const Tensor*> part(images.begin() + lo, images.begin() + hi);
    Tape tape;
    Binding b(tape, state, 0);
    Var shared = forward_shared(b, tape.constant(stack_images(part), "images"), Mode::Eval);
    const Tensor t = head(b, shared, unused).value();
    cols = t.cols();
    out.insert(out.end(), t.raw().begin(), t.raw().end());
  }
  Tensor result = Tensor::zeros({images.size(), cols});
  std::copy(out.begin(), out.end(), result.raw().begin());
  return result;
}

std::vector<const Tensor*> images_of(const Dataset& data, const std::vector<std::size_t>& records) {
  std::vector<const Tensor*> imgs;
  imgs.reserve(records.size());
  for (auto r : records) {
    if (r >= data.size()) throw DataError("record " + std::to_string(r) + " out of range");
    imgs.push_back(&data.images[r]);
  }
  return imgs;
}

}  // namespace

Tensor embed(const ModelState& model, const std::vector<const Tensor*>& images, std::size_t chunk) {
  if (images.empty()) return Tensor::zeros({0, model.config.embedding_dim});
  Tensor e = run_chunks(model, images, chunk, [](Binding& b, Var shared, Rng& rng) {
    return forward_branch1(b, shared, Mode::Eval, rng).embedding;
  });
  const std::size_t dim = e.cols();
  for (std::size_t i = 0; i < e.rows(); ++i) {
    double* row = e.raw().data() + i * dim;
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) sq += row[j] * row[j];
    const double norm = std::sqrt(sq);
    if (norm == 0.0) {
      // Direction undefined; pick the first axis so distances stay finite.
      row[0] = 1.0;
      continue;
    }
    for (std::size_t j = 0; j < dim; ++j) row[j] /= norm;
  }
  return e;
}

Tensor embed(const ModelState& model, const Dataset& data, const std::vector<std::size_t>& records) {
  return embed(model, images_of(data, records));
}

Tensor embed_all(const ModelState& model, const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return embed(model, data, all);
}

double row_distance(const Tensor& emb, std::size_t a, std::size_t b) {
  const std::size_t dim = emb.cols();
  if (a >= emb.rows() || b >= emb.rows()) throw DataError("embedding row out of range");
  double sq = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    const double d = emb.at(a, j) - emb.at(b, j);
    sq += d * d;
  }
  return std::sqrt(sq);
}

ThresholdChoice select_threshold(const std::vector<double>& distances, const std::vector<bool>& same) {
  if (distances.size() != same.size()) throw DimensionError("distances and labels differ in length");
  if (distances.empty()) throw ProtocolError("threshold selection needs at least one pair");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  std::size_t neg_total = 0;
  for (bool s : same) neg_total += s ? 0 : 1;

  // Below the smallest distance nothing is accepted.
  ThresholdChoice best{distances[order.front()] - 1.0, neg_total, distances.size()};
  std::size_t pos_le = 0, neg_le = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double d = distances[order[i]];
    while (i < order.size() && distances[order[i]] == d) {
      (same[order[i]] ? pos_le : neg_le) += 1;
      ++i;
    }
    const double t = i < order.size() ? 0.5 * (d + distances[order[i]]) : d + 1.0;
    const std::size_t correct = pos_le + (neg_total - neg_le);
    if (correct > best.correct) {
      best.threshold = t;
      best.correct = correct;
    }
  }
  return best;
}

VerifReport verify_distances(const std::vector<double>& distances, const std::vector<bool>& same,
                             const std::vector<std::size_t>& fold, std::size_t folds) {
  if (distances.size() != same.size() || distances.size() != fold.size()) {
    throw DimensionError("distances, labels and folds differ in length");
  }
  if (folds < 2) throw ProtocolError("verification needs at least 2 folds");
  std::vector<std::size_t> pos(folds, 0), neg(folds, 0);
  for (std::size_t i = 0; i < fold.size(); ++i) {
    if (fold[i] >= folds) throw ProtocolError("pair " + std::to_string(i) + " has fold out of range");
    (same[i] ? pos : neg)[fold[i]] += 1;
  }
  for (std::size_t f = 0; f < folds; ++f) {
    if (pos[f] == 0 || neg[f] == 0) {
      throw ProtocolError("fold " + std::to_string(f) + " is degenerate (needs both positive and negative pairs)");
    }
  }

  VerifReport rep;
  rep.folds = folds;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<double> td;
    std::vector<bool> ts;
    for (std::size_t i = 0; i < distances.size(); ++i) {
      if (fold[i] != f) {
        td.push_back(distances[i]);
        ts.push_back(same[i]);
      }
    }
    const double t = select_threshold(td, ts).threshold;
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
      if (fold[i] != f) continue;
      ++total;
      if ((distances[i] <= t) == same[i]) ++correct;
    }
    rep.thresholds.push_back(t);
    rep.fold_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(total));
  }
  rep.mean = std::accumulate(rep.fold_accuracy.begin(), rep.fold_accuracy.end(), 0.0) /
             static_cast<double>(folds);
  double var = 0.0;
  for (double a : rep.fold_accuracy) var += (a - rep.mean) * (a - rep.mean);
  rep.stddev = std::sqrt(var / static_cast<double>(folds));
  rep.calibrated_threshold = select_threshold(distances, same).threshold;

  const double lo = *std::min_element(distances.begin(), distances.end());
  const double hi = *std::max_element(distances.begin(), distances.end());
  const std::size_t pos_total = std::accumulate(pos.begin(), pos.end(), std::size_t{0});
  const std::size_t neg_total = std::accumulate(neg.begin(), neg.end(), std::size_t{0});
  std::vector<double> sorted_pos, sorted_neg;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    (same[i] ? sorted_pos : sorted_neg).push_back(distances[i]);
  }
  std::sort(sorted_pos.begin(), sorted_pos.end());
  std::sort(sorted_neg.begin(), sorted_neg.end());
  auto count_le = [](const std::vector<double>& v, double t) {
    return static_cast<double>(std::upper_bound(v.begin(), v.end(), t) - v.begin());
  };
  rep.roc.push_back({lo - 1.0, 0.0, 0.0});
  for (std::size_t k = 0; k < kRocSweepPoints; ++k) {
    double t = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(kRocSweepPoints - 1);
    if (k == kRocSweepPoints - 1) t = hi;
    rep.roc.push_back({t, count_le(sorted_neg, t) / static_cast<double>(neg_total),
                       count_le(sorted_pos, t) / static_cast<double>(pos_total)});
  }
  for (std::size_t k = 1; k < rep.roc.size(); ++k) {
    rep.auc += (rep.roc[k].fpr - rep.roc[k - 1].fpr) * 0.5 * (rep.roc[k].tpr + rep.roc[k - 1].tpr);
  }
  return rep;
}

VerifReport verify_pairs(const Tensor& embeddings, const PairSet& pairs) {
  std::vector<double> d;
  std::vector<bool> s;
  std::vector<std::size_t> f;
  for (const auto& p : pairs.pairs) {
    d.push_back(row_distance(embeddings, p.a, p.b));
    s.push_back(p.same);
    f.push_back(p.fold);
  }
  return verify_distances(d, s, f, pairs.folds);
}

std::string VerifReport::to_text() const {
  std::ostringstream os;
  os << "verification\n";
  os << "folds: " << folds << "\n";
  os << "accuracy_mean: " << num(mean) << "\n";
  os << "accuracy_std: " << num(stddev) << "\n";
  os << "auc: " << num(auc) << "\n";
  os << "calibrated_threshold: " << num(calibrated_threshold) << "\n";
  for (std::size_t f = 0; f < folds; ++f) {
    os << "fold " << f << ": threshold " << num(thresholds[f]) << " accuracy " << num(fold_accuracy[f])
       << "\n";
  }
  return os.str();
}

std::string VerifReport::roc_csv() const {
  std::string out = "threshold,fpr,tpr\n";
  for (const auto& p : roc) out += num(p.threshold) + "," + num(p.fpr) + "," + num(p.tpr) + "\n";
  return out;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= k || predicted >= k) throw DataError("confusion label out of range");
  ++counts[truth * k + predicted];
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < k; ++p) s += at(truth, p);
  return s;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  if (n == 0) return 0.0;
  std::size_t diag = 0;
  for (std::size_t i = 0; i < k; ++i) diag += at(i, i);
  return static_cast<double>(diag) / static_cast<double>(n);
}

std::string ConfusionMatrix::to_csv() const {
  std::string out = "truth,predicted,count\n";
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) {
      out += std::to_string(t) + "," + std::to_string(p) + "," + std::to_string(at(t, p)) + "\n";
    }
  }
  return out;
}

std::string ConfusionMatrix::to_text() const {
  std::ostringstream os;
  os << "expression\n";
  os << "samples: " << total() << "\n";
  os << "accuracy: " << num(accuracy()) << "\n";
  os << "confusion (rows truth, columns predicted):\n";
  for (std::size_t t = 0; t < k; ++t) {
    os << (t < kExpressionNames.size() ? kExpressionNames[t] : "?");
    for (std::size_t p = 0; p < k; ++p) os << ' ' << at(t, p);
    os << "\n";
  }
  return os.str();
}

std::size_t argmax_row(const Tensor& scores, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < scores.cols(); ++j) {
    if (scores.at(row, j) > scores.at(row, best)) best = j;
  }
  return best;
}

std::vector<std::size_t> predict_expressions(const ModelState& model,
                                             const std::vector<const Tensor*>& images,
                                             std::size_t chunk) {
  if (images.empty()) return {};
  Tensor probs = run_chunks(model, images, chunk, [](Binding& b, Var shared, Rng& rng) {
    return nn::softmax_rows(forward_branch2(b, shared, Mode::Eval, rng));
  });
  std::vector<std::size_t> pred(images.size());
  for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = argmax_row(probs, i);
  return pred;
}

ExprResult classify_expressions(const ModelState& model, const Dataset& data,
                                const std::vector<std::size_t>& records) {
  ExprResult res{predict_expressions(model, images_of(data, records)),
                 ConfusionMatrix(model.config.k_expr), 0.0};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const std::size_t truth = data.records[records[i]].expression;
    res.confusion.add(truth, res.predictions[i]);
    if (truth == res.predictions[i]) ++correct;
  }
  if (!records.empty()) res.accuracy = static_cast<double>(correct) / static_cast<double>(records.size());
  return res;
}

AuthDecision fuse_decision(double distance, double threshold, std::size_t predicted,
                           std::size_t required) {
  AuthDecision d;
  d.distance = distance;
  d.predicted_expression = predicted;
  d.verif = distance <= threshold;
  d.live = predicted == required;
  d.auth = d.verif && d.live;
  return d;
}

AuthDecision authenticate(const ModelState& model, const Dataset& data, const AuthSample& sample,
                          double threshold) {
  return authenticate_all(model, data, {sample}, threshold).front();
}

std::vector<AuthDecision> authenticate_all(const ModelState& model, const Dataset& data,
                                           const std::vector<AuthSample>& samples,
                                           double threshold) {
  std::vector<std::size_t> users, refs;
  for (const auto& s : samples) {
    users.push_back(s.user);
    refs.push_back(s.reference);
  }
  const Tensor eu = embed(model, data, users);
  const Tensor er = embed(model, data, refs);
  const auto pred = predict_expressions(model, images_of(data, users));
  std::vector<AuthDecision> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < eu.cols(); ++j) {
      const double d = eu.at(i, j) - er.at(i, j);
      sq += d * d;
    }
    out.push_back(fuse_decision(std::sqrt(sq), threshold, pred[i], samples[i].required_expression));
  }
  return out;
}

AuthReport auth_metrics(const std::vector<AuthDecision>& decisions,
                        const std::vector<AuthSample>& samples) {
  if (decisions.empty()) throw ProtocolError("auth metrics need at least one decision");
  if (decisions.size() != samples.size()) throw DimensionError("decisions and samples differ in length");
  AuthReport rep;
  std::size_t auth = 0, verif = 0, expre = 0, live = 0;
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    const auto& d = decisions[i];
    const auto& s = samples[i];
    const bool truth = s.same_identity && s.expression_match;
    auth += d.auth == truth;
    verif += d.verif == s.same_identity;
    expre += d.predicted_expression == s.user_expression;
    live += d.live == s.expression_match;
    ++rep.fused[truth][d.auth];
    const std::size_t q = quadrant_of(s);
    ++rep.quadrant_total[q];
    rep.quadrant_accepted[q] += d.auth;
  }
  const double n = static_cast<double>(decisions.size());
  rep.acc_auth = auth / n;
  rep.acc_verif = verif / n;
  rep.acc_expre = expre / n;
  rep.acc_live = live / n;
  return rep;
}

std::string AuthReport::to_text() const {
  std::ostringstream os;
  os << "authentication\n";
  os << "Acc_auth: " << num(acc_auth) << "\n";
  os << "Acc_verif: " << num(acc_verif) << "\n";
  os << "Acc_expre: " << num(acc_expre) << "\n";
  os << "Acc_live: " << num(acc_live) << "\n";
  os << "fused (rows truth negative/positive, columns rejected/accepted):\n";
  os << fused[0][0] << ' ' << fused[0][1] << "\n" << fused[1][0] << ' ' << fused[1][1] << "\n";
  return os.str();
}

std::string AuthReport::quadrant_csv() const {
  std::string out = "quadrant,total,accepted,correct\n";
  for (std::size_t q = 0; q < 4; ++q) {
    const std::size_t correct = q == 0 ? quadrant_accepted[q] : quadrant_total[q] - quadrant_accepted[q];
    out += std::string(quadrant_name(q)) + "," + std::to_string(quadrant_total[q]) + "," +
           std::to_string(quadrant_accepted[q]) + "," + std::to_string(correct) + "\n";
  }
  return out;
}

}  // namespace dyntask
