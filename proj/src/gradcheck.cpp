#include "dyntask/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <random>

#include "dyntask/layers.hpp"
#include "dyntask/losses.hpp"
#include "dyntask/model.hpp"
#include "dyntask/ops.hpp"

namespace dyntask {

namespace {

using Build = std::function<std::pair<Var, std::vector<Var>>(Tape&, const std::vector<Tensor>&)>;

Tensor uniform(const Shape& s, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t = Tensor::zeros(s);
  for (double& v : t.raw()) v = d(rng);
  return t;
}

// Magnitudes in [lo, hi] with random sign: keeps clear of kinks at zero.
Tensor away_from_zero(const Shape& s, Rng& rng, double lo = 0.1, double hi = 1.0) {
  Tensor t = uniform(s, rng, lo, hi);
  std::bernoulli_distribution flip(0.5);
  for (double& v : t.raw()) v = flip(rng) ? -v : v;
  return t;
}

// Shuffled, well separated values so max-type ops have unique winners.
Tensor distinct(const Shape& s, Rng& rng) {
  Tensor t = Tensor::zeros(s);
  std::vector<double> vals(t.numel());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(vals.size());
  std::shuffle(vals.begin(), vals.end(), rng);
  std::copy(vals.begin(), vals.end(), t.raw().begin());
  return t;
}

std::vector<Var> leaves(Tape& tape, const std::vector<Tensor>& in) {
  std::vector<Var> out;
  for (std::size_t i = 0; i < in.size(); ++i) out.push_back(tape.leaf(in[i], "x" + std::to_string(i)));
  return out;
}

// Generic case: every input becomes a leaf and fn maps them to the output.
GradCheckCase simple(const std::string& name, std::vector<Tensor> inputs,
                     std::function<Var(const std::vector<Var>&)> fn) {
  Build build = [fn](Tape& tape, const std::vector<Tensor>& in) {
    auto xs = leaves(tape, in);
    return std::pair{fn(xs), xs};
  };
  return {name, std::move(inputs), build, 0};
}

CenterBank random_bank(std::size_t k, std::size_t dim, Rng& rng, double spread) {
  CenterBank bank(k, dim);
  Tensor c = uniform({k, dim}, rng, -spread, spread);
  std::vector<std::size_t> labels(k);
  for (std::size_t i = 0; i < k; ++i) labels[i] = i;
  bank.update(c, labels);
  return bank;
}

std::vector<std::size_t> random_labels(std::size_t m, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, k - 1);
  std::vector<std::size_t> out(m);
  for (auto& v : out) v = d(rng);
  return out;
}

GradCheckCase end_to_end_l3(std::uint64_t seed) {
  ModelConfig cfg;
  cfg.height = 8;
  cfg.width = 8;
  cfg.trunk = {{3, 3, true}};
  cfg.embedding_dim = 5;
  cfg.k_id = 4;
  cfg.k_expr = 7;
  cfg.dropout = 0.5;
  Rng rng(seed);
  auto state = std::make_shared<ModelState>(ModelState::init(cfg, rng));
  // Non-zero biases and affine terms so every parameter kind is exercised.
  for (auto& p : state->params()) {
    if (p.kind == ParamKind::Bias || p.kind == ParamKind::NormShift) {
      *p.value = uniform(p.value->shape(), rng, -0.2, 0.2);
    }
  }
  const std::size_t m = 6;
  auto images = std::make_shared<Tensor>(uniform({m, 1, 8, 8}, rng, 0.0, 1.0));
  auto ids = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{0, 1, 2, 3, 0, 1});
  auto exprs = std::make_shared<std::vector<std::size_t>>(random_labels(m, cfg.k_expr, rng));
  auto bank = std::make_shared<CenterBank>(random_bank(cfg.k_id, cfg.embedding_dim, rng, 0.5));

  std::vector<std::string> names;
  std::vector<Tensor> inputs;
  for (auto& p : state->params()) {
    if (p.kind == ParamKind::Buffer) continue;
    names.push_back(p.name);
    inputs.push_back(*p.value);
  }
  Build build = [state, images, ids, exprs, bank, names, seed](Tape& tape, const std::vector<Tensor>& in) {
    ModelState s = *state;
    for (std::size_t i = 0; i < names.size(); ++i) *s.find(names[i]) = in[i];
    Binding b(tape, s, kAllGroups);
    Rng drop(seed ^ 0x5eedULL);
    Var shared = forward_shared(b, tape.constant(*images, "images"), Mode::Train);
    Branch1Out br = forward_branch1(b, shared, Mode::Train, drop);
    Var l2 = loss::expression_loss(forward_branch2(b, shared, Mode::Train, drop), *exprs);
    Var l1 = loss::verification_loss(br.logits, *ids, br.embedding, *bank, LossConfig{1e-4, 10.0, 4, 7});
    TaskWeights w = dynamic_weights(b, shared);
    Var out = loss::overall_loss(l1, l2, w.w1, w.w2);
    std::vector<Var> xs;
    for (const auto& n : names) xs.push_back(b.param(n));
    return std::pair{out, xs};
  };
  return {"L3", std::move(inputs), build, 0};
}

using Factory = std::function<GradCheckCase(Rng&, std::uint64_t)>;

const std::vector<std::pair<std::string, Factory>>& registry() {
  static const std::vector<std::pair<std::string, Factory>> reg = [] {
    std::vector<std::pair<std::string, Factory>> r;
    auto add = [&](const std::string& n, Factory f) { r.emplace_back(n, std::move(f)); };
    add("matmul", [](Rng& g, std::uint64_t) {
      return simple("matmul", {uniform({3, 4}, g, -1, 1), uniform({4, 2}, g, -1, 1)},
                    [](const auto& x) { return ag::matmul(x[0], x[1]); });
    });
    add("conv2d", [](Rng& g, std::uint64_t) {
      return simple("conv2d", {uniform({2, 2, 5, 5}, g, -1, 1), uniform({3, 2, 3, 3}, g, -1, 1)},
                    [](const auto& x) { return ag::conv2d(x[0], x[1], 1, 1); });
    });
    add("conv2d_stride2", [](Rng& g, std::uint64_t) {
      return simple("conv2d_stride2", {uniform({2, 1, 6, 6}, g, -1, 1), uniform({2, 1, 3, 3}, g, -1, 1)},
                    [](const auto& x) { return ag::conv2d(x[0], x[1], 2, 0); });
    });
    add("add", [](Rng& g, std::uint64_t) {
      return simple("add", {uniform({3, 4}, g, -1, 1), uniform({3, 4}, g, -1, 1)},
                    [](const auto& x) { return ag::add(x[0], x[1]); });
    });
    add("add_scalar_broadcast", [](Rng& g, std::uint64_t) {
      return simple("add_scalar_broadcast", {uniform({3, 4}, g, -1, 1), uniform({1}, g, -1, 1)},
                    [](const auto& x) { return ag::add(x[0], x[1]); });
    });
    add("sub", [](Rng& g, std::uint64_t) {
      return simple("sub", {uniform({3, 4}, g, -1, 1), uniform({1}, g, -1, 1)},
                    [](const auto& x) { return ag::sub(x[0], x[1]); });
    });
    add("mul", [](Rng& g, std::uint64_t) {
      return simple("mul", {uniform({3, 4}, g, -1, 1), uniform({3, 4}, g, -1, 1)},
                    [](const auto& x) { return ag::mul(x[0], x[1]); });
    });
    add("div", [](Rng& g, std::uint64_t) {
      return simple("div", {uniform({3, 4}, g, -1, 1), away_from_zero({3, 4}, g, 0.5, 2.0)},
                    [](const auto& x) { return ag::div(x[0], x[1]); });
    });
    add("relu", [](Rng& g, std::uint64_t) {
      return simple("relu", {away_from_zero({4, 5}, g)}, [](const auto& x) { return ag::relu(x[0]); });
    });
    add("exp", [](Rng& g, std::uint64_t) {
      return simple("exp", {uniform({3, 4}, g, -1, 1)}, [](const auto& x) { return ag::exp(x[0]); });
    });
    add("log", [](Rng& g, std::uint64_t) {
      return simple("log", {uniform({3, 4}, g, 0.5, 2)}, [](const auto& x) { return ag::log(x[0]); });
    });
    add("sqrt", [](Rng& g, std::uint64_t) {
      return simple("sqrt", {uniform({3, 4}, g, 0.5, 2)}, [](const auto& x) { return ag::sqrt(x[0]); });
    });
    add("square", [](Rng& g, std::uint64_t) {
      return simple("square", {uniform({3, 4}, g, -1, 1)}, [](const auto& x) { return ag::square(x[0]); });
    });
    add("max_const", [](Rng& g, std::uint64_t) {
      Tensor x = away_from_zero({3, 4}, g);
      for (double& v : x.raw()) v += 0.25;  // kink at 0.25
      return simple("max_const", {x}, [](const auto& v) { return ag::max_const(v[0], 0.25); });
    });
    add("scale", [](Rng& g, std::uint64_t) {
      return simple("scale", {uniform({3, 4}, g, -1, 1)}, [](const auto& x) { return ag::scale(x[0], -1.7); });
    });
    add("add_scalar", [](Rng& g, std::uint64_t) {
      return simple("add_scalar", {uniform({3, 4}, g, -1, 1)},
                    [](const auto& x) { return ag::add_scalar(x[0], 0.3); });
    });
    add("reduce_sum", [](Rng& g, std::uint64_t) {
      return simple("reduce_sum", {uniform({3, 4}, g, -1, 1)}, [](const auto& x) { return ag::reduce_sum(x[0]); });
    });
    add("reduce_mean", [](Rng& g, std::uint64_t) {
      return simple("reduce_mean", {uniform({3, 4}, g, -1, 1)},
                    [](const auto& x) { return ag::reduce_mean(x[0]); });
    });
    add("row_sum", [](Rng& g, std::uint64_t) {
      return simple("row_sum", {uniform({3, 4}, g, -1, 1)}, [](const auto& x) { return ag::row_sum(x[0]); });
    });
    add("mean_rows", [](Rng& g, std::uint64_t) {
      return simple("mean_rows", {uniform({3, 4}, g, -1, 1)}, [](const auto& x) { return ag::mean_rows(x[0]); });
    });
    add("sub_rowmax", [](Rng& g, std::uint64_t) {
      return simple("sub_rowmax", {distinct({3, 4}, g)}, [](const auto& x) { return ag::sub_rowmax(x[0]); });
    });
    add("add_rowvec", [](Rng& g, std::uint64_t) {
      return simple("add_rowvec", {uniform({3, 4}, g, -1, 1), uniform({4}, g, -1, 1)},
                    [](const auto& x) { return ag::add_rowvec(x[0], x[1]); });
    });
    add("add_channel", [](Rng& g, std::uint64_t) {
      return simple("add_channel", {uniform({2, 3, 2, 2}, g, -1, 1), uniform({3}, g, -1, 1)},
                    [](const auto& x) { return ag::add_channel(x[0], x[1]); });
    });
    add("broadcast_cols", [](Rng& g, std::uint64_t) {
      return simple("broadcast_cols", {uniform({3, 1}, g, -1, 1)},
                    [](const auto& x) { return ag::broadcast_cols(x[0], 4); });
    });
    add("gather_cols", [](Rng& g, std::uint64_t) {
      auto labels = std::make_shared<std::vector<std::size_t>>(random_labels(5, 4, g));
      return simple("gather_cols", {uniform({5, 4}, g, -1, 1)},
                    [labels](const auto& x) { return ag::gather_cols(x[0], *labels); });
    });
    add("pick", [](Rng& g, std::uint64_t) {
      return simple("pick", {uniform({3, 4}, g, -1, 1)}, [](const auto& x) { return ag::pick(x[0], 7); });
    });
    add("reshape", [](Rng& g, std::uint64_t) {
      return simple("reshape", {uniform({3, 4}, g, -1, 1)},
                    [](const auto& x) { return ag::reshape(x[0], {2, 6}); });
    });
    add("maxpool2x2", [](Rng& g, std::uint64_t) {
      return simple("maxpool2x2", {distinct({2, 2, 5, 5}, g)}, [](const auto& x) { return ag::maxpool2x2(x[0]); });
    });
    add("softmax_rows", [](Rng& g, std::uint64_t) {
      return simple("softmax_rows", {uniform({3, 5}, g, -2, 2)},
                    [](const auto& x) { return ag::softmax_rows(x[0]); });
    });
    add("pairwise_distance", [](Rng& g, std::uint64_t) {
      return simple("pairwise_distance", {uniform({4, 3}, g, -1, 1), uniform({5, 3}, g, -1, 1)},
                    [](const auto& x) { return ag::pairwise_distance(x[0], x[1]); });
    });
    add("batchnorm_train", [](Rng& g, std::uint64_t) {
      return simple("batchnorm_train",
                    {uniform({5, 3}, g, -1, 1), uniform({3}, g, 0.5, 1.5), uniform({3}, g, -0.5, 0.5)},
                    [](const auto& x) { return ag::batchnorm_train(x[0], x[1], x[2], 1e-5); });
    });
    add("batchnorm_train_nchw", [](Rng& g, std::uint64_t) {
      return simple("batchnorm_train_nchw",
                    {uniform({3, 2, 3, 3}, g, -1, 1), uniform({2}, g, 0.5, 1.5), uniform({2}, g, -0.5, 0.5)},
                    [](const auto& x) { return ag::batchnorm_train(x[0], x[1], x[2], 1e-5); });
    });
    add("batchnorm_eval", [](Rng& g, std::uint64_t) {
      auto mean = std::make_shared<std::vector<double>>(std::vector<double>{0.1, -0.2, 0.3});
      auto var = std::make_shared<std::vector<double>>(std::vector<double>{0.5, 1.5, 2.0});
      return simple("batchnorm_eval",
                    {uniform({4, 3}, g, -1, 1), uniform({3}, g, 0.5, 1.5), uniform({3}, g, -0.5, 0.5)},
                    [mean, var](const auto& x) { return ag::batchnorm_eval(x[0], x[1], x[2], *mean, *var, 1e-5); });
    });
    add("dense", [](Rng& g, std::uint64_t) {
      return simple("dense", {uniform({3, 4}, g, -1, 1), uniform({4, 2}, g, -1, 1), uniform({2}, g, -1, 1)},
                    [](const auto& x) { return nn::dense(x[0], x[1], x[2]); });
    });
    add("dropout", [](Rng& g, std::uint64_t seed) {
      return simple("dropout", {uniform({4, 5}, g, -1, 1)}, [seed](const auto& x) {
        Rng mask(seed);
        return nn::dropout(x[0], 0.5, Mode::Train, mask);
      });
    });
    // Losses.
    add("L_s1", [](Rng& g, std::uint64_t) {
      auto labels = std::make_shared<std::vector<std::size_t>>(random_labels(5, 4, g));
      return simple("L_s1", {uniform({5, 4}, g, -2, 2)},
                    [labels](const auto& x) { return loss::cross_entropy(x[0], *labels); });
    });
    add("L_c", [](Rng& g, std::uint64_t) {
      // Small margin so active and inactive hinge terms both occur; resample
      // until no term sits near its kink.
      for (;;) {
        auto bank = std::make_shared<CenterBank>(random_bank(4, 3, g, 1.0));
        auto labels = std::make_shared<std::vector<std::size_t>>(random_labels(6, 4, g));
        Tensor x = uniform({6, 3}, g, -1, 1);
        bool clear = true;
        const Tensor& c = bank->centers();
        auto dist = [&](std::size_t i, std::size_t l) {
          double s = 0;
          for (std::size_t j = 0; j < 3; ++j) s += (x.at(i, j) - c.at(l, j)) * (x.at(i, j) - c.at(l, j));
          return std::sqrt(s);
        };
        for (std::size_t i = 0; i < 6; ++i) {
          for (std::size_t l = 0; l < 4; ++l) {
            if (l == (*labels)[i]) continue;
            if (std::abs(dist(i, (*labels)[i]) + 0.5 - dist(i, l)) < 1e-3) clear = false;
          }
        }
        if (!clear) continue;
        return simple("L_c", {x},
                      [bank, labels](const auto& v) { return loss::class_wise_triplet(v[0], *labels, *bank, 0.5); });
      }
    });
    add("L1", [](Rng& g, std::uint64_t) {
      auto bank = std::make_shared<CenterBank>(random_bank(4, 3, g, 1.0));
      auto labels = std::make_shared<std::vector<std::size_t>>(random_labels(5, 4, g));
      return simple("L1", {uniform({5, 4}, g, -2, 2), uniform({5, 3}, g, -1, 1)}, [bank, labels](const auto& x) {
        return loss::verification_loss(x[0], *labels, x[1], *bank, LossConfig{0.3, 10.0, 4, 3});
      });
    });
    add("L2", [](Rng& g, std::uint64_t) {
      auto labels = std::make_shared<std::vector<std::size_t>>(random_labels(5, 7, g));
      return simple("L2", {uniform({5, 7}, g, -2, 2)},
                    [labels](const auto& x) { return loss::expression_loss(x[0], *labels); });
    });
    add("L3", [](Rng&, std::uint64_t seed) { return end_to_end_l3(seed); });
    return r;
  }();
  return reg;
}

}  // namespace

GradCheckResult run_gradcheck(const GradCheckCase& c, std::uint64_t seed, double step, double tol) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckResult res;
  res.name = c.name;
  res.seed = seed;

  // Contraction weights for non-scalar outputs, fixed per case.
  Tensor probe_weights;
  auto scalar_of = [&](Tape& tape, Var out) {
    if (out.value().numel() == 1) return ag::reshape(out, {1});
    if (probe_weights.numel() != out.value().numel()) {
      Rng rng(seed ^ 0xabcdefULL);
      probe_weights = uniform(out.value().shape(), rng, -1, 1);
    }
    return ag::reduce_sum(ag::mul(out, tape.constant(probe_weights, "probe")));
  };
  auto evaluate = [&](const std::vector<Tensor>& in) {
    Tape tape;
    auto [out, xs] = c.build(tape, in);
    return scalar_of(tape, out).value().item();
  };

  Tape tape;
  auto [out, xs] = c.build(tape, c.inputs);
  Var loss = scalar_of(tape, out);
  tape.backward(loss);

  std::vector<double> analytic, numeric;
  Rng pick_rng(seed ^ 0x1234ULL);
  std::vector<Tensor> work = c.inputs;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const Tensor& g = tape.grad(xs[i]);
    std::vector<std::size_t> coords(c.inputs[i].numel());
    for (std::size_t k = 0; k < coords.size(); ++k) coords[k] = k;
    if (c.max_coords && coords.size() > c.max_coords) {
      std::shuffle(coords.begin(), coords.end(), pick_rng);
      coords.resize(c.max_coords);
    }
    for (std::size_t k : coords) {
      const double orig = work[i].raw()[k];
      work[i].raw()[k] = orig + step;
      const double up = evaluate(work);
      work[i].raw()[k] = orig - step;
      const double down = evaluate(work);
      work[i].raw()[k] = orig;
      analytic.push_back(g.raw()[k]);
      numeric.push_back((up - down) / (2 * step));
    }
  }
  double diff = 0.0, scale = 0.0;
  for (std::size_t k = 0; k < analytic.size(); ++k) {
    diff = std::max(diff, std::abs(analytic[k] - numeric[k]));
    scale = std::max(scale, std::abs(analytic[k]));
  }
  res.coords = analytic.size();
  res.max_rel_error = diff / (scale + 1e-8);
  res.passed = res.max_rel_error < tol;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

const std::vector<std::string>& gradcheck_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [name, f] : registry()) n.push_back(name);
    return n;
  }();
  return names;
}

const std::vector<std::string>& gradcheck_loss_names() {
  static const std::vector<std::string> names{"L_s1", "L_c", "L1", "L2", "L3"};
  return names;
}

GradCheckCase make_gradcheck_case(const std::string& name, std::uint64_t seed) {
  for (const auto& [n, factory] : registry()) {
    if (n == name) {
      Rng rng(seed);
      return factory(rng, seed);
    }
  }
  throw ConfigError("unknown gradcheck op '" + name + "'");
}

std::vector<GradCheckResult> run_gradcheck_suite(const std::vector<std::string>& names, std::uint64_t seed) {
  std::vector<GradCheckResult> out;
  for (const auto& n : names) out.push_back(run_gradcheck(make_gradcheck_case(n, seed), seed));
  return out;
}

}  // namespace dyntask
