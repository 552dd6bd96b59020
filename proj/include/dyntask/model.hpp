#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dyntask/json_io.hpp"
#include "dyntask/layers.hpp"
#include "dyntask/optim.hpp"
#include "dyntask/tape.hpp"

namespace dyntask {

struct ConvSpec {
  std::size_t filters = 16;
  std::size_t kernel = 3;  // odd; "same" padding of kernel / 2
  bool pool = true;        // 2x2 max-pool after batchnorm + relu

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct ModelConfig {
  std::size_t channels = 1;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<ConvSpec> trunk{{16, 3, true}, {32, 3, true}, {64, 3, true}};
  std::size_t embedding_dim = 64;
  std::size_t k_id = 20;
  std::size_t k_expr = 7;
  double dropout = 0.5;

  void validate() const;
  // Width D of the flattened trunk output.
  std::size_t shared_dim() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

Json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const Json& j, const std::string& path = "model");

// Parameter groups, combinable as a bit mask.
enum ParamGroup : unsigned {
  kTrunk = 1u,
  kBranch1 = 2u,
  kBranch2 = 4u,
  kDynamicWeights = 8u,
  kAllGroups = 15u,
};

enum class ParamKind { Weight, Bias, NormScale, NormShift, Buffer };

struct ParamInfo {
  std::string name;
  ParamGroup group;
  ParamKind kind;
  Tensor* value;
};

/// Every tensor of the network: trunk conv blocks, BRANCH 1 (bottleneck +
/// identity classifier), BRANCH 2 (bottleneck + one extra dense + expression
/// classifier) and the dynamic-weight unit (shared features -> 2 logits).
struct ModelState {
  ModelConfig config;
  std::vector<ConvBlockLayer> trunk;
  DenseLayer b1_bottleneck;
  DenseLayer b1_classifier;
  DenseLayer b2_bottleneck;
  DenseLayer b2_extra;
  DenseLayer b2_classifier;
  DenseLayer dwu;

  // Xavier weights, zero biases, gamma = 1, beta = 0, running var = 1.
  static ModelState init(const ModelConfig& cfg, Rng& rng);

  // Fixed, deterministic order; names are stable across versions.
  std::vector<ParamInfo> params();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
  Tensor* find(const std::string& name);

  std::size_t group_parameter_count(unsigned groups) const;
};

/// Exposes a ModelState to one tape. Tensors in `trainable` groups become
/// differentiable leaves, everything else enters as constants.
class Binding {
 public:
  Binding(Tape& tape, ModelState& state, unsigned trainable);

  Tape& tape() { return tape_; }
  ModelState& state() { return state_; }
  unsigned trainable() const { return trainable_; }

  Var param(const std::string& name);

  // After tape.backward(): one entry per trainable tensor touched by the
  // forward pass, pointing into the model state. Weight decay is flagged for
  // trunk and branch weights/filters only.
  std::vector<ParamGrad> gradients() const;

 private:
  Tape& tape_;
  ModelState& state_;
  unsigned trainable_;
  std::map<std::string, Var> vars_;
  std::map<std::string, ParamInfo> info_;
};

Tensor stack_images(const std::vector<const Tensor*>& images);

// images: m x C x H x W. Conv blocks, then flatten to m x D.
Var forward_shared(Binding& b, Var images, Mode mode);

struct Branch1Out {
  Var embedding;  // m x E
  Var logits;     // m x k_id
};
// dropout -> bottleneck dense (embedding) -> identity classifier
Branch1Out forward_branch1(Binding& b, Var shared, Mode mode, Rng& rng);
// dropout -> bottleneck dense -> extra dense + relu -> expression classifier
Var forward_branch2(Binding& b, Var shared, Mode mode, Rng& rng);

struct TaskWeights {
  Var w1;
  Var w2;
};
// Per-sample softmax over the unit's two logits, averaged over the batch.
TaskWeights dynamic_weights(Binding& b, Var shared);

// Copies the pretrained trunk and BRANCH 1 bottleneck into a new state whose
// BRANCH 2 bottleneck mirrors BRANCH 1; the extra dense layer and expression
// classifier are freshly initialized. `target` may differ only in k_expr and
// dropout; other differences raise CompatibilityError listing the layers.
ModelState transfer_branch1_to_branch2(const ModelState& pretrained, const ModelConfig& target,
                                       Rng& rng);
// Replaces the identity classifier with a fresh one over `k_id` classes, for
// moving a pretrained network onto a new identity population.
ModelState with_fresh_identity_head(const ModelState& state, std::size_t k_id, Rng& rng);

inline ModelState transfer_branch1_to_branch2(const ModelState& pretrained, Rng& rng) {
  return transfer_branch1_to_branch2(pretrained, pretrained.config, rng);
}

// Checkpoint layout: "FLNP", u32 version, u32 header length, JSON header
// (config + parameter table of name, shape, byte offset), then little-endian
// f64 blobs.
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::string encode_checkpoint(const ModelState& state);
ModelState decode_checkpoint(const std::string& bytes);
void save_checkpoint(const ModelState& state, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
// Header only, for inspection.
Json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace dyntask
