#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dyntask/json_io.hpp"
#include "dyntask/layers.hpp"
#include "dyntask/tensor.hpp"

namespace dyntask {

// Fixed expression order; Contempt only exists when k_expr == 8.
inline constexpr std::array<const char*, 8> kExpressionNames{
    "Neutral", "Anger", "Disgust", "Fear", "Happy", "Sad", "Surprise", "Contempt"};
inline constexpr std::size_t kHappy = 4;
inline constexpr std::size_t kSurprise = 6;

struct SynthSpec {
  std::size_t k_id = 20;
  std::size_t k_expr = 7;
  std::size_t per_cell = 10;  // images per (identity, expression)
  std::size_t height = 32;
  std::size_t width = 32;
  double identity_scale = 0.2;
  double expression_scale = 0.15;
  double noise_sigma = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
};

Json to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const Json& j, const std::string& path = "data");

struct SampleRecord {
  std::string file;
  std::size_t index = 0;  // position inside the container
  std::size_t identity = 0;
  std::size_t expression = 0;
};

/// Loaded dataset: records in manifest order with their 1 x H x W images.
struct Dataset {
  std::size_t k_id = 0;
  std::size_t k_expr = 0;
  std::vector<SampleRecord> records;
  std::vector<Tensor> images;

  std::size_t size() const { return records.size(); }
  // k_id x k_expr counts, rows = identity.
  std::vector<std::vector<std::size_t>> cell_counts() const;
  // Table-style summary: identities and per-expression image counts.
  std::string summary() const;
};

// Deterministic single image; exposed for tests. Values are clamped to [0, 1].
Tensor synth_image(const SynthSpec& spec, std::size_t identity, std::size_t expression,
                   std::size_t sample);

// Builds the dataset in memory (manifest order: identity, expression, sample).
Dataset generate_synthetic(const SynthSpec& spec);
// Writes manifest.csv, images.tnsc and synth_spec.json into `dir`.
Dataset generate_synthetic(const SynthSpec& spec, const std::filesystem::path& dir);

// Tensor container: "TNSC", u32 version, u32 count, per-image (u16 H, u16 W),
// then count*H*W little-endian f32 values in record order.
inline constexpr std::uint32_t kContainerVersion = 1;
void write_container(const std::filesystem::path& path, const std::vector<Tensor>& images);
std::vector<Tensor> read_container(const std::filesystem::path& path);

// manifest.csv header: file,index,identity,expression
void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records);

// Validates labels against k_id / k_expr. DataError messages carry the
// manifest line number.
Dataset load_manifest(const std::filesystem::path& dir, std::size_t k_id, std::size_t k_expr);
// Label space taken from synth_spec.json when present, else inferred
// (k_expr = 7 unless a Contempt label appears).
Dataset load_manifest(const std::filesystem::path& dir);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
// Per (identity, expression) cell, `holdout` records (chosen by seed) go to test.
Split split_holdout(const Dataset& data, std::size_t holdout, std::uint64_t seed);

/// Endless epoch-shuffled batches over `pool`. Each epoch is cut into
/// ceil(n / batch_size) batches whose sizes differ by at most one. With
/// `stratify`, every batch holds at least two identities.
class BatchStream {
 public:
  BatchStream(const Dataset& data, std::vector<std::size_t> pool, std::size_t batch_size,
              std::uint64_t seed, bool stratify);

  std::vector<std::size_t> next();
  std::size_t batches_per_epoch() const { return per_epoch_; }
  std::size_t epoch() const { return epoch_; }

 private:
  void start_epoch();

  const Dataset& data_;
  std::vector<std::size_t> pool_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool stratify_;
  std::size_t per_epoch_ = 0;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::vector<std::size_t>> current_;
};

struct Pair {
  std::size_t a = 0;
  std::size_t b = 0;
  bool same = false;
  std::size_t fold = 0;
};

struct PairSet {
  std::size_t folds = 0;
  std::vector<Pair> pairs;
};

// Positives are spread round-robin over identities; every identity in the
// pool needs at least two samples. Folds are balanced and each carries both
// polarities.
PairSet build_pairs(const Dataset& data, const std::vector<std::size_t>& pool, std::size_t n_pos,
                    std::size_t n_neg, std::size_t folds, std::uint64_t seed);
void write_pairs(const std::filesystem::path& path, const PairSet& pairs);
PairSet read_pairs(const std::filesystem::path& path, const Dataset& data);

struct AuthSample {
  std::size_t user = 0;       // record shown to the camera
  std::size_t reference = 0;  // enrolled record
  bool same_identity = false;
  std::size_t required_expression = 0;
  std::size_t user_expression = 0;  // ground truth of the user image
  bool expression_match = false;    // user_expression == required_expression
};

// Quadrant order: (ID-True, Ex-True), (ID-False, Ex-True), (ID-True, Ex-False),
// (ID-False, Ex-False).
using QuadrantCounts = std::array<std::size_t, 4>;
const char* quadrant_name(std::size_t q);
std::size_t quadrant_of(const AuthSample& s);

std::vector<AuthSample> build_auth_set(const Dataset& data, const std::vector<std::size_t>& pool,
                                       const std::vector<std::size_t>& required,
                                       const QuadrantCounts& counts, std::uint64_t seed);

}  // namespace dyntask
