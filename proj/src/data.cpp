#include "dyntask/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "dyntask/errors.hpp"

namespace dyntask {

namespace {

Rng seeded(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

void normalize_field(std::vector<double>& f) {
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= static_cast<double>(f.size());
  double ss = 0.0;
  for (double& v : f) {
    v -= mean;
    ss += v * v;
  }
  const double rms = std::sqrt(ss / static_cast<double>(f.size()));
  if (rms > 0.0) {
    for (double& v : f) v /= rms;
  }
}

// Low-frequency sum of random cosines; one per identity.
std::vector<double> identity_field(const SynthSpec& spec, std::size_t identity) {
  Rng rng = seeded(spec.seed, {1, identity});
  std::uniform_int_distribution<int> freq(0, 3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> amp(0.0, 1.0);
  const std::size_t h = spec.height, w = spec.width;
  std::vector<double> f(h * w, 0.0);
  for (int c = 0; c < 16; ++c) {
    int fx = freq(rng), fy = freq(rng);
    if (fx == 0 && fy == 0) fx = 1;
    const double a = amp(rng) / (1.0 + std::hypot(fx, fy));
    const double ph = phase(rng);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        f[y * w + x] += a * std::cos(2.0 * std::numbers::pi *
                                         (fx * static_cast<double>(x) / static_cast<double>(w) +
                                          fy * static_cast<double>(y) / static_cast<double>(h)) +
                                     ph);
  }
  normalize_field(f);
  return f;
}

// Signed Gaussian blobs at fixed facial landmarks; one per expression and
// shared by all identities.
std::vector<double> expression_field(const SynthSpec& spec, std::size_t expression) {
  static constexpr std::array<std::array<double, 2>, 7> kLandmarks{{
      {0.30, 0.35}, {0.70, 0.35},  // eyes
      {0.30, 0.22}, {0.70, 0.22},  // brows
      {0.50, 0.75},                // mouth
      {0.25, 0.60}, {0.75, 0.60},  // cheeks
  }};
  Rng rng = seeded(spec.seed, {2, expression});
  std::normal_distribution<double> amp(0.0, 1.0);
  std::uniform_real_distribution<double> spread(0.06, 0.14);
  const std::size_t h = spec.height, w = spec.width;
  std::vector<double> f(h * w, 0.0);
  for (const auto& lm : kLandmarks) {
    const double a = amp(rng);
    const double s = spread(rng);
    const double sx = s * static_cast<double>(w), sy = s * static_cast<double>(h);
    const double cx = lm[0] * static_cast<double>(w), cy = lm[1] * static_cast<double>(h);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = (static_cast<double>(x) - cx) / sx;
        const double dy = (static_cast<double>(y) - cy) / sy;
        f[y * w + x] += a * std::exp(-0.5 * (dx * dx + dy * dy));
      }
  }
  normalize_field(f);
  return f;
}

Tensor render_image(const SynthSpec& spec, const std::vector<double>& id_field,
                    const std::vector<double>& ex_field, std::size_t identity,
                    std::size_t expression, std::size_t sample) {
  Rng rng = seeded(spec.seed, {3, identity, expression, sample});
  std::normal_distribution<double> noise(0.0, 1.0);
  Tensor img({1, spec.height, spec.width});
  for (std::size_t i = 0; i < img.numel(); ++i) {
    double v = 0.5 + spec.identity_scale * id_field[i] + spec.expression_scale * ex_field[i];
    if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
    // stored as f32 on disk; keep the in-memory copy identical
    img[i] = static_cast<double>(static_cast<float>(std::clamp(v, 0.0, 1.0)));
  }
  return img;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::size_t parse_index(const std::string& s, const std::string& what, std::size_t line) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (s.empty() || pos != s.size() || s[0] == '-') {
    throw DataError("line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

void SynthSpec::validate() const {
  if (k_id < 1 || per_cell < 1 || height < 1 || width < 1) {
    throw ConfigError("data: counts and extents must be >= 1");
  }
  if (k_expr != 7 && k_expr != 8) throw ConfigError("data.k_expr must be 7 or 8");
  if (height > 65535 || width > 65535) throw ConfigError("data: image extents must fit in u16");
  if (!(noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma must be >= 0");
  if (!(identity_scale >= 0.0) || !(expression_scale >= 0.0)) {
    throw ConfigError("data: pattern scales must be >= 0");
  }
}

Json to_json(const SynthSpec& s) {
  return Json{{"k_id", s.k_id},
              {"k_expr", s.k_expr},
              {"per_cell", s.per_cell},
              {"height", s.height},
              {"width", s.width},
              {"identity_scale", s.identity_scale},
              {"expression_scale", s.expression_scale},
              {"noise_sigma", s.noise_sigma},
              {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const Json& j, const std::string& path) {
  SynthSpec s;
  ObjectReader r(j, path);
  r.get("k_id", s.k_id);
  r.get("k_expr", s.k_expr);
  r.get("per_cell", s.per_cell);
  r.get("height", s.height);
  r.get("width", s.width);
  r.get("identity_scale", s.identity_scale);
  r.get("expression_scale", s.expression_scale);
  r.get("noise_sigma", s.noise_sigma);
  r.get("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

std::vector<std::vector<std::size_t>> Dataset::cell_counts() const {
  std::vector<std::vector<std::size_t>> counts(k_id, std::vector<std::size_t>(k_expr, 0));
  for (const auto& r : records) ++counts[r.identity][r.expression];
  return counts;
}

std::string Dataset::summary() const {
  std::ostringstream os;
  std::vector<std::size_t> per_expr(k_expr, 0);
  std::set<std::size_t> ids;
  for (const auto& r : records) {
    ++per_expr[r.expression];
    ids.insert(r.identity);
  }
  os << "ID";
  for (std::size_t e = 0; e < k_expr; ++e) os << '\t' << std::string(kExpressionNames[e]).substr(0, 2);
  os << '\n' << ids.size();
  for (auto c : per_expr) os << '\t' << c;
  os << '\n';
  return os.str();
}

Tensor synth_image(const SynthSpec& spec, std::size_t identity, std::size_t expression,
                   std::size_t sample) {
  return render_image(spec, identity_field(spec, identity), expression_field(spec, expression),
                      identity, expression, sample);
}

Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Dataset d;
  d.k_id = spec.k_id;
  d.k_expr = spec.k_expr;
  std::vector<std::vector<double>> id_fields, ex_fields;
  for (std::size_t i = 0; i < spec.k_id; ++i) id_fields.push_back(identity_field(spec, i));
  for (std::size_t e = 0; e < spec.k_expr; ++e) ex_fields.push_back(expression_field(spec, e));
  for (std::size_t i = 0; i < spec.k_id; ++i) {
    for (std::size_t e = 0; e < spec.k_expr; ++e) {
      for (std::size_t n = 0; n < spec.per_cell; ++n) {
        Tensor img = render_image(spec, id_fields[i], ex_fields[e], i, e, n);
        d.records.push_back({"images.tnsc", d.images.size(), i, e});
        d.images.push_back(std::move(img));
      }
    }
  }
  return d;
}

Dataset generate_synthetic(const SynthSpec& spec, const std::filesystem::path& dir) {
  Dataset d = generate_synthetic(spec);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_container(dir / "images.tnsc", d.images);
  write_manifest(dir / "manifest.csv", d.records);
  std::ofstream js(dir / "synth_spec.json");
  if (!js) throw IoError("cannot write " + (dir / "synth_spec.json").string());
  js << to_json(spec).dump(2) << '\n';
  return d;
}

void write_container(const std::filesystem::path& path, const std::vector<Tensor>& images) {
  std::string out = "TNSC";
  auto put_u32 = [&out](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  };
  auto put_u16 = [&out](std::size_t v) {
    out.push_back(static_cast<char>(v & 0xFFu));
    out.push_back(static_cast<char>((v >> 8) & 0xFFu));
  };
  put_u32(kContainerVersion);
  put_u32(static_cast<std::uint32_t>(images.size()));
  for (const auto& img : images) {
    const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
    if (img.numel() != h * w || h > 65535 || w > 65535) {
      throw DimensionError("container: images must be single-channel with u16 extents, got " +
                           shape_str(img.shape()));
    }
    put_u16(h);
    put_u16(w);
  }
  for (const auto& img : images) {
    for (double v : img.raw()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      put_u32(bits);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<Tensor> read_container(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  auto get_u32 = [&bytes](std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    return v;
  };
  if (bytes.size() < 12 || bytes.compare(0, 4, "TNSC") != 0) {
    throw FormatError(path.string() + ": bad container magic");
  }
  if (get_u32(4) != kContainerVersion) {
    throw FormatError(path.string() + ": unsupported container version " + std::to_string(get_u32(4)));
  }
  const std::size_t count = get_u32(8);
  std::size_t pos = 12;
  if (bytes.size() < pos + 4 * count) throw FormatError(path.string() + ": truncated extents");
  std::vector<std::pair<std::size_t, std::size_t>> dims(count);
  std::size_t total = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto b = [&](std::size_t k) { return static_cast<std::size_t>(static_cast<unsigned char>(bytes[pos + k])); };
    dims[i] = {b(0) | (b(1) << 8), b(2) | (b(3) << 8)};
    if (dims[i].first == 0 || dims[i].second == 0) {
      throw FormatError(path.string() + ": zero extent for image " + std::to_string(i));
    }
    total += dims[i].first * dims[i].second;
    pos += 4;
  }
  if (bytes.size() != pos + 4 * total) throw FormatError(path.string() + ": truncated or oversized data");
  std::vector<Tensor> images;
  images.reserve(count);
  for (const auto& [h, w] : dims) {
    Tensor img({1, h, w});
    for (std::size_t p = 0; p < h * w; ++p, pos += 4) {
      img[p] = static_cast<double>(std::bit_cast<float>(get_u32(pos)));
    }
    images.push_back(std::move(img));
  }
  return images;
}

void write_manifest(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "file,index,identity,expression\n";
  for (const auto& r : records) {
    f << r.file << ',' << r.index << ',' << r.identity << ',' << r.expression << '\n';
  }
}

Dataset load_manifest(const std::filesystem::path& dir, std::size_t k_id, std::size_t k_expr) {
  const auto manifest = dir / "manifest.csv";
  std::istringstream in(read_file(manifest));
  std::string line;
  if (!std::getline(in, line) || line != "file,index,identity,expression") {
    throw DataError(manifest.string() + " line 1: expected header file,index,identity,expression");
  }
  Dataset d;
  d.k_id = k_id;
  d.k_expr = k_expr;
  std::map<std::string, std::vector<Tensor>> containers;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) {
      throw DataError(manifest.string() + " line " + std::to_string(line_no) +
                      ": expected 4 columns, got " + std::to_string(cells.size()));
    }
    SampleRecord r{cells[0], parse_index(cells[1], "index", line_no),
                   parse_index(cells[2], "identity", line_no),
                   parse_index(cells[3], "expression", line_no)};
    if (r.identity >= k_id) {
      throw DataError(manifest.string() + " line " + std::to_string(line_no) + ": identity " +
                      std::to_string(r.identity) + " outside [0, " + std::to_string(k_id) + ")");
    }
    if (r.expression >= k_expr) {
      throw DataError(manifest.string() + " line " + std::to_string(line_no) + ": expression " +
                      std::to_string(r.expression) + " outside [0, " + std::to_string(k_expr) + ")");
    }
    if (r.file.empty() || r.file.find("..") != std::string::npos || r.file.front() == '/') {
      throw DataError(manifest.string() + " line " + std::to_string(line_no) + ": bad file '" +
                      r.file + "'");
    }
    auto it = containers.find(r.file);
    if (it == containers.end()) {
      const auto path = dir / r.file;
      if (!std::filesystem::exists(path)) {
        throw DataError(manifest.string() + " line " + std::to_string(line_no) +
                        ": container '" + r.file + "' not found");
      }
      it = containers.emplace(r.file, read_container(path)).first;
    }
    if (r.index >= it->second.size()) {
      throw DataError(manifest.string() + " line " + std::to_string(line_no) + ": index " +
                      std::to_string(r.index) + " beyond container size " +
                      std::to_string(it->second.size()));
    }
    d.images.push_back(it->second[r.index]);
    d.records.push_back(std::move(r));
  }
  if (d.records.empty()) throw DataError(manifest.string() + ": no records");
  return d;
}

Dataset load_manifest(const std::filesystem::path& dir) {
  const auto spec_path = dir / "synth_spec.json";
  if (std::filesystem::exists(spec_path)) {
    Json j;
    try {
      j = Json::parse(read_file(spec_path));
    } catch (const Json::exception& e) {
      throw DataError(spec_path.string() + ": " + e.what());
    }
    const SynthSpec spec = synth_spec_from_json(j);
    return load_manifest(dir, spec.k_id, spec.k_expr);
  }
  // Infer from the labels themselves.
  std::istringstream in(read_file(dir / "manifest.csv"));
  std::string line;
  std::getline(in, line);
  std::size_t max_id = 0, max_expr = 0, line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cells = split_csv(line);
    if (cells.size() != 4) continue;
    max_id = std::max(max_id, parse_index(cells[2], "identity", line_no));
    max_expr = std::max(max_expr, parse_index(cells[3], "expression", line_no));
  }
  return load_manifest(dir, max_id + 1, max_expr >= 7 ? 8 : 7);
}

Split split_holdout(const Dataset& data, std::size_t holdout, std::uint64_t seed) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < data.size(); ++i) {
    cells[{data.records[i].identity, data.records[i].expression}].push_back(i);
  }
  Split s;
  for (auto& [key, idx] : cells) {
    if (idx.size() <= holdout) {
      throw DataError("split: cell (identity " + std::to_string(key.first) + ", expression " +
                      std::to_string(key.second) + ") has " + std::to_string(idx.size()) +
                      " samples, cannot hold out " + std::to_string(holdout));
    }
    Rng rng = seeded(seed, {4, key.first, key.second});
    std::shuffle(idx.begin(), idx.end(), rng);
    s.train.insert(s.train.end(), idx.begin(), idx.end() - static_cast<std::ptrdiff_t>(holdout));
    s.test.insert(s.test.end(), idx.end() - static_cast<std::ptrdiff_t>(holdout), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

BatchStream::BatchStream(const Dataset& data, std::vector<std::size_t> pool,
                         std::size_t batch_size, std::uint64_t seed, bool stratify)
    : data_(data), pool_(std::move(pool)), batch_size_(batch_size), seed_(seed), stratify_(stratify) {
  if (batch_size_ < 1) throw ConfigError("batch size must be >= 1");
  if (batch_size_ > pool_.size()) {
    throw ConfigError("batch size " + std::to_string(batch_size_) + " exceeds dataset size " +
                      std::to_string(pool_.size()));
  }
  for (auto i : pool_) {
    if (i >= data_.size()) throw DataError("batch pool references missing record " + std::to_string(i));
  }
  if (stratify_) {
    std::set<std::size_t> ids;
    for (auto i : pool_) ids.insert(data_.records[i].identity);
    if (ids.size() < 2) throw DataError("stratified batching needs at least two identities");
    if (batch_size_ < 2) throw ConfigError("stratified batching needs batches of at least 2");
  }
  per_epoch_ = (pool_.size() + batch_size_ - 1) / batch_size_;
  start_epoch();
}

void BatchStream::start_epoch() {
  std::vector<std::size_t> order = pool_;
  Rng rng = seeded(seed_, {5, epoch_});
  std::shuffle(order.begin(), order.end(), rng);
  current_.assign(per_epoch_, {});
  const std::size_t n = order.size();
  std::size_t pos = 0;
  for (std::size_t b = 0; b < per_epoch_; ++b) {
    const std::size_t size = n / per_epoch_ + (b < n % per_epoch_ ? 1 : 0);
    current_[b].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                       order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  if (stratify_) {
    auto id = [this](std::size_t r) { return data_.records[r].identity; };
    auto distinct = [&](const std::vector<std::size_t>& batch) {
      std::set<std::size_t> s;
      for (auto r : batch) s.insert(id(r));
      return s.size();
    };
    for (std::size_t b = 0; b < per_epoch_; ++b) {
      if (distinct(current_[b]) >= 2) continue;
      bool fixed = false;
      for (std::size_t o = 0; o < per_epoch_ && !fixed; ++o) {
        if (o == b) continue;
        for (auto& r : current_[o]) {
          if (id(r) == id(current_[b][0])) continue;
          std::swap(r, current_[b][0]);
          if (distinct(current_[o]) >= 2) {
            fixed = true;
            break;
          }
          std::swap(r, current_[b][0]);
        }
      }
      // a single-batch epoch already holds every identity in the pool
    }
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchStream::next() {
  if (cursor_ == per_epoch_) {
    ++epoch_;
    start_epoch();
  }
  return current_[cursor_++];
}

PairSet build_pairs(const Dataset& data, const std::vector<std::size_t>& pool, std::size_t n_pos,
                    std::size_t n_neg, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("pairs: need at least 2 folds");
  if (n_pos < folds || n_neg < folds) {
    throw ConfigError("pairs: every fold needs positives and negatives (n_pos, n_neg >= folds)");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_id;
  for (auto r : pool) {
    if (r >= data.size()) throw DataError("pairs: pool references missing record " + std::to_string(r));
    by_id[data.records[r].identity].push_back(r);
  }
  if (by_id.size() < 2) throw DataError("pairs: negatives need at least two identities");
  for (const auto& [id, recs] : by_id) {
    if (recs.size() < 2) {
      throw DataError("pairs: identity " + std::to_string(id) + " has fewer than 2 samples");
    }
  }
  Rng rng = seeded(seed, {6});
  std::set<std::pair<std::size_t, std::size_t>> used;
  auto key = [](std::size_t a, std::size_t b) { return std::make_pair(std::min(a, b), std::max(a, b)); };

  std::vector<Pair> pos, neg;
  std::vector<std::size_t> ids;
  for (const auto& [id, _] : by_id) ids.push_back(id);
  std::size_t attempts = 0;
  const std::size_t max_attempts = 1000 * (n_pos + n_neg) + 10000;
  for (std::size_t i = 0; pos.size() < n_pos; ++i) {
    if (++attempts > max_attempts) throw DataError("pairs: not enough distinct positive pairs");
    const auto& recs = by_id[ids[i % ids.size()]];
    std::uniform_int_distribution<std::size_t> pick(0, recs.size() - 1);
    const std::size_t a = recs[pick(rng)], b = recs[pick(rng)];
    if (a == b || !used.insert(key(a, b)).second) continue;
    pos.push_back({a, b, true, 0});
  }
  std::uniform_int_distribution<std::size_t> any(0, pool.size() - 1);
  while (neg.size() < n_neg) {
    if (++attempts > max_attempts) throw DataError("pairs: not enough distinct negative pairs");
    const std::size_t a = pool[any(rng)], b = pool[any(rng)];
    if (data.records[a].identity == data.records[b].identity || !used.insert(key(a, b)).second) continue;
    neg.push_back({a, b, false, 0});
  }
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  PairSet out;
  out.folds = folds;
  std::size_t counter = 0;
  for (auto* group : {&pos, &neg}) {
    for (auto& p : *group) {
      p.fold = counter++ % folds;
      out.pairs.push_back(p);
    }
  }
  return out;
}

void write_pairs(const std::filesystem::path& path, const PairSet& pairs) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "a,b,same,fold\n";
  for (const auto& p : pairs.pairs) f << p.a << ',' << p.b << ',' << (p.same ? 1 : 0) << ',' << p.fold << '\n';
}

PairSet read_pairs(const std::filesystem::path& path, const Dataset& data) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "a,b,same,fold") {
    throw DataError(path.string() + " line 1: expected header a,b,same,fold");
  }
  PairSet out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) throw DataError(path.string() + " line " + std::to_string(line_no) + ": expected 4 columns");
    Pair p{parse_index(cells[0], "a", line_no), parse_index(cells[1], "b", line_no),
           parse_index(cells[2], "same", line_no) != 0, parse_index(cells[3], "fold", line_no)};
    if (p.a >= data.size() || p.b >= data.size()) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": record out of range");
    }
    if (p.same != (data.records[p.a].identity == data.records[p.b].identity)) {
      throw DataError(path.string() + " line " + std::to_string(line_no) + ": same flag contradicts labels");
    }
    out.folds = std::max(out.folds, p.fold + 1);
    out.pairs.push_back(p);
  }
  return out;
}

const char* quadrant_name(std::size_t q) {
  static constexpr std::array<const char*, 4> kNames{"ID-True/Ex-True", "ID-False/Ex-True",
                                                     "ID-True/Ex-False", "ID-False/Ex-False"};
  return kNames.at(q);
}

std::size_t quadrant_of(const AuthSample& s) {
  return (s.same_identity ? 0 : 1) + (s.expression_match ? 0 : 2);
}

std::vector<AuthSample> build_auth_set(const Dataset& data, const std::vector<std::size_t>& pool,
                                       const std::vector<std::size_t>& required,
                                       const QuadrantCounts& counts, std::uint64_t seed) {
  if (required.empty()) throw ProtocolError("auth set: no required expressions given");
  for (std::size_t q = 0; q < 4; ++q) {
    if (counts[q] == 0) throw ProtocolError(std::string("auth set: empty quadrant ") + quadrant_name(q));
  }
  // records by (identity, expression) and by identity
  std::map<std::size_t, std::vector<std::size_t>> by_id;
  std::map<std::size_t, std::vector<std::size_t>> by_expr;
  for (auto r : pool) {
    if (r >= data.size()) throw DataError("auth set: pool references missing record " + std::to_string(r));
    by_id[data.records[r].identity].push_back(r);
    by_expr[data.records[r].expression].push_back(r);
  }
  for (auto e : required) {
    if (e >= data.k_expr || !by_expr.count(e)) {
      throw ProtocolError("auth set: required expression " + std::to_string(e) + " absent from data");
    }
  }
  Rng rng = seeded(seed, {7});
  auto choose = [&rng](const std::vector<std::size_t>& v) {
    std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
    return v[d(rng)];
  };
  std::vector<AuthSample> out;
  for (std::size_t q = 0; q < 4; ++q) {
    const bool same = q == 0 || q == 2;
    const bool match = q < 2;
    std::size_t made = 0, attempts = 0;
    while (made < counts[q]) {
      if (++attempts > 1000 * counts[q] + 1000) {
        throw ProtocolError(std::string("auth set: cannot populate quadrant ") + quadrant_name(q));
      }
      const std::size_t req = choose(required);
      std::size_t user = 0;
      if (match) {
        user = choose(by_expr[req]);
      } else {
        user = choose(pool);
        if (data.records[user].expression == req) continue;
      }
      const std::size_t uid = data.records[user].identity;
      std::size_t ref = 0;
      if (same) {
        const auto& mine = by_id[uid];
        if (mine.size() < 2) continue;
        ref = choose(mine);
        if (ref == user) continue;
      } else {
        ref = choose(pool);
        if (data.records[ref].identity == uid) continue;
      }
      out.push_back({user, ref, same, req, data.records[user].expression,
                     data.records[user].expression == req});
      ++made;
    }
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace dyntask
