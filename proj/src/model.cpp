#include "dyntask/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dyntask/errors.hpp"

namespace dyntask {

void ModelConfig::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw ConfigError("model: input extents must be >= 1");
  if (embedding_dim < 2) throw ConfigError("model.embedding_dim must be >= 2");
  if (k_id < 2) throw ConfigError("model.k_id must be >= 2");
  if (k_expr != 7 && k_expr != 8) throw ConfigError("model.k_expr must be 7 or 8");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    const auto& c = trunk[i];
    if (c.filters == 0) throw ConfigError("model.trunk[" + std::to_string(i) + "]: filters must be >= 1");
    if (c.kernel == 0 || c.kernel % 2 == 0) {
      throw ConfigError("model.trunk[" + std::to_string(i) + "]: kernel must be odd");
    }
    if (c.pool) {
      if (h < 2 || w < 2) {
        throw ConfigError("model.trunk[" + std::to_string(i) + "]: feature map too small to pool");
      }
      h /= 2;
      w /= 2;
    }
  }
}

std::size_t ModelConfig::shared_dim() const {
  std::size_t c = channels, h = height, w = width;
  for (const auto& spec : trunk) {
    c = spec.filters;
    if (spec.pool) {
      h /= 2;
      w /= 2;
    }
  }
  return c * h * w;
}

Json to_json(const ModelConfig& cfg) {
  Json trunk = Json::array();
  for (const auto& c : cfg.trunk) {
    trunk.push_back({{"filters", c.filters}, {"kernel", c.kernel}, {"pool", c.pool}});
  }
  return Json{{"channels", cfg.channels},   {"height", cfg.height},
              {"width", cfg.width},         {"trunk", trunk},
              {"embedding_dim", cfg.embedding_dim}, {"k_id", cfg.k_id},
              {"k_expr", cfg.k_expr},       {"dropout", cfg.dropout}};
}

ModelConfig model_config_from_json(const Json& j, const std::string& path) {
  ModelConfig cfg;
  ObjectReader r(j, path);
  r.get("channels", cfg.channels);
  r.get("height", cfg.height);
  r.get("width", cfg.width);
  r.get("embedding_dim", cfg.embedding_dim);
  r.get("k_id", cfg.k_id);
  r.get("k_expr", cfg.k_expr);
  r.get("dropout", cfg.dropout);
  if (const Json* trunk = r.child("trunk")) {
    if (!trunk->is_array()) throw ConfigError(path + ".trunk: expected an array");
    cfg.trunk.clear();
    for (std::size_t i = 0; i < trunk->size(); ++i) {
      ConvSpec spec;
      ObjectReader cr((*trunk)[i], path + ".trunk[" + std::to_string(i) + "]");
      cr.require("filters", spec.filters);
      cr.get("kernel", spec.kernel);
      cr.get("pool", spec.pool);
      cr.finish();
      cfg.trunk.push_back(spec);
    }
  }
  r.finish();
  cfg.validate();
  return cfg;
}

ModelState ModelState::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelState s;
  s.config = cfg;
  std::size_t in = cfg.channels;
  for (const auto& spec : cfg.trunk) {
    s.trunk.push_back(ConvBlockLayer::xavier(in, spec.filters, spec.kernel, rng));
    in = spec.filters;
  }
  const std::size_t d = cfg.shared_dim(), e = cfg.embedding_dim;
  s.b1_bottleneck = DenseLayer::xavier(d, e, rng);
  s.b1_classifier = DenseLayer::xavier(e, cfg.k_id, rng);
  s.b2_bottleneck = DenseLayer::xavier(d, e, rng);
  s.b2_extra = DenseLayer::xavier(e, e, rng);
  s.b2_classifier = DenseLayer::xavier(e, cfg.k_expr, rng);
  s.dwu = DenseLayer::xavier(d, 2, rng);
  return s;
}

std::vector<ParamInfo> ModelState::params() {
  std::vector<ParamInfo> out;
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    const std::string p = "trunk." + std::to_string(i) + ".";
    auto& blk = trunk[i];
    out.push_back({p + "kernel", kTrunk, ParamKind::Weight, &blk.kernel});
    out.push_back({p + "bias", kTrunk, ParamKind::Bias, &blk.bias});
    out.push_back({p + "bn.gamma", kTrunk, ParamKind::NormScale, &blk.norm.gamma});
    out.push_back({p + "bn.beta", kTrunk, ParamKind::NormShift, &blk.norm.beta});
    out.push_back({p + "bn.running_mean", kTrunk, ParamKind::Buffer, &blk.norm.running_mean});
    out.push_back({p + "bn.running_var", kTrunk, ParamKind::Buffer, &blk.norm.running_var});
  }
  auto dense = [&out](const std::string& name, ParamGroup g, DenseLayer& l) {
    out.push_back({name + ".weight", g, ParamKind::Weight, &l.weight});
    out.push_back({name + ".bias", g, ParamKind::Bias, &l.bias});
  };
  dense("branch1.bottleneck", kBranch1, b1_bottleneck);
  dense("branch1.classifier", kBranch1, b1_classifier);
  dense("branch2.bottleneck", kBranch2, b2_bottleneck);
  dense("branch2.extra", kBranch2, b2_extra);
  dense("branch2.classifier", kBranch2, b2_classifier);
  dense("dwu", kDynamicWeights, dwu);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelState::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (auto& p : const_cast<ModelState*>(this)->params()) out.emplace_back(p.name, p.value);
  return out;
}

Tensor* ModelState::find(const std::string& name) {
  for (auto& p : params()) {
    if (p.name == name) return p.value;
  }
  return nullptr;
}

std::size_t ModelState::group_parameter_count(unsigned groups) const {
  std::size_t n = 0;
  for (auto& p : const_cast<ModelState*>(this)->params()) {
    if ((p.group & groups) && p.kind != ParamKind::Buffer) n += p.value->numel();
  }
  return n;
}

Binding::Binding(Tape& tape, ModelState& state, unsigned trainable)
    : tape_(tape), state_(state), trainable_(trainable) {
  for (auto& p : state_.params()) info_.emplace(p.name, p);
}

Var Binding::param(const std::string& name) {
  if (auto it = vars_.find(name); it != vars_.end()) return it->second;
  auto it = info_.find(name);
  if (it == info_.end()) throw ContractError("unknown model parameter '" + name + "'");
  const ParamInfo& p = it->second;
  const bool train = (p.group & trainable_) && p.kind != ParamKind::Buffer;
  Var v = train ? tape_.leaf(*p.value, name) : tape_.constant(*p.value, name);
  vars_.emplace(name, v);
  return v;
}

std::vector<ParamGrad> Binding::gradients() const {
  std::vector<ParamGrad> out;
  for (const auto& [name, var] : vars_) {
    const ParamInfo& p = info_.at(name);
    if (!(p.group & trainable_) || p.kind == ParamKind::Buffer) continue;
    const bool decay = p.kind == ParamKind::Weight && p.group != kDynamicWeights;
    out.push_back({name, p.value, &tape_.grad(var), decay});
  }
  return out;
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  if (images.empty()) throw DimensionError("stack_images: empty batch");
  const Shape& s = images.front()->shape();
  Shape shape{images.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  Tensor out(shape);
  const std::size_t n = images.front()->numel();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->shape() != s) {
      throw DimensionError("stack_images: image " + std::to_string(i) + " has shape " +
                           shape_str(images[i]->shape()) + ", expected " + shape_str(s));
    }
    std::memcpy(out.raw().data() + i * n, images[i]->raw().data(), n * sizeof(double));
  }
  return out;
}

Var forward_shared(Binding& b, Var images, Mode mode) {
  const ModelConfig& cfg = b.state().config;
  const Tensor& x = images.value();
  if (x.rank() != 4 || x.dim(1) != cfg.channels || x.dim(2) != cfg.height ||
      x.dim(3) != cfg.width) {
    throw DataError("forward_shared: images " + shape_str(x.shape()) + " do not match input " +
                    shape_str({cfg.channels, cfg.height, cfg.width}));
  }
  Var h = images;
  for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
    const std::string p = "trunk." + std::to_string(i) + ".";
    const ConvSpec& spec = cfg.trunk[i];
    h = ag::conv2d(h, b.param(p + "kernel"), 1, spec.kernel / 2);
    h = ag::add_channel(h, b.param(p + "bias"));
    h = nn::batchnorm(h, b.param(p + "bn.gamma"), b.param(p + "bn.beta"), b.state().trunk[i].norm,
                      mode);
    h = ag::relu(h);
    if (spec.pool) h = ag::maxpool2x2(h);
  }
  return ag::reshape(h, {x.dim(0), cfg.shared_dim()});
}

Branch1Out forward_branch1(Binding& b, Var shared, Mode mode, Rng& rng) {
  Var x = nn::dropout(shared, b.state().config.dropout, mode, rng);
  Var emb = nn::dense(x, b.param("branch1.bottleneck.weight"), b.param("branch1.bottleneck.bias"));
  Var logits =
      nn::dense(emb, b.param("branch1.classifier.weight"), b.param("branch1.classifier.bias"));
  return {emb, logits};
}

Var forward_branch2(Binding& b, Var shared, Mode mode, Rng& rng) {
  Var x = nn::dropout(shared, b.state().config.dropout, mode, rng);
  Var h = nn::dense(x, b.param("branch2.bottleneck.weight"), b.param("branch2.bottleneck.bias"));
  h = ag::relu(nn::dense(h, b.param("branch2.extra.weight"), b.param("branch2.extra.bias")));
  return nn::dense(h, b.param("branch2.classifier.weight"), b.param("branch2.classifier.bias"));
}

TaskWeights dynamic_weights(Binding& b, Var shared) {
  Var logits = nn::dense(shared, b.param("dwu.weight"), b.param("dwu.bias"));
  Var w = ag::mean_rows(ag::softmax_rows(logits));
  return {ag::pick(w, 0), ag::pick(w, 1)};
}

ModelState transfer_branch1_to_branch2(const ModelState& pretrained, const ModelConfig& target,
                                       Rng& rng) {
  target.validate();
  const ModelConfig& src = pretrained.config;
  std::vector<std::string> bad;
  if (src.channels != target.channels || src.height != target.height ||
      src.width != target.width) {
    bad.push_back("input");
  }
  for (std::size_t i = 0; i < std::max(src.trunk.size(), target.trunk.size()); ++i) {
    if (i >= src.trunk.size() || i >= target.trunk.size() || !(src.trunk[i] == target.trunk[i])) {
      bad.push_back("trunk." + std::to_string(i));
    }
  }
  if (src.embedding_dim != target.embedding_dim) {
    bad.push_back("branch1.bottleneck");
    bad.push_back("branch2.bottleneck");
  }
  if (src.k_id != target.k_id) bad.push_back("branch1.classifier");
  if (!bad.empty()) {
    std::string msg = "checkpoint configs are incompatible at:";
    for (const auto& n : bad) msg += " " + n;
    throw CompatibilityError(msg);
  }
  ModelState out = pretrained;
  out.config = target;
  const std::size_t e = target.embedding_dim;
  out.b2_bottleneck = pretrained.b1_bottleneck;
  out.b2_extra = DenseLayer::xavier(e, e, rng);
  out.b2_classifier = DenseLayer::xavier(e, target.k_expr, rng);
  return out;
}

ModelState with_fresh_identity_head(const ModelState& state, std::size_t k_id, Rng& rng) {
  ModelState out = state;
  out.config.k_id = k_id;
  out.config.validate();
  out.b1_classifier = DenseLayer::xavier(out.config.embedding_dim, k_id, rng);
  return out;
}

namespace {

constexpr char kMagic[4] = {'F', 'L', 'N', 'P'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

double get_f64(const std::string& in, std::size_t pos) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

Json parse_header(const std::string& bytes, std::size_t* blob_start) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic (expected FLNP)");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(header_len)) {
    throw FormatError("checkpoint: truncated header");
  }
  if (blob_start) *blob_start = 12 + header_len;
  try {
    return Json::parse(bytes.substr(12, header_len));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string encode_checkpoint(const ModelState& state) {
  Json table = Json::array();
  std::size_t offset = 0;
  const auto tensors = state.named_tensors();
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->numel() * sizeof(double);
  }
  const Json header{{"config", to_json(state.config)}, {"params", table}};
  const std::string text = header.dump();
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : tensors) {
    for (double v : t->raw()) put_f64(out, v);
  }
  return out;
}

ModelState decode_checkpoint(const std::string& bytes) {
  std::size_t blob = 0;
  const Json header = parse_header(bytes, &blob);
  ModelState state;
  try {
    const ModelConfig cfg = model_config_from_json(header.at("config"), "checkpoint.config");
    Rng unused(0);
    state = ModelState::init(cfg, unused);
    const Json& table = header.at("params");
    std::map<std::string, const Json*> entries;
    for (const auto& e : table) entries[e.at("name").get<std::string>()] = &e;
    for (auto& p : state.params()) {
      auto it = entries.find(p.name);
      if (it == entries.end()) throw FormatError("checkpoint: missing parameter '" + p.name + "'");
      const Json& e = *it->second;
      const Shape shape = e.at("shape").get<Shape>();
      if (shape != p.value->shape()) {
        throw FormatError("checkpoint: parameter '" + p.name + "' has shape " + shape_str(shape) +
                          ", config implies " + shape_str(p.value->shape()));
      }
      const std::size_t off = e.at("offset").get<std::size_t>();
      const std::size_t n = p.value->numel();
      if (blob + off + n * sizeof(double) > bytes.size()) {
        throw FormatError("checkpoint: truncated data for '" + p.name + "'");
      }
      for (std::size_t i = 0; i < n; ++i) (*p.value)[i] = get_f64(bytes, blob + off + i * sizeof(double));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid config: ") + e.what());
  }
  return state;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

Json read_checkpoint_header(const std::filesystem::path& path) {
  return parse_header(read_file(path), nullptr);
}

}  // namespace dyntask
