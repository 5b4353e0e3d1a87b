#include "jnflow/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace jnflow {

namespace {

using json = nlohmann::ordered_json;

void put_uint(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError("checkpoint truncated at byte offset " + std::to_string(pos_) + " while reading " + what +
                            " (need " + std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) +
                            " left)");
  }
  std::uint64_t uint(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

json sizes(const std::vector<std::size_t>& v) { return json(v); }
std::vector<std::size_t> sizes_from(const json& j) { return j.get<std::vector<std::size_t>>(); }

json to_json(const JointVaeConfig& c) {
  return {{"modality_dims", sizes(c.modality_dims)}, {"d_z", c.d_z},
          {"head_width", c.head_width},              {"merge_width", c.merge_width},
          {"decoder_width", c.decoder_width},        {"merge_net", c.merge_net},
          {"beta", c.beta},                          {"lambda", c.lambda}};
}

JointVaeConfig joint_config_from(const json& j) {
  JointVaeConfig c;
  c.modality_dims = sizes_from(j.at("modality_dims"));
  c.d_z = j.at("d_z").get<std::size_t>();
  c.head_width = j.at("head_width").get<std::size_t>();
  c.merge_width = j.at("merge_width").get<std::size_t>();
  c.decoder_width = j.at("decoder_width").get<std::size_t>();
  c.merge_net = j.at("merge_net").get<bool>();
  c.beta = j.at("beta").get<double>();
  c.lambda = j.at("lambda").get<std::vector<double>>();
  return c;
}

json to_json(const ProjectorConfig& c) {
  return {{"method", to_string(c.method)}, {"k", c.k},           {"hidden", sizes(c.hidden)},
          {"eps_cov", c.eps_cov},          {"tau", c.tau},       {"epochs", c.epochs},
          {"batch_size", c.batch_size},    {"lr", c.lr},         {"seed", c.seed}};
}

ProjectorConfig projector_config_from(const json& j) {
  ProjectorConfig c;
  c.method = projector_method_from_string(j.at("method").get<std::string>());
  c.k = j.at("k").get<std::size_t>();
  c.hidden = sizes_from(j.at("hidden"));
  c.eps_cov = j.at("eps_cov").get<double>();
  c.tau = j.at("tau").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json to_json(const Stage2Config& c) {
  return {{"mode", to_string(c.mode)},
          {"n_flows", c.n_flows},
          {"context_dim", c.context_dim},
          {"made_hidden", sizes(c.made_hidden)},
          {"base_hidden", sizes(c.base_hidden)},
          {"raw_context_hidden", sizes(c.raw_context_hidden)},
          {"shared_context_hidden", sizes(c.shared_context_hidden)},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"samples_per_datapoint", c.samples_per_datapoint},
          {"seed", c.seed}};
}

Stage2Config stage2_config_from(const json& j) {
  Stage2Config c;
  c.mode = context_mode_from_string(j.at("mode").get<std::string>());
  c.n_flows = j.at("n_flows").get<std::size_t>();
  c.context_dim = j.at("context_dim").get<std::size_t>();
  c.made_hidden = sizes_from(j.at("made_hidden"));
  c.base_hidden = sizes_from(j.at("base_hidden"));
  c.raw_context_hidden = sizes_from(j.at("raw_context_hidden"));
  c.shared_context_hidden = sizes_from(j.at("shared_context_hidden"));
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.lr = j.at("lr").get<double>();
  c.samples_per_datapoint = j.at("samples_per_datapoint").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

Checkpoint from_params(const std::string& kind, const ParamList& params, const ParamList& buffers) {
  Checkpoint c;
  c.meta["kind"] = kind;
  c.meta["format_version"] = 1;
  c.meta["parents"] = json::object();
  for (const auto& p : params) c.records.emplace_back(p.name, *p.tensor);
  for (const auto& b : buffers) c.records.emplace_back(b.name, *b.tensor);
  return c;
}

void fill(const Checkpoint& c, const ParamList& targets) {
  for (const auto& t : targets) {
    const Tensor& src = c.record(t.name);
    if (src.shape() != t.tensor->shape())
      throw CheckpointError("checkpoint record '" + t.name + "' has shape " + shape_string(src.shape()) +
                            ", model expects " + shape_string(t.tensor->shape()));
    *t.tensor = src;
  }
  if (c.records.size() != targets.size())
    throw CheckpointError("checkpoint holds " + std::to_string(c.records.size()) + " records, model expects " +
                          std::to_string(targets.size()));
}

template <class F>
auto parse_meta(const Checkpoint& c, const char* what, F f) {
  try {
    return f(c.meta.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed ") + what + " checkpoint metadata: " + e.what());
  }
}

}  // namespace

const std::string Checkpoint::kind() const { return meta.value("kind", std::string()); }

const Tensor& Checkpoint::record(const std::string& name) const {
  for (const auto& [n, t] : records)
    if (n == name) return t;
  throw CheckpointError("checkpoint has no record named '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + kMagicSize);
  const std::string meta = c.meta.dump();
  put_uint(out, meta.size(), 4);
  out.insert(out.end(), meta.begin(), meta.end());
  for (const auto& [name, t] : c.records) {
    if (name.size() > 0xFFFF) throw CheckpointError("record name too long: " + name.substr(0, 32) + "...");
    put_uint(out, name.size(), 2);
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put_uint(out, d, 4);
    for (double v : t.storage()) put_uint(out, std::bit_cast<std::uint64_t>(v), 8);
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::string magic = r.text(std::min(kMagicSize, bytes.size()), "magic");
  if (magic.size() < kMagicSize) r.need(kMagicSize, "magic");
  if (magic != std::string(kCheckpointMagic, kMagicSize)) {
    if (magic.compare(0, 7, "JNFCKPT") == 0)
      throw CheckpointError("incompatible checkpoint version '" + magic + "' at byte offset 0 (this build reads " +
                            std::string(kCheckpointMagic, kMagicSize) + ")");
    throw CheckpointError("bad checkpoint magic at byte offset 0");
  }
  Checkpoint c;
  const std::size_t meta_len = r.uint(4, "metadata length");
  const std::size_t meta_at = r.offset();
  try {
    c.meta = json::parse(r.text(meta_len, "metadata"));
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError("corrupt checkpoint metadata at byte offset " + std::to_string(meta_at) + ": " + e.what());
  }
  if (!c.meta.is_object()) throw CheckpointError("checkpoint metadata at byte offset 8 is not an object");
  if (c.meta.contains("format_version") && c.meta["format_version"] != 1)
    throw CheckpointError("incompatible checkpoint format_version " + c.meta["format_version"].dump());
  while (!r.done()) {
    const std::size_t at = r.offset();
    const std::size_t name_len = r.uint(2, "record name length");
    std::string name = r.text(name_len, "record name");
    const std::size_t rank = r.uint(1, "record rank");
    if (rank > 2) throw CheckpointError("record '" + name + "' at byte offset " + std::to_string(at) + " has rank " +
                                        std::to_string(rank));
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(r.uint(4, "record dims"));
    const std::size_t count = shape_size(shape);
    r.need(count * 8, "record values");
    std::vector<double> values(count);
    for (double& v : values) v = std::bit_cast<double>(r.uint(8, "record values"));
    c.records.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return c;
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string file_sha256(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

std::string save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::vector<std::uint8_t> bytes = encode_checkpoint(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path.string());
  return sha256_hex(bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file_bytes(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

void verify_parent(const Checkpoint& c, const std::string& role, const std::string& hash) {
  const auto& parents = c.meta.contains("parents") ? c.meta["parents"] : json::object();
  if (!parents.contains(role))
    throw PipelineOrderError(role, c.kind() + " checkpoint records no " + role + " parent");
  const std::string recorded = parents[role].get<std::string>();
  if (recorded != hash)
    throw PipelineOrderError(role, c.kind() + " checkpoint was trained against " + role + " " + recorded.substr(0, 12) +
                                       "..., but " + hash.substr(0, 12) + "... was supplied");
}

void require_kind(const Checkpoint& c, const std::string& kind) {
  if (c.kind() != kind) throw CheckpointError("expected a " + kind + " checkpoint, got '" + c.kind() + "'");
}

Checkpoint joint_checkpoint(JointVae& model, std::uint64_t seed) {
  ParamList params;
  model.collect_params(params);
  Checkpoint c = from_params("joint", params, {});
  c.meta["seed"] = seed;
  c.meta["config"] = to_json(model.config());
  return c;
}

JointVae joint_from_checkpoint(const Checkpoint& c) {
  require_kind(c, "joint");
  JointVae model(parse_meta(c, "joint", joint_config_from), 0);
  ParamList params;
  model.collect_params(params);
  fill(c, params);
  return model;
}

Checkpoint projector_checkpoint(ProjectorSet& g) {
  ParamList params;
  g.collect_params(params);
  Checkpoint c = from_params("projectors", params, {});
  c.meta["seed"] = g.config().seed;
  c.meta["config"] = to_json(g.config());
  c.meta["modalities"] = g.modalities();
  return c;
}

ProjectorSet projectors_from_checkpoint(const Checkpoint& c) {
  require_kind(c, "projectors");
  const ProjectorConfig cfg = parse_meta(c, "projectors", projector_config_from);
  ProjectorSet g(cfg, kImagePixels, c.meta.value("modalities", std::size_t{2}), 0);
  ParamList params;
  g.collect_params(params);
  fill(c, params);
  return g;
}

Checkpoint unimodal_checkpoint(UnimodalSet& set, std::size_t latent_dim,
                               const std::vector<std::pair<std::string, std::string>>& parents) {
  ParamList params, buffers;
  set.collect_params(params);
  set.collect_buffers(buffers);
  Checkpoint c = from_params("unimodal", params, buffers);
  c.meta["seed"] = set.config.seed;
  c.meta["config"] = to_json(set.config);
  c.meta["latent_dim"] = latent_dim;
  for (const auto& [role, hash] : parents) c.meta["parents"][role] = hash;
  return c;
}

UnimodalSet unimodal_from_checkpoint(const Checkpoint& c, const ProjectorSet* projectors) {
  require_kind(c, "unimodal");
  const Stage2Config cfg = parse_meta(c, "unimodal", stage2_config_from);
  UnimodalSet set = make_unimodal_set(cfg, c.meta.value("latent_dim", std::size_t{2}), projectors);
  ParamList params, buffers;
  set.collect_params(params);
  set.collect_buffers(buffers);
  params.insert(params.end(), buffers.begin(), buffers.end());
  fill(c, params);
  return set;
}

Checkpoint classifier_checkpoint(ToyClassifier& cls, const ClassifierConfig& cfg) {
  ParamList params;
  cls.collect_params(params);
  Checkpoint c = from_params("classifier", params, {});
  c.meta["seed"] = cfg.seed;
  c.meta["config"] = {{"hidden", sizes(cfg.hidden)}, {"n_train", cfg.n_train}, {"n_test", cfg.n_test},
                      {"epochs", cfg.epochs},        {"batch_size", cfg.batch_size}, {"lr", cfg.lr},
                      {"min_accuracy", cfg.min_accuracy}};
  c.meta["test_accuracy"] = cls.test_accuracy;
  return c;
}

ToyClassifier classifier_from_checkpoint(const Checkpoint& c) {
  require_kind(c, "classifier");
  ClassifierConfig cfg;
  cfg.hidden = parse_meta(c, "classifier", [](const json& j) { return sizes_from(j.at("hidden")); });
  ToyClassifier cls(cfg, 2, 0);
  ParamList params;
  cls.collect_params(params);
  fill(c, params);
  cls.test_accuracy = c.meta.value("test_accuracy", std::vector<double>{});
  return cls;
}

}  // namespace jnflow
