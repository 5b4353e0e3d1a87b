#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "jnflow/joint_vae.hpp"
#include "jnflow/metrics.hpp"
#include "jnflow/projectors.hpp"
#include "jnflow/unimodal.hpp"

namespace jnflow {

/// Binary layout, all integers little-endian:
///   "JNFCKPT1" | u32 metadata length | UTF-8 JSON metadata |
///   records: u16 name length, name, u8 rank, rank x u32 dims,
///            prod(dims) x f64 values.
/// Metadata carries at least "kind" and "parents" (role -> SHA-256 hex of
/// the parent checkpoint file).
inline constexpr char kCheckpointMagic[] = "JNFCKPT1";
inline constexpr std::size_t kMagicSize = 8;

struct Checkpoint {
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, Tensor>> records;

  const std::string kind() const;
  const Tensor& record(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
/// Throws CheckpointError naming the byte offset of the first problem. A
/// file starting with "JNFCKPT" and a different version digit is reported
/// as an incompatible version.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes the file and returns its SHA-256 hex digest.
std::string save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string file_sha256(const std::filesystem::path& path);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Throws PipelineOrderError unless c.meta["parents"][role] equals `hash`.
void verify_parent(const Checkpoint& c, const std::string& role, const std::string& hash);
/// Throws CheckpointError unless the checkpoint has the given kind.
void require_kind(const Checkpoint& c, const std::string& kind);

Checkpoint joint_checkpoint(JointVae& model, std::uint64_t seed);
JointVae joint_from_checkpoint(const Checkpoint& c);

Checkpoint projector_checkpoint(ProjectorSet& g);
ProjectorSet projectors_from_checkpoint(const Checkpoint& c);

/// Parents: "joint" always, "projectors" in shared modes.
Checkpoint unimodal_checkpoint(UnimodalSet& set, std::size_t latent_dim,
                               const std::vector<std::pair<std::string, std::string>>& parents);
UnimodalSet unimodal_from_checkpoint(const Checkpoint& c, const ProjectorSet* projectors);

Checkpoint classifier_checkpoint(ToyClassifier& c, const ClassifierConfig& cfg);
ToyClassifier classifier_from_checkpoint(const Checkpoint& c);

}  // namespace jnflow
