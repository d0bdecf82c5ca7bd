#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "t2c/config.hpp"
#include "t2c/embeddings.hpp"
#include "t2c/model.hpp"

namespace t2c {

inline constexpr std::string_view kContainerMagic = "T2CCKPT1";
inline constexpr int kFormatVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct VocabRef {
  std::string path;  ///< relative to the container's directory
  std::string sha256;
  friend bool operator==(const VocabRef&, const VocabRef&) = default;
};

/// Magic, 8-byte little-endian manifest length, JSON manifest, then the f32
/// payloads in manifest order. `manifest` holds every key except `tensors`
/// and `vocab_refs`, which are rebuilt from the fields below.
struct Container {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<StoredTensor> tensors;
  std::vector<VocabRef> vocab_refs;

  const StoredTensor& tensor(std::string_view name) const;
};

std::string serialize_container(const Container& c);
/// FormatError messages carry the byte offset of the problem.
Container parse_container(std::string_view bytes);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct Checkpoint {
  int format_version = kFormatVersion;
  ModelConfig model_config;
  TrainConfig train_config;
  std::size_t epoch = 0;
  ModelParams<float> params;
  std::vector<VocabRef> vocab_refs;  ///< source then target
};

Container to_container(const Checkpoint& ckpt);
Checkpoint from_container(const Container& c);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hashes the vocabulary files and returns refs relative to `dir`.
std::vector<VocabRef> make_vocab_refs(const std::filesystem::path& dir, const std::filesystem::path& src_vocab,
                                      const std::filesystem::path& tgt_vocab);

struct LoadedModel {
  Checkpoint checkpoint;
  Vocabulary src_vocab;
  Vocabulary tgt_vocab;
};

/// Loads a checkpoint and its vocabularies, refusing to proceed when a
/// vocabulary file's hash differs from the recorded one.
LoadedModel load_model(const std::filesystem::path& checkpoint_path);

/// Embedding file: same container, tensors `src_embed` / `tgt_embed`.
void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& src, const EmbeddingMatrix& tgt,
                     const std::vector<VocabRef>& vocab_refs);
std::pair<EmbeddingMatrix, EmbeddingMatrix> load_embeddings(const std::filesystem::path& path);

}  // namespace t2c
