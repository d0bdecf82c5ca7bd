#include "t2c/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace t2c {
namespace {

constexpr std::size_t kHeaderBytes = 16;  // magic + manifest length

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64_le(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[static_cast<std::size_t>(i)]);
  return v;
}

void put_f32_le(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

float get_f32_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 3; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<float>(bits);
}

std::string at_byte(std::size_t offset) { return " at byte " + std::to_string(offset); }

template <typename T>
T manifest_get(const nlohmann::json& m, const char* key, std::size_t offset) {
  if (!m.contains(key)) throw FormatError(std::string("container manifest: missing '") + key + "'" + at_byte(offset));
  try {
    return m.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container manifest: bad '") + key + "'" + at_byte(offset) + ": " + e.what());
  }
}

}  // namespace

const StoredTensor& Container::tensor(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw FormatError("container: no tensor named '" + std::string(name) + "'");
}

std::string serialize_container(const Container& c) {
  nlohmann::json manifest = c.manifest;
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : c.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw ContractError("container: tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                          " values for shape " + shape_str(t.shape));
    }
    const std::size_t bytes = t.values.size() * sizeof(float);
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"offset", offset}, {"byte_len", bytes}});
    offset += bytes;
  }
  nlohmann::json refs = nlohmann::json::array();
  for (const auto& r : c.vocab_refs) refs.push_back({{"path", r.path}, {"sha256", r.sha256}});
  manifest["tensors"] = std::move(entries);
  manifest["vocab_refs"] = std::move(refs);
  const std::string text = manifest.dump();

  std::string out;
  out.reserve(kHeaderBytes + text.size() + offset);
  out.append(kContainerMagic);
  put_u64_le(out, text.size());
  out.append(text);
  for (const auto& t : c.tensors) {
    for (float v : t.values) put_f32_le(out, v);
  }
  return out;
}

Container parse_container(std::string_view bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("container truncated" + at_byte(0) + ": expected at least " + std::to_string(kHeaderBytes) +
                      " header bytes, found " + std::to_string(bytes.size()));
  }
  if (bytes.substr(0, kContainerMagic.size()) != kContainerMagic) {
    throw FormatError("container: bad magic" + at_byte(0) + ", expected " + std::string(kContainerMagic));
  }
  const std::uint64_t manifest_len = get_u64_le(bytes.substr(8, 8));
  const std::size_t available = bytes.size() - kHeaderBytes;
  if (manifest_len > available) {
    throw FormatError("container truncated" + at_byte(kHeaderBytes) + ": manifest expects " +
                      std::to_string(manifest_len) + " bytes, found " + std::to_string(available));
  }
  Container c;
  try {
    c.manifest = nlohmann::json::parse(bytes.substr(kHeaderBytes, manifest_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("container manifest: invalid JSON" + at_byte(kHeaderBytes + e.byte) + ": " + e.what());
  }
  if (!c.manifest.is_object()) throw FormatError("container manifest: not an object" + at_byte(kHeaderBytes));

  const std::size_t payload_start = kHeaderBytes + manifest_len;
  const auto entries = manifest_get<nlohmann::json>(c.manifest, "tensors", kHeaderBytes);
  std::size_t expected_offset = 0;
  for (const auto& e : entries) {
    StoredTensor t;
    t.name = manifest_get<std::string>(e, "name", kHeaderBytes);
    t.shape = manifest_get<Shape>(e, "shape", kHeaderBytes);
    const auto dtype = manifest_get<std::string>(e, "dtype", kHeaderBytes);
    const auto offset = manifest_get<std::size_t>(e, "offset", kHeaderBytes);
    const auto byte_len = manifest_get<std::size_t>(e, "byte_len", kHeaderBytes);
    if (dtype != "f32") throw FormatError("container: tensor '" + t.name + "' has unsupported dtype " + dtype);
    if (offset != expected_offset) {
      throw FormatError("container: tensor '" + t.name + "' offset " + std::to_string(offset) + ", expected " +
                        std::to_string(expected_offset));
    }
    if (byte_len != shape_numel(t.shape) * sizeof(float)) {
      throw FormatError("container: tensor '" + t.name + "' byte_len " + std::to_string(byte_len) +
                        " does not match shape " + shape_str(t.shape));
    }
    const std::size_t start = payload_start + offset;
    const std::size_t have = bytes.size() > start ? bytes.size() - start : 0;
    if (have < byte_len) {
      throw FormatError("container truncated" + at_byte(start) + ": tensor '" + t.name + "' expects " +
                        std::to_string(byte_len) + " bytes, found " + std::to_string(have));
    }
    t.values.resize(byte_len / sizeof(float));
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = get_f32_le(bytes.data() + start + 4 * i);
    expected_offset += byte_len;
    c.tensors.push_back(std::move(t));
  }
  if (payload_start + expected_offset != bytes.size()) {
    throw FormatError("container: " + std::to_string(bytes.size() - payload_start - expected_offset) +
                      " trailing bytes" + at_byte(payload_start + expected_offset));
  }
  for (const auto& r : manifest_get<nlohmann::json>(c.manifest, "vocab_refs", kHeaderBytes)) {
    c.vocab_refs.push_back({manifest_get<std::string>(r, "path", kHeaderBytes),
                            manifest_get<std::string>(r, "sha256", kHeaderBytes)});
  }
  c.manifest.erase("tensors");
  c.manifest.erase("vocab_refs");
  return c;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw IoError("sha256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

Container to_container(const Checkpoint& ckpt) {
  Container c;
  c.manifest["format_version"] = ckpt.format_version;
  c.manifest["model_config"] = ckpt.model_config;
  c.manifest["train_config"] = ckpt.train_config;
  c.manifest["epoch"] = ckpt.epoch;
  for (const auto& nt : ckpt.params.named()) {
    auto d = nt.tensor.data();
    c.tensors.push_back({nt.name, nt.tensor.shape(), std::vector<float>(d.begin(), d.end())});
  }
  c.vocab_refs = ckpt.vocab_refs;
  return c;
}

Checkpoint from_container(const Container& c) {
  Checkpoint ckpt;
  ckpt.format_version = manifest_get<int>(c.manifest, "format_version", kHeaderBytes);
  if (ckpt.format_version != kFormatVersion) {
    throw FormatError("checkpoint: unsupported format_version " + std::to_string(ckpt.format_version));
  }
  ckpt.model_config = manifest_get<ModelConfig>(c.manifest, "model_config", kHeaderBytes);
  try {
    ckpt.model_config.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  ckpt.train_config = manifest_get<TrainConfig>(c.manifest, "train_config", kHeaderBytes);
  ckpt.epoch = manifest_get<std::size_t>(c.manifest, "epoch", kHeaderBytes);
  ckpt.params = ModelParams<float>::zeros(ckpt.model_config);
  auto named = ckpt.params.named();
  if (named.size() != c.tensors.size()) {
    throw FormatError("checkpoint: expected " + std::to_string(named.size()) + " tensors, found " +
                      std::to_string(c.tensors.size()));
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& stored = c.tensors[i];
    if (stored.name != named[i].name || stored.shape != named[i].tensor.shape()) {
      throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + stored.name + "' " +
                        shape_str(stored.shape) + ", expected '" + named[i].name + "' " +
                        shape_str(named[i].tensor.shape()));
    }
    std::copy(stored.values.begin(), stored.values.end(), named[i].tensor.data().begin());
  }
  ckpt.vocab_refs = c.vocab_refs;
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, serialize_container(to_container(ckpt)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return from_container(parse_container(read_file_bytes(path)));
}

std::vector<VocabRef> make_vocab_refs(const std::filesystem::path& dir, const std::filesystem::path& src_vocab,
                                      const std::filesystem::path& tgt_vocab) {
  std::vector<VocabRef> refs;
  for (const auto& p : {src_vocab, tgt_vocab}) {
    refs.push_back({std::filesystem::relative(p, dir).generic_string(), sha256_file(p)});
  }
  return refs;
}

LoadedModel load_model(const std::filesystem::path& checkpoint_path) {
  LoadedModel m;
  m.checkpoint = load_checkpoint(checkpoint_path);
  if (m.checkpoint.vocab_refs.size() != 2) {
    throw FormatError("checkpoint: expected 2 vocabulary references, found " +
                      std::to_string(m.checkpoint.vocab_refs.size()));
  }
  const auto dir = checkpoint_path.parent_path();
  std::vector<Vocabulary> vocabs;
  for (const auto& ref : m.checkpoint.vocab_refs) {
    const auto path = dir / ref.path;
    const std::string bytes = read_file_bytes(path);
    const std::string actual = sha256_hex(bytes);
    if (actual != ref.sha256) {
      throw FormatError("vocabulary hash mismatch for " + path.string() + ": expected " + ref.sha256 +
                        ", found " + actual);
    }
    vocabs.push_back(Vocabulary::parse(bytes));
  }
  m.src_vocab = std::move(vocabs[0]);
  m.tgt_vocab = std::move(vocabs[1]);
  const auto& cfg = m.checkpoint.model_config;
  if (m.src_vocab.size() != cfg.src_vocab_size || m.tgt_vocab.size() != cfg.tgt_vocab_size) {
    throw FormatError("checkpoint: vocabulary sizes " + std::to_string(m.src_vocab.size()) + "/" +
                      std::to_string(m.tgt_vocab.size()) + " do not match model config " +
                      std::to_string(cfg.src_vocab_size) + "/" + std::to_string(cfg.tgt_vocab_size));
  }
  return m;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& src, const EmbeddingMatrix& tgt,
                     const std::vector<VocabRef>& vocab_refs) {
  Container c;
  c.manifest["format_version"] = kFormatVersion;
  c.manifest["kind"] = "embeddings";
  for (const auto* m : {&src, &tgt}) {
    auto d = m->vectors.data();
    c.tensors.push_back({m == &src ? "src_embed" : "tgt_embed", m->vectors.shape(), std::vector<float>(d.begin(), d.end())});
  }
  c.vocab_refs = vocab_refs;
  write_file_bytes(path, serialize_container(c));
}

std::pair<EmbeddingMatrix, EmbeddingMatrix> load_embeddings(const std::filesystem::path& path) {
  const Container c = parse_container(read_file_bytes(path));
  auto matrix = [&c](const char* name, Side side) {
    const auto& t = c.tensor(name);
    if (t.shape.size() != 2) throw FormatError(std::string("embeddings: '") + name + "' is not a matrix");
    return EmbeddingMatrix{side, Tensor<float>(t.shape, t.values)};
  };
  return {matrix("src_embed", Side::source), matrix("tgt_embed", Side::target)};
}

}  // namespace t2c
