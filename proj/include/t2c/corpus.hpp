#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "t2c/textpipe.hpp"

namespace t2c {

struct ParallelPair {
  TokenSequence source;
  TokenSequence target;
  /// 0-based line index in the corpus files.
  std::size_t line_no = 0;
};

struct LoadStats {
  std::size_t lines = 0;
  std::size_t empty_filtered = 0;
  /// Code lines whose string literal ran to end of line.
  std::size_t unterminated_literals = 0;
};

/// Pairs line i of `src_path` with line i of `tgt_path`. Lines whose source
/// or target is empty after tokenization are dropped and counted.
std::vector<ParallelPair> load_parallel(const std::filesystem::path& src_path,
                                        const std::filesystem::path& tgt_path,
                                        LoadStats* stats = nullptr);

/// Same, from in-memory lines.
std::vector<ParallelPair> make_pairs(std::span<const std::string> src_lines,
                                     std::span<const std::string> tgt_lines,
                                     LoadStats* stats = nullptr);

std::vector<std::string> read_lines(const std::filesystem::path& path);

struct CorpusSplit {
  std::vector<ParallelPair> train;
  std::vector<ParallelPair> validation;
};

/// Draws `n_val` pairs uniformly at random as validation; both parts keep
/// corpus order.
CorpusSplit split(std::span<const ParallelPair> pairs, std::size_t n_val, std::uint64_t seed);

/// A pair in id form. The source ends with EOS; the target carries no framing.
struct EncodedPair {
  std::vector<TokenId> source;
  std::vector<TokenId> target;
  std::size_t index = 0;
};

std::vector<EncodedPair> encode_pairs(std::span<const ParallelPair> pairs, const Vocabulary& src_vocab,
                                      const Vocabulary& tgt_vocab);

/// Padded, masked batch. Matrices are row-major with one row per example.
struct Batch {
  std::size_t size = 0;
  std::size_t src_len = 0;  ///< S_max
  std::size_t tgt_len = 0;  ///< T_max, including the EOS / SOS position
  std::vector<TokenId> source;             ///< [size x src_len]
  std::vector<std::size_t> source_lengths;  ///< true lengths
  std::vector<TokenId> target_in;          ///< [size x tgt_len], starts with SOS
  std::vector<TokenId> target_out;         ///< [size x tgt_len], ends with EOS
  std::vector<std::uint8_t> target_mask;   ///< 1 on non-PAD target_out positions
  std::vector<std::size_t> pair_index;     ///< EncodedPair::index per row

  TokenId src(std::size_t row, std::size_t t) const { return source[row * src_len + t]; }
  TokenId tin(std::size_t row, std::size_t t) const { return target_in[row * tgt_len + t]; }
  TokenId tout(std::size_t row, std::size_t t) const { return target_out[row * tgt_len + t]; }
  std::size_t target_length(std::size_t row) const;
  std::size_t mask_count() const;
};

/// Builds one batch from the given pairs in order.
Batch make_batch(std::span<const EncodedPair> pairs);

struct BatchOptions {
  std::size_t batch_size = 64;
  std::size_t max_src_len = 60;
  std::size_t max_tgt_len = 60;
  /// With a seed: global shuffle, sort windows of 100 x batch_size by
  /// source length, cut batches, shuffle batch order. Without: corpus order.
  std::optional<std::uint64_t> shuffle_seed;
};

struct BatchStats {
  std::size_t filtered_too_long = 0;
};

/// Token counts compared against the caps exclude EOS framing.
std::vector<Batch> make_batches(std::span<const EncodedPair> pairs, const BatchOptions& options,
                                BatchStats* stats = nullptr);

}  // namespace t2c
