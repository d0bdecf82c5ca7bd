#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "t2c/ops.hpp"

namespace t2c {

enum class Side { source, target };

struct TokenSequence {
  Side side = Side::source;
  std::vector<std::string> tokens;
};

class TokenizeError : public std::runtime_error {
 public:
  TokenizeError(const std::string& what, std::size_t column)
      : std::runtime_error(what + " at column " + std::to_string(column)), column_(column) {}
  /// 1-based byte column where the offending construct starts.
  std::size_t column() const { return column_; }

 private:
  std::size_t column_;
};

/// Lowercases ASCII, splits on whitespace and emits each of . , : ; ! ? " ' ( ) [ ] { }
/// as its own token.
TokenSequence tokenize_source(std::string_view line);

enum class LiteralPolicy {
  strict,   ///< unterminated string literal throws TokenizeError
  lenient,  ///< unterminated literal runs to end of line as one token
};

/// Code tokenizer: identifier runs [A-Za-z0-9_] stay whole, quoted string
/// literals (including triple-quoted) stay whole with their quotes, every
/// other non-space byte is a token of its own. Case is preserved.
TokenSequence tokenize_code(std::string_view line, LiteralPolicy policy = LiteralPolicy::strict);

/// Token <-> id bijection. Ids 0..3 are PAD, UNK, SOS, EOS; the remaining
/// ids are ordered by descending frequency, ties by ascending byte order.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kSos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr std::size_t kSpecials = 4;

  Vocabulary();

  static Vocabulary build(std::span<const TokenSequence> sequences, std::uint64_t min_freq = 1,
                          std::optional<std::size_t> max_size = std::nullopt);

  std::size_t size() const { return tokens_.size(); }

  /// Id of a corpus token; unknown tokens and the special names map to UNK.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::uint64_t frequency(TokenId id) const;

  /// `token<TAB>frequency` per non-special id, LF terminated.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.freqs_ == b.freqs_;
  }

 private:
  void append(std::string token, std::uint64_t freq);

  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<TokenId> encode(const TokenSequence& seq, const Vocabulary& vocab, bool append_eos);

/// Joins tokens with single spaces, dropping PAD/SOS/EOS; UNK renders as "<unk>".
std::string decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab);

/// Splits a detokenized line on single spaces.
std::vector<std::string> split_spaces(std::string_view text);

}  // namespace t2c
