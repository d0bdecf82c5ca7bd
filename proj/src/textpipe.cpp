#include "t2c/textpipe.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

namespace t2c {
namespace {

constexpr std::array<const char*, Vocabulary::kSpecials> kSpecialNames = {"<pad>", "<unk>", "<s>",
                                                                          "</s>"};

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

bool is_source_punct(char c) {
  switch (c) {
    case '.': case ',': case ':': case ';': case '!': case '?': case '"': case '\'':
    case '(': case ')': case '[': case ']': case '{': case '}':
      return true;
    default:
      return false;
  }
}

bool is_ident(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

char ascii_lower(char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c; }

}  // namespace

TokenSequence tokenize_source(std::string_view line) {
  TokenSequence out{Side::source, {}};
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.tokens.push_back(std::move(current));
      current.clear();
    }
  };
  for (char c : line) {
    if (is_space(c)) {
      flush();
    } else if (is_source_punct(c)) {
      flush();
      out.tokens.emplace_back(1, c);
    } else {
      current.push_back(ascii_lower(c));
    }
  }
  flush();
  return out;
}

TokenSequence tokenize_code(std::string_view line, LiteralPolicy policy) {
  TokenSequence out{Side::target, {}};
  std::size_t i = 0;
  const std::size_t n = line.size();
  while (i < n) {
    const char c = line[i];
    if (is_space(c)) {
      ++i;
    } else if (is_ident(c)) {
      std::size_t j = i;
      while (j < n && is_ident(line[j])) ++j;
      out.tokens.emplace_back(line.substr(i, j - i));
      i = j;
    } else if (c == '"' || c == '\'') {
      const bool triple = i + 2 < n && line[i + 1] == c && line[i + 2] == c;
      const std::size_t open = triple ? 3 : 1;
      std::size_t j = i + open;
      bool closed = false;
      while (j < n) {
        if (line[j] == '\\') {
          j += 2;
          continue;
        }
        if (line[j] == c && (!triple || (j + 2 < n && line[j + 1] == c && line[j + 2] == c))) {
          j += open;
          closed = true;
          break;
        }
        ++j;
      }
      if (!closed) {
        if (policy == LiteralPolicy::strict) {
          throw TokenizeError("unterminated string literal", i + 1);
        }
        j = n;
      }
      out.tokens.emplace_back(line.substr(i, std::min(j, n) - i));
      i = std::min(j, n);
    } else {
      out.tokens.emplace_back(1, c);
      ++i;
    }
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* name : kSpecialNames) {
    append(name, 0);
  }
}

void Vocabulary::append(std::string token, std::uint64_t freq) {
  if (token.empty()) {
    throw FormatError("vocabulary token must not be empty");
  }
  const auto id = static_cast<TokenId>(tokens_.size());
  if (!index_.emplace(token, id).second) {
    throw FormatError("duplicate vocabulary token '" + token + "'");
  }
  tokens_.push_back(std::move(token));
  freqs_.push_back(freq);
}

Vocabulary Vocabulary::build(std::span<const TokenSequence> sequences, std::uint64_t min_freq,
                             std::optional<std::size_t> max_size) {
  if (min_freq < 1) {
    throw ContractError("build_vocab: min_freq must be >= 1");
  }
  if (max_size && *max_size < kSpecials) {
    throw ContractError("build_vocab: max_size must leave room for the 4 special tokens");
  }
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& seq : sequences) {
    for (const auto& tok : seq.tokens) {
      ++counts[tok];
    }
  }
  for (const char* name : kSpecialNames) {
    counts.erase(name);
  }
  std::vector<std::pair<std::string, std::uint64_t>> entries;
  entries.reserve(counts.size());
  for (auto& [tok, freq] : counts) {
    if (freq >= min_freq) entries.emplace_back(tok, freq);
  }
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;  // std::string compares bytes as unsigned char
  });
  if (max_size && entries.size() > *max_size - kSpecials) {
    entries.resize(*max_size - kSpecials);
  }
  Vocabulary vocab;
  for (auto& [tok, freq] : entries) {
    vocab.append(std::move(tok), freq);
  }
  return vocab;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end() || it->second < static_cast<TokenId>(kSpecials)) {
    return kUnk;
  }
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const { return id(token) != kUnk; }

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::frequency(TokenId id) const {
  token(id);
  return freqs_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = kSpecials; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\t';
    out += std::to_string(freqs_[i]);
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary vocab;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    ++line_no;
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) {
      throw FormatError("vocabulary line " + std::to_string(line_no) + ": missing LF terminator");
    }
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    // Tokens never contain LF but code string literals may contain a tab,
    // so the count is whatever follows the last tab.
    const std::size_t tab = line.rfind('\t');
    if (tab == std::string_view::npos || tab == 0) {
      throw FormatError("vocabulary line " + std::to_string(line_no) + ": expected token<TAB>count");
    }
    std::uint64_t freq = 0;
    std::string_view num = line.substr(tab + 1);
    auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), freq);
    if (ec != std::errc() || ptr != num.data() + num.size() || num.empty()) {
      throw FormatError("vocabulary line " + std::to_string(line_no) + ": bad count '" +
                        std::string(num) + "'");
    }
    try {
      vocab.append(std::string(line.substr(0, tab)), freq);
    } catch (const FormatError& e) {
      throw FormatError("vocabulary line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write vocabulary file " + path.string());
  }
  out << serialize();
  if (!out) {
    throw IoError("failed writing vocabulary file " + path.string());
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read vocabulary file " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::vector<TokenId> encode(const TokenSequence& seq, const Vocabulary& vocab, bool append_eos) {
  std::vector<TokenId> ids;
  ids.reserve(seq.tokens.size() + 1);
  for (const auto& tok : seq.tokens) {
    ids.push_back(vocab.id(tok));
  }
  if (append_eos) {
    ids.push_back(Vocabulary::kEos);
  }
  return ids;
}

std::string decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = vocab.token(id);
    if (id == Vocabulary::kPad || id == Vocabulary::kSos || id == Vocabulary::kEos) {
      continue;
    }
    if (!out.empty()) out += ' ';
    out += (id == Vocabulary::kUnk) ? std::string("<unk>") : tok;
  }
  return out;
}

std::vector<std::string> split_spaces(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(' ', pos);
    if (end == std::string_view::npos) end = text.size();
    if (end > pos) out.emplace_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return out;
}

}  // namespace t2c
