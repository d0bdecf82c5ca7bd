#include "t2c/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "t2c/rng.hpp"

namespace t2c {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot read " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    lines.emplace_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return lines;
}

std::vector<ParallelPair> make_pairs(std::span<const std::string> src_lines,
                                     std::span<const std::string> tgt_lines, LoadStats* stats) {
  if (src_lines.size() != tgt_lines.size()) {
    throw FormatError("corpus misaligned: source has " + std::to_string(src_lines.size()) +
                      " lines, target has " + std::to_string(tgt_lines.size()));
  }
  LoadStats local;
  local.lines = src_lines.size();
  std::vector<ParallelPair> pairs;
  pairs.reserve(src_lines.size());
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    ParallelPair pair;
    pair.line_no = i;
    pair.source = tokenize_source(src_lines[i]);
    try {
      pair.target = tokenize_code(tgt_lines[i], LiteralPolicy::strict);
    } catch (const TokenizeError&) {
      pair.target = tokenize_code(tgt_lines[i], LiteralPolicy::lenient);
      ++local.unterminated_literals;
    }
    if (pair.source.tokens.empty() || pair.target.tokens.empty()) {
      ++local.empty_filtered;
      continue;
    }
    pairs.push_back(std::move(pair));
  }
  if (local.empty_filtered > 0) {
    spdlog::info("corpus: dropped {} of {} pairs with an empty side", local.empty_filtered,
                 local.lines);
  }
  if (local.unterminated_literals > 0) {
    spdlog::info("corpus: {} code lines hold a string literal that continues past the line",
                 local.unterminated_literals);
  }
  if (stats != nullptr) *stats = local;
  return pairs;
}

std::vector<ParallelPair> load_parallel(const std::filesystem::path& src_path,
                                        const std::filesystem::path& tgt_path, LoadStats* stats) {
  const auto src = read_lines(src_path);
  const auto tgt = read_lines(tgt_path);
  return make_pairs(src, tgt, stats);
}

CorpusSplit split(std::span<const ParallelPair> pairs, std::size_t n_val, std::uint64_t seed) {
  if (n_val == 0 || n_val >= pairs.size()) {
    throw ContractError("split: n_val must satisfy 0 < n_val < " + std::to_string(pairs.size()) +
                        ", got " + std::to_string(n_val));
  }
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  // Partial Fisher-Yates: the first n_val slots become a uniform sample.
  for (std::size_t i = 0; i < n_val; ++i) {
    std::swap(order[i], order[i + rng.below(order.size() - i)]);
  }
  std::vector<bool> is_val(pairs.size(), false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  CorpusSplit out;
  out.validation.reserve(n_val);
  out.train.reserve(pairs.size() - n_val);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    (is_val[i] ? out.validation : out.train).push_back(pairs[i]);
  }
  return out;
}

std::vector<EncodedPair> encode_pairs(std::span<const ParallelPair> pairs, const Vocabulary& src_vocab,
                                      const Vocabulary& tgt_vocab) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    out.push_back({encode(pairs[i].source, src_vocab, true), encode(pairs[i].target, tgt_vocab, false),
                   i});
  }
  return out;
}

std::size_t Batch::target_length(std::size_t row) const {
  std::size_t n = 0;
  for (std::size_t t = 0; t < tgt_len; ++t) n += target_mask[row * tgt_len + t];
  return n;
}

std::size_t Batch::mask_count() const {
  return static_cast<std::size_t>(std::count(target_mask.begin(), target_mask.end(), 1));
}

Batch make_batch(std::span<const EncodedPair> pairs) {
  if (pairs.empty()) {
    throw ContractError("make_batch: no pairs");
  }
  Batch b;
  b.size = pairs.size();
  for (const auto& p : pairs) {
    if (p.source.empty()) {
      throw ContractError("make_batch: empty source sequence");
    }
    b.src_len = std::max(b.src_len, p.source.size());
    b.tgt_len = std::max(b.tgt_len, p.target.size() + 1);
  }
  b.source.assign(b.size * b.src_len, Vocabulary::kPad);
  b.target_in.assign(b.size * b.tgt_len, Vocabulary::kPad);
  b.target_out.assign(b.size * b.tgt_len, Vocabulary::kPad);
  b.target_mask.assign(b.size * b.tgt_len, 0);
  for (std::size_t r = 0; r < b.size; ++r) {
    const auto& p = pairs[r];
    std::copy(p.source.begin(), p.source.end(), b.source.begin() + static_cast<std::ptrdiff_t>(r * b.src_len));
    b.source_lengths.push_back(p.source.size());
    const std::size_t base = r * b.tgt_len;
    b.target_in[base] = Vocabulary::kSos;
    for (std::size_t t = 0; t < p.target.size(); ++t) {
      b.target_in[base + t + 1] = p.target[t];
      b.target_out[base + t] = p.target[t];
    }
    b.target_out[base + p.target.size()] = Vocabulary::kEos;
    for (std::size_t t = 0; t <= p.target.size(); ++t) b.target_mask[base + t] = 1;
    b.pair_index.push_back(p.index);
  }
  return b;
}

std::vector<Batch> make_batches(std::span<const EncodedPair> pairs, const BatchOptions& options,
                                BatchStats* stats) {
  if (options.batch_size < 1) {
    throw ContractError("make_batches: batch_size must be >= 1");
  }
  std::vector<const EncodedPair*> kept;
  kept.reserve(pairs.size());
  std::size_t filtered = 0;
  for (const auto& p : pairs) {
    const std::size_t src_tokens = p.source.size() - (!p.source.empty() && p.source.back() == Vocabulary::kEos);
    if (src_tokens > options.max_src_len || p.target.size() > options.max_tgt_len) {
      ++filtered;
      continue;
    }
    kept.push_back(&p);
  }
  if (filtered > 0) {
    spdlog::info("batching: filtered {} of {} pairs over the length caps ({}/{})", filtered,
                 pairs.size(), options.max_src_len, options.max_tgt_len);
  }
  if (stats != nullptr) stats->filtered_too_long = filtered;

  std::vector<std::vector<const EncodedPair*>> groups;
  const std::size_t bs = options.batch_size;
  if (options.shuffle_seed) {
    Rng rng(*options.shuffle_seed);
    rng.shuffle(std::span(kept));
    const std::size_t window = 100 * bs;
    for (std::size_t w = 0; w < kept.size(); w += window) {
      auto first = kept.begin() + static_cast<std::ptrdiff_t>(w);
      auto last = kept.begin() + static_cast<std::ptrdiff_t>(std::min(kept.size(), w + window));
      std::stable_sort(first, last, [](const EncodedPair* a, const EncodedPair* b) {
        return a->source.size() < b->source.size();
      });
    }
    for (std::size_t i = 0; i < kept.size(); i += bs) {
      groups.emplace_back(kept.begin() + static_cast<std::ptrdiff_t>(i),
                          kept.begin() + static_cast<std::ptrdiff_t>(std::min(kept.size(), i + bs)));
    }
    rng.shuffle(std::span(groups));
  } else {
    for (std::size_t i = 0; i < kept.size(); i += bs) {
      groups.emplace_back(kept.begin() + static_cast<std::ptrdiff_t>(i),
                          kept.begin() + static_cast<std::ptrdiff_t>(std::min(kept.size(), i + bs)));
    }
  }

  std::vector<Batch> batches;
  batches.reserve(groups.size());
  std::vector<EncodedPair> scratch;
  for (const auto& g : groups) {
    scratch.clear();
    for (const EncodedPair* p : g) scratch.push_back(*p);
    batches.push_back(make_batch(scratch));
  }
  return batches;
}

}  // namespace t2c
