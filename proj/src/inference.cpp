#include "t2c/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace t2c {
namespace {

bool selectable(TokenId id) { return id != Vocabulary::kPad && id != Vocabulary::kSos; }

// a before b in the final ordering: higher key first, then lexicographic ids.
bool ranks_before(double key_a, const std::vector<TokenId>& a, double key_b, const std::vector<TokenId>& b) {
  if (key_a != key_b) return key_a > key_b;
  return std::ranges::lexicographical_compare(a, b);
}

void check_row(const std::vector<double>& row, std::size_t vocab) {
  if (row.size() != vocab) {
    throw DimensionError("step scorer returned " + std::to_string(row.size()) + " scores for vocabulary " +
                         std::to_string(vocab));
  }
}

}  // namespace

PrefixScorer::PrefixScorer(std::size_t vocab_size, Fn fn) : vocab_size_(vocab_size), fn_(std::move(fn)) {}

std::vector<double> PrefixScorer::start() {
  live_.assign(1, {});
  return fn_({});
}

std::vector<std::vector<double>> PrefixScorer::extend(std::span<const std::size_t> parents,
                                                      std::span<const TokenId> tokens) {
  std::vector<std::vector<TokenId>> next;
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    auto prefix = live_.at(parents[i]);
    prefix.push_back(tokens[i]);
    out.push_back(fn_(prefix));
    next.push_back(std::move(prefix));
  }
  live_ = std::move(next);
  return out;
}

std::vector<std::vector<double>> log_softmax_rows(const Tensor<float>& logits) {
  std::vector<std::vector<double>> out(logits.rows(), std::vector<double>(logits.cols()));
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < logits.cols(); ++c) mx = std::max(mx, static_cast<double>(logits.at(r, c)));
    double total = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) total += std::exp(static_cast<double>(logits.at(r, c)) - mx);
    const double lse = mx + std::log(total);
    for (std::size_t c = 0; c < logits.cols(); ++c) out[r][c] = static_cast<double>(logits.at(r, c)) - lse;
  }
  return out;
}

ModelScorer::ModelScorer(const ModelParams<float>& params, std::span<const TokenId> source_ids) : params_(params) {
  const std::vector<std::size_t> lengths{source_ids.size()};
  enc_ = encode(params_, source_ids, lengths, source_ids.size());
}

const EncoderOutput<float>& ModelScorer::replicated(std::size_t rows) {
  if (cache_.size() < rows) cache_.resize(rows);
  auto& e = cache_[rows - 1];
  if (e.batch == rows) return e;
  const std::size_t per_row = enc_.memory.numel();
  std::vector<float> memory;
  memory.reserve(per_row * rows);
  for (std::size_t r = 0; r < rows; ++r) memory.insert(memory.end(), enc_.memory.data().begin(), enc_.memory.data().end());
  e.memory = Tensor<float>({rows, enc_.src_len, params_.config.hidden_dim}, std::move(memory));
  e.src_mask.clear();
  for (std::size_t r = 0; r < rows; ++r) e.src_mask.insert(e.src_mask.end(), enc_.src_mask.begin(), enc_.src_mask.end());
  e.batch = rows;
  e.src_len = enc_.src_len;
  return e;
}

std::vector<std::vector<double>> ModelScorer::step(std::span<const TokenId> prev) {
  auto r = decode_step<float>(prev, state_, replicated(prev.size()), params_);
  state_ = std::move(r.state);
  return log_softmax_rows(r.logits);
}

std::vector<double> ModelScorer::start() {
  state_ = initial_decoder_state(enc_);
  const std::vector<TokenId> sos{Vocabulary::kSos};
  return step(sos).front();
}

std::vector<std::vector<double>> ModelScorer::extend(std::span<const std::size_t> parents,
                                                     std::span<const TokenId> tokens) {
  const std::size_t dh = params_.config.hidden_dim;
  auto gather = [&](const Tensor<float>& t) {
    std::vector<float> v;
    v.reserve(parents.size() * dh);
    for (std::size_t p : parents) {
      auto row = t.data().subspan(p * dh, dh);
      v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor<float>({parents.size(), dh}, std::move(v));
  };
  for (auto& layer : state_) layer = {gather(layer.h), gather(layer.c)};
  return step(tokens);
}

double normalized_score(const Hypothesis& h, double alpha) {
  const double len = static_cast<double>(h.tokens.size() + (h.finished ? 1 : 0));
  if (alpha == 0.0 || len == 0.0) return h.log_prob;
  return h.log_prob / std::pow(len, alpha);
}

Hypothesis greedy_search(StepScorer& scorer, std::size_t max_len) {
  Hypothesis h;
  if (max_len == 0) return h;
  std::vector<double> lp = scorer.start();
  while (true) {
    check_row(lp, scorer.vocab_size());
    TokenId best = -1;
    for (std::size_t v = 0; v < lp.size(); ++v) {
      const auto id = static_cast<TokenId>(v);
      if (selectable(id) && (best < 0 || lp[v] > lp[static_cast<std::size_t>(best)])) best = id;
    }
    h.log_prob += lp[static_cast<std::size_t>(best)];
    if (best == Vocabulary::kEos) {
      h.finished = true;
      return h;
    }
    h.tokens.push_back(best);
    if (h.tokens.size() >= max_len) return h;
    const std::size_t parent = 0;
    lp = scorer.extend({&parent, 1}, {&best, 1}).front();
  }
}

std::vector<Hypothesis> beam_search(StepScorer& scorer, const DecodeOptions& options) {
  if (options.beam < 1) throw ContractError("beam_search: beam width must be >= 1");
  std::vector<Hypothesis> finished;
  if (options.max_len == 0) return {Hypothesis{}};

  struct Candidate {
    std::size_t parent;
    TokenId token;
    double log_prob;
    std::vector<TokenId> seq;  ///< parent tokens plus `token`
  };
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<std::vector<double>> scores{scorer.start()};
  while (!live.empty()) {
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < live.size(); ++i) {
      check_row(scores[i], scorer.vocab_size());
      for (std::size_t v = 0; v < scores[i].size(); ++v) {
        const auto id = static_cast<TokenId>(v);
        if (!selectable(id)) continue;
        Candidate c{i, id, live[i].log_prob + scores[i][v], live[i].tokens};
        c.seq.push_back(id);
        cands.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(options.beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) { return ranks_before(a.log_prob, a.seq, b.log_prob, b.seq); });
    cands.resize(keep);

    std::vector<Hypothesis> next;
    std::vector<std::size_t> parents;
    std::vector<TokenId> tokens;
    for (auto& c : cands) {
      if (c.token == Vocabulary::kEos) {
        finished.push_back({live[c.parent].tokens, c.log_prob, true});
        continue;
      }
      Hypothesis h{std::move(c.seq), c.log_prob, false};
      if (h.tokens.size() >= options.max_len) {
        finished.push_back(std::move(h));
        continue;
      }
      parents.push_back(c.parent);
      tokens.push_back(c.token);
      next.push_back(std::move(h));
    }
    live = std::move(next);
    if (!live.empty()) scores = scorer.extend(parents, tokens);
  }
  std::vector<double> keys;
  std::vector<std::size_t> order(finished.size());
  for (std::size_t i = 0; i < finished.size(); ++i) {
    order[i] = i;
    keys.push_back(normalized_score(finished[i], options.alpha));
  }
  std::ranges::sort(order, [&](std::size_t a, std::size_t b) {
    auto seq = [&](std::size_t i) {
      auto s = finished[i].tokens;
      if (finished[i].finished) s.push_back(Vocabulary::kEos);
      return s;
    };
    return ranks_before(keys[a], seq(a), keys[b], seq(b));
  });
  std::vector<Hypothesis> ranked;
  for (std::size_t i : order) ranked.push_back(std::move(finished[i]));
  return ranked;
}

std::vector<TokenId> encode_source(std::string_view line, const Vocabulary& src_vocab) {
  const TokenSequence seq = tokenize_source(line);
  if (seq.tokens.empty()) throw InputError("source line has no tokens");
  return encode(seq, src_vocab, true);
}

std::string greedy_decode(std::string_view source, const Translator& model, std::size_t max_len) {
  const auto ids = encode_source(source, model.src_vocab);
  ModelScorer scorer(model.params, ids);
  return decode_ids(greedy_search(scorer, max_len).tokens, model.tgt_vocab);
}

std::string beam_decode(std::string_view source, const Translator& model, const DecodeOptions& options) {
  const auto ids = encode_source(source, model.src_vocab);
  ModelScorer scorer(model.params, ids);
  return decode_ids(beam_search(scorer, options).front().tokens, model.tgt_vocab);
}

std::string translate_line(std::string_view source, const Translator& model, const DecodeOptions& options) {
  if (options.beam == 1) return greedy_decode(source, model, options.max_len);
  return beam_decode(source, model, options);
}

void translate_file(const std::filesystem::path& input, const std::filesystem::path& output,
                    const Translator& model, const DecodeOptions& options) {
  std::ifstream in(input, std::ios::binary);
  if (!in) throw IoError("cannot open " + input.string());
  std::vector<std::string> out_lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (tokenize_source(line).tokens.empty()) {
      out_lines.emplace_back();
      continue;
    }
    try {
      out_lines.push_back(translate_line(line, model, options));
    } catch (const std::exception& e) {
      throw IoError(input.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (in.bad()) throw IoError("read failed for " + input.string() + " after line " + std::to_string(line_no));
  std::ofstream out(output, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + output.string());
  for (const auto& l : out_lines) out << l << '\n';
  if (!out) throw IoError("write failed for " + output.string());
}

}  // namespace t2c
