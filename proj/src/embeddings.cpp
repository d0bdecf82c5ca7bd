#include "t2c/embeddings.hpp"

#include <algorithm>
#include <cmath>

#include "t2c/rng.hpp"

namespace t2c {
namespace {

bool is_framing(TokenId id) {
  return id == Vocabulary::kPad || id == Vocabulary::kSos || id == Vocabulary::kEos;
}

// log(sigmoid(x)) without overflow.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

class NoiseSampler {
 public:
  NoiseSampler(std::span<const std::vector<TokenId>> corpus, std::size_t vocab_size) {
    std::vector<double> counts(vocab_size, 0.0);
    for (const auto& seq : corpus) {
      for (TokenId id : seq) {
        if (!is_framing(id)) counts[static_cast<std::size_t>(id)] += 1.0;
      }
    }
    cumulative_.resize(vocab_size);
    double total = 0.0;
    for (std::size_t i = 0; i < vocab_size; ++i) {
      total += std::pow(counts[i], 0.75);
      cumulative_[i] = total;
    }
    total_ = total;
  }

  TokenId sample(Rng& rng) const {
    const double u = rng.uniform() * total_;
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    if (it == cumulative_.end()) --it;
    return static_cast<TokenId>(it - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
  double total_ = 0.0;
};

}  // namespace

std::vector<SkipGramPair> generate_skipgram_pairs(std::span<const TokenId> ids, std::size_t window) {
  if (window < 1) {
    throw ContractError("generate_skipgram_pairs: window must be >= 1");
  }
  std::vector<TokenId> clean;
  clean.reserve(ids.size());
  for (TokenId id : ids) {
    if (!is_framing(id)) clean.push_back(id);
  }
  std::vector<SkipGramPair> pairs;
  const std::size_t n = clean.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= window ? i - window : 0;
    const std::size_t hi = std::min(n - 1, i + window);
    for (std::size_t j = lo; j <= hi; ++j) {
      if (j != i) pairs.emplace_back(clean[i], clean[j]);
    }
  }
  return pairs;
}

SkipGramResult train_skipgram(std::span<const std::vector<TokenId>> corpus, std::size_t vocab_size,
                              const SkipGramOptions& options, Side side) {
  if (options.dim < 1 || options.negatives < 1) {
    throw ContractError("train_skipgram: dim and negatives must be >= 1");
  }
  if (options.epochs < 1) {
    throw ContractError("train_skipgram: epochs must be >= 1");
  }
  std::vector<std::vector<SkipGramPair>> per_sequence;
  std::size_t pairs_per_epoch = 0;
  for (const auto& seq : corpus) {
    for (TokenId id : seq) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
        throw ContractError("train_skipgram: id " + std::to_string(id) + " outside vocabulary");
      }
    }
    per_sequence.push_back(generate_skipgram_pairs(seq, options.window));
    pairs_per_epoch += per_sequence.back().size();
  }
  if (pairs_per_epoch == 0) {
    throw ContractError("train_skipgram: corpus yields no (center, context) pairs");
  }

  const std::size_t d = options.dim;
  Rng rng(options.seed);
  std::vector<float> center(vocab_size * d);
  std::vector<float> context(vocab_size * d, 0.0f);
  for (std::size_t v = 0; v < vocab_size; ++v) {
    for (std::size_t k = 0; k < d; ++k) {
      center[v * d + k] = v == static_cast<std::size_t>(Vocabulary::kPad)
                              ? 0.0f
                              : static_cast<float>(rng.uniform(-0.5, 0.5) / static_cast<double>(d));
    }
  }
  NoiseSampler noise(corpus, vocab_size);

  SkipGramResult result;
  const double total_steps = static_cast<double>(pairs_per_epoch * options.epochs);
  std::size_t step = 0;
  std::vector<float> center_grad(d);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (const auto& pairs : per_sequence) {
      for (const auto& [cen, ctx] : pairs) {
        const double lr = std::max(options.min_lr,
                                   options.lr - (options.lr - options.min_lr) * static_cast<double>(step) / total_steps);
        ++step;
        float* vc = center.data() + static_cast<std::size_t>(cen) * d;
        std::fill(center_grad.begin(), center_grad.end(), 0.0f);
        // One positive target (label 1) followed by the negatives (label 0).
        for (std::size_t s = 0; s <= options.negatives; ++s) {
          TokenId target = ctx;
          double label = 1.0;
          if (s > 0) {
            target = noise.sample(rng);
            if (target == ctx) continue;
            label = 0.0;
          }
          float* uo = context.data() + static_cast<std::size_t>(target) * d;
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(vc[k]) * uo[k];
          epoch_loss -= label > 0.5 ? log_sigmoid(dot) : log_sigmoid(-dot);
          const auto g = static_cast<float>(lr * (label - sigmoid(dot)));
          for (std::size_t k = 0; k < d; ++k) {
            center_grad[k] += g * uo[k];
            uo[k] += g * vc[k];
          }
        }
        for (std::size_t k = 0; k < d; ++k) vc[k] += center_grad[k];
      }
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(pairs_per_epoch));
  }
  result.embeddings.side = side;
  result.embeddings.vectors = Tensor<float>({vocab_size, d}, std::move(center));
  return result;
}

double cosine_similarity(const EmbeddingMatrix& m, TokenId a, TokenId b) {
  const std::size_t d = m.dim();
  auto data = m.vectors.data();
  const float* va = data.data() + static_cast<std::size_t>(a) * d;
  const float* vb = data.data() + static_cast<std::size_t>(b) * d;
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < d; ++k) {
    dot += static_cast<double>(va[k]) * vb[k];
    na += static_cast<double>(va[k]) * va[k];
    nb += static_cast<double>(vb[k]) * vb[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<Neighbor> nearest_neighbors(const EmbeddingMatrix& m, TokenId query, std::size_t k) {
  const std::size_t vocab = m.vocab_size();
  if (query < 0 || static_cast<std::size_t>(query) >= vocab) {
    throw ContractError("nearest_neighbors: id " + std::to_string(query) + " outside vocabulary of " +
                        std::to_string(vocab));
  }
  if (k >= vocab) {
    throw ContractError("nearest_neighbors: k must be below the vocabulary size");
  }
  std::vector<Neighbor> all;
  for (std::size_t v = Vocabulary::kSpecials; v < vocab; ++v) {
    const auto id = static_cast<TokenId>(v);
    if (id == query) continue;
    all.push_back({id, cosine_similarity(m, query, id)});
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const Neighbor& a, const Neighbor& b) { return a.similarity > b.similarity; });
  if (all.size() > k) all.resize(k);
  return all;
}

}  // namespace t2c
