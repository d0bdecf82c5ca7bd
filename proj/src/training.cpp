#include "t2c/training.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "t2c/embeddings.hpp"

namespace t2c {

double clip_gradients(const ModelParams<float>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& t : params.tensors()) {
    if (!t.has_grad()) continue;
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (const auto& t : params.tensors()) {
    if (!t.has_grad()) continue;
    for (float& g : t.grad_mut()) g = static_cast<float>(g * scale);
  }
  return scale;
}

void sgd_step(const ModelParams<float>& params, double lr) {
  for (auto t : params.tensors()) {
    if (!t.has_grad()) continue;
    auto w = t.data();
    auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(w[i] - lr * g[i]);
    t.zero_grad();
  }
}

EvalResult evaluate(const ModelParams<float>& params, std::span<const Batch> batches) {
  EvalResult r;
  double loss_sum = 0.0;
  for (const auto& batch : batches) {
    auto out = forward_teacher_forced(batch, params, false, 0);
    loss_sum += static_cast<double>(out.loss.item()) * static_cast<double>(out.token_total);
    r.token_correct += out.token_correct;
    r.token_total += out.token_total;
  }
  if (r.token_total == 0) throw ContractError("evaluate: empty validation set");
  r.loss = loss_sum / static_cast<double>(r.token_total);
  r.perplexity = std::exp(r.loss);
  r.token_accuracy = static_cast<double>(r.token_correct) / static_cast<double>(r.token_total);
  return r;
}

std::string metrics_line(const EpochMetrics& m) {
  nlohmann::ordered_json j{{"epoch", m.epoch},       {"train_loss", m.train_loss},
                           {"val_loss", m.val_loss}, {"val_ppl", m.val_ppl},
                           {"val_token_acc", m.val_token_acc}, {"seconds", m.seconds}};
  return j.dump();
}

EpochMetrics parse_metrics_line(std::string_view line) {
  try {
    auto j = nlohmann::json::parse(line);
    EpochMetrics m;
    j.at("epoch").get_to(m.epoch);
    j.at("train_loss").get_to(m.train_loss);
    j.at("val_loss").get_to(m.val_loss);
    j.at("val_ppl").get_to(m.val_ppl);
    j.at("val_token_acc").get_to(m.val_token_acc);
    j.at("seconds").get_to(m.seconds);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics line: ") + e.what());
  }
}

PreparedData prepare_data(const TrainConfig& config, const std::filesystem::path& src_path,
                          const std::filesystem::path& tgt_path) {
  config.validate();
  PreparedData d;
  auto pairs = load_parallel(src_path, tgt_path, &d.load_stats);
  std::vector<TokenSequence> src_seqs, tgt_seqs;
  for (const auto& p : pairs) {
    src_seqs.push_back(p.source);
    tgt_seqs.push_back(p.target);
  }
  d.src_vocab = Vocabulary::build(src_seqs, config.min_freq, config.vocab_cap());
  d.tgt_vocab = Vocabulary::build(tgt_seqs, config.min_freq, config.vocab_cap());
  d.pairs = split(pairs, config.n_val, derive_seed(config.seed, 2));
  d.train = encode_pairs(d.pairs.train, d.src_vocab, d.tgt_vocab);
  d.validation = encode_pairs(d.pairs.validation, d.src_vocab, d.tgt_vocab);
  spdlog::info("corpus: {} pairs, {} train / {} validation, vocab {} / {}", pairs.size(), d.train.size(),
               d.validation.size(), d.src_vocab.size(), d.tgt_vocab.size());
  return d;
}

ModelParams<float> pretrained_init(const TrainConfig& config, const ModelConfig& model_config,
                                   std::span<const EncodedPair> train) {
  auto params = ModelParams<float>::initialize(model_config, derive_seed(config.seed, 1));
  std::vector<std::vector<TokenId>> src, tgt;
  for (const auto& p : train) {
    src.push_back(p.source);
    tgt.push_back(p.target);
  }
  SkipGramOptions opts;
  opts.dim = model_config.embed_dim;
  opts.seed = derive_seed(config.seed, 5);
  auto s = train_skipgram(src, model_config.src_vocab_size, opts, Side::source);
  opts.seed = derive_seed(config.seed, 6);
  auto t = train_skipgram(tgt, model_config.tgt_vocab_size, opts, Side::target);
  std::ranges::copy(s.embeddings.vectors.data(), params.src_embed.data().begin());
  std::ranges::copy(t.embeddings.vectors.data(), params.tgt_embed.data().begin());
  return params;
}

FitResult fit(const TrainConfig& config, const ModelConfig& model_config, std::span<const EncodedPair> train,
              std::span<const EncodedPair> validation, const FitHooks& hooks,
              std::optional<ModelParams<float>> initial) {
  config.validate();
  model_config.validate();
  FitResult result;
  result.params = initial ? std::move(*initial) : ModelParams<float>::initialize(model_config, derive_seed(config.seed, 1));
  result.params.set_requires_grad(true);

  BatchOptions val_opts;
  val_opts.batch_size = config.batch_size;
  val_opts.max_src_len = std::numeric_limits<std::size_t>::max();
  val_opts.max_tgt_len = std::numeric_limits<std::size_t>::max();
  const auto val_batches = make_batches(validation, val_opts);
  if (val_batches.empty()) throw ContractError("fit: empty validation set");

  double best_acc = -1.0;
  const bool dropout_on = model_config.dropout > 0.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = config.lr_at(epoch);
    BatchOptions opts;
    opts.batch_size = config.batch_size;
    opts.max_src_len = config.max_src_len;
    opts.max_tgt_len = config.max_tgt_len;
    opts.shuffle_seed = derive_seed(config.seed, 3, epoch);
    const auto batches = make_batches(train, opts);
    if (batches.empty()) throw ContractError("fit: no training batches left after length filtering");

    double loss_sum = 0.0;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch& batch = batches[b];
      auto describe = [&] {
        return "epoch " + std::to_string(epoch) + " batch " + std::to_string(b) + " (first pair " +
               std::to_string(batch.pair_index.front()) + ", " + std::to_string(batch.size) + " rows)";
      };
      Tape<float> tape;
      TeacherForcedResult<float> out;
      try {
        out = forward_teacher_forced(batch, result.params, dropout_on, derive_seed(config.seed, 4, (epoch << 32) | b));
      } catch (const NumericError& e) {
        throw TrainingError("non-finite value in " + describe() + ": " + e.what());
      }
      const double loss = out.loss.item();
      if (!std::isfinite(loss)) throw TrainingError("non-finite loss in " + describe());
      tape.backward(out.loss);
      clip_gradients(result.params, config.clip_norm);
      sgd_step(result.params, lr);
      loss_sum += loss * static_cast<double>(out.token_total);
      tokens += out.token_total;
    }

    const EvalResult ev = evaluate(result.params, val_batches);
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(tokens);
    m.val_loss = ev.loss;
    m.val_ppl = ev.perplexity;
    m.val_token_acc = ev.token_accuracy;
    if (config.log_wall_time) {
      m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    result.metrics.push_back(m);
    if (m.val_token_acc > best_acc) {
      best_acc = m.val_token_acc;
      result.best_epoch = epoch;
      result.best_params = result.params.clone();
    }
    spdlog::debug("epoch {} lr {} train_loss {:.4f} val_acc {:.4f}", epoch, lr, m.train_loss, m.val_token_acc);
    if (hooks.on_epoch) hooks.on_epoch(m, result.params);
  }
  result.params.set_requires_grad(false);
  return result;
}

TrainOutcome train(const TrainConfig& config, const std::filesystem::path& src_path,
                   const std::filesystem::path& tgt_path, const std::filesystem::path& out_dir,
                   const std::function<void(const EpochMetrics&)>& on_epoch) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const PreparedData data = prepare_data(config, src_path, tgt_path);
  const auto src_vocab_path = out_dir / "src.vocab";
  const auto tgt_vocab_path = out_dir / "tgt.vocab";
  data.src_vocab.save(src_vocab_path);
  data.tgt_vocab.save(tgt_vocab_path);
  const auto refs = make_vocab_refs(out_dir, src_vocab_path, tgt_vocab_path);
  const ModelConfig model_config = config.model_config(data.src_vocab.size(), data.tgt_vocab.size());

  std::optional<ModelParams<float>> initial;
  if (config.pretrain_embeddings) {
    initial = pretrained_init(config, model_config, data.train);
    save_embeddings(out_dir / "embeddings.bin", EmbeddingMatrix{Side::source, initial->src_embed},
                    EmbeddingMatrix{Side::target, initial->tgt_embed}, refs);
  }

  TrainOutcome outcome;
  outcome.metrics_path = out_dir / "metrics.jsonl";
  outcome.best_checkpoint_path = out_dir / "best.ckpt";
  std::ofstream log(outcome.metrics_path, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + outcome.metrics_path.string());

  double best_acc = -1.0;
  FitHooks hooks;
  hooks.on_epoch = [&](const EpochMetrics& m, const ModelParams<float>& params) {
    Checkpoint ckpt{kFormatVersion, model_config, config, m.epoch, params, refs};
    save_checkpoint(out_dir / ("epoch-" + std::to_string(m.epoch) + ".ckpt"), ckpt);
    if (m.val_token_acc > best_acc) {
      best_acc = m.val_token_acc;
      save_checkpoint(outcome.best_checkpoint_path, ckpt);
    }
    log << metrics_line(m) << '\n';
    log.flush();
    if (on_epoch) on_epoch(m);
  };
  FitResult fitted = fit(config, model_config, data.train, data.validation, hooks, std::move(initial));
  outcome.final_checkpoint = Checkpoint{kFormatVersion, model_config, config, config.epochs, fitted.params, refs};
  outcome.metrics = std::move(fitted.metrics);
  outcome.best_epoch = fitted.best_epoch;
  return outcome;
}

}  // namespace t2c
