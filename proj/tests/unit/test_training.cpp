#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "t2c/training.hpp"

using namespace t2c;
namespace fs = std::filesystem;

namespace {

const fs::path kData = T2C_TEST_DATA_DIR;

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("t2c_training_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ModelConfig tiny_model(std::size_t vs = 7, std::size_t vt = 6) {
  ModelConfig m;
  m.src_vocab_size = vs;
  m.tgt_vocab_size = vt;
  m.embed_dim = 3;
  m.hidden_dim = 3;
  m.dropout = 0.0;
  return m;
}

double grad_norm(const ModelParams<float>& p) {
  double sq = 0;
  for (const auto& t : p.tensors())
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  return std::sqrt(sq);
}

// Fills every gradient so that the global norm equals `norm`.
void set_grads(const ModelParams<float>& p, double norm) {
  std::size_t n = p.parameter_count();
  const auto each = static_cast<float>(norm / std::sqrt(static_cast<double>(n)));
  for (const auto& t : p.tensors())
    for (float& g : t.grad_mut()) g = each;
}

std::string slurp(const fs::path& p) { return read_file_bytes(p); }

TrainConfig toy_config() {
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 8;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.n_val = 5;
  c.dropout = 0.2;
  c.log_wall_time = false;
  return c;
}

}  // namespace

TEST(ClipGradients, ScalesAboveThreshold) {
  auto p = ModelParams<float>::initialize(tiny_model(), 1);
  set_grads(p, 10.0);
  EXPECT_NEAR(clip_gradients(p, 5.0), 0.5, 1e-6);
  EXPECT_NEAR(grad_norm(p), 5.0, 1e-4);
  set_grads(p, 3.0);
  EXPECT_EQ(clip_gradients(p, 5.0), 1.0);
  EXPECT_NEAR(grad_norm(p), 3.0, 1e-4);
}

TEST(SgdStep, UpdatesAndZeroesGradients) {
  auto p = ModelParams<float>::zeros(tiny_model());
  p.attn_wa.data()[0] = 1.0f;
  p.attn_wa.grad_mut()[0] = 0.2f;
  p.out_bo.data()[1] = 0.5f;
  p.out_bo.grad_mut();
  sgd_step(p, 1.0);
  EXPECT_FLOAT_EQ(p.attn_wa[0], 0.8f);
  EXPECT_EQ(p.out_bo[1], 0.5f);
  EXPECT_EQ(p.attn_wa.grad()[0], 0.0f);

  auto a = ModelParams<float>::initialize(tiny_model(), 3);
  auto b = a.clone();
  for (auto* q : {&a, &b}) {
    set_grads(*q, 2.0);
    sgd_step(*q, 0.3);
  }
  EXPECT_TRUE(std::ranges::equal(a.combine_wc.data(), b.combine_wc.data()));
}

TEST(LearningRate, DecaysFromConfiguredEpoch) {
  TrainConfig c;
  EXPECT_EQ(c.lr_at(1), 1.0);
  EXPECT_EQ(c.lr_at(7), 1.0);
  EXPECT_EQ(c.lr_at(8), 0.5);
  EXPECT_EQ(c.lr_at(10), 0.125);
}

TEST(TrainConfig, DefaultsAndJson) {
  TrainConfig c;
  EXPECT_EQ(c.epochs, 10u);
  EXPECT_EQ(c.batch_size, 64u);
  EXPECT_EQ(c.n_val, 500u);
  EXPECT_EQ(c.seed, 13u);
  nlohmann::json j = c;
  EXPECT_EQ(j.get<TrainConfig>(), c);
  nlohmann::json partial = {{"epochs", 3}};
  EXPECT_EQ(partial.get<TrainConfig>().epochs, 3u);
  EXPECT_EQ(partial.get<TrainConfig>().batch_size, 64u);
  nlohmann::json unknown = {{"epochz", 3}};
  EXPECT_THROW(unknown.get<TrainConfig>(), FormatError);
  c.lr_decay = 1.5;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Evaluate, UniformModelGivesLnFour) {
  auto p = ModelParams<float>::zeros(tiny_model(7, 4));
  std::vector<EncodedPair> pairs{{{5, Vocabulary::kEos}, {}, 0}, {{6, 4, Vocabulary::kEos}, {}, 1}};
  std::vector<Batch> batches{make_batch(pairs)};
  auto r = evaluate(p, batches);
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-6);
  EXPECT_NEAR(r.perplexity, 4.0, 1e-5);
  std::vector<Batch> none;
  EXPECT_THROW(evaluate(p, none), ContractError);
}

TEST(Evaluate, ConstantPredictorHandCount) {
  // Only out.bo is nonzero, so every position predicts token 4.
  auto p = ModelParams<float>::zeros(tiny_model());
  p.out_bo.data()[4] = 3.0f;
  std::vector<EncodedPair> a{{{5, Vocabulary::kEos}, {4, 4, 5}, 0}};
  std::vector<EncodedPair> b{{{6, Vocabulary::kEos}, {4}, 1}};
  std::vector<Batch> batches{make_batch(a), make_batch(b)};
  auto r = evaluate(p, batches);
  // Gold streams [4 4 5 EOS] and [4 EOS]: 3 hits out of 6.
  EXPECT_EQ(r.token_total, 6u);
  EXPECT_EQ(r.token_correct, 3u);
  EXPECT_DOUBLE_EQ(r.token_accuracy, 0.5);
  EXPECT_NEAR(r.perplexity, std::exp(r.loss), 1e-6 * r.perplexity);
}

TEST(MetricsLine, KeyOrderAndRoundTrip) {
  EpochMetrics m{3, 1.5, 1.25, std::exp(1.25), 0.75, 0.0};
  const auto line = metrics_line(m);
  EXPECT_EQ(line.find("{\"epoch\":3,\"train_loss\":1.5,\"val_loss\":1.25,\"val_ppl\":"), 0u);
  EXPECT_NE(line.find("\"val_token_acc\":0.75,\"seconds\":0.0}"), std::string::npos);
  auto back = parse_metrics_line(line);
  EXPECT_EQ(back.val_ppl, m.val_ppl);
  EXPECT_THROW(parse_metrics_line("{\"epoch\":1}"), FormatError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto dir = fresh_dir("roundtrip");
  TrainConfig tc;
  Checkpoint ck{kFormatVersion, tiny_model(), tc, 4, ModelParams<float>::initialize(tiny_model(), 9),
                {{"src.vocab", std::string(64, 'a')}, {"tgt.vocab", std::string(64, 'b')}}};
  save_checkpoint(dir / "a.ckpt", ck);
  auto loaded = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(loaded.epoch, 4u);
  EXPECT_EQ(loaded.model_config, ck.model_config);
  EXPECT_EQ(loaded.train_config, tc);
  EXPECT_EQ(loaded.vocab_refs, ck.vocab_refs);
  save_checkpoint(dir / "b.ckpt", loaded);
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
}

TEST(Checkpoint, ContainerLayout) {
  Checkpoint ck{kFormatVersion, tiny_model(), TrainConfig{}, 1, ModelParams<float>::initialize(tiny_model(), 2), {}};
  const auto bytes = serialize_container(to_container(ck));
  EXPECT_EQ(bytes.substr(0, 8), "T2CCKPT1");
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(i)]);
  auto manifest = nlohmann::json::parse(bytes.substr(16, len));
  EXPECT_EQ(manifest["format_version"], 1);
  const auto& first = manifest["tensors"][0];
  EXPECT_EQ(first["name"], "src_embed");
  EXPECT_EQ(first["dtype"], "f32");
  EXPECT_EQ(first["offset"], 0);
  EXPECT_EQ(first["byte_len"], 7 * 3 * 4);
  EXPECT_EQ(bytes.size(), 16 + len + 4 * ck.params.parameter_count());
  float v = 0;
  std::memcpy(&v, bytes.data() + 16 + len + 4 * 3, 4);  // src_embed row 1, col 0
  EXPECT_EQ(v, ck.params.src_embed.at(1, 0));
}

TEST(Checkpoint, MalformedContainers) {
  Checkpoint ck{kFormatVersion, tiny_model(), TrainConfig{}, 1, ModelParams<float>::initialize(tiny_model(), 2), {}};
  const auto bytes = serialize_container(to_container(ck));
  try {
    parse_container(std::string_view(bytes).substr(0, bytes.size() - 10));
    FAIL() << "truncated container accepted";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
    EXPECT_NE(msg.find("expects 24 bytes, found 14"), std::string::npos) << msg;
    EXPECT_NE(msg.find("at byte"), std::string::npos) << msg;
  }
  std::string bad = bytes;
  bad[3] = 'X';
  EXPECT_THROW(parse_container(bad), FormatError);
  EXPECT_THROW(parse_container("T2CC"), FormatError);
  EXPECT_THROW(parse_container(bytes + "xx"), FormatError);
  std::string broken_json = bytes;
  broken_json[16] = '[';
  EXPECT_THROW(parse_container(broken_json), FormatError);
}

TEST(Checkpoint, VocabularyHashMismatchRefused) {
  auto dir = fresh_dir("hash");
  std::vector<TokenSequence> seqs{{Side::source, {"a", "b"}}};
  auto v = Vocabulary::build(seqs);
  v.save(dir / "src.vocab");
  v.save(dir / "tgt.vocab");
  auto cfg = tiny_model(v.size(), v.size());
  Checkpoint ck{kFormatVersion, cfg, TrainConfig{}, 1, ModelParams<float>::initialize(cfg, 1),
                make_vocab_refs(dir, dir / "src.vocab", dir / "tgt.vocab")};
  save_checkpoint(dir / "m.ckpt", ck);
  EXPECT_EQ(ck.vocab_refs[0].path, "src.vocab");
  EXPECT_EQ(load_model(dir / "m.ckpt").src_vocab, v);
  std::ofstream(dir / "tgt.vocab", std::ios::app) << "zz\t1\n";
  EXPECT_THROW(load_model(dir / "m.ckpt"), FormatError);
}

TEST(Checkpoint, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Embeddings, FileRoundTrip) {
  auto dir = fresh_dir("emb");
  EmbeddingMatrix s{Side::source, Tensor<float>({5, 2}, {0, 0, 1, 2, 3, 4, 5, 6, 7, 8})};
  EmbeddingMatrix t{Side::target, Tensor<float>({4, 2}, {0, 0, -1, -2, -3, -4, -5, -6})};
  save_embeddings(dir / "e.bin", s, t, {});
  auto [s2, t2] = load_embeddings(dir / "e.bin");
  EXPECT_TRUE(std::ranges::equal(s.vectors.data(), s2.vectors.data()));
  EXPECT_TRUE(std::ranges::equal(t.vectors.data(), t2.vectors.data()));
  EXPECT_EQ(t2.side, Side::target);
}

TEST(Fit, TrainingLossDecreasesOnFixture) {
  TrainConfig c;
  c.epochs = 10;
  c.batch_size = 10;
  c.embed_dim = 32;
  c.hidden_dim = 32;
  c.dropout = 0.0;
  c.n_val = 1;
  c.log_wall_time = false;
  auto data = prepare_data(c, kData / "django50.anno", kData / "django50.code");
  auto all = encode_pairs(data.pairs.train, data.src_vocab, data.tgt_vocab);
  auto mc = c.model_config(data.src_vocab.size(), data.tgt_vocab.size());
  auto res = fit(c, mc, all, all);
  ASSERT_EQ(res.metrics.size(), 10u);
  int rises = 0;
  for (std::size_t e = 1; e < res.metrics.size(); ++e) rises += res.metrics[e].train_loss >= res.metrics[e - 1].train_loss;
  EXPECT_LE(rises, 1);
  for (const auto& m : res.metrics) EXPECT_NEAR(m.val_ppl, std::exp(m.val_loss), 1e-6 * m.val_ppl);
}

TEST(Fit, LearnsSmallCorpus) {
  // Cheap smoke run; the full 50-pair memorization lives in the acceptance suite.
  TrainConfig c;
  c.epochs = 300;
  c.decay_start_epoch = 301;
  c.batch_size = 2;
  c.embed_dim = 32;
  c.hidden_dim = 32;
  c.dropout = 0.0;
  c.n_val = 1;
  auto data = prepare_data(c, kData / "django50.anno", kData / "django50.code");
  std::vector<EncodedPair> few(data.train.begin(), data.train.begin() + 8);
  auto mc = c.model_config(data.src_vocab.size(), data.tgt_vocab.size());
  auto res = fit(c, mc, few, few);
  EXPECT_GE(res.metrics.back().val_token_acc, 0.95);
  EXPECT_LT(res.metrics.back().train_loss, 0.1 * res.metrics.front().train_loss);
  EXPECT_EQ(res.metrics[res.best_epoch - 1].val_token_acc,
            std::ranges::max(res.metrics, {}, &EpochMetrics::val_token_acc).val_token_acc);
}

TEST(Fit, NonFiniteLossAbortsNamingBatch) {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 5;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.lr = 1e30;
  c.clip_norm = 1e30;
  c.n_val = 2;
  auto data = prepare_data(c, kData / "django50.anno", kData / "django50.code");
  auto mc = c.model_config(data.src_vocab.size(), data.tgt_vocab.size());
  try {
    fit(c, mc, data.train, data.validation);
    FAIL() << "expected abort";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos) << e.what();
  }
}

TEST(Train, WritesArtifactsAndIsDeterministic) {
  auto a = fresh_dir("det_a");
  auto b = fresh_dir("det_b");
  auto cfg = toy_config();
  auto ra = train(cfg, kData / "django50.anno", kData / "django50.code", a);
  auto rb = train(cfg, kData / "django50.anno", kData / "django50.code", b);
  for (const char* f : {"metrics.jsonl", "epoch-1.ckpt", "epoch-3.ckpt", "best.ckpt", "src.vocab", "tgt.vocab"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  std::ifstream log(a / "metrics.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    auto m = parse_metrics_line(line);
    EXPECT_EQ(m.epoch, ++lines);
    EXPECT_EQ(m.seconds, 0.0);
  }
  EXPECT_EQ(lines, 3u);
  auto loaded = load_model(a / "epoch-3.ckpt");
  EXPECT_EQ(loaded.checkpoint.epoch, 3u);
  EXPECT_TRUE(std::ranges::equal(loaded.checkpoint.params.out_wo.data(), ra.final_checkpoint.params.out_wo.data()));
  EXPECT_EQ(ra.best_epoch, rb.best_epoch);
}

TEST(Train, PretrainedEmbeddingsSeedTheModel) {
  auto dir = fresh_dir("pretrain");
  auto cfg = toy_config();
  cfg.epochs = 1;
  cfg.pretrain_embeddings = true;
  train(cfg, kData / "django50.anno", kData / "django50.code", dir);
  auto [s, t] = load_embeddings(dir / "embeddings.bin");
  auto src_vocab = Vocabulary::load(dir / "src.vocab");
  EXPECT_EQ(s.vocab_size(), src_vocab.size());
  EXPECT_EQ(s.dim(), 8u);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(s.vectors.at(0, k), 0.0f);
}
