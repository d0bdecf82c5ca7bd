#include "t2c/cli.hpp"

#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <algorithm>
#include <functional>
#include <optional>

#include "t2c/checkpoint.hpp"
#include "t2c/corpus.hpp"
#include "t2c/embeddings.hpp"
#include "t2c/inference.hpp"
#include "t2c/metrics.hpp"
#include "t2c/training.hpp"

namespace t2c {

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = c.train;
  j["src"] = c.src;
  j["tgt"] = c.tgt;
  j["out_dir"] = c.out_dir;
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw FormatError("run config: expected a JSON object");
  nlohmann::json rest = j;
  auto take = [&rest](const char* key, std::string& into) {
    if (!rest.contains(key)) return;
    if (!rest[key].is_string()) throw FormatError(std::string("run config: '") + key + "' must be a string");
    into = rest[key].get<std::string>();
    rest.erase(key);
  };
  take("src", c.src);
  take("tgt", c.tgt);
  take("out_dir", c.out_dir);
  rest.get_to(c.train);
}

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

// Routes library logging to `err` for the duration of one command.
class LogScope {
 public:
  LogScope(std::ostream& err, bool verbose) : previous_(spdlog::default_logger()) {
    auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
    auto logger = std::make_shared<spdlog::logger>("t2c", sink);
    logger->set_level(verbose ? spdlog::level::info : spdlog::level::warn);
    logger->set_pattern("%l: %v");
    spdlog::set_default_logger(logger);
  }
  ~LogScope() { spdlog::set_default_logger(previous_); }
  LogScope(const LogScope&) = delete;
  LogScope& operator=(const LogScope&) = delete;

 private:
  std::shared_ptr<spdlog::logger> previous_;
};

std::vector<std::string> read_text_lines(const std::string& path) {
  std::vector<std::string> lines = read_lines(path);
  for (auto& l : lines) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
  }
  return lines;
}

struct VocabArgs {
  std::string src, tgt, out_dir;
  std::uint64_t min_freq = 1;
  std::size_t max_size = 0;
};

void add_vocab_args(CLI::App* cmd, VocabArgs& a) {
  cmd->add_option("--src", a.src, "Natural-language side of the corpus, one line per example")->required();
  cmd->add_option("--tgt", a.tgt, "Code side of the corpus, aligned line by line")->required();
  cmd->add_option("--min-freq", a.min_freq, "Drop tokens seen fewer times")->capture_default_str();
  cmd->add_option("--max-size", a.max_size, "Cap on vocabulary size including specials; 0 keeps all")
      ->capture_default_str();
  cmd->add_option("--out-dir", a.out_dir, "Directory receiving src.vocab and tgt.vocab")->required();
}

std::pair<Vocabulary, Vocabulary> build_vocabs(const VocabArgs& a, std::vector<ParallelPair>* keep = nullptr) {
  auto pairs = load_parallel(a.src, a.tgt);
  std::vector<TokenSequence> s, t;
  for (const auto& p : pairs) {
    s.push_back(p.source);
    t.push_back(p.target);
  }
  std::optional<std::size_t> cap;
  if (a.max_size != 0) cap = a.max_size;
  auto out = std::make_pair(Vocabulary::build(s, a.min_freq, cap), Vocabulary::build(t, a.min_freq, cap));
  if (keep) *keep = std::move(pairs);
  return out;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// Train flags mirror every RunConfig key; only flags given on the command
// line override the config file.
struct TrainBinding {
  std::string key;
  CLI::Option* option;
  std::function<nlohmann::json()> value;
};

template <typename T>
void bind_option(CLI::App* cmd, std::vector<TrainBinding>& out, const std::string& key, T& storage, const std::string& desc) {
  std::string flag = "--" + key;
  std::ranges::replace(flag, '_', '-');
  auto* opt = cmd->add_option(flag, storage, desc)->capture_default_str();
  out.push_back({key, opt, [&storage] { return nlohmann::json(storage); }});
}

void add_decode_args(CLI::App* cmd, DecodeOptions& o) {
  cmd->add_option("--beam", o.beam, "Beam width; 1 decodes greedily")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--max-len", o.max_len, "Maximum number of output tokens")->capture_default_str();
  cmd->add_option("--alpha", o.alpha, "Length normalization exponent for beam ranking")->capture_default_str();
}

std::string translate_or_blank(const std::string& line, const Translator& model, const DecodeOptions& o) {
  if (tokenize_source(line).tokens.empty()) return "";
  return translate_line(line, model, o);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Natural-language to code translation with an attentional LSTM", "t2c"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to standard error");

  // build-vocab
  VocabArgs vocab_args;
  auto* build_vocab = app.add_subcommand("build-vocab", "Build source and code vocabularies from a parallel corpus");
  add_vocab_args(build_vocab, vocab_args);

  // pretrain
  VocabArgs pre_vocab;
  SkipGramOptions sg;
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain skip-gram embeddings for both vocabularies");
  add_vocab_args(pretrain, pre_vocab);
  pretrain->add_option("--dim", sg.dim, "Embedding width")->capture_default_str();
  pretrain->add_option("--window", sg.window, "Context window radius")->capture_default_str();
  pretrain->add_option("--negatives", sg.negatives, "Negative samples per positive pair")->capture_default_str();
  pretrain->add_option("--epochs", sg.epochs, "Passes over the corpus")->capture_default_str();
  pretrain->add_option("--lr", sg.lr, "Initial learning rate, decayed linearly to --min-lr")->capture_default_str();
  pretrain->add_option("--min-lr", sg.min_lr, "Final learning rate")->capture_default_str();
  pretrain->add_option("--seed", sg.seed, "Random seed")->capture_default_str();

  // train
  RunConfig run;
  std::string config_path;
  bool dry_run = false;
  std::vector<TrainBinding> bindings;
  auto* train_cmd = app.add_subcommand("train", "Train a model; flags override values from --config");
  train_cmd->add_option("--config", config_path, "JSON run config (TrainConfig keys plus src, tgt, out_dir)");
  bind_option(train_cmd, bindings, "src", run.src, "Natural-language side of the corpus");
  bind_option(train_cmd, bindings, "tgt", run.tgt, "Code side of the corpus");
  bind_option(train_cmd, bindings, "out_dir", run.out_dir, "Directory for vocabularies, checkpoints and metrics.jsonl");
  TrainConfig& tc = run.train;
  bind_option(train_cmd, bindings, "epochs", tc.epochs, "Training epochs");
  bind_option(train_cmd, bindings, "batch_size", tc.batch_size, "Pairs per batch");
  bind_option(train_cmd, bindings, "lr", tc.lr, "SGD learning rate");
  bind_option(train_cmd, bindings, "lr_decay", tc.lr_decay, "Factor applied to the learning rate each decayed epoch");
  bind_option(train_cmd, bindings, "decay_start_epoch", tc.decay_start_epoch, "First epoch (1-based) with decay");
  bind_option(train_cmd, bindings, "clip_norm", tc.clip_norm, "Global gradient norm cap");
  bind_option(train_cmd, bindings, "dropout", tc.dropout, "Dropout on embeddings and between layers");
  bind_option(train_cmd, bindings, "n_val", tc.n_val, "Pairs held out for validation");
  bind_option(train_cmd, bindings, "seed", tc.seed, "Random seed for initialization, split, batching and dropout");
  bind_option(train_cmd, bindings, "max_src_len", tc.max_src_len, "Drop training pairs with longer sources");
  bind_option(train_cmd, bindings, "max_tgt_len", tc.max_tgt_len, "Drop training pairs with longer targets");
  bind_option(train_cmd, bindings, "embed_dim", tc.embed_dim, "Embedding width");
  bind_option(train_cmd, bindings, "hidden_dim", tc.hidden_dim, "LSTM hidden width");
  bind_option(train_cmd, bindings, "num_layers", tc.num_layers, "Stacked LSTM layers in encoder and decoder");
  bind_option(train_cmd, bindings, "pretrain_embeddings", tc.pretrain_embeddings, "Initialize embeddings with skip-gram");
  bind_option(train_cmd, bindings, "min_freq", tc.min_freq, "Vocabulary frequency threshold");
  bind_option(train_cmd, bindings, "max_vocab_size", tc.max_vocab_size, "Vocabulary cap including specials; 0 keeps all");
  bind_option(train_cmd, bindings, "log_wall_time", tc.log_wall_time, "Record epoch wall time; false writes 0");
  train_cmd->add_flag("--dry-run", dry_run, "Print the resolved run config and exit");

  // translate
  std::string tr_ckpt, tr_line, tr_input, tr_out;
  DecodeOptions tr_opts;
  auto* translate = app.add_subcommand("translate", "Translate one line or a file of lines");
  translate->add_option("--checkpoint", tr_ckpt, "Checkpoint file")->required();
  auto* line_opt = translate->add_option("--line", tr_line, "Single input line");
  auto* input_opt = translate->add_option("--input", tr_input, "File with one input per line");
  line_opt->excludes(input_opt);
  translate->add_option("--out", tr_out, "Write output here instead of standard output");
  add_decode_args(translate, tr_opts);

  // evaluate
  std::string ev_ckpt, ev_src, ev_ref, ev_report;
  DecodeOptions ev_opts;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Decode a source file and score it against references");
  evaluate_cmd->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  evaluate_cmd->add_option("--src", ev_src, "Source lines")->required();
  evaluate_cmd->add_option("--ref", ev_ref, "Reference code lines")->required();
  evaluate_cmd->add_option("--out-report", ev_report, "Write the JSON report here");
  add_decode_args(evaluate_cmd, ev_opts);

  // inspect
  std::string in_ckpt;
  auto* inspect = app.add_subcommand("inspect", "Print a checkpoint's manifest");
  inspect->add_option("--checkpoint", in_ckpt, "Checkpoint file")->required();

  // curve
  std::string cv_metrics, cv_out;
  auto* curve = app.add_subcommand("curve", "Convert a metrics log to epoch,val_token_acc CSV");
  curve->add_option("--metrics", cv_metrics, "metrics.jsonl written by train")->required();
  curve->add_option("--out", cv_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitUsage;
  }

  LogScope logging(err, verbose);
  try {
    if (*build_vocab) {
      ensure_dir(vocab_args.out_dir);
      auto [s, t] = build_vocabs(vocab_args);
      s.save(std::filesystem::path(vocab_args.out_dir) / "src.vocab");
      t.save(std::filesystem::path(vocab_args.out_dir) / "tgt.vocab");
      out << "source vocabulary: " << s.size() << "\ntarget vocabulary: " << t.size() << '\n';
    } else if (*pretrain) {
      ensure_dir(pre_vocab.out_dir);
      std::vector<ParallelPair> pairs;
      auto [s, t] = build_vocabs(pre_vocab, &pairs);
      const std::filesystem::path dir = pre_vocab.out_dir;
      s.save(dir / "src.vocab");
      t.save(dir / "tgt.vocab");
      auto encoded = encode_pairs(pairs, s, t);
      std::vector<std::vector<TokenId>> src_ids, tgt_ids;
      for (const auto& p : encoded) {
        src_ids.push_back(p.source);
        tgt_ids.push_back(p.target);
      }
      const std::uint64_t seed = sg.seed;
      sg.seed = derive_seed(seed, 5);
      auto se = train_skipgram(src_ids, s.size(), sg, Side::source);
      sg.seed = derive_seed(seed, 6);
      auto te = train_skipgram(tgt_ids, t.size(), sg, Side::target);
      save_embeddings(dir / "embeddings.bin", se.embeddings, te.embeddings,
                      make_vocab_refs(dir, dir / "src.vocab", dir / "tgt.vocab"));
      out << "source loss: " << se.epoch_losses.front() << " -> " << se.epoch_losses.back() << '\n'
          << "target loss: " << te.epoch_losses.front() << " -> " << te.epoch_losses.back() << '\n'
          << "wrote " << (dir / "embeddings.bin").string() << '\n';
    } else if (*train_cmd) {
      nlohmann::json merged = nlohmann::json::object();
      if (!config_path.empty()) {
        try {
          merged = nlohmann::json::parse(read_file_bytes(config_path));
        } catch (const nlohmann::json::parse_error& e) {
          throw FormatError(config_path + ": " + e.what());
        }
        // Validates keys before flags are layered on top.
        (void)merged.get<RunConfig>();
      }
      for (const auto& b : bindings) {
        if (b.option->count() > 0) merged[b.key] = b.value();
      }
      const RunConfig resolved = merged.get<RunConfig>();
      if (dry_run) {
        out << nlohmann::json(resolved).dump(2) << '\n';
        return kExitOk;
      }
      for (const auto* key : {"src", "tgt", "out_dir"}) {
        if (nlohmann::json(resolved)[key].get<std::string>().empty()) {
          throw UsageError(std::string("train: missing '") + key + "' (flag or config key)");
        }
      }
      auto outcome = train(resolved.train, resolved.src, resolved.tgt, resolved.out_dir,
                           [&out](const EpochMetrics& m) { out << metrics_line(m) << std::endl; });
      out << "best epoch: " << outcome.best_epoch << " (" << outcome.best_checkpoint_path.string() << ")\n";
    } else if (*translate) {
      if (tr_line.empty() == tr_input.empty()) throw UsageError("translate: give exactly one of --line or --input");
      const LoadedModel m = load_model(tr_ckpt);
      const Translator model{m.checkpoint.params, m.src_vocab, m.tgt_vocab};
      if (!tr_input.empty()) {
        if (tr_out.empty()) {
          for (const auto& line : read_text_lines(tr_input)) out << translate_or_blank(line, model, tr_opts) << '\n';
        } else {
          translate_file(tr_input, tr_out, model, tr_opts);
        }
      } else {
        const std::string result = translate_line(tr_line, model, tr_opts);
        if (tr_out.empty()) {
          out << result << '\n';
        } else {
          write_file_bytes(tr_out, result + "\n");
        }
      }
    } else if (*evaluate_cmd) {
      const auto sources = read_text_lines(ev_src);
      const auto refs = read_text_lines(ev_ref);
      if (sources.size() != refs.size()) {
        throw ContractError("evaluate: " + std::to_string(sources.size()) + " source lines but " +
                            std::to_string(refs.size()) + " reference lines");
      }
      if (sources.empty()) throw ContractError("evaluate: no examples in " + ev_src);
      const LoadedModel m = load_model(ev_ckpt);
      const Translator model{m.checkpoint.params, m.src_vocab, m.tgt_vocab};
      std::vector<std::string> hyps;
      for (const auto& line : sources) hyps.push_back(translate_or_blank(line, model, ev_opts));
      const EvalReport report = build_report(sources, refs, hyps);
      if (!ev_report.empty()) write_file_bytes(ev_report, serialize_report(report));
      out << "examples: " << report.count << "\ntoken_accuracy: " << report.token_accuracy
          << "\nexact_match: " << report.exact_match << "\nbleu: " << report.bleu << '\n';
    } else if (*inspect) {
      const Container c = parse_container(read_file_bytes(in_ckpt));
      const Checkpoint ckpt = from_container(c);
      std::size_t total = 0;
      out << "format_version: " << ckpt.format_version << "\nepoch: " << ckpt.epoch
          << "\nmodel_config: " << nlohmann::json(ckpt.model_config).dump()
          << "\ntrain_config: " << nlohmann::json(ckpt.train_config).dump() << "\ntensors:\n";
      for (const auto& t : c.tensors) {
        out << "  " << t.name << ' ' << shape_str(t.shape) << '\n';
        total += shape_numel(t.shape);
      }
      out << "parameters: " << total << "\nvocab_refs:\n";
      for (const auto& r : c.vocab_refs) out << "  " << r.path << ' ' << r.sha256 << '\n';
    } else if (*curve) {
      emit_curve(cv_metrics, cv_out);
    }
  } catch (const UsageError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const InputError& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace t2c
