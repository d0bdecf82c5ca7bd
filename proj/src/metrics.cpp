#include "t2c/metrics.hpp"

#include <fmt/format.h>

#include <cmath>
#include <map>
#include <sstream>

#include "t2c/checkpoint.hpp"
#include "t2c/training.hpp"

namespace t2c {
namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                      toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  bool pending = false;
  for (char c : text) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

bool exact_match(std::string_view hyp, std::string_view ref) {
  return normalize_whitespace(hyp) == normalize_whitespace(ref);
}

double corpus_bleu(std::span<const std::vector<std::string>> hyps, std::span<const std::vector<std::string>> refs,
                   std::size_t max_n) {
  if (hyps.size() != refs.size()) {
    throw ContractError("corpus_bleu: " + std::to_string(hyps.size()) + " hypotheses for " +
                        std::to_string(refs.size()) + " references");
  }
  if (max_n < 1) throw ContractError("corpus_bleu: max_n must be >= 1");
  std::vector<std::size_t> matched(max_n + 1, 0), total(max_n + 1, 0);
  std::size_t hyp_len = 0, ref_len = 0;
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    hyp_len += hyps[k].size();
    ref_len += refs[k].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      const auto h = ngram_counts(hyps[k], n);
      const auto r = ngram_counts(refs[k], n);
      for (const auto& [gram, count] : h) {
        total[n] += count;
        auto it = r.find(gram);
        if (it != r.end()) matched[n] += std::min(count, it->second);
      }
    }
  }
  if (hyp_len == 0 || matched[1] == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    double p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    if (n >= 2 && matched[n] == 0) p = 1.0 / static_cast<double>(total[n] + 1);
    log_sum += std::log(p);
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

std::vector<std::string> code_tokens(std::string_view line) {
  return tokenize_code(line, LiteralPolicy::lenient).tokens;
}

void to_json(nlohmann::json& j, const ExampleRecord& r) {
  j = nlohmann::json{{"source", r.source},
                     {"reference", r.reference},
                     {"hypothesis", r.hypothesis},
                     {"exact_match", r.exact_match},
                     {"token_correct", r.token_correct},
                     {"token_total", r.token_total}};
}

void from_json(const nlohmann::json& j, ExampleRecord& r) {
  j.at("source").get_to(r.source);
  j.at("reference").get_to(r.reference);
  j.at("hypothesis").get_to(r.hypothesis);
  j.at("exact_match").get_to(r.exact_match);
  j.at("token_correct").get_to(r.token_correct);
  j.at("token_total").get_to(r.token_total);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"token_accuracy", r.token_accuracy},
                     {"exact_match", r.exact_match},
                     {"bleu", r.bleu},
                     {"count", r.count},
                     {"examples", r.examples}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("token_accuracy").get_to(r.token_accuracy);
  j.at("exact_match").get_to(r.exact_match);
  j.at("bleu").get_to(r.bleu);
  j.at("count").get_to(r.count);
  j.at("examples").get_to(r.examples);
}

std::string serialize_report(const EvalReport& r) { return nlohmann::json(r).dump(2) + "\n"; }

EvalReport parse_report(std::string_view text) {
  try {
    return nlohmann::json::parse(text).get<EvalReport>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
}

EvalReport build_report(std::span<const std::string> sources, std::span<const std::string> refs,
                        std::span<const std::string> hyps) {
  if (sources.size() != refs.size() || refs.size() != hyps.size()) {
    throw ContractError("build_report: " + std::to_string(sources.size()) + " sources, " +
                        std::to_string(refs.size()) + " references, " + std::to_string(hyps.size()) +
                        " hypotheses");
  }
  if (refs.empty()) throw ContractError("build_report: no examples");
  EvalReport report;
  std::vector<std::vector<std::string>> hyp_toks, ref_toks;
  std::size_t correct = 0, total = 0, exact = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    hyp_toks.push_back(code_tokens(hyps[i]));
    ref_toks.push_back(code_tokens(refs[i]));
    ExampleRecord rec{sources[i], refs[i], hyps[i], false, 0, 0};
    std::tie(rec.token_correct, rec.token_total) =
        token_accuracy<std::string>(hyp_toks.back(), ref_toks.back());
    rec.exact_match = exact_match(fmt::format("{}", fmt::join(hyp_toks.back(), " ")),
                                  fmt::format("{}", fmt::join(ref_toks.back(), " ")));
    correct += rec.token_correct;
    total += rec.token_total;
    exact += rec.exact_match ? 1 : 0;
    report.examples.push_back(std::move(rec));
  }
  report.count = refs.size();
  report.token_accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  report.exact_match = static_cast<double>(exact) / static_cast<double>(report.count);
  report.bleu = corpus_bleu(hyp_toks, ref_toks);
  return report;
}

std::string curve_csv(std::string_view metrics_log) {
  std::string out = "epoch,val_token_acc\n";
  std::istringstream in{std::string(metrics_log)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_whitespace(line).empty()) continue;
    EpochMetrics m;
    try {
      m = parse_metrics_line(line);
    } catch (const FormatError& e) {
      throw FormatError("metrics log line " + std::to_string(line_no) + ": " + e.what());
    }
    out += fmt::format("{},{}\n", m.epoch, m.val_token_acc);
  }
  return out;
}

void emit_curve(const std::filesystem::path& metrics_path, const std::filesystem::path& out_path) {
  write_file_bytes(out_path, curve_csv(read_file_bytes(metrics_path)));
}

}  // namespace t2c
