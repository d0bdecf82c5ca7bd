#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "t2c/textpipe.hpp"

namespace t2c {

/// Positional matches over len(ref): (correct, len(ref)). Positions past the
/// end of `hyp` count as wrong.
template <typename Tok>
std::pair<std::size_t, std::size_t> token_accuracy(std::span<const Tok> hyp, std::span<const Tok> ref) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ref.size() && i < hyp.size(); ++i) correct += hyp[i] == ref[i] ? 1 : 0;
  return {correct, ref.size()};
}

/// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

bool exact_match(std::string_view hyp, std::string_view ref);

/// Clipped n-gram precisions for n = 1..max_n summed over the corpus. A zero
/// match count at n >= 2 becomes (0 + 1) / (total + 1). The geometric mean
/// is scaled by the brevity penalty exp(1 - r/c) when c < r.
double corpus_bleu(std::span<const std::vector<std::string>> hyps, std::span<const std::vector<std::string>> refs,
                   std::size_t max_n = 4);

/// Tokens of a code line as training sees them (lenient on unterminated literals).
std::vector<std::string> code_tokens(std::string_view line);

struct ExampleRecord {
  std::string source;
  std::string reference;
  std::string hypothesis;
  bool exact_match = false;
  std::size_t token_correct = 0;
  std::size_t token_total = 0;
  friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

struct EvalReport {
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  double bleu = 0.0;
  std::size_t count = 0;
  std::vector<ExampleRecord> examples;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

void to_json(nlohmann::json& j, const ExampleRecord& r);
void from_json(const nlohmann::json& j, ExampleRecord& r);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

std::string serialize_report(const EvalReport& r);
EvalReport parse_report(std::string_view text);

/// Scores hypotheses against raw reference code lines. Both sides go through
/// code_tokens before comparison.
EvalReport build_report(std::span<const std::string> sources, std::span<const std::string> refs,
                        std::span<const std::string> hyps);

/// Metrics log (JSON lines) to CSV with header `epoch,val_token_acc`.
std::string curve_csv(std::string_view metrics_log);
void emit_curve(const std::filesystem::path& metrics_path, const std::filesystem::path& out_path);

}  // namespace t2c
