#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "conflictqa/corpus.hpp"
#include "conflictqa/generation.hpp"

namespace conflictqa {

// Instruction block placed at the top of every counterfactual-generation prompt.
extern const std::string_view kMacNoiseInstruction;
inline constexpr std::string_view kRevisedMarker = "Revised Document:";

struct RewriteDemo {
  QAInstance instance;
  Document document;
  std::string rewritten;
};

// The passage as shown to generators: "title: <title> context: <text>" (or just the text when untitled).
std::string render_passage(const Document& doc);
// Python-style list literal of the aliases, e.g. ['1995'].
std::string render_answer_list(const std::vector<std::string>& answers);

// Zero or three demonstrations; anything else is a PreconditionError.
std::string render_macnoise_prompt(const QAInstance& instance, const Document& doc,
                                   const std::vector<RewriteDemo>& demos);

struct GeneratedText {
  std::string text;
  std::string generator_id;
};

// Text after the final marker, trimmed. Empty optional when the marker is absent or nothing follows it.
std::optional<std::string> extract_revised_document(std::string_view completion);

// Retries transport failures per policy and marker-less completions up to policy.max_retries times.
GeneratedText generate_counterfactual(GenerationClient& client, const QAInstance& instance, const Document& doc,
                                      const std::vector<RewriteDemo>& demos, const RetryPolicy& policy,
                                      const GenerationParams& params = {});

struct LengthBand {
  double min_ratio = 0.5;
  double max_ratio = 2.0;
};

struct ValidationReport {
  bool answer_absent = false;
  double length_ratio = 0.0;
  bool marker_found = false;
  bool valid = false;
  std::vector<std::string> reasons;
};

// Number of Unicode code points in a UTF-8 string.
std::size_t char_count(std::string_view utf8);

ValidationReport validate_counterfactual(const Document& original, std::string_view rewritten,
                                         const QAInstance& instance, const LengthBand& band = {},
                                         bool marker_found = true);

// Splits a generated passage back into title and text. A leading "title: ... context: ..." form is
// honoured; otherwise the original title is kept and the whole passage becomes the text.
Document apply_rewrite(const Document& original, std::string_view rewritten);

struct GenerationStats {
  std::size_t questions = 0;
  std::size_t perturbable = 0;
  std::size_t attempted_documents = 0;
  std::size_t attempts = 0;
  std::size_t valid = 0;
  std::size_t invalid = 0;
  std::size_t format_errors = 0;
  std::size_t client_errors = 0;
  std::size_t kept_unperturbed = 0;

  nlohmann::json to_json() const;
};

struct MacNoiseOptions {
  std::size_t max_docs_per_question = 20;
  RetryPolicy retry;
  GenerationParams params;
  LengthBand band;
  unsigned max_in_flight = 1;
};

struct MacNoiseSplit {
  std::vector<RetrievedSet> sets;
  GenerationStats stats;
};

// Rewrites up to max_docs_per_question perturbable documents per question. An invalid rewrite is
// regenerated once; if it is still invalid the document stays unperturbed. Client failures are
// counted per document and the split still completes.
MacNoiseSplit build_macnoise_split(const std::vector<RetrievedSet>& sets, const std::vector<QAInstance>& instances,
                                   GenerationClient& client, const std::vector<RewriteDemo>& demos,
                                   const MacNoiseOptions& options);

}  // namespace conflictqa
