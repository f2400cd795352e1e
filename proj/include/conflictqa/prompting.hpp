#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "conflictqa/corpus.hpp"
#include "conflictqa/errors.hpp"
#include "conflictqa/evaluation.hpp"
#include "conflictqa/generation.hpp"
#include "conflictqa/rng.hpp"

namespace conflictqa {

enum class PromptVariant { Parametric, SemiParametric, DiscInst, DiscFid };

std::string_view to_string(PromptVariant v);
// "parametric", "semi_parametric" (or "semi"), "disc_inst", "disc_fid".
PromptVariant parse_prompt_variant(std::string_view s);

inline constexpr std::string_view kParametricInstruction = "Answer the following question using your knowledge.";
inline constexpr std::string_view kSemiParametricInstruction =
    "Refer to the above documents and your knowledge to answer the following question.";
inline constexpr std::string_view kDiscInstInstruction =
    "Refer to the above documents and your knowledge to answer the following question. Some documents may "
    "have been perturbed to contain incorrect information. First list the perturbed documents, then answer "
    "the question without relying on them.";
inline constexpr std::string_view kDiscFidInstruction =
    "Refer to the above documents and your knowledge to answer the following question. The documents listed "
    "after \"Perturbed:\" were flagged as perturbed; answer the question without relying on them.";

std::string_view instruction_for(PromptVariant v);

// A held-out question with its labeled documents, used as the one-shot demonstration.
struct InContextSample {
  QAInstance instance;
  RetrievedSet docs;
};

class NoAnswerError : public Error {
 public:
  using Error::Error;
};

// Picks k samples with pairwise-distinct answer types and pairwise-distinct perturbed-document
// counts. When that is impossible, the count constraint is dropped first and then the type
// constraint, with a warning each time. Throws PreconditionError if fewer than k are available.
std::vector<InContextSample> select_incontext_samples(const std::vector<InContextSample>& heldout, std::size_t k,
                                                      Rng& rng);

struct PromptBundle {
  PromptVariant variant = PromptVariant::SemiParametric;
  std::string rendered;
  std::string incontext_sample_id;
  std::string eval_question_id;
};

// "Document [i] (Title: T) text"
std::string render_document_block(std::size_t index, const Document& doc);

// `decisions[m]` flags document m + 1. Indices in the output are 1-based and ascending.
std::string format_disc_injection(const std::vector<bool>& decisions);
// Explicit (index, decision) form; indices must be 1-based and unique.
std::string format_disc_injection(const std::vector<std::pair<std::size_t, bool>>& decisions);

// disc_fid requires one decision per evaluation document (PreconditionError otherwise).
PromptBundle render_prompt(PromptVariant variant, const InContextSample& sample, const QAInstance& eval_instance,
                           const RetrievedSet& eval_docs,
                           const std::optional<std::vector<bool>>& disc_decisions = std::nullopt);

struct CandidateAnswer {
  std::string text;
  double probability = 1.0;
  bool operator==(const CandidateAnswer&) const = default;
};

inline constexpr std::size_t kMaxCandidates = 10;

// Answer line of a completion: for disc_inst the text after the first "Answer:", otherwise
// the completion from its start; leading whitespace skipped, cut at the first newline, trimmed.
std::optional<std::string> extract_answer_line(PromptVariant variant, std::string_view completion);

// Up to kMaxCandidates answers ranked by probability. With token log-probabilities the
// candidates are the most likely combinations of per-position alternatives over the answer
// span; without them the single answer line is returned with probability 1.
std::vector<CandidateAnswer> candidates_from_completion(PromptVariant variant, const Completion& completion);

std::vector<CandidateAnswer> query_answer(GenerationClient& client, const PromptBundle& bundle,
                                          const GenerationParams& params, const RetryPolicy& policy = {});

struct EnsembleResult {
  std::string answer;
  double score = 0.0;
};

// Groups candidates by normalized text, sums probabilities across iterations and returns the
// most frequent surface form of the best group. Ties go to the lexicographically smallest
// normalized string. Throws NoAnswerError when every list is empty.
EnsembleResult ensemble_answers(const std::vector<std::vector<CandidateAnswer>>& per_iteration);

// Parsed flags from a disc_inst completion ("Perturbed: Document [2], ..."); nullopt if no such line.
std::optional<std::vector<bool>> parse_disc_line(std::string_view completion, std::size_t num_docs);

struct PromptingOptions {
  PromptVariant variant = PromptVariant::SemiParametric;
  GenerationParams params;
  RetryPolicy retry;
};

// Discriminator decisions injected into disc_fid prompts, one per document.
using DiscDecider = std::function<std::vector<bool>(const QAInstance&, const RetrievedSet&)>;

// One one-shot prompt per in-context sample; the answers are ensembled. For disc_inst the
// reported decisions are the per-document majority over iterations whose "Perturbed:" line
// parsed; for disc_fid they are the injected ones.
class PromptingSystem final : public EvaluatedSystem {
 public:
  PromptingSystem(std::string name, GenerationClient& client, std::vector<InContextSample> samples,
                  PromptingOptions options, DiscDecider decider = {});
  std::string name() const override { return name_; }
  SystemOutput run(const QAInstance& instance, const RetrievedSet& docs) override;
  // EM (percent) of each iteration's top candidate over the questions run since the last reset.
  std::vector<double> iteration_ems() const;
  void reset_iteration_stats();

 private:
  std::string name_;
  GenerationClient& client_;
  std::vector<InContextSample> samples_;
  PromptingOptions options_;
  DiscDecider decider_;
  std::vector<std::size_t> hits_;
  std::size_t questions_ = 0;
};

}  // namespace conflictqa
