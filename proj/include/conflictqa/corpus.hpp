#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace conflictqa {

enum class AnswerType { PER, ORG, LOC, DATE, NUM, NA };

inline constexpr AnswerType kEntityTypes[] = {AnswerType::PER, AnswerType::ORG, AnswerType::LOC,
                                              AnswerType::DATE, AnswerType::NUM};

std::string_view to_string(AnswerType t);
// Accepts "N/A" as an alias of "NA". Throws ValidationError on anything else.
AnswerType parse_answer_type(std::string_view s);

enum class PerturbationMethod { Entity, MacNoise };
std::string_view to_string(PerturbationMethod m);
PerturbationMethod parse_perturbation_method(std::string_view s);

// Additional Context, Global Revision, Local Revision, Entity Replacement.
enum class PerturbationType { AC, GR, LR, ER };
std::string_view to_string(PerturbationType t);
PerturbationType parse_perturbation_type(std::string_view s);

struct QAInstance {
  std::string id;
  std::string question;
  std::vector<std::string> answers;  // raw aliases, never normalized here
  AnswerType answer_type = AnswerType::NA;

  bool operator==(const QAInstance&) const = default;
};

struct PerturbationRecord {
  PerturbationMethod method = PerturbationMethod::Entity;
  std::string original_answer;
  std::optional<std::string> replacement;
  std::optional<PerturbationType> perturbation_type;
  std::optional<std::string> generator_id;

  bool operator==(const PerturbationRecord&) const = default;
};

struct Document {
  std::string doc_id;
  std::string title;
  std::string text;
  int rank = 1;
  bool perturbed = false;
  std::optional<PerturbationRecord> record;

  bool operator==(const Document&) const = default;
};

struct RetrievedSet {
  std::string question_id;
  std::vector<Document> documents;

  bool operator==(const RetrievedSet&) const = default;
  std::size_t perturbed_count() const;
};

// Provenance header written as the first line of a labeled split.
struct SplitMeta {
  std::int64_t seed = 0;
  std::map<std::string, std::string> generators;

  bool operator==(const SplitMeta&) const = default;
};

struct LabeledSplit {
  SplitMeta meta;
  std::vector<RetrievedSet> sets;
};

// Invariant checks; all throw ValidationError.
void validate(const QAInstance& instance);
void validate(const PerturbationRecord& record);
void validate(const Document& doc);
// Ranks must be exactly 1..M in order and M <= max_docs (0 disables the bound).
void validate(const RetrievedSet& set, std::size_t max_docs = 0);

nlohmann::json to_json(const QAInstance& instance);
nlohmann::json to_json(const Document& doc, std::string_view question_id, bool labeled);
QAInstance qa_instance_from_json(const nlohmann::json& j);

std::vector<QAInstance> load_qa_dataset(const std::filesystem::path& path);
void write_qa_dataset(const std::filesystem::path& path, const std::vector<QAInstance>& instances);

// Accepts plain retrieval records and labeled records alike; a leading meta line is skipped.
// Each set is truncated to its first min(top_k, stored) documents by rank.
std::map<std::string, RetrievedSet> load_retrievals(const std::filesystem::path& path,
                                                    std::size_t top_k);
void write_retrievals(const std::filesystem::path& path, const std::vector<RetrievedSet>& sets);

void write_labeled_split(const std::filesystem::path& path, const std::vector<RetrievedSet>& sets,
                         std::int64_t seed,
                         const std::map<std::string, std::string>& generators = {});
// Sets come back in file order of first appearance.
LabeledSplit load_labeled_split(const std::filesystem::path& path);

// Index helpers used throughout the pipelines.
std::map<std::string, const QAInstance*> index_by_id(const std::vector<QAInstance>& instances);

}  // namespace conflictqa
