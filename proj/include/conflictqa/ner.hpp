#pragma once

#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "conflictqa/corpus.hpp"

namespace conflictqa {

// Answer-type tagger. Implementations must be deterministic for a fixed instance.
class NerClient {
 public:
  virtual ~NerClient() = default;
  virtual AnswerType classify(std::string_view text) const = 0;
};

// Desk-scale tagger: gazetteer lookup for PER/ORG/LOC, regular expressions for DATE/NUM.
class GazetteerNer final : public NerClient {
 public:
  GazetteerNer() = default;
  explicit GazetteerNer(const std::map<AnswerType, std::vector<std::string>>& gazetteer);

  // Reads {"PER": [...], "ORG": [...], "LOC": [...]} from a JSON file.
  static GazetteerNer from_file(const std::string& path);

  void add(AnswerType type, std::string_view name);
  AnswerType classify(std::string_view text) const override;

 private:
  std::unordered_map<std::string, AnswerType> names_;  // keyed by lowercased name
};

// Fills answer_type for instances currently tagged NA from the first alias the tagger recognises.
void tag_answer_types(std::vector<QAInstance>& instances, const NerClient& ner);

}  // namespace conflictqa
