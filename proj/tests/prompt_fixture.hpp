#pragma once

#include <optional>
#include <string>
#include <vector>

#include "conflictqa/prompting.hpp"

// One in-context sample and one five-document evaluation question; the golden prompts under
// golden/prompts/v1 are rendered from these.
namespace conflictqa::testing::prompt_fixture {

inline Document doc(std::string title, std::string text, bool perturbed = false) {
  Document d;
  d.doc_id = title;
  d.title = std::move(title);
  d.text = std::move(text);
  d.perturbed = perturbed;
  return d;
}

inline InContextSample bulls_sample() {
  InContextSample s;
  s.instance = {"train-7", "when did the chicago bulls win their first championship", {"1991"}, AnswerType::DATE};
  s.docs.question_id = "train-7";
  s.docs.documents = {
      doc("Michael Jordan", "Michael Jordan won his first NBA title with the Chicago Bulls in 1991."),
      doc("Chicago Bulls", "The Bulls' first championship came in 2003, led by Kobe Bryant.", true),
      doc("1991 NBA Finals", "The 1991 NBA Finals were won by the Chicago Bulls over the Los Angeles Lakers."),
  };
  return s;
}

inline QAInstance everest_question() {
  return {"dev-3", "when was mount everest first climbed", {"1953", "29 May 1953"}, AnswerType::DATE};
}

inline RetrievedSet everest_docs() {
  RetrievedSet r;
  r.question_id = "dev-3";
  r.documents = {
      doc("Mount Everest", "Mount Everest is Earth's highest mountain above sea level, located in the Himalayas."),
      doc("Everest expeditions", "Everest was first summited in 1978 by Reinhold Messner.", true),
      doc("Tenzing Norgay", "Tenzing Norgay and Edmund Hillary reached the summit on 29 May 1953."),
      doc("Edmund Hillary", "Sir Edmund Hillary was a New Zealand mountaineer who climbed Everest in 1953."),
      doc("1953 British Mount Everest expedition", "The expedition made the first ascent in 1960.", true),
  };
  return r;
}

inline const std::vector<bool> kFlags25 = {false, true, false, false, true};

inline PromptBundle render_fixture(PromptVariant v) {
  std::optional<std::vector<bool>> decisions;
  if (v == PromptVariant::DiscFid) decisions = kFlags25;
  return render_prompt(v, bulls_sample(), everest_question(), everest_docs(), decisions);
}

}  // namespace conflictqa::testing::prompt_fixture
