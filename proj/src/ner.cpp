#include "conflictqa/ner.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>

#include <nlohmann/json.hpp>

#include "conflictqa/errors.hpp"

namespace conflictqa {

namespace {

std::string lower_trimmed(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  std::string out(s.substr(b, e - b + 1));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

const std::regex& date_pattern() {
  static const std::regex re(
      R"(^((1[0-9]|20)[0-9]{2}s?|((january|february|march|april|may|june|july|august|september|october|november|december)( [0-9]{1,2},?)?( (1[0-9]|20)[0-9]{2})?)|([0-9]{1,2} (january|february|march|april|may|june|july|august|september|october|november|december)( (1[0-9]|20)[0-9]{2})?))$)",
      std::regex::icase);
  return re;
}

const std::regex& number_pattern() {
  static const std::regex re(
      R"(^(about |around |over |approximately )?[0-9]{1,3}(,[0-9]{3})*(\.[0-9]+)?( (million|billion|thousand|hundred|percent))?$|^[0-9]+(\.[0-9]+)?$|^(one|two|three|four|five|six|seven|eight|nine|ten|eleven|twelve|twenty|thirty|forty|fifty|hundred)$)",
      std::regex::icase);
  return re;
}

}  // namespace

GazetteerNer::GazetteerNer(const std::map<AnswerType, std::vector<std::string>>& gazetteer) {
  for (const auto& [type, names] : gazetteer)
    for (const auto& n : names) add(type, n);
}

GazetteerNer GazetteerNer::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open gazetteer " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("gazetteer: ") + e.what(), 0);
  }
  GazetteerNer ner;
  for (const auto& [key, names] : j.items()) {
    const AnswerType t = parse_answer_type(key);
    for (const auto& n : names) ner.add(t, n.get<std::string>());
  }
  return ner;
}

void GazetteerNer::add(AnswerType type, std::string_view name) {
  auto key = lower_trimmed(name);
  if (!key.empty()) names_.insert_or_assign(std::move(key), type);
}

AnswerType GazetteerNer::classify(std::string_view text) const {
  const auto key = lower_trimmed(text);
  if (key.empty()) return AnswerType::NA;
  if (auto it = names_.find(key); it != names_.end()) return it->second;
  if (std::regex_match(key, date_pattern())) return AnswerType::DATE;
  if (std::regex_match(key, number_pattern())) return AnswerType::NUM;
  return AnswerType::NA;
}

void tag_answer_types(std::vector<QAInstance>& instances, const NerClient& ner) {
  for (auto& q : instances) {
    if (q.answer_type != AnswerType::NA) continue;
    for (const auto& alias : q.answers) {
      const AnswerType t = ner.classify(alias);
      if (t != AnswerType::NA) {
        q.answer_type = t;
        break;
      }
    }
  }
}

}  // namespace conflictqa
