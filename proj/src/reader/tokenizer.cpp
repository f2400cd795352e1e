#include "conflictqa/reader/tokenizer.hpp"

#include <algorithm>
#include <cctype>

#include "conflictqa/errors.hpp"

namespace conflictqa::reader {

namespace {
const char* const kSpecialTokens[kNumSpecial] = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  flush();
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* s : kSpecialTokens) add(s);
}

void Vocabulary::add(const std::string& token) {
  if (index_.count(token)) return;
  index_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus, std::size_t max_size) {
  std::map<std::string, std::size_t> freq;
  for (const auto& doc : corpus)
    for (const auto& t : doc) ++freq[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, n] : ranked) {
    if (max_size && v.size() >= max_size) break;
    v.add(tok);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> toks;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kPad || i == kBos) continue;
    toks.push_back(token(i));
  }
  return detokenize(toks);
}

nlohmann::json Vocabulary::to_json() const { return tokens_; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  const auto tokens = j.get<std::vector<std::string>>();
  if (tokens.size() < kNumSpecial || !std::equal(kSpecialTokens, kSpecialTokens + kNumSpecial, tokens.begin()))
    throw ValidationError("vocabulary does not start with the special tokens");
  for (const auto& t : tokens) v.add(t);
  if (v.size() != tokens.size()) throw ValidationError("vocabulary has duplicate tokens");
  return v;
}

}  // namespace conflictqa::reader
