#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace conflictqa::reader {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kSep = 4;
inline constexpr std::size_t kNumSpecial = 5;

// Lowercased words; every ASCII punctuation character becomes its own token.
std::vector<std::string> tokenize(std::string_view text);
std::string detokenize(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  Vocabulary();
  // Most frequent tokens first (ties alphabetical), capped so that size() <= max_size.
  // max_size 0 keeps everything.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus, std::size_t max_size = 0);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }
  std::vector<int> encode(std::string_view text) const;
  // Stops at EOS, skips PAD/BOS.
  std::string decode(const std::vector<int>& ids) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

}  // namespace conflictqa::reader
