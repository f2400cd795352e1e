#include "conflictqa/generation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "conflictqa/hashing.hpp"

namespace conflictqa {

using nlohmann::json;

std::chrono::milliseconds RetryPolicy::backoff(int retry) const {
  const double ms = static_cast<double>(initial_backoff.count()) * std::pow(multiplier, retry);
  const double capped = std::min(ms, static_cast<double>(max_backoff.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(capped));
}

void RetryPolicy::wait(int retry) const {
  const auto d = backoff(retry);
  if (sleep)
    sleep(d);
  else
    std::this_thread::sleep_for(d);
}

Completion complete_with_retries(GenerationClient& client, const std::string& prompt,
                                 const GenerationParams& params, const RetryPolicy& policy) {
  for (int attempt = 0;; ++attempt) {
    try {
      return client.complete(prompt, params);
    } catch (const RateLimitError&) {
      if (attempt >= policy.max_retries) throw;
    } catch (const TimeoutError&) {
      if (attempt >= policy.max_retries) throw;
    }
    policy.wait(attempt);
  }
}

ScriptedClient::ScriptedClient(Script script, std::string id) : script_(std::move(script)), id_(std::move(id)) {}

Completion ScriptedClient::complete(const std::string& prompt, const GenerationParams&) {
  std::size_t index;
  {
    std::lock_guard lock(mu_);
    index = prompts_.size();
    prompts_.push_back(prompt);
  }
  return script_(prompt, index);
}

std::size_t ScriptedClient::calls() const {
  std::lock_guard lock(mu_);
  return prompts_.size();
}

std::vector<std::string> ScriptedClient::prompts() const {
  std::lock_guard lock(mu_);
  return prompts_;
}

json to_json(const FixtureRecord& record) {
  json tokens = nullptr;
  if (record.completion.token_logprobs) {
    tokens = json::array();
    for (const auto& t : *record.completion.token_logprobs) {
      json top = json::array();
      for (const auto& a : t.top) top.push_back({{"token", a.token}, {"logprob", a.logprob}});
      tokens.push_back({{"token", t.token}, {"logprob", t.logprob}, {"top", top}});
    }
  }
  return {{"prompt_hash", record.prompt_hash}, {"completion", record.completion.text}, {"token_logprobs", tokens}};
}

FixtureRecord fixture_from_json(const json& j) {
  FixtureRecord r;
  r.prompt_hash = j.at("prompt_hash").get<std::string>();
  r.completion.text = j.at("completion").get<std::string>();
  if (j.contains("token_logprobs") && !j.at("token_logprobs").is_null()) {
    std::vector<TokenLogprob> tokens;
    for (const auto& t : j.at("token_logprobs")) {
      TokenLogprob tl{t.at("token").get<std::string>(), t.at("logprob").get<double>(), {}};
      if (t.contains("top"))
        for (const auto& a : t.at("top")) tl.top.push_back({a.at("token").get<std::string>(), a.at("logprob").get<double>()});
      tokens.push_back(std::move(tl));
    }
    r.completion.token_logprobs = std::move(tokens);
  }
  return r;
}

std::vector<FixtureRecord> load_fixtures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fixtures " + path.string());
  std::vector<FixtureRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(fixture_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(std::string("fixture: ") + e.what(), lineno);
    }
  }
  return out;
}

void append_fixture(const std::filesystem::path& path, const FixtureRecord& record) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to fixtures " + path.string());
  out << to_json(record).dump() << '\n';
}

ReplayClient::ReplayClient(std::vector<FixtureRecord> records, std::string id) : id_(std::move(id)) {
  for (auto& r : records) by_hash_[r.prompt_hash].push_back(std::move(r.completion));
}

ReplayClient ReplayClient::from_file(const std::filesystem::path& path, std::string id) {
  return ReplayClient(load_fixtures(path), std::move(id));
}

Completion ReplayClient::complete(const std::string& prompt, const GenerationParams&) {
  const auto hash = sha256_hex(prompt);
  std::lock_guard lock(mu_);
  auto it = by_hash_.find(hash);
  if (it == by_hash_.end()) throw FixtureMissingError("no recorded completion for prompt " + hash);
  auto& n = served_[hash];
  const auto& list = it->second;
  const auto& c = list[std::min(n, list.size() - 1)];
  ++n;
  return c;
}

RecordingClient::RecordingClient(GenerationClient& inner, std::filesystem::path path)
    : inner_(inner), path_(std::move(path)) {}

Completion RecordingClient::complete(const std::string& prompt, const GenerationParams& params) {
  Completion c = inner_.complete(prompt, params);
  std::lock_guard lock(mu_);
  append_fixture(path_, FixtureRecord{sha256_hex(prompt), c});
  return c;
}

}  // namespace conflictqa
