#pragma once

#include <chrono>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conflictqa/errors.hpp"

namespace conflictqa {

struct TokenAlternative {
  std::string token;
  double logprob = 0.0;
  bool operator==(const TokenAlternative&) const = default;
};

// One generated token with its log-probability and the top alternatives at that position.
struct TokenLogprob {
  std::string token;
  double logprob = 0.0;
  std::vector<TokenAlternative> top;
  bool operator==(const TokenLogprob&) const = default;
};

struct Completion {
  std::string text;
  std::optional<std::vector<TokenLogprob>> token_logprobs;
  bool operator==(const Completion&) const = default;
};

// Request defaults follow the hyperparameters used for the hosted models.
struct GenerationParams {
  int max_tokens = 256;
  double temperature = 0.0;
  double top_p = 1.0;
  int n_logprobs = 10;
};

class ClientError : public Error {
 public:
  using Error::Error;
};
class RateLimitError : public ClientError {
 public:
  using ClientError::ClientError;
};
class TimeoutError : public ClientError {
 public:
  using ClientError::ClientError;
};
// Completion did not follow the requested output format.
class FormatError : public ClientError {
 public:
  using ClientError::ClientError;
};
class FixtureMissingError : public ClientError {
 public:
  using ClientError::ClientError;
};

class GenerationClient {
 public:
  virtual ~GenerationClient() = default;
  // Rate limits and timeouts surface as RateLimitError / TimeoutError, never as empty text.
  virtual Completion complete(const std::string& prompt, const GenerationParams& params) = 0;
  virtual std::string id() const = 0;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
  // Injected so tests run without wall-clock delays.
  std::function<void(std::chrono::milliseconds)> sleep;

  std::chrono::milliseconds backoff(int retry) const;
  void wait(int retry) const;
};

// Calls client.complete, retrying rate-limit and timeout failures with exponential backoff.
Completion complete_with_retries(GenerationClient& client, const std::string& prompt,
                                 const GenerationParams& params, const RetryPolicy& policy);

// Deterministic in-process client driven by a callback. Thread-safe.
class ScriptedClient final : public GenerationClient {
 public:
  using Script = std::function<Completion(const std::string& prompt, std::size_t call_index)>;
  explicit ScriptedClient(Script script, std::string id = "scripted");

  Completion complete(const std::string& prompt, const GenerationParams& params) override;
  std::string id() const override { return id_; }
  std::size_t calls() const;
  std::vector<std::string> prompts() const;

 private:
  Script script_;
  std::string id_;
  mutable std::mutex mu_;
  std::vector<std::string> prompts_;
};

// Recorded fixture line: {prompt_hash, completion, token_logprobs}.
struct FixtureRecord {
  std::string prompt_hash;
  Completion completion;
};

nlohmann::json to_json(const FixtureRecord& record);
FixtureRecord fixture_from_json(const nlohmann::json& j);
std::vector<FixtureRecord> load_fixtures(const std::filesystem::path& path);
void append_fixture(const std::filesystem::path& path, const FixtureRecord& record);

// Replays recorded completions keyed by SHA-256 of the prompt. Several records for one hash
// are served in order; the last one repeats. Thread-safe.
class ReplayClient final : public GenerationClient {
 public:
  explicit ReplayClient(std::vector<FixtureRecord> records, std::string id = "replay");
  static ReplayClient from_file(const std::filesystem::path& path, std::string id = "replay");

  Completion complete(const std::string& prompt, const GenerationParams& params) override;
  std::string id() const override { return id_; }

 private:
  std::map<std::string, std::vector<Completion>> by_hash_;
  std::map<std::string, std::size_t> served_;
  std::string id_;
  std::mutex mu_;
};

// Forwards to an inner client and appends every completion to a fixture file.
class RecordingClient final : public GenerationClient {
 public:
  RecordingClient(GenerationClient& inner, std::filesystem::path path);
  Completion complete(const std::string& prompt, const GenerationParams& params) override;
  std::string id() const override { return inner_.id(); }

 private:
  GenerationClient& inner_;
  std::filesystem::path path_;
  std::mutex mu_;
};

struct HttpClientSettings {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/completions";
  std::string model = "text-davinci-003";
  std::string api_key_env = "CONFLICTQA_API_KEY";
  std::chrono::seconds timeout{60};
};

// OpenAI-compatible text completion endpoint. HTTP 429 maps to RateLimitError, connection and
// read timeouts to TimeoutError.
std::unique_ptr<GenerationClient> make_http_client(const HttpClientSettings& settings);

}  // namespace conflictqa
