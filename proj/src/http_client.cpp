#include <algorithm>
#include <cstdlib>

#include <httplib.h>

#include "conflictqa/generation.hpp"

namespace conflictqa {

using nlohmann::json;

namespace {

Completion parse_completion_body(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw ClientError(std::string("unparseable completion response: ") + e.what());
  }
  if (!j.contains("choices") || j.at("choices").empty()) throw ClientError("completion response has no choices");
  const auto& choice = j.at("choices").at(0);
  Completion c;
  c.text = choice.value("text", std::string{});
  if (choice.contains("logprobs") && choice.at("logprobs").is_object()) {
    const auto& lp = choice.at("logprobs");
    const auto& tokens = lp.at("tokens");
    const auto& logprobs = lp.at("token_logprobs");
    std::vector<TokenLogprob> out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      TokenLogprob t{tokens.at(i).get<std::string>(),
                     logprobs.at(i).is_null() ? 0.0 : logprobs.at(i).get<double>(), {}};
      if (lp.contains("top_logprobs") && i < lp.at("top_logprobs").size() && lp.at("top_logprobs").at(i).is_object()) {
        for (const auto& [tok, v] : lp.at("top_logprobs").at(i).items()) t.top.push_back({tok, v.get<double>()});
        std::sort(t.top.begin(), t.top.end(), [](const TokenAlternative& a, const TokenAlternative& b) {
          return a.logprob != b.logprob ? a.logprob > b.logprob : a.token < b.token;
        });
      }
      out.push_back(std::move(t));
    }
    c.token_logprobs = std::move(out);
  }
  return c;
}

class HttpCompletionClient final : public GenerationClient {
 public:
  explicit HttpCompletionClient(HttpClientSettings settings) : settings_(std::move(settings)) {
    if (const char* key = std::getenv(settings_.api_key_env.c_str())) api_key_ = key;
  }

  Completion complete(const std::string& prompt, const GenerationParams& params) override {
    httplib::Client cli(settings_.base_url);
    const auto secs = static_cast<time_t>(settings_.timeout.count());
    cli.set_connection_timeout(secs, 0);
    cli.set_read_timeout(secs, 0);
    cli.set_write_timeout(secs, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    json body{{"model", settings_.model},
              {"prompt", prompt},
              {"max_tokens", params.max_tokens},
              {"temperature", params.temperature},
              {"top_p", params.top_p}};
    if (params.n_logprobs > 0) body["logprobs"] = params.n_logprobs;

    auto res = cli.Post(settings_.path, headers, body.dump(), "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
        throw TimeoutError("completion request timed out: " + httplib::to_string(err));
      throw ClientError("completion request failed: " + httplib::to_string(err));
    }
    if (res->status == 429 || res->status == 503) throw RateLimitError("rate limited (HTTP " + std::to_string(res->status) + ")");
    if (res->status == 408 || res->status == 504) throw TimeoutError("server timeout (HTTP " + std::to_string(res->status) + ")");
    if (res->status != 200) throw ClientError("completion request returned HTTP " + std::to_string(res->status));
    return parse_completion_body(res->body);
  }

  std::string id() const override { return settings_.model + "@" + settings_.base_url; }

 private:
  HttpClientSettings settings_;
  std::string api_key_;
};

}  // namespace

std::unique_ptr<GenerationClient> make_http_client(const HttpClientSettings& settings) {
  return std::make_unique<HttpCompletionClient>(settings);
}

}  // namespace conflictqa
