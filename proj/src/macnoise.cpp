#include "conflictqa/macnoise.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <optional>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "conflictqa/entity_perturber.hpp"

namespace conflictqa {

const std::string_view kMacNoiseInstruction =
    "You are a novel writing AI. Your job is to make up a story based on the following information.\n"
    "You will be given a question (preceded by \"Question:\"), a document (preceded by \"Document:\") and\n"
    "the corresponding answer (\"Answer:\"), and you will be asked to create a novel story after "
    "(\"Revised Document:\"). Note, there can be multiple answers (['answer1', 'answer2', ...]) to a given "
    "question and document pair.\n"
    "Now, you should creatively rewrite the document so that the document has a different answer than the "
    "given answer(s).\n"
    "\n"
    "The rewritten document must adhere to all of the following rules:\n"
    "1) The rewritten document must be answerable by the question.\n"
    "The information (e.g., entities, phrases) explicitly in the question should not be changed from the "
    "original document.\n"
    "2) The rewritten document should be similar in length to the given original document above.\n"
    "3) The rewritten document should not contain the original answer.\n"
    "If the original answer cannot be removed from the document, rewrite the document so the semantics "
    "negate / do not support the answer.\n"
    "\n"
    "The following are the possible rewriting strategies:\n"
    "1) Rewrite the document so the passage no longer supports the answer.\n"
    "2) Replace the entity in the passage.\n"
    "3) Negate the sentence the answer span exists so that the original answer span is no longer the answer.\n"
    "Make sure that the rewritten document is in a completely different style than the original document, "
    "and correctly generate punctuations like periods (\".\") and commas (\",\").\n"
    "\n"
    "You must give your rewritten document only after \"Revised Document:\".";

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string example_block(const QAInstance& q, const Document& d) {
  return fmt::format("Question: {}\nDocument: {}\nAnswer: {}\n{}", q.question, render_passage(d),
                     render_answer_list(q.answers), kRevisedMarker);
}

}  // namespace

std::string render_passage(const Document& doc) {
  if (doc.title.empty()) return doc.text;
  return fmt::format("title: {} context: {}", doc.title, doc.text);
}

std::string render_answer_list(const std::vector<std::string>& answers) {
  std::string out = "[";
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (i) out += ", ";
    out += '\'';
    for (char c : answers[i]) {
      if (c == '\'' || c == '\\') out += '\\';
      out += c;
    }
    out += '\'';
  }
  return out + "]";
}

std::string render_macnoise_prompt(const QAInstance& instance, const Document& doc,
                                   const std::vector<RewriteDemo>& demos) {
  if (!demos.empty() && demos.size() != 3)
    throw PreconditionError("counterfactual prompts take zero or three demonstrations");
  std::string out(kMacNoiseInstruction);
  out += "\n\n";
  for (const auto& demo : demos) {
    out += example_block(demo.instance, demo.document);
    out += ' ';
    out += demo.rewritten;
    out += "\n\n";
  }
  out += example_block(instance, doc);
  return out;
}

std::optional<std::string> extract_revised_document(std::string_view completion) {
  const auto pos = completion.rfind(kRevisedMarker);
  if (pos == std::string_view::npos) return std::nullopt;
  auto rest = trim(completion.substr(pos + kRevisedMarker.size()));
  if (rest.empty()) return std::nullopt;
  return std::string(rest);
}

GeneratedText generate_counterfactual(GenerationClient& client, const QAInstance& instance, const Document& doc,
                                      const std::vector<RewriteDemo>& demos, const RetryPolicy& policy,
                                      const GenerationParams& params) {
  const auto prompt = render_macnoise_prompt(instance, doc, demos);
  for (int attempt = 0;; ++attempt) {
    const Completion c = complete_with_retries(client, prompt, params, policy);
    if (auto text = extract_revised_document(c.text)) return {std::move(*text), client.id()};
    if (attempt >= policy.max_retries)
      throw FormatError("completion lacks the \"Revised Document:\" marker after " + std::to_string(attempt + 1) +
                        " attempts");
  }
}

std::size_t char_count(std::string_view utf8) {
  return static_cast<std::size_t>(std::count_if(utf8.begin(), utf8.end(), [](char c) {
    return (static_cast<unsigned char>(c) & 0xC0) != 0x80;
  }));
}

ValidationReport validate_counterfactual(const Document& original, std::string_view rewritten,
                                         const QAInstance& instance, const LengthBand& band, bool marker_found) {
  ValidationReport r;
  r.marker_found = marker_found;
  if (!marker_found) r.reasons.push_back("revised-document marker missing");

  const auto haystack = ascii_lower(rewritten);
  r.answer_absent = true;
  for (const auto& alias : instance.answers) {
    if (haystack.find(ascii_lower(alias)) != std::string::npos) {
      r.answer_absent = false;
      r.reasons.push_back("original answer '" + alias + "' still present");
    }
  }

  const auto original_chars = char_count(render_passage(original));
  r.length_ratio = original_chars == 0 ? 0.0
                                       : static_cast<double>(char_count(rewritten)) / static_cast<double>(original_chars);
  const bool in_band = r.length_ratio >= band.min_ratio && r.length_ratio <= band.max_ratio;
  if (!in_band)
    r.reasons.push_back(fmt::format("length ratio {:.3f} outside [{}, {}]", r.length_ratio, band.min_ratio, band.max_ratio));

  r.valid = r.answer_absent && r.marker_found && in_band;
  return r;
}

Document apply_rewrite(const Document& original, std::string_view rewritten) {
  Document out = original;
  auto body = trim(rewritten);
  constexpr std::string_view kTitle = "title:";
  constexpr std::string_view kContext = " context:";
  if (body.substr(0, kTitle.size()) == kTitle) {
    const auto ctx = body.find(kContext);
    if (ctx != std::string_view::npos) {
      out.title = std::string(trim(body.substr(kTitle.size(), ctx - kTitle.size())));
      out.text = std::string(trim(body.substr(ctx + kContext.size())));
      return out;
    }
  }
  out.text = std::string(body);
  return out;
}

nlohmann::json GenerationStats::to_json() const {
  return {{"questions", questions},         {"perturbable", perturbable},
          {"attempted_documents", attempted_documents},
          {"attempts", attempts},           {"valid", valid},
          {"invalid", invalid},             {"format_errors", format_errors},
          {"client_errors", client_errors}, {"kept_unperturbed", kept_unperturbed}};
}

namespace {

struct Job {
  std::size_t set_index;
  std::size_t doc_index;
  const QAInstance* instance;
};

struct JobResult {
  std::optional<Document> rewritten;
  std::size_t attempts = 0;
  std::size_t valid = 0;
  std::size_t invalid = 0;
  bool format_error = false;
  bool client_error = false;
};

JobResult run_job(const Job& job, const Document& doc, GenerationClient& client, const std::vector<RewriteDemo>& demos,
                  const MacNoiseOptions& options) {
  JobResult result;
  const std::string* alias = matched_alias(*job.instance, doc);
  for (int round = 0; round < 2; ++round) {
    GeneratedText gen;
    try {
      gen = generate_counterfactual(client, *job.instance, doc, demos, options.retry, options.params);
    } catch (const FormatError& e) {
      result.format_error = true;
      spdlog::warn("document '{}': {}", doc.doc_id, e.what());
      return result;
    } catch (const ClientError& e) {
      result.client_error = true;
      spdlog::warn("document '{}': {}", doc.doc_id, e.what());
      return result;
    }
    ++result.attempts;
    Document candidate = apply_rewrite(doc, gen.text);
    const auto report = validate_counterfactual(doc, render_passage(candidate), *job.instance, options.band);
    if (!report.valid) {
      ++result.invalid;
      continue;
    }
    ++result.valid;
    PerturbationRecord record;
    record.method = PerturbationMethod::MacNoise;
    record.original_answer = alias ? *alias : job.instance->answers.front();
    record.generator_id = gen.generator_id;
    candidate.perturbed = true;
    candidate.record = std::move(record);
    result.rewritten = std::move(candidate);
    return result;
  }
  return result;
}

}  // namespace

MacNoiseSplit build_macnoise_split(const std::vector<RetrievedSet>& sets, const std::vector<QAInstance>& instances,
                                   GenerationClient& client, const std::vector<RewriteDemo>& demos,
                                   const MacNoiseOptions& options) {
  if (options.max_docs_per_question == 0) throw PreconditionError("max_docs_per_question must be at least 1");
  const auto index = index_by_id(instances);
  MacNoiseSplit out;
  out.sets = sets;

  std::vector<Job> jobs;
  for (std::size_t s = 0; s < sets.size(); ++s) {
    auto it = index.find(sets[s].question_id);
    if (it == index.end()) throw ValidationError("retrieved set for unknown question '" + sets[s].question_id + "'");
    ++out.stats.questions;
    std::size_t taken = 0;
    for (std::size_t d = 0; d < sets[s].documents.size(); ++d) {
      const auto& doc = sets[s].documents[d];
      if (doc.perturbed || !is_perturbable(*it->second, doc)) continue;
      ++out.stats.perturbable;
      if (taken < options.max_docs_per_question) {
        jobs.push_back({s, d, it->second});
        ++taken;
      }
    }
  }

  std::vector<JobResult> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++)
      results[i] = run_job(jobs[i], sets[jobs[i].set_index].documents[jobs[i].doc_index], client, demos, options);
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(options.max_in_flight, static_cast<unsigned>(jobs.size())));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& r = results[i];
    ++out.stats.attempted_documents;
    out.stats.attempts += r.attempts;
    out.stats.valid += r.valid;
    out.stats.invalid += r.invalid;
    if (r.format_error) ++out.stats.format_errors;
    if (r.client_error) ++out.stats.client_errors;
    if (r.rewritten)
      out.sets[jobs[i].set_index].documents[jobs[i].doc_index] = std::move(*r.rewritten);
    else
      ++out.stats.kept_unperturbed;
  }
  return out;
}

}  // namespace conflictqa
