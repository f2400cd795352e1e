#include "conflictqa/prompting.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <regex>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "conflictqa/evaluation.hpp"

namespace conflictqa {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

constexpr std::string_view kAnswerMarker = "Answer:";

// Byte range of the answer line inside `text`.
std::optional<std::pair<std::size_t, std::size_t>> answer_span(PromptVariant variant, std::string_view text) {
  std::size_t begin = 0;
  if (variant == PromptVariant::DiscInst) {
    const auto pos = text.find(kAnswerMarker);
    if (pos == std::string_view::npos) return std::nullopt;
    begin = pos + kAnswerMarker.size();
  }
  while (begin < text.size() && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  std::size_t end = text.find('\n', begin);
  if (end == std::string_view::npos) end = text.size();
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  if (end == begin) return std::nullopt;
  return std::pair{begin, end};
}

std::string clean_candidate(std::string_view s) {
  const auto nl = s.find('\n');
  if (nl != std::string_view::npos) s = s.substr(0, nl);
  return std::string(trim(s));
}

}  // namespace

std::string_view to_string(PromptVariant v) {
  switch (v) {
    case PromptVariant::Parametric: return "parametric";
    case PromptVariant::SemiParametric: return "semi_parametric";
    case PromptVariant::DiscInst: return "disc_inst";
    case PromptVariant::DiscFid: return "disc_fid";
  }
  return "?";
}

PromptVariant parse_prompt_variant(std::string_view s) {
  if (s == "parametric") return PromptVariant::Parametric;
  if (s == "semi_parametric" || s == "semi") return PromptVariant::SemiParametric;
  if (s == "disc_inst") return PromptVariant::DiscInst;
  if (s == "disc_fid") return PromptVariant::DiscFid;
  throw ValidationError("unknown prompt variant '" + std::string(s) + "'");
}

std::string_view instruction_for(PromptVariant v) {
  switch (v) {
    case PromptVariant::Parametric: return kParametricInstruction;
    case PromptVariant::SemiParametric: return kSemiParametricInstruction;
    case PromptVariant::DiscInst: return kDiscInstInstruction;
    case PromptVariant::DiscFid: return kDiscFidInstruction;
  }
  return {};
}

std::vector<InContextSample> select_incontext_samples(const std::vector<InContextSample>& heldout, std::size_t k,
                                                      Rng& rng) {
  if (heldout.size() < k)
    throw PreconditionError(fmt::format("need {} in-context samples, held-out pool has {}", k, heldout.size()));
  std::vector<std::size_t> order(heldout.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  // Bipartite graph: answer types on the left, perturbed counts on the right, one
  // representative instance per (type, count) edge. A matching of size k is exactly a
  // selection satisfying both constraints.
  std::map<std::pair<int, std::size_t>, std::size_t> edge;
  std::map<int, std::vector<std::size_t>> counts_of;
  std::vector<int> types;
  for (auto i : order) {
    const int t = static_cast<int>(heldout[i].instance.answer_type);
    const auto c = heldout[i].docs.perturbed_count();
    if (edge.emplace(std::pair{t, c}, i).second) counts_of[t].push_back(c);
    if (std::find(types.begin(), types.end(), t) == types.end()) types.push_back(t);
  }
  std::map<std::size_t, int> match_of_count;
  std::function<bool(int, std::set<std::size_t>&)> augment = [&](int t, std::set<std::size_t>& seen) {
    for (auto c : counts_of[t]) {
      if (!seen.insert(c).second) continue;
      auto it = match_of_count.find(c);
      if (it == match_of_count.end() || augment(it->second, seen)) {
        match_of_count[c] = t;
        return true;
      }
    }
    return false;
  };
  for (int t : types) {
    std::set<std::size_t> seen;
    augment(t, seen);
  }

  std::vector<std::size_t> chosen;
  for (const auto& [c, t] : match_of_count) chosen.push_back(edge.at({t, c}));
  rng.shuffle(chosen);
  if (chosen.size() > k) chosen.resize(k);

  auto fill = [&](bool distinct_types) {
    std::set<int> used;
    for (auto i : chosen) used.insert(static_cast<int>(heldout[i].instance.answer_type));
    for (auto i : order) {
      if (chosen.size() >= k) break;
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      const int t = static_cast<int>(heldout[i].instance.answer_type);
      if (distinct_types && used.count(t)) continue;
      chosen.push_back(i);
      used.insert(t);
    }
  };
  if (chosen.size() < k) {
    spdlog::warn("in-context selection: only {} of {} samples can have distinct perturbed counts; relaxing",
                 chosen.size(), k);
    fill(true);
  }
  if (chosen.size() < k) {
    spdlog::warn("in-context selection: only {} distinct answer types for {} samples; relaxing", chosen.size(), k);
    fill(false);
  }

  std::vector<InContextSample> out;
  for (auto i : chosen) out.push_back(heldout[i]);
  return out;
}

std::string render_document_block(std::size_t index, const Document& doc) {
  return fmt::format("Document [{}] (Title: {}) {}", index, doc.title, doc.text);
}

std::string format_disc_injection(const std::vector<std::pair<std::size_t, bool>>& decisions) {
  std::set<std::size_t> seen;
  std::vector<std::size_t> flagged;
  for (const auto& [index, flag] : decisions) {
    if (index == 0) throw PreconditionError("document indices are 1-based");
    if (!seen.insert(index).second) throw PreconditionError(fmt::format("duplicate document index {}", index));
    if (flag) flagged.push_back(index);
  }
  std::sort(flagged.begin(), flagged.end());
  if (flagged.empty()) return "Perturbed: None";
  std::string out = "Perturbed: ";
  for (std::size_t i = 0; i < flagged.size(); ++i) {
    if (i) out += ", ";
    out += fmt::format("Document [{}]", flagged[i]);
  }
  return out;
}

std::string format_disc_injection(const std::vector<bool>& decisions) {
  std::vector<std::pair<std::size_t, bool>> indexed;
  for (std::size_t i = 0; i < decisions.size(); ++i) indexed.emplace_back(i + 1, decisions[i]);
  return format_disc_injection(indexed);
}

namespace {

std::vector<bool> gold_flags(const RetrievedSet& docs) {
  std::vector<bool> flags;
  for (const auto& d : docs.documents) flags.push_back(d.perturbed);
  return flags;
}

void append_documents(std::string& out, const RetrievedSet& docs) {
  for (std::size_t i = 0; i < docs.documents.size(); ++i) {
    out += render_document_block(i + 1, docs.documents[i]);
    out += '\n';
  }
}

}  // namespace

PromptBundle render_prompt(PromptVariant variant, const InContextSample& sample, const QAInstance& eval_instance,
                           const RetrievedSet& eval_docs, const std::optional<std::vector<bool>>& disc_decisions) {
  if (variant == PromptVariant::DiscFid) {
    if (!disc_decisions) throw PreconditionError("disc_fid prompts need discriminator decisions");
    if (disc_decisions->size() != eval_docs.documents.size())
      throw PreconditionError(fmt::format("{} decisions for {} documents", disc_decisions->size(),
                                          eval_docs.documents.size()));
  }
  if (sample.instance.answers.empty()) throw PreconditionError("in-context sample has no answer");
  const bool with_docs = variant != PromptVariant::Parametric;
  const bool disc = variant == PromptVariant::DiscInst || variant == PromptVariant::DiscFid;
  const auto instruction = instruction_for(variant);

  std::string out;
  if (with_docs) append_documents(out, sample.docs);
  out += fmt::format("{}\nQuestion: {}\n", instruction, sample.instance.question);
  if (disc) out += format_disc_injection(gold_flags(sample.docs)) + '\n';
  out += fmt::format("Answer: {}\n\n", sample.instance.answers.front());

  if (with_docs) append_documents(out, eval_docs);
  out += fmt::format("{}\nQuestion: {}\n", instruction, eval_instance.question);
  if (variant == PromptVariant::DiscInst)
    out += "Perturbed:";
  else if (variant == PromptVariant::DiscFid)
    out += format_disc_injection(*disc_decisions) + "\nAnswer:";
  else
    out += "Answer:";

  return PromptBundle{variant, std::move(out), sample.instance.id, eval_instance.id};
}

std::optional<std::string> extract_answer_line(PromptVariant variant, std::string_view completion) {
  const auto span = answer_span(variant, completion);
  if (!span) return std::nullopt;
  return std::string(completion.substr(span->first, span->second - span->first));
}

std::vector<CandidateAnswer> candidates_from_completion(PromptVariant variant, const Completion& completion) {
  if (!completion.token_logprobs || completion.token_logprobs->empty()) {
    auto line = extract_answer_line(variant, completion.text);
    if (!line) return {};
    return {CandidateAnswer{*line, 1.0}};
  }

  const auto& tokens = *completion.token_logprobs;
  std::string joined;
  std::vector<std::size_t> starts;
  for (const auto& t : tokens) {
    starts.push_back(joined.size());
    joined += t.token;
  }
  if (joined != completion.text) spdlog::debug("token stream differs from completion text; using tokens");
  const auto span = answer_span(variant, joined);
  if (!span) return {};
  const auto [a, b] = *span;

  struct Partial {
    std::string text;
    double logprob = 0.0;
  };
  std::vector<Partial> beam{{}};
  bool first = true;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t s = starts[i], e = s + tokens[i].token.size();
    if (!(s < b && e > a)) continue;
    std::vector<TokenAlternative> alts = tokens[i].top;
    const bool has_chosen = std::any_of(alts.begin(), alts.end(),
                                        [&](const TokenAlternative& x) { return x.token == tokens[i].token; });
    if (!has_chosen) alts.push_back({tokens[i].token, tokens[i].logprob});
    std::stable_sort(alts.begin(), alts.end(),
                     [](const TokenAlternative& x, const TokenAlternative& y) { return x.logprob > y.logprob; });
    if (alts.size() > kMaxCandidates) alts.resize(kMaxCandidates);

    // The first answer token may carry text that precedes the answer (e.g. a leading space).
    std::string head = first && s < a ? joined.substr(s, a - s) : std::string();
    first = false;

    std::vector<Partial> next;
    for (const auto& p : beam) {
      for (const auto& alt : alts) {
        std::string_view piece = alt.token;
        if (!head.empty() && piece.substr(0, head.size()) == head) piece.remove_prefix(head.size());
        next.push_back({p.text + std::string(piece), p.logprob + alt.logprob});
      }
    }
    // Exact top-k of a sum of independent per-position scores: a combination in the final
    // top k always has its prefix in the top k of prefixes.
    std::stable_sort(next.begin(), next.end(), [](const Partial& x, const Partial& y) { return x.logprob > y.logprob; });
    if (next.size() > kMaxCandidates) next.resize(kMaxCandidates);
    beam = std::move(next);
  }

  std::vector<CandidateAnswer> out;
  for (const auto& p : beam) {
    auto text = clean_candidate(p.text);
    const double prob = std::min(1.0, std::exp(p.logprob));
    if (text.empty() || !(prob > 0.0)) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const CandidateAnswer& c) { return c.text == text; });
    if (it != out.end())
      it->probability = std::min(1.0, it->probability + prob);
    else
      out.push_back({std::move(text), prob});
  }
  std::stable_sort(out.begin(), out.end(), [](const CandidateAnswer& x, const CandidateAnswer& y) {
    return x.probability > y.probability;
  });
  return out;
}

std::vector<CandidateAnswer> query_answer(GenerationClient& client, const PromptBundle& bundle,
                                          const GenerationParams& params, const RetryPolicy& policy) {
  const auto completion = complete_with_retries(client, bundle.rendered, params, policy);
  auto out = candidates_from_completion(bundle.variant, completion);
  if (out.empty())
    spdlog::warn("no answer in completion for question {} (sample {}); iteration skipped", bundle.eval_question_id,
                 bundle.incontext_sample_id);
  return out;
}

EnsembleResult ensemble_answers(const std::vector<std::vector<CandidateAnswer>>& per_iteration) {
  struct Group {
    std::vector<double> probs;
    std::map<std::string, std::size_t> surface_counts;
  };
  std::map<std::string, Group> groups;
  for (const auto& list : per_iteration) {
    for (const auto& c : list) {
      auto& g = groups[normalize_answer(c.text)];
      g.probs.push_back(c.probability);
      ++g.surface_counts[c.text];
    }
  }
  if (groups.empty()) throw NoAnswerError("every iteration returned an empty candidate list");

  // Sorting before summation makes the score independent of iteration order.
  const std::map<std::string, Group>::value_type* best = nullptr;
  double best_score = 0.0;
  for (auto& entry : groups) {
    auto& probs = entry.second.probs;
    std::sort(probs.begin(), probs.end());
    const double score = std::accumulate(probs.begin(), probs.end(), 0.0);
    if (!best || score > best_score) {  // map order already gives the lexicographic tie-break
      best = &entry;
      best_score = score;
    }
  }
  const auto& counts = best->second.surface_counts;
  auto surface = std::max_element(counts.begin(), counts.end(), [](const auto& x, const auto& y) {
    return x.second < y.second;  // first maximal entry is the smallest string
  });
  return {surface->first, best_score};
}

std::optional<std::vector<bool>> parse_disc_line(std::string_view completion, std::size_t num_docs) {
  auto line = completion.substr(0, completion.find('\n'));
  const auto marker = line.find("Perturbed:");
  if (marker != std::string_view::npos) line.remove_prefix(marker + 10);
  line = trim(line);
  std::vector<bool> flags(num_docs, false);
  if (line == "None") return flags;
  static const std::regex doc_ref(R"(Document \[(\d+)\])");
  const std::string s(line);
  bool any = false;
  for (std::sregex_iterator it(s.begin(), s.end(), doc_ref), end; it != end; ++it) {
    const auto index = std::stoul((*it)[1].str());
    any = true;
    if (index >= 1 && index <= num_docs) flags[index - 1] = true;
  }
  if (!any) return std::nullopt;
  return flags;
}

PromptingSystem::PromptingSystem(std::string name, GenerationClient& client, std::vector<InContextSample> samples,
                                 PromptingOptions options, DiscDecider decider)
    : name_(std::move(name)),
      client_(client),
      samples_(std::move(samples)),
      options_(std::move(options)),
      decider_(std::move(decider)),
      hits_(samples_.size(), 0) {
  if (samples_.empty()) throw PreconditionError("prompting needs at least one in-context sample");
  if (options_.variant == PromptVariant::DiscFid && !decider_)
    throw PreconditionError("disc_fid prompting needs discriminator decisions");
}

SystemOutput PromptingSystem::run(const QAInstance& instance, const RetrievedSet& docs) {
  std::optional<std::vector<bool>> injected;
  if (options_.variant == PromptVariant::DiscFid) injected = decider_(instance, docs);

  std::vector<std::vector<CandidateAnswer>> per_iteration;
  std::vector<std::size_t> votes(docs.documents.size(), 0);
  std::size_t parsed = 0;
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto bundle = render_prompt(options_.variant, samples_[i], instance, docs, injected);
    const auto completion = complete_with_retries(client_, bundle.rendered, options_.params, options_.retry);
    auto candidates = candidates_from_completion(options_.variant, completion);
    if (candidates.empty())
      spdlog::warn("no answer in completion for question {} (sample {}); iteration skipped", bundle.eval_question_id,
                   bundle.incontext_sample_id);
    else
      hits_[i] += static_cast<std::size_t>(exact_match(candidates.front().text, instance.answers));
    if (options_.variant == PromptVariant::DiscInst) {
      if (auto flags = parse_disc_line(completion.text, docs.documents.size())) {
        ++parsed;
        for (std::size_t m = 0; m < flags->size(); ++m) votes[m] += (*flags)[m] ? 1 : 0;
      }
    }
    per_iteration.push_back(std::move(candidates));
  }
  ++questions_;

  SystemOutput out;
  try {
    out.answer = ensemble_answers(per_iteration).answer;
  } catch (const NoAnswerError&) {
    spdlog::warn("no iteration answered question {}", instance.id);
  }
  if (options_.variant == PromptVariant::DiscFid) {
    out.disc_decisions = std::move(injected);
  } else if (options_.variant == PromptVariant::DiscInst && parsed > 0) {
    std::vector<bool> decisions(votes.size());
    for (std::size_t m = 0; m < votes.size(); ++m) decisions[m] = 2 * votes[m] > parsed;
    out.disc_decisions = std::move(decisions);
  }
  return out;
}

std::vector<double> PromptingSystem::iteration_ems() const {
  std::vector<double> out;
  for (auto h : hits_)
    out.push_back(questions_ == 0 ? 0.0 : 100.0 * static_cast<double>(h) / static_cast<double>(questions_));
  return out;
}

void PromptingSystem::reset_iteration_stats() {
  std::fill(hits_.begin(), hits_.end(), 0);
  questions_ = 0;
}

}  // namespace conflictqa
