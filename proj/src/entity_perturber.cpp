#include "conflictqa/entity_perturber.hpp"

#include <algorithm>
#include <thread>

#include <spdlog/spdlog.h>

#include "conflictqa/hashing.hpp"

namespace conflictqa {

namespace {

bool word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || u >= 0x80;
}

std::string replace_spans(std::string_view text, const std::vector<Span>& spans, std::string_view with) {
  std::string out;
  out.reserve(text.size() + spans.size() * with.size());
  std::size_t cursor = 0;
  for (const auto& s : spans) {
    out.append(text.substr(cursor, s.begin - cursor));
    out.append(with);
    cursor = s.end;
  }
  out.append(text.substr(cursor));
  return out;
}

}  // namespace

const std::vector<std::string>& EntityPools::of(AnswerType type) const {
  static const std::vector<std::string> kEmpty;
  auto it = pools.find(type);
  return it == pools.end() ? kEmpty : it->second;
}

void EntityPools::add(AnswerType type, const std::string& entity) {
  auto& pool = pools[type];
  if (std::find(pool.begin(), pool.end(), entity) == pool.end()) pool.push_back(entity);
}

EntityPools build_entity_pools(const std::vector<QAInstance>& instances) {
  if (instances.empty()) throw PreconditionError("cannot build entity pools from zero instances");
  EntityPools out;
  for (auto t : kEntityTypes) out.pools[t];
  for (const auto& q : instances)
    if (q.answer_type != AnswerType::NA && !q.answers.empty()) out.add(q.answer_type, q.answers.front());
  return out;
}

std::vector<Span> find_occurrences(std::string_view text, std::string_view alias) {
  std::vector<Span> out;
  if (alias.empty()) return out;
  const bool guard_left = word_char(alias.front());
  const bool guard_right = word_char(alias.back());
  for (auto pos = text.find(alias); pos != std::string_view::npos; pos = text.find(alias, pos + 1)) {
    const auto end = pos + alias.size();
    if (guard_left && pos > 0 && word_char(text[pos - 1])) continue;
    if (guard_right && end < text.size() && word_char(text[end])) continue;
    out.push_back({pos, end});
  }
  return out;
}

bool contains_alias(std::string_view text, std::string_view alias) {
  return !find_occurrences(text, alias).empty();
}

bool contains_any_alias(std::string_view text, const std::vector<std::string>& aliases) {
  return std::any_of(aliases.begin(), aliases.end(), [&](const auto& a) { return contains_alias(text, a); });
}

std::vector<Span> alias_spans(std::string_view text, const std::vector<std::string>& aliases) {
  std::vector<Span> all;
  for (const auto& a : aliases) {
    auto occ = find_occurrences(text, a);
    all.insert(all.end(), occ.begin(), occ.end());
  }
  std::sort(all.begin(), all.end(), [](const Span& a, const Span& b) {
    return a.begin != b.begin ? a.begin < b.begin : a.end > b.end;
  });
  std::vector<Span> out;
  std::size_t covered = 0;
  for (const auto& s : all) {
    if (s.begin < covered) continue;
    out.push_back(s);
    covered = s.end;
  }
  return out;
}

const std::string* matched_alias(const QAInstance& instance, const Document& doc) {
  for (const auto& a : instance.answers)
    if (contains_alias(doc.title, a) || contains_alias(doc.text, a)) return &a;
  return nullptr;
}

bool is_perturbable(const QAInstance& instance, const Document& doc) {
  return instance.answer_type != AnswerType::NA && matched_alias(instance, doc) != nullptr;
}

std::pair<Document, PerturbationRecord> perturb_document(const QAInstance& instance, const Document& doc,
                                                         const EntityPools& pools, Rng& rng) {
  const std::string* alias = instance.answer_type == AnswerType::NA ? nullptr : matched_alias(instance, doc);
  if (!alias) throw PreconditionError("document '" + doc.doc_id + "' is not perturbable");

  std::vector<const std::string*> candidates;
  for (const auto& e : pools.of(instance.answer_type)) {
    if (std::find(instance.answers.begin(), instance.answers.end(), e) != instance.answers.end()) continue;
    if (contains_any_alias(e, instance.answers)) continue;
    candidates.push_back(&e);
  }

  const auto title_spans = alias_spans(doc.title, instance.answers);
  const auto text_spans = alias_spans(doc.text, instance.answers);
  // Walk a random permutation so a candidate that would recreate an alias across a span
  // boundary is passed over rather than emitted.
  while (!candidates.empty()) {
    const auto pick = rng.below(candidates.size());
    const std::string& replacement = *candidates[pick];
    Document out = doc;
    out.title = replace_spans(doc.title, title_spans, replacement);
    out.text = replace_spans(doc.text, text_spans, replacement);
    if (!contains_any_alias(out.title, instance.answers) && !contains_any_alias(out.text, instance.answers)) {
      PerturbationRecord record;
      record.method = PerturbationMethod::Entity;
      record.original_answer = *alias;
      record.replacement = replacement;
      record.perturbation_type = PerturbationType::ER;
      out.perturbed = true;
      out.record = record;
      return {std::move(out), std::move(record)};
    }
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  throw PoolExhaustedError("no same-type replacement for '" + *alias + "' (" +
                           std::string(to_string(instance.answer_type)) + ")");
}

nlohmann::json PerturbationReport::to_json() const {
  nlohmann::json by_type = nlohmann::json::object();
  for (const auto& [t, n] : perturbed_by_type) by_type[std::string(conflictqa::to_string(t))] = n;
  return {{"total_documents", total_documents},
          {"perturbable", perturbable},
          {"perturbed", perturbed},
          {"skipped_pool_exhausted", skipped_pool_exhausted},
          {"perturbed_fraction", perturbed_fraction()},
          {"perturbed_by_type", by_type}};
}

PerturbationReport& PerturbationReport::operator+=(const PerturbationReport& other) {
  total_documents += other.total_documents;
  perturbable += other.perturbable;
  perturbed += other.perturbed;
  skipped_pool_exhausted += other.skipped_pool_exhausted;
  for (const auto& [t, n] : other.perturbed_by_type) perturbed_by_type[t] += n;
  return *this;
}

namespace {

PerturbationReport perturb_set(RetrievedSet& set, const QAInstance& instance, const EntityPools& pools,
                               double p, std::uint64_t seed) {
  PerturbationReport report;
  Rng rng(derive_seed(seed, set.question_id));
  for (auto& doc : set.documents) {
    ++report.total_documents;
    if (doc.perturbed) {
      ++report.perturbed;
      continue;
    }
    if (!is_perturbable(instance, doc)) continue;
    ++report.perturbable;
    if (!rng.bernoulli(p)) continue;
    try {
      doc = perturb_document(instance, doc, pools, rng).first;
      ++report.perturbed;
      ++report.perturbed_by_type[instance.answer_type];
    } catch (const PoolExhaustedError& e) {
      ++report.skipped_pool_exhausted;
      spdlog::warn("skipping document '{}': {}", doc.doc_id, e.what());
    }
  }
  return report;
}

}  // namespace

PerturbedSplit perturb_split(const std::vector<RetrievedSet>& sets, const std::vector<QAInstance>& instances,
                             const EntityPools& pools, double p, std::uint64_t seed, unsigned threads) {
  if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("perturbation probability must lie in [0, 1]");
  const auto index = index_by_id(instances);
  std::vector<const QAInstance*> owners(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    auto it = index.find(sets[i].question_id);
    if (it == index.end()) throw ValidationError("retrieved set for unknown question '" + sets[i].question_id + "'");
    owners[i] = it->second;
  }

  PerturbedSplit out;
  out.sets = sets;
  std::vector<PerturbationReport> reports(sets.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) reports[i] = perturb_set(out.sets[i], *owners[i], pools, p, seed);
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(sets.size())));
  if (threads <= 1) {
    work(0, sets.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (sets.size() + threads - 1) / threads;
    for (std::size_t b = 0; b < sets.size(); b += chunk) pool.emplace_back(work, b, std::min(sets.size(), b + chunk));
  }
  for (const auto& r : reports) out.report += r;
  return out;
}

std::vector<RetrievedSet> resample_for_training(const std::vector<RetrievedSet>& sets,
                                                const std::vector<QAInstance>& instances,
                                                const EntityPools& pools, double p, std::uint64_t epoch_seed) {
  return perturb_split(sets, instances, pools, p, epoch_seed).sets;
}

}  // namespace conflictqa
