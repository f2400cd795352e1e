#include "conflictqa/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "conflictqa/errors.hpp"

namespace conflictqa {

using nlohmann::json;

namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

// Calls fn(json, line_number) for every non-blank line.
template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_for_read(path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    }
    if (!j.is_object()) throw ParseError("record is not a JSON object", lineno);
    try {
      fn(j, lineno);
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad field: ") + e.what(), lineno);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

bool is_meta(const json& j) { return j.contains("type") && j.at("type") == "meta"; }

json optional_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> read_optional_string(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<std::string>();
}

PerturbationRecord record_from_json(const json& j) {
  PerturbationRecord r;
  r.method = parse_perturbation_method(j.at("method").get<std::string>());
  r.original_answer = j.at("original_answer").get<std::string>();
  r.replacement = read_optional_string(j, "replacement");
  if (auto t = read_optional_string(j, "perturbation_type")) r.perturbation_type = parse_perturbation_type(*t);
  r.generator_id = read_optional_string(j, "generator_id");
  return r;
}

Document document_from_json(const json& j) {
  Document d;
  d.doc_id = j.at("doc_id").get<std::string>();
  d.title = j.value("title", std::string{});
  d.text = j.at("text").get<std::string>();
  d.rank = j.at("rank").get<int>();
  d.perturbed = j.value("perturbed", false);
  if (j.contains("record") && !j.at("record").is_null()) d.record = record_from_json(j.at("record"));
  validate(d);
  return d;
}

struct PendingSet {
  RetrievedSet set;
  std::set<int> ranks;
};

// Groups document records by question, rejecting duplicate (question_id, rank) pairs.
// Returns sets in order of first appearance.
std::vector<RetrievedSet> read_document_records(const std::filesystem::path& path, SplitMeta* meta) {
  std::vector<PendingSet> pending;
  std::map<std::string, std::size_t> slot;
  bool first = true;
  for_each_record(path, [&](const json& j, std::size_t) {
    if (is_meta(j)) {
      if (!first) throw ValidationError("meta record must be the first line");
      if (meta) {
        meta->seed = j.value("seed", std::int64_t{0});
        if (j.contains("generators"))
          meta->generators = j.at("generators").get<std::map<std::string, std::string>>();
      }
      first = false;
      return;
    }
    first = false;
    auto qid = j.at("question_id").get<std::string>();
    Document d = document_from_json(j);
    auto [it, inserted] = slot.try_emplace(qid, pending.size());
    if (inserted) pending.push_back({RetrievedSet{qid, {}}, {}});
    auto& p = pending[it->second];
    if (!p.ranks.insert(d.rank).second)
      throw ValidationError("duplicate (question_id, rank) pair (" + qid + ", " + std::to_string(d.rank) + ")");
    p.set.documents.push_back(std::move(d));
  });
  std::vector<RetrievedSet> out;
  out.reserve(pending.size());
  for (auto& p : pending) {
    std::stable_sort(p.set.documents.begin(), p.set.documents.end(),
                     [](const Document& a, const Document& b) { return a.rank < b.rank; });
    out.push_back(std::move(p.set));
  }
  return out;
}

}  // namespace

std::string_view to_string(AnswerType t) {
  switch (t) {
    case AnswerType::PER: return "PER";
    case AnswerType::ORG: return "ORG";
    case AnswerType::LOC: return "LOC";
    case AnswerType::DATE: return "DATE";
    case AnswerType::NUM: return "NUM";
    case AnswerType::NA: return "NA";
  }
  return "NA";
}

AnswerType parse_answer_type(std::string_view s) {
  if (s == "PER") return AnswerType::PER;
  if (s == "ORG") return AnswerType::ORG;
  if (s == "LOC") return AnswerType::LOC;
  if (s == "DATE") return AnswerType::DATE;
  if (s == "NUM") return AnswerType::NUM;
  if (s == "NA" || s == "N/A") return AnswerType::NA;
  throw ValidationError("unknown answer_type '" + std::string(s) + "'");
}

std::string_view to_string(PerturbationMethod m) {
  return m == PerturbationMethod::Entity ? "entity" : "macnoise";
}

PerturbationMethod parse_perturbation_method(std::string_view s) {
  if (s == "entity") return PerturbationMethod::Entity;
  if (s == "macnoise") return PerturbationMethod::MacNoise;
  throw ValidationError("unknown perturbation method '" + std::string(s) + "'");
}

std::string_view to_string(PerturbationType t) {
  switch (t) {
    case PerturbationType::AC: return "AC";
    case PerturbationType::GR: return "GR";
    case PerturbationType::LR: return "LR";
    case PerturbationType::ER: return "ER";
  }
  return "ER";
}

PerturbationType parse_perturbation_type(std::string_view s) {
  if (s == "AC") return PerturbationType::AC;
  if (s == "GR") return PerturbationType::GR;
  if (s == "LR") return PerturbationType::LR;
  if (s == "ER") return PerturbationType::ER;
  throw ValidationError("unknown perturbation_type '" + std::string(s) + "'");
}

std::size_t RetrievedSet::perturbed_count() const {
  return static_cast<std::size_t>(
      std::count_if(documents.begin(), documents.end(), [](const Document& d) { return d.perturbed; }));
}

void validate(const QAInstance& instance) {
  if (instance.id.empty()) throw ValidationError("QA instance has an empty id");
  if (instance.answers.empty()) throw ValidationError("QA instance '" + instance.id + "' has no answers");
  for (const auto& a : instance.answers)
    if (blank(a)) throw ValidationError("QA instance '" + instance.id + "' has a blank answer alias");
}

void validate(const PerturbationRecord& record) {
  if (record.method == PerturbationMethod::Entity) {
    if (!record.replacement) throw ValidationError("entity perturbation record lacks a replacement");
    if (record.perturbation_type != PerturbationType::ER)
      throw ValidationError("entity perturbation record must have perturbation_type ER");
  } else if (!record.generator_id) {
    throw ValidationError("macnoise perturbation record lacks a generator_id");
  }
}

void validate(const Document& doc) {
  if (doc.rank < 1) throw ValidationError("document '" + doc.doc_id + "' has non-positive rank");
  if (doc.perturbed != doc.record.has_value())
    throw ValidationError("document '" + doc.doc_id + "': perturbed flag and record presence disagree");
  if (doc.record) validate(*doc.record);
}

void validate(const RetrievedSet& set, std::size_t max_docs) {
  if (set.documents.empty()) throw ValidationError("retrieved set '" + set.question_id + "' is empty");
  if (max_docs != 0 && set.documents.size() > max_docs)
    throw ValidationError("retrieved set '" + set.question_id + "' exceeds the document limit");
  for (std::size_t i = 0; i < set.documents.size(); ++i) {
    validate(set.documents[i]);
    if (set.documents[i].rank != static_cast<int>(i + 1))
      throw ValidationError("retrieved set '" + set.question_id + "' ranks are not contiguous from 1");
  }
}

json to_json(const QAInstance& instance) {
  return json{{"id", instance.id},
              {"question", instance.question},
              {"answers", instance.answers},
              {"answer_type", std::string(to_string(instance.answer_type))}};
}

json to_json(const Document& doc, std::string_view question_id, bool labeled) {
  json j{{"question_id", question_id}, {"rank", doc.rank}, {"doc_id", doc.doc_id},
         {"title", doc.title},         {"text", doc.text}};
  if (labeled) {
    j["perturbed"] = doc.perturbed;
    if (doc.record) {
      const auto& r = *doc.record;
      j["record"] = json{
          {"method", std::string(to_string(r.method))},
          {"original_answer", r.original_answer},
          {"replacement", optional_string(r.replacement)},
          {"perturbation_type",
           r.perturbation_type ? json(std::string(to_string(*r.perturbation_type))) : json(nullptr)},
          {"generator_id", optional_string(r.generator_id)}};
    } else {
      j["record"] = nullptr;
    }
  }
  return j;
}

QAInstance qa_instance_from_json(const json& j) {
  QAInstance q;
  q.id = j.at("id").get<std::string>();
  q.question = j.at("question").get<std::string>();
  q.answers = j.at("answers").get<std::vector<std::string>>();
  q.answer_type = parse_answer_type(j.value("answer_type", std::string("NA")));
  validate(q);
  return q;
}

std::vector<QAInstance> load_qa_dataset(const std::filesystem::path& path) {
  std::vector<QAInstance> out;
  for_each_record(path, [&](const json& j, std::size_t) {
    if (is_meta(j)) return;
    out.push_back(qa_instance_from_json(j));
  });
  return out;
}

void write_qa_dataset(const std::filesystem::path& path, const std::vector<QAInstance>& instances) {
  auto out = open_for_write(path);
  for (const auto& q : instances) {
    validate(q);
    out << to_json(q).dump() << '\n';
  }
  finish(out, path);
}

std::map<std::string, RetrievedSet> load_retrievals(const std::filesystem::path& path,
                                                    std::size_t top_k) {
  if (top_k == 0) throw PreconditionError("top_k must be at least 1");
  std::map<std::string, RetrievedSet> out;
  for (auto& set : read_document_records(path, nullptr)) {
    if (set.documents.size() > top_k) set.documents.resize(top_k);
    validate(set);
    out.emplace(set.question_id, std::move(set));
  }
  return out;
}

void write_retrievals(const std::filesystem::path& path, const std::vector<RetrievedSet>& sets) {
  auto out = open_for_write(path);
  for (const auto& set : sets) {
    validate(set);
    for (const auto& d : set.documents) out << to_json(d, set.question_id, false).dump() << '\n';
  }
  finish(out, path);
}

void write_labeled_split(const std::filesystem::path& path, const std::vector<RetrievedSet>& sets,
                         std::int64_t seed, const std::map<std::string, std::string>& generators) {
  for (const auto& set : sets) validate(set);
  auto out = open_for_write(path);
  json meta{{"type", "meta"}, {"format", "labeled"}, {"seed", seed}, {"generators", generators}};
  out << meta.dump() << '\n';
  for (const auto& set : sets)
    for (const auto& d : set.documents) out << to_json(d, set.question_id, true).dump() << '\n';
  finish(out, path);
}

LabeledSplit load_labeled_split(const std::filesystem::path& path) {
  LabeledSplit split;
  split.sets = read_document_records(path, &split.meta);
  for (const auto& set : split.sets) validate(set);
  return split;
}

std::map<std::string, const QAInstance*> index_by_id(const std::vector<QAInstance>& instances) {
  std::map<std::string, const QAInstance*> out;
  for (const auto& q : instances) out.emplace(q.id, &q);
  return out;
}

}  // namespace conflictqa
