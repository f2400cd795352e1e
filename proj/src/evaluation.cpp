#include "conflictqa/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "conflictqa/errors.hpp"

namespace conflictqa {

std::string normalize_answer(std::string_view text) {
  std::string lowered;
  lowered.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) continue;
    lowered.push_back(static_cast<char>(std::tolower(u)));
  }
  std::istringstream words(lowered);
  std::string out, w;
  while (words >> w) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

int exact_match(std::string_view prediction, const std::vector<std::string>& gold_answers) {
  const auto p = normalize_answer(prediction);
  return std::any_of(gold_answers.begin(), gold_answers.end(),
                     [&](const std::string& g) { return normalize_answer(g) == p; })
             ? 1
             : 0;
}

double round_half_even(double value, int digits) {
  const double scale = std::pow(10.0, digits);
  return std::nearbyint(value * scale) / scale;
}

double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

ClassificationMetrics discriminator_metrics(const std::vector<bool>& decisions, const std::vector<bool>& labels) {
  if (decisions.size() != labels.size()) throw PreconditionError("decisions and labels differ in length");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (decisions[i] && labels[i]) ++tp;
    if (decisions[i] && !labels[i]) ++fp;
    if (!decisions[i] && labels[i]) ++fn;
  }
  ClassificationMetrics m;
  m.precision = tp + fp ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = f1_score(m.precision, m.recall);
  return m;
}

nlohmann::json StabilityReport::to_json() const {
  return {{"best", best}, {"average", average}, {"worst", worst}, {"ensemble_em", ensemble_em}};
}

StabilityReport stability(const std::vector<double>& per_iteration_ems, double ensemble_em) {
  if (per_iteration_ems.empty()) throw PreconditionError("stability needs at least one iteration");
  StabilityReport r;
  r.best = *std::max_element(per_iteration_ems.begin(), per_iteration_ems.end());
  r.worst = *std::min_element(per_iteration_ems.begin(), per_iteration_ems.end());
  r.average = std::accumulate(per_iteration_ems.begin(), per_iteration_ems.end(), 0.0) /
              static_cast<double>(per_iteration_ems.size());
  // Summation rounding must not break worst <= average <= best.
  r.average = std::clamp(r.average, r.worst, r.best);
  r.ensemble_em = ensemble_em;
  return r;
}

LevelResult evaluate_split(EvaluatedSystem& system, const std::vector<QAInstance>& instances,
                           const std::vector<RetrievedSet>& sets) {
  const auto index = index_by_id(instances);
  std::size_t n = 0, correct = 0;
  std::vector<bool> decisions, labels;
  bool have_disc = false;
  for (const auto& set : sets) {
    auto it = index.find(set.question_id);
    if (it == index.end()) continue;
    const auto out = system.run(*it->second, set);
    ++n;
    correct += static_cast<std::size_t>(exact_match(out.answer, it->second->answers));
    if (out.disc_decisions) {
      if (out.disc_decisions->size() != set.documents.size())
        throw ValidationError("system '" + system.name() + "' returned the wrong number of decisions");
      have_disc = true;
      for (std::size_t m = 0; m < set.documents.size(); ++m) {
        decisions.push_back((*out.disc_decisions)[m]);
        labels.push_back(set.documents[m].perturbed);
      }
    }
  }
  LevelResult r;
  r.em = n ? 100.0 * static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  if (have_disc) r.disc = discriminator_metrics(decisions, labels);
  return r;
}

std::optional<double> SweepRow::average() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& c : cells) {
    if (!c) continue;
    sum += c->em;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

const SweepRow* SweepTable::row(std::string_view system) const {
  for (const auto& r : rows)
    if (r.system == system) return &r;
  return nullptr;
}

std::vector<std::optional<double>> SweepTable::deltas(std::string_view system) const {
  const SweepRow* s = row(system);
  const SweepRow* b = row(baseline);
  std::vector<std::optional<double>> out(levels.size() + 1);
  if (!s || !b) return out;
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (s->cells[i] && b->cells[i]) out[i] = s->cells[i]->em - b->cells[i]->em;
  const auto sa = s->average(), ba = b->average();
  if (sa && ba) out[levels.size()] = *sa - *ba;
  return out;
}

SweepTable sweep(const std::vector<EvaluatedSystem*>& systems, const std::vector<QAInstance>& instances,
                 const std::vector<EvalSplit>& splits, std::string baseline, const CellCallback& on_cell) {
  SweepTable table;
  for (const auto& s : splits) table.levels.push_back(s.level);
  for (auto* system : systems) {
    SweepRow row{system->name(), {}};
    for (const auto& split : splits) {
      try {
        row.cells.emplace_back(evaluate_split(*system, instances, split.sets));
      } catch (const std::exception& e) {
        spdlog::warn("system '{}' failed on level {}: {}", system->name(), split.level, e.what());
        row.cells.emplace_back(std::nullopt);
      }
      if (on_cell) on_cell(*system, split, row.cells.back());
    }
    table.rows.push_back(std::move(row));
  }
  table.baseline = baseline.empty() && !systems.empty() ? systems.front()->name() : std::move(baseline);
  return table;
}

std::string format_percent(double value) { return fmt::format("{:.2f}", round_half_even(value, 2)); }

std::string format_delta(double value) {
  const double r = round_half_even(value, 2);
  return fmt::format("{}{:.2f}", r >= 0.0 ? "+" : "-", std::fabs(r));
}

std::string render_text(const SweepTable& table) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"System"};
  header.insert(header.end(), table.levels.begin(), table.levels.end());
  header.push_back("Avg.");
  grid.push_back(header);
  for (const auto& row : table.rows) {
    std::vector<std::string> line{row.system};
    for (const auto& c : row.cells) line.push_back(c ? format_percent(c->em) : "-");
    const auto avg = row.average();
    line.push_back(avg ? format_percent(*avg) : "-");
    grid.push_back(line);
  }
  for (const auto& row : table.rows) {
    if (row.system == table.baseline) continue;
    std::vector<std::string> line{"  delta " + row.system};
    for (const auto& d : table.deltas(row.system)) line.push_back(d ? format_delta(*d) : "-");
    grid.push_back(line);
  }

  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::string out;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t i = 0; i < grid[r].size(); ++i) {
      if (i == 0)
        out += fmt::format("{:<{}}", grid[r][i], width[i]);
      else
        out += fmt::format("  {:>{}}", grid[r][i], width[i]);
    }
    out += '\n';
    if (r == 0) out += std::string(out.size() - 1, '-') + '\n';
  }
  return out;
}

nlohmann::json to_json(const SweepTable& table) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(round_half_even(*v)) : nlohmann::json(nullptr); };
  nlohmann::json out = nlohmann::json::array();
  for (const auto& row : table.rows) {
    const auto deltas = table.deltas(row.system);
    const bool is_baseline = row.system == table.baseline;
    for (std::size_t i = 0; i <= table.levels.size(); ++i) {
      const bool avg = i == table.levels.size();
      std::optional<double> em = avg ? row.average() : (row.cells[i] ? std::optional(row.cells[i]->em) : std::nullopt);
      std::optional<double> p, r, f;
      if (!avg && row.cells[i] && row.cells[i]->disc) {
        p = row.cells[i]->disc->precision;
        r = row.cells[i]->disc->recall;
        f = row.cells[i]->disc->f1;
      }
      out.push_back({{"system", row.system},
                     {"level", avg ? std::string("Avg.") : table.levels[i]},
                     {"em", opt(em)},
                     {"precision", opt(p)},
                     {"recall", opt(r)},
                     {"f1", opt(f)},
                     {"delta", is_baseline ? nlohmann::json(nullptr) : opt(deltas[i])}});
    }
  }
  return out;
}

std::string render_csv(const SweepTable& table) {
  std::string out = "system,level,em,precision,recall,f1,delta\n";
  auto cell = [](const nlohmann::json& v) { return v.is_null() ? std::string() : format_percent(v.get<double>()); };
  for (const auto& rec : to_json(table)) {
    out += fmt::format("{},{},{},{},{},{},{}\n", rec["system"].get<std::string>(), rec["level"].get<std::string>(),
                       cell(rec["em"]), cell(rec["precision"]), cell(rec["recall"]), cell(rec["f1"]),
                       rec["delta"].is_null() ? std::string() : format_delta(rec["delta"].get<double>()));
  }
  return out;
}

}  // namespace conflictqa
