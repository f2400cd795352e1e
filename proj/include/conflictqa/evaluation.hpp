#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "conflictqa/corpus.hpp"

namespace conflictqa {

// Lowercase, drop ASCII punctuation, drop standalone "a"/"an"/"the", collapse whitespace.
std::string normalize_answer(std::string_view text);

int exact_match(std::string_view prediction, const std::vector<std::string>& gold_answers);

// round-half-even at `digits` decimal places.
double round_half_even(double value, int digits = 2);

struct ClassificationMetrics {
  double precision = 0.0;  // percentages
  double recall = 0.0;
  double f1 = 0.0;
};

double f1_score(double precision, double recall);

// Positive class is "perturbed". Zero denominators yield 0.
ClassificationMetrics discriminator_metrics(const std::vector<bool>& decisions, const std::vector<bool>& labels);

struct StabilityReport {
  double best = 0.0;
  double average = 0.0;
  double worst = 0.0;
  double ensemble_em = 0.0;

  nlohmann::json to_json() const;
};

StabilityReport stability(const std::vector<double>& per_iteration_ems, double ensemble_em);

// What a system produces for one question.
struct SystemOutput {
  std::string answer;
  std::optional<std::vector<bool>> disc_decisions;  // one per document, in rank order
};

class EvaluatedSystem {
 public:
  virtual ~EvaluatedSystem() = default;
  virtual std::string name() const = 0;
  virtual SystemOutput run(const QAInstance& instance, const RetrievedSet& docs) = 0;
};

struct EvalSplit {
  std::string level;  // e.g. "15%"
  std::vector<RetrievedSet> sets;
};

struct LevelResult {
  double em = 0.0;
  std::optional<ClassificationMetrics> disc;
};

// EM over every set whose question is known; disc metrics when the system emits decisions.
LevelResult evaluate_split(EvaluatedSystem& system, const std::vector<QAInstance>& instances,
                           const std::vector<RetrievedSet>& sets);

struct SweepRow {
  std::string system;
  std::vector<std::optional<LevelResult>> cells;  // missing when the system failed on that split
  std::optional<double> average() const;
};

struct SweepTable {
  std::vector<std::string> levels;
  std::vector<SweepRow> rows;
  std::string baseline;

  const SweepRow* row(std::string_view system) const;
  // Signed gain over the baseline for each level plus the average; nullopt where a cell is missing.
  std::vector<std::optional<double>> deltas(std::string_view system) const;
};

// Evaluates every system on every split. A system throwing on a split leaves that cell empty.
// `baseline` defaults to the first system. `on_cell` runs after each cell, in row-major order.
using CellCallback = std::function<void(EvaluatedSystem&, const EvalSplit&, const std::optional<LevelResult>&)>;
SweepTable sweep(const std::vector<EvaluatedSystem*>& systems, const std::vector<QAInstance>& instances,
                 const std::vector<EvalSplit>& splits, std::string baseline = {}, const CellCallback& on_cell = {});

std::string format_percent(double value);
std::string format_delta(double value);

std::string render_text(const SweepTable& table);
// Array of {system, level, em, precision, recall, f1, delta}; the "Avg." level carries the row mean.
nlohmann::json to_json(const SweepTable& table);
std::string render_csv(const SweepTable& table);

}  // namespace conflictqa
