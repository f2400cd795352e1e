#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "conflictqa/corpus.hpp"
#include "conflictqa/entity_perturber.hpp"
#include "conflictqa/errors.hpp"
#include "conflictqa/evaluation.hpp"
#include "conflictqa/reader/model.hpp"

namespace conflictqa::reader {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;     // means over the epoch's examples
  bool operator==(const EpochRecord& o) const {
    return epoch == o.epoch && loss.l_qa == o.loss.l_qa && loss.l_bce == o.loss.l_bce &&
           loss.l_contra == o.loss.l_contra && loss.total == o.loss.total;
  }
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::size_t step, std::string component, double max_grad_norm);
  std::size_t step() const { return step_; }
  const std::string& component() const { return component_; }
  double max_grad_norm() const { return max_grad_norm_; }

 private:
  std::size_t step_;
  std::string component_;
  double max_grad_norm_;
};

// One labeled split with the questions it refers to. Several are trained on as one mixture.
struct TrainingData {
  std::vector<QAInstance> instances;
  std::vector<RetrievedSet> sets;
};

// Per-epoch entity re-perturbation of the training documents.
struct Resampling {
  EntityPools pools;
  double probability = 0.75;
  // Epoch e <= warmup_epochs uses probability * (e - 1) / warmup_epochs.
  std::size_t warmup_epochs = 0;

  double probability_at(std::size_t epoch) const;
};

struct TrainOptions {
  std::optional<Resampling> resampling;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ReaderModel model;
  std::vector<EpochRecord> history;
};

// Tokens of every question, document, answer and pool entity.
Vocabulary build_vocabulary(const std::vector<TrainingData>& data, const std::optional<Resampling>& resampling,
                            std::size_t max_size);

// Deterministic given config.seed. Throws NonFiniteLossError on NaN/inf losses or gradients.
TrainResult train(const ReaderConfig& config, const std::vector<TrainingData>& data, const TrainOptions& options = {});
// Continues from an existing model (0 epochs leaves it untouched).
std::vector<EpochRecord> train_model(ReaderModel& model, const std::vector<TrainingData>& data,
                                     const TrainOptions& options = {});

// AdamW update of every parameter from its accumulated gradient (already averaged).
void adamw_step(ReaderModel& model, std::size_t step, double lr, double weight_decay);

double global_grad_norm(const ReaderModel& model);
double max_param_grad_norm(const ReaderModel& model);

// "epoch,l_qa,l_bce,l_contra,total"
std::string history_csv(const std::vector<EpochRecord>& history);
void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

// Adapter for the evaluation harness.
class ReaderSystem final : public EvaluatedSystem {
 public:
  ReaderSystem(ReaderModel& model, std::string name, bool report_disc = true)
      : model_(model), name_(std::move(name)), report_disc_(report_disc) {}
  std::string name() const override { return name_; }
  SystemOutput run(const QAInstance& instance, const RetrievedSet& docs) override;

 private:
  ReaderModel& model_;
  std::string name_;
  bool report_disc_;
};

}  // namespace conflictqa::reader
