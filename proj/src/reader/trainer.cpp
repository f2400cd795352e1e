#include "conflictqa/reader/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "conflictqa/hashing.hpp"
#include "conflictqa/rng.hpp"

namespace conflictqa::reader {

NonFiniteLossError::NonFiniteLossError(std::size_t step, std::string component, double max_grad_norm)
    : Error(fmt::format("non-finite {} at step {} (max parameter gradient norm {})", component, step, max_grad_norm)),
      step_(step),
      component_(std::move(component)),
      max_grad_norm_(max_grad_norm) {}

Vocabulary build_vocabulary(const std::vector<TrainingData>& data, const std::optional<Resampling>& resampling,
                            std::size_t max_size) {
  std::vector<std::vector<std::string>> corpus;
  for (const auto& d : data) {
    for (const auto& q : d.instances) {
      corpus.push_back(tokenize(q.question));
      for (const auto& a : q.answers) corpus.push_back(tokenize(a));
    }
    for (const auto& s : d.sets)
      for (const auto& doc : s.documents) {
        corpus.push_back(tokenize(doc.title));
        corpus.push_back(tokenize(doc.text));
      }
  }
  if (resampling)
    for (const auto& [type, pool] : resampling->pools.pools)
      for (const auto& e : pool) corpus.push_back(tokenize(e));
  return Vocabulary::build(corpus, max_size);
}

double Resampling::probability_at(std::size_t epoch) const {
  if (epoch > warmup_epochs || warmup_epochs == 0) return probability;
  return probability * static_cast<double>(epoch - 1) / static_cast<double>(warmup_epochs);
}

double global_grad_norm(const ReaderModel& model) {
  double s = 0.0;
  for (const auto* p : model.parameters())
    for (double g : p->grad.data) s += g * g;
  return std::sqrt(s);
}

double max_param_grad_norm(const ReaderModel& model) {
  double best = 0.0;
  for (const auto* p : model.parameters()) {
    double s = 0.0;
    for (double g : p->grad.data) s += g * g;
    best = std::max(best, std::sqrt(s));
  }
  return best;
}

void adamw_step(ReaderModel& model, std::size_t step, double lr, double weight_decay) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (auto* p : model.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad.data[i];
      double& m = p->adam_m.data[i];
      double& v = p->adam_v.data[i];
      m = b1 * m + (1.0 - b1) * g;
      v = b2 * v + (1.0 - b2) * g * g;
      double update = (m / c1) / (std::sqrt(v / c2) + eps);
      if (p->decay) update += weight_decay * p->value.data[i];
      p->value.data[i] -= lr * update;
    }
  }
}

namespace {

struct Example {
  const QAInstance* instance;
  const RetrievedSet* set;
};

void scale_grads(ReaderModel& model, double s) {
  for (auto* p : model.parameters())
    for (double& g : p->grad.data) g *= s;
}

}  // namespace

std::vector<EpochRecord> train_model(ReaderModel& model, const std::vector<TrainingData>& data,
                                     const TrainOptions& options) {
  const auto& config = model.config();
  std::vector<EpochRecord> history;
  if (config.epochs == 0) return history;
  if (data.empty()) throw PreconditionError("no training data");

  std::vector<std::map<std::string, const QAInstance*>> indexes;
  for (const auto& d : data) indexes.push_back(index_by_id(d.instances));

  const std::size_t accumulate = config.batch_size * config.grad_accumulation;
  std::size_t step = 0, seen = 0, pending = 0;
  model.zero_grad();

  auto apply_update = [&] {
    if (pending == 0) return;
    scale_grads(model, 1.0 / static_cast<double>(pending));
    const double norm = global_grad_norm(model);
    if (!std::isfinite(norm)) throw NonFiniteLossError(seen, "gradient", max_param_grad_norm(model));
    if (config.grad_clip > 0.0 && norm > config.grad_clip) scale_grads(model, config.grad_clip / norm);
    adamw_step(model, ++step, config.learning_rate, config.weight_decay);
    model.zero_grad();
    pending = 0;
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    // Resampled copies must outlive the epoch's examples.
    std::vector<std::vector<RetrievedSet>> epoch_sets;
    std::vector<Example> examples;
    for (std::size_t d = 0; d < data.size(); ++d) {
      if (options.resampling) {
        const auto seed = derive_seed(config.seed, fmt::format("epoch:{}:data:{}", epoch, d));
        epoch_sets.push_back(resample_for_training(data[d].sets, data[d].instances, options.resampling->pools,
                                                   options.resampling->probability_at(epoch), seed));
      } else {
        epoch_sets.push_back({});
      }
    }
    for (std::size_t d = 0; d < data.size(); ++d) {
      const auto& sets = options.resampling ? epoch_sets[d] : data[d].sets;
      for (const auto& s : sets) {
        auto it = indexes[d].find(s.question_id);
        if (it == indexes[d].end()) throw ValidationError("training set refers to unknown question " + s.question_id);
        examples.push_back({it->second, &s});
      }
    }
    if (examples.empty()) throw PreconditionError("no training examples");
    Rng order_rng(derive_seed(config.seed, fmt::format("order:{}", epoch)));
    order_rng.shuffle(examples);

    LossBreakdown sum;
    for (const auto& ex : examples) {
      const auto input = make_input(model.vocab(), ex.instance->question, *ex.set, config);
      std::vector<bool> labels;
      for (std::size_t m = 0; m < input.docs.size(); ++m) labels.push_back(ex.set->documents[m].perturbed);
      const auto target = make_target(model.vocab(), *ex.instance, config);

      Tape tape;
      const auto lv = model.loss(tape, input, labels, target);
      ++seen;
      const std::pair<const char*, double> parts[] = {
          {"l_qa", lv.values.l_qa}, {"l_bce", lv.values.l_bce}, {"l_contra", lv.values.l_contra}};
      for (const auto& [name, value] : parts)
        if (!std::isfinite(value)) throw NonFiniteLossError(seen, name, max_param_grad_norm(model));
      tape.backward(lv.total);
      sum.l_qa += lv.values.l_qa;
      sum.l_bce += lv.values.l_bce;
      sum.l_contra += lv.values.l_contra;
      if (++pending == accumulate) apply_update();
    }
    apply_update();

    const double n = static_cast<double>(examples.size());
    EpochRecord rec{epoch, combine(sum.l_qa / n, sum.l_bce / n, sum.l_contra / n, config.loss)};
    spdlog::info("epoch {}: l_qa {:.4f} l_bce {:.4f} l_contra {:.4f} total {:.4f}", epoch, rec.loss.l_qa,
                 rec.loss.l_bce, rec.loss.l_contra, rec.loss.total);
    history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return history;
}

TrainResult train(const ReaderConfig& config, const std::vector<TrainingData>& data, const TrainOptions& options) {
  config.validate();
  auto vocab = build_vocabulary(data, options.resampling, config.vocab_size);
  TrainResult result{ReaderModel(config, std::move(vocab)), {}};
  result.history = train_model(result.model, data, options);
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,l_qa,l_bce,l_contra,total\n";
  for (const auto& r : history)
    out += fmt::format("{},{},{},{},{}\n", r.epoch, r.loss.l_qa, r.loss.l_bce, r.loss.l_contra, r.loss.total);
  return out;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << history_csv(history);
}

SystemOutput ReaderSystem::run(const QAInstance& instance, const RetrievedSet& docs) {
  const auto p = model_.predict(instance.question, docs);
  SystemOutput out{p.answer, std::nullopt};
  if (report_disc_) {
    auto decisions = p.decisions;
    decisions.resize(docs.documents.size(), false);  // documents beyond num_docs are never flagged
    out.disc_decisions = std::move(decisions);
  }
  return out;
}

}  // namespace conflictqa::reader
