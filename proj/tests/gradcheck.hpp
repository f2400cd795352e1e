#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "conflictqa/reader/losses.hpp"
#include "conflictqa/reader/model.hpp"
#include "conflictqa/rng.hpp"

namespace conflictqa::testing {

using namespace conflictqa::reader;

// Relative error with an absolute floor, so near-zero gradients are compared on an absolute scale.
inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

inline std::vector<bool> random_labels(Rng& rng, std::size_t m, bool need_positive) {
  std::vector<bool> labels(m);
  for (std::size_t i = 0; i < m; ++i) labels[i] = rng.bernoulli(0.4);
  if (need_positive) labels[rng.below(m)] = true;
  return labels;
}

inline Matrix column(const std::vector<double>& v) {
  Matrix m(v.size(), 1);
  m.data = v;
  return m;
}

// Tiny reader: E = 8, T = 6, M = 3, vocabulary of 12 tokens.
struct TinyInstance {
  ReaderConfig config;
  Vocabulary vocab;
  ModelInput input;
  std::vector<bool> labels;
  std::vector<int> target;
};

inline TinyInstance tiny_instance(std::uint64_t seed, LossFlags flags, ContraScore score = ContraScore::Logit) {
  Rng rng(seed);
  TinyInstance inst;
  inst.vocab = Vocabulary::build({{"a", "b", "c", "d", "e", "f", "g"}}, 12);
  inst.config.vocab_size = inst.vocab.size();
  inst.config.embed_dim = 8;
  inst.config.ffn_dim = 8;
  inst.config.num_heads = 2;
  inst.config.max_seq_len = 6;
  inst.config.num_docs = 3;
  inst.config.max_answer_len = 2;
  inst.config.loss = flags;
  inst.config.contra_score = score;
  inst.config.seed = seed;
  const std::size_t m = 1 + rng.below(3);
  for (std::size_t d = 0; d < m; ++d) {
    std::vector<int> ids(6, kPad);
    const std::size_t len = 2 + rng.below(5);
    for (std::size_t i = 0; i < len; ++i) ids[i] = static_cast<int>(kNumSpecial + rng.below(inst.vocab.size() - kNumSpecial));
    inst.input.docs.push_back(ids);
  }
  inst.labels = random_labels(rng, m, flags.use_contra);
  inst.target = {static_cast<int>(kNumSpecial + rng.below(7)), kEos};
  return inst;
}

// Checks analytic parameter gradients of `build` against central differences. Returns the worst error.
inline double check_model_gradients(ReaderModel& model, const std::function<Var(Tape&)>& build) {
  model.zero_grad();
  {
    Tape t;
    t.backward(build(t));
  }
  double worst = 0.0;
  for (Parameter* p : model.parameters()) {
    const Matrix analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data[i];
      auto at = [&](double offset) {
        p->value.data[i] = keep + offset;
        Tape t;
        return t.value(build(t)).data[0];
      };
      // Five-point stencil: truncation and rounding both stay near 1e-11.
      const double h = 1e-4;
      const double numeric = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
      p->value.data[i] = keep;
      const double a = analytic.size() ? analytic.data[i] : 0.0;
      worst = std::max(worst, rel_error(a, numeric));
    }
  }
  return worst;
}

}  // namespace conflictqa::testing
