#pragma once

#include <vector>

#include "conflictqa/reader/autodiff.hpp"

namespace conflictqa::reader {

inline constexpr double kLossEpsilon = 1e-12;

enum class ContraScore { Logit, Probability };

struct LossFlags {
  bool use_bce = true;
  bool use_contra = true;
  bool operator==(const LossFlags&) const = default;
};

struct LossBreakdown {
  double l_qa = 0.0;
  double l_bce = 0.0;
  double l_contra = 0.0;
  double total = 0.0;
};

// -sum_t log p_t(y_t); probabilities below `eps` are clamped and reported through `clamped`.
double qa_loss(const std::vector<std::vector<double>>& step_distributions, const std::vector<int>& target,
               double eps = kLossEpsilon, bool* clamped = nullptr);

// Mean binary cross-entropy; probabilities are clamped to [eps, 1 - eps].
double bce_loss(const std::vector<double>& probs, const std::vector<bool>& labels, double eps = kLossEpsilon);

// -log(sum_{perturbed} exp(s) / sum_{all} exp(s)) with max subtraction. 0 when nothing is perturbed.
double contrastive_loss(const std::vector<double>& scores, const std::vector<bool>& labels);

// total = l_qa + l_bce [use_bce] + l_contra [use_contra]
LossBreakdown combine(double l_qa, double l_bce, double l_contra, const LossFlags& flags);

// Tape versions. Each returns a 1x1 node.
// logits: steps x V, one row per target token.
Var cross_entropy(Tape& t, Var logits, const std::vector<int>& target, double eps = kLossEpsilon,
                  bool* clamped = nullptr);
// logits: M x 1.
Var bce_with_logits(Tape& t, Var logits, const std::vector<bool>& labels, double eps = kLossEpsilon);
// scores: M x 1. With no perturbed label the node is the constant 0 and passes no gradient.
Var contrastive(Tape& t, Var scores, const std::vector<bool>& labels);

}  // namespace conflictqa::reader
