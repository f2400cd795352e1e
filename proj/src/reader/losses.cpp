#include "conflictqa/reader/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace conflictqa::reader {

double qa_loss(const std::vector<std::vector<double>>& step_distributions, const std::vector<int>& target,
               double eps, bool* clamped) {
  if (step_distributions.size() != target.size()) throw std::invalid_argument("qa_loss: length mismatch");
  double loss = 0.0;
  for (std::size_t s = 0; s < target.size(); ++s) {
    double p = step_distributions[s].at(static_cast<std::size_t>(target[s]));
    if (p < eps) {
      p = eps;
      if (clamped) *clamped = true;
    }
    loss -= std::log(p);
  }
  return loss;
}

double bce_loss(const std::vector<double>& probs, const std::vector<bool>& labels, double eps) {
  if (probs.size() != labels.size() || probs.empty()) throw std::invalid_argument("bce_loss: bad sizes");
  double loss = 0.0;
  for (std::size_t m = 0; m < probs.size(); ++m) {
    const double p = std::clamp(probs[m], eps, 1.0 - eps);
    loss -= labels[m] ? std::log(p) : std::log(1.0 - p);
  }
  return loss / static_cast<double>(probs.size());
}

namespace {

// log(sum exp(s_m - max)) over the selected entries, and the shared max.
double shifted_logsumexp(const std::vector<double>& s, const std::vector<bool>& mask, double mx) {
  double z = 0.0;
  for (std::size_t m = 0; m < s.size(); ++m)
    if (mask[m]) z += std::exp(s[m] - mx);
  return std::log(z);
}

}  // namespace

double contrastive_loss(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size() || scores.empty()) throw std::invalid_argument("contrastive_loss: bad sizes");
  if (std::none_of(labels.begin(), labels.end(), [](bool b) { return b; })) return 0.0;
  const double mx = *std::max_element(scores.begin(), scores.end());
  const std::vector<bool> all(scores.size(), true);
  const double loss = shifted_logsumexp(scores, all, mx) - shifted_logsumexp(scores, labels, mx);
  return std::max(0.0, loss);
}

LossBreakdown combine(double l_qa, double l_bce, double l_contra, const LossFlags& flags) {
  LossBreakdown b{l_qa, l_bce, l_contra, l_qa};
  if (flags.use_bce) b.total += l_bce;
  if (flags.use_contra) b.total += l_contra;
  return b;
}

Var cross_entropy(Tape& t, Var logits, const std::vector<int>& target, double eps, bool* clamped) {
  const auto& z = t.value(logits);
  if (z.rows != target.size()) throw std::invalid_argument("cross_entropy: row/target mismatch");
  Matrix probs(z.rows, z.cols);
  std::vector<char> clipped(z.rows, 0);
  double loss = 0.0;
  for (std::size_t r = 0; r < z.rows; ++r) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < z.cols; ++c) mx = std::max(mx, z(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < z.cols; ++c) sum += (probs(r, c) = std::exp(z(r, c) - mx));
    for (std::size_t c = 0; c < z.cols; ++c) probs(r, c) /= sum;
    const auto y = static_cast<std::size_t>(target[r]);
    double logp = z(r, y) - mx - std::log(sum);
    if (logp < std::log(eps)) {
      logp = std::log(eps);
      clipped[r] = 1;
      if (clamped) *clamped = true;
    }
    loss -= logp;
  }
  return t.push(Matrix(1, 1, loss), [logits, target, probs = std::move(probs), clipped = std::move(clipped)](
                                        Tape& t, std::size_t self) {
    const double g = t.grad(Var{self}).data[0];
    auto& gz = t.grad_ref(logits);
    for (std::size_t r = 0; r < probs.rows; ++r) {
      if (clipped[r]) continue;
      for (std::size_t c = 0; c < probs.cols; ++c) gz(r, c) += g * probs(r, c);
      gz(r, static_cast<std::size_t>(target[r])) -= g;
    }
  });
}

Var bce_with_logits(Tape& t, Var logits, const std::vector<bool>& labels, double eps) {
  const auto& z = t.value(logits);
  if (z.size() != labels.size() || labels.empty()) throw std::invalid_argument("bce_with_logits: bad sizes");
  std::vector<double> probs(z.size());
  for (std::size_t m = 0; m < z.size(); ++m) probs[m] = 1.0 / (1.0 + std::exp(-z.data[m]));
  const double loss = bce_loss(probs, labels, eps);
  return t.push(Matrix(1, 1, loss), [logits, labels, probs, eps](Tape& t, std::size_t self) {
    const double g = t.grad(Var{self}).data[0];
    auto& gz = t.grad_ref(logits);
    const double inv = 1.0 / static_cast<double>(probs.size());
    for (std::size_t m = 0; m < probs.size(); ++m) {
      if (probs[m] < eps || probs[m] > 1.0 - eps) continue;
      gz.data[m] += g * inv * (probs[m] - (labels[m] ? 1.0 : 0.0));
    }
  });
}

Var contrastive(Tape& t, Var scores, const std::vector<bool>& labels) {
  const auto& s = t.value(scores);
  if (s.size() != labels.size() || labels.empty()) throw std::invalid_argument("contrastive: bad sizes");
  if (std::none_of(labels.begin(), labels.end(), [](bool b) { return b; })) return t.constant(Matrix(1, 1, 0.0));
  const double loss = contrastive_loss(s.data, labels);
  const double mx = *std::max_element(s.data.begin(), s.data.end());
  std::vector<double> e(s.size());
  double z_all = 0.0, z_pos = 0.0;
  for (std::size_t m = 0; m < s.size(); ++m) {
    e[m] = std::exp(s.data[m] - mx);
    z_all += e[m];
    if (labels[m]) z_pos += e[m];
  }
  return t.push(Matrix(1, 1, loss), [scores, labels, e, z_all, z_pos](Tape& t, std::size_t self) {
    const double g = t.grad(Var{self}).data[0];
    auto& gs = t.grad_ref(scores);
    for (std::size_t m = 0; m < e.size(); ++m)
      gs.data[m] += g * (e[m] / z_all - (labels[m] ? e[m] / z_pos : 0.0));
  });
}

}  // namespace conflictqa::reader
