// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "conflictqa/entity_perturber.hpp"
#include "conflictqa/evaluation.hpp"
#include "conflictqa/generation.hpp"
#include "conflictqa/hashing.hpp"
#include "conflictqa/macnoise.hpp"
#include "conflictqa/prompting.hpp"
#include "conflictqa/reader/losses.hpp"
#include "conflictqa/reader/trainer.hpp"
#include "conflictqa/synthetic.hpp"
#include "gradcheck.hpp"
#include "metric_cases.hpp"
#include "perturb_cases.hpp"
#include "prompt_fixture.hpp"
#include "test_util.hpp"

using namespace conflictqa;
using namespace conflictqa::reader;
using conflictqa::testing::data_path;
using conflictqa::testing::read_file;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_seconds;
  std::function<Outcome()> run;
};

// ---- 1 ----

Outcome perturbation_rate_mapping() {
  SyntheticOptions o;
  o.num_subjects = synthetic_max_subjects();
  const auto c = make_synthetic_corpus(o);
  const auto pools = build_entity_pools(c.instances);
  const double targets[] = {15.0, 25.0, 35.0};
  const double probs[] = {0.3, 0.5, 0.75};
  bool pass = true;
  std::string levels;
  PerturbationReport first;
  for (int i = 0; i < 3; ++i) {
    const auto split = perturb_split(c.sets, c.instances, pools, probs[i], 7);
    const double pct = 100.0 * split.report.perturbed_fraction();
    pass = pass && std::abs(pct - targets[i]) <= 2.0;
    levels += fmt::format("{}p={} -> {:.2f}%", i ? ", " : "", probs[i], pct);
    if (i == 0) first = split.report;
  }
  const double perturbable = 100.0 * static_cast<double>(first.perturbable) / static_cast<double>(first.total_documents);
  pass = pass && first.total_documents >= 5000 && std::abs(perturbable - 48.0) <= 2.0;
  return {pass, fmt::format("{} docs, {:.1f}% perturbable; {}", first.total_documents, perturbable, levels)};
}

// ---- 2 ----

Outcome perturber_invariants() {
  const auto t = testing::perturb_cases::run_invariant_suite(250, 1000);
  return {t.cases >= 200 && t.violations == 0 && t.perturbed_docs > 0,
          fmt::format("{} cases, {} perturbed docs, {} violations", t.cases, t.perturbed_docs, t.violations)};
}

// ---- 3 ----

Outcome loss_correctness() {
  int closed_fail = 0;
  auto close = [&](double got, double want) { closed_fail += std::abs(got - want) <= 1e-9 ? 0 : 1; };
  for (std::size_t v : {2u, 4u, 7u, 50u}) {
    const std::vector<double> u(v, 1.0 / static_cast<double>(v));
    close(qa_loss({u, u, u}, {0, 1, 1}), 3 * std::log(static_cast<double>(v)));
  }
  close(bce_loss({0.5, 0.5, 0.5, 0.5}, {true, false, true, false}), std::log(2.0));
  close(contrastive_loss({0.3, 0.3}, {true, false}), std::log(2.0));
  close(contrastive_loss({1.0, -2.0, 5.0, 0.5, 0.0}, {true, true, true, true, true}), 0.0);

  // Shift invariance on dyadic values, where every subtraction is exact.
  Rng rng(5);
  int shift_fail = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = 1 + rng.below(6);
    std::vector<double> s(m), shifted(m);
    const double c = static_cast<double>(static_cast<int>(rng.below(2001)) - 1000) / 8.0;
    for (std::size_t i = 0; i < m; ++i) {
      s[i] = static_cast<double>(static_cast<int>(rng.below(81)) - 40) / 16.0;
      shifted[i] = s[i] + c;
    }
    const auto labels = testing::random_labels(rng, m, true);
    shift_fail += contrastive_loss(shifted, labels) == contrastive_loss(s, labels) ? 0 : 1;
  }

  double worst = 0.0;
  const std::uint64_t instances = 24;
  for (std::uint64_t seed = 1; seed <= instances; ++seed) {
    const auto score = seed % 2 ? ContraScore::Logit : ContraScore::Probability;
    auto inst = testing::tiny_instance(seed, {true, true}, score);
    ReaderModel model(inst.config, inst.vocab);
    std::vector<int> dec_in{kBos};
    dec_in.insert(dec_in.end(), inst.target.begin(), inst.target.end() - 1);
    worst = std::max(worst, testing::check_model_gradients(model, [&](Tape& t) {
      return cross_entropy(t, *model.forward(t, inst.input, dec_in).decoder_logits, inst.target);
    }));
    worst = std::max(worst, testing::check_model_gradients(model, [&](Tape& t) {
      return bce_with_logits(t, model.forward(t, inst.input).disc_logits, inst.labels);
    }));
    worst = std::max(worst, testing::check_model_gradients(model, [&](Tape& t) {
      const Var z = model.forward(t, inst.input).disc_logits;
      return contrastive(t, score == ContraScore::Logit ? z : sigmoid(t, z), inst.labels);
    }));
  }
  return {closed_fail == 0 && shift_fail == 0 && worst <= 1e-4,
          fmt::format("closed-form misses {}, shift misses {}/500, worst gradient rel. error {:.2e} over {} models",
                      closed_fail, shift_fail, worst, instances)};
}

// ---- 4 ----

struct TrendRun {
  double em = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

Outcome trend_reproduction() {
  SyntheticOptions tr;
  tr.num_subjects = 45;
  tr.worlds = 3;
  tr.seed = 11;
  tr.id_prefix = "tr";
  SyntheticOptions te;
  te.num_subjects = 75;
  te.subject_offset = tr.num_subjects;
  te.worlds = 4;
  te.seed = 12;
  te.id_prefix = "te";
  const auto train_c = make_synthetic_corpus(tr);
  const auto test_c = make_synthetic_corpus(te);
  auto all = train_c.instances;
  all.insert(all.end(), test_c.instances.begin(), test_c.instances.end());
  const auto pools = build_entity_pools(all);
  const auto test_split = perturb_split(test_c.sets, test_c.instances, pools, 0.75, 99);
  const double level = 100.0 * test_split.report.perturbed_fraction();

  const std::vector<TrainingData> data{{train_c.instances, train_c.sets}};
  TrainOptions options;
  options.resampling = Resampling{pools, 0.5, 0};
  std::size_t vocab_size = 0;

  auto run = [&](LossFlags flags) {
    ReaderConfig c;
    c.embed_dim = 32;
    c.ffn_dim = 64;
    c.num_heads = 4;
    c.max_seq_len = 24;
    c.max_answer_len = 2;
    c.num_docs = 5;
    c.learning_rate = 1e-3;
    c.grad_accumulation = 1;
    c.epochs = 24;
    c.seed = 42;
    c.loss = flags;
    ReaderModel model(c, build_vocabulary(data, options.resampling, 0));
    vocab_size = model.vocab().size();
    train_model(model, data, options);
    ReaderSystem system(model, "reader");
    const auto r = evaluate_split(system, test_c.instances, test_split.sets);
    return TrendRun{r.em, r.disc ? r.disc->precision : 0.0, r.disc ? r.disc->recall : 0.0};
  };
  const auto qa = run({false, false});
  const auto qa_bce = run({true, false});
  const auto full = run({true, true});

  const bool pass = vocab_size <= 200 && full.em >= qa.em + 5.0 && full.precision >= 90.0 && full.recall >= 50.0;
  return {pass, fmt::format("level {:.1f}%, vocab {}; EM qa {:.2f}, qa+bce {:.2f}, qa+bce+contra {:.2f} ({:+.2f}); "
                            "disc P {:.2f} R {:.2f}",
                            level, vocab_size, qa.em, qa_bce.em, full.em, full.em - qa.em, full.precision,
                            full.recall)};
}

// ---- 5 ----

Outcome metric_fidelity() {
  int f1_fail = 0;
  double worst = 0.0;
  for (const auto& row : testing::metric_cases::kPublishedDiscRows) {
    const double diff = std::abs(f1_score(row.p, row.r) - row.f1);
    worst = std::max(worst, diff);
    f1_fail += diff <= 0.01 ? 0 : 1;
  }
  const auto& pairs = testing::metric_cases::kNormalizationPairs;
  int norm_fail = 0;
  for (const auto& [in, out] : pairs) norm_fail += normalize_answer(in) == out ? 0 : 1;
  return {f1_fail == 0 && norm_fail == 0 && pairs.size() >= 50,
          fmt::format("{} F1 rows, worst |diff| {:.4f}; {} normalization pairs, {} mismatches",
                      testing::metric_cases::kPublishedDiscRows.size(), worst, pairs.size(), norm_fail)};
}

// ---- 6 ----

TokenLogprob answer_token(const std::string& text, double p) {
  return {" " + text, std::log(p), {{" " + text, std::log(p)}}};
}

Outcome ensemble_behavior() {
  // Five one-shot iterations of differing quality, recorded as replay fixtures.
  const std::size_t k = 5, questions = 40;
  const double skill[k] = {0.8, 0.65, 0.5, 0.35, 0.2};
  const std::vector<std::string> wrong{"1821", "1834", "1847", "1859", "1866", "1872", "1888"};
  Rng rng(314);

  std::vector<InContextSample> samples;
  for (std::size_t i = 0; i < k; ++i) {
    InContextSample s;
    s.instance = {"demo-" + std::to_string(i), "demo question " + std::to_string(i), {"1900"}, kEntityTypes[i]};
    s.docs.question_id = s.instance.id;
    for (std::size_t m = 0; m < 5; ++m)
      s.docs.documents.push_back(testing::prompt_fixture::doc("t", "demo text", m < i));
    samples.push_back(std::move(s));
  }
  std::vector<QAInstance> qs;
  std::vector<RetrievedSet> sets;
  std::vector<FixtureRecord> records;
  for (std::size_t q = 0; q < questions; ++q) {
    QAInstance inst{"q" + std::to_string(q), "when did event " + std::to_string(q) + " happen", {"1905"}, AnswerType::DATE};
    RetrievedSet set{inst.id, {}};
    for (std::size_t m = 0; m < 5; ++m)
      set.documents.push_back(testing::prompt_fixture::doc("Event " + std::to_string(q), "context " + std::to_string(m)));
    for (std::size_t i = 0; i < k; ++i) {
      Completion c;
      std::vector<TokenLogprob> tokens;
      if (rng.uniform() < skill[i]) {
        tokens.push_back(answer_token("1905", 0.4 + 0.5 * rng.uniform()));
      } else {
        tokens.push_back(answer_token(wrong[rng.below(wrong.size())], 0.4 + 0.5 * rng.uniform()));
        tokens.front().top.push_back({" 1905", std::log(0.05 + 0.2 * rng.uniform())});
      }
      c.text = tokens.front().token;
      c.token_logprobs = tokens;
      const auto prompt = render_prompt(PromptVariant::SemiParametric, samples[i], inst, set).rendered;
      records.push_back({sha256_hex(prompt), c});
    }
    qs.push_back(inst);
    sets.push_back(set);
  }
  ReplayClient client(records, "ensemble-fixtures");
  PromptingSystem system("semi", client, samples, PromptingOptions{});
  const auto result = evaluate_split(system, qs, sets);
  const auto ems = system.iteration_ems();
  const double mean = std::accumulate(ems.begin(), ems.end(), 0.0) / static_cast<double>(ems.size());
  const auto [lo, hi] = std::minmax_element(ems.begin(), ems.end());

  // Invariance over random candidate configurations.
  const std::string pool[] = {"Paris", "paris", "The Paris", "Lyon", "Nice", "Marseille", "1995", "the 1995"};
  Rng gen(99);
  std::size_t configs = 0, violations = 0;
  for (; configs < 600; ++configs) {
    std::vector<std::vector<CandidateAnswer>> lists(1 + gen.below(5));
    for (auto& l : lists)
      for (std::size_t j = gen.below(4); j > 0; --j) l.push_back({pool[gen.below(std::size(pool))], 0.01 + 0.99 * gen.uniform()});
    if (std::all_of(lists.begin(), lists.end(), [](const auto& l) { return l.empty(); })) lists[0].push_back({"Nice", 0.5});
    const auto base = ensemble_answers(lists);
    auto shuffled = lists;
    gen.shuffle(shuffled);
    const auto perm = ensemble_answers(shuffled);
    const double c = 0.1 + 5.0 * gen.uniform();
    auto scaled = lists;
    for (auto& l : scaled)
      for (auto& cand : l) cand.probability *= c;
    const auto sc = ensemble_answers(scaled);
    if (perm.answer != base.answer || perm.score != base.score) ++violations;
    if (normalize_answer(sc.answer) != normalize_answer(base.answer)) ++violations;
  }
  return {result.em >= mean && *hi > *lo && violations == 0,
          fmt::format("ensemble EM {:.2f} vs iteration mean {:.2f} (range {:.2f}-{:.2f}); {} invariance configs, "
                      "{} violations",
                      result.em, mean, *lo, *hi, configs, violations)};
}

// ---- 7 ----

Outcome prompt_goldens() {
  using namespace testing::prompt_fixture;
  int mismatches = 0;
  for (auto v : {PromptVariant::Parametric, PromptVariant::SemiParametric, PromptVariant::DiscInst,
                 PromptVariant::DiscFid}) {
    const auto golden = read_file(data_path("golden/prompts/v1/" + std::string(to_string(v)) + ".txt"));
    const auto first = render_fixture(v).rendered;
    const auto second = render_fixture(v).rendered;
    mismatches += (!golden.empty() && first == golden && second == golden) ? 0 : 1;
  }
  const auto injection = format_disc_injection(kFlags25);
  const bool injected =
      render_fixture(PromptVariant::DiscFid).rendered.find(injection) != std::string::npos &&
      injection == "Perturbed: Document [2], Document [5]";
  return {mismatches == 0 && injected,
          fmt::format("4 variants, {} golden mismatches; injection \"{}\"", mismatches, injection)};
}

// ---- 8 ----

Outcome macnoise_validator() {
  const auto j = nlohmann::json::parse(read_file(data_path("fixtures/victoria_secret.json")));
  QAInstance q{"vs", j.at("question"), j.at("answers").get<std::vector<std::string>>(), AnswerType::PER};
  Document d;
  d.doc_id = "vs-1";
  d.title = j.at("title");
  d.text = j.at("text");
  const std::string rewritten = j.at("rewritten");
  const auto good = validate_counterfactual(d, rewritten, q);
  const auto orig = validate_counterfactual(d, render_passage(d), q);

  QAInstance none{"n", "q", {"zzz"}, AnswerType::NA};
  Document avg;
  avg.text = std::string(106, 'a');
  const auto drift = validate_counterfactual(avg, std::string(123, 'b'), none);
  const LengthBand band;
  const bool in_band = drift.length_ratio >= band.min_ratio && drift.length_ratio <= band.max_ratio && drift.valid;
  const bool pass = good.valid && rewritten.find("John Thompson") != std::string::npos && !orig.valid &&
                    !orig.answer_absent && in_band;
  return {pass, fmt::format("rewrite valid={} (ratio {:.3f}), original valid={}, 106->123 ratio {:.3f} in [{}, {}]",
                            good.valid, good.length_ratio, orig.valid, drift.length_ratio, band.min_ratio,
                            band.max_ratio)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<Criterion> criteria{
      {1, "perturbation-rate mapping", 30, perturbation_rate_mapping},
      {2, "entity-perturbation invariants", 60, perturber_invariants},
      {3, "loss correctness", 120, loss_correctness},
      {4, "trend reproduction", 600, trend_reproduction},
      {5, "metric fidelity", 60, metric_fidelity},
      {6, "ensemble behavior", 60, ensemble_behavior},
      {7, "prompt golden files", 60, prompt_goldens},
      {8, "MacNoise validator fidelity", 60, macnoise_validator},
  };
  bool all = true;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool pass = o.pass && secs < c.limit_seconds;
    all = all && pass;
    std::printf("%s [%d] %s: %s; %.1f s (limit %.0f s)\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                o.detail.c_str(), secs, c.limit_seconds);
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
