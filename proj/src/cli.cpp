#include "conflictqa/cli.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "conflictqa/corpus.hpp"
#include "conflictqa/entity_perturber.hpp"
#include "conflictqa/evaluation.hpp"
#include "conflictqa/hashing.hpp"
#include "conflictqa/macnoise.hpp"
#include "conflictqa/reader/checkpoint.hpp"
#include "conflictqa/reader/trainer.hpp"
#include "conflictqa/synthetic.hpp"

namespace conflictqa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  if (!seed) throw ConfigError("--seed is required");
  for (const auto& p : inputs)
    if (!p.empty() && !fs::is_regular_file(p)) throw ConfigError("input file not found: " + p.string());
  if (top_k == 0) throw ConfigError("--top-k must be positive");
  if (method != "entity" && method != "macnoise") throw ConfigError("--method must be entity or macnoise");
  for (double p : probabilities)
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(fmt::format("--prob: {} is not in [0, 1]", p));
  if (k == 0) throw ConfigError("--k must be positive");
  if (params.max_tokens <= 0) throw ConfigError("--max-tokens must be positive");
  if (params.temperature < 0.0) throw ConfigError("--temperature must be non-negative");
  if (!(params.top_p > 0.0 && params.top_p <= 1.0)) throw ConfigError("--top-p must lie in (0, 1]");
  if (params.n_logprobs < 0) throw ConfigError("--logprobs must be non-negative");
  reader.validate();
}

std::vector<double> parse_probabilities(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size() || !(v >= 0.0 && v <= 1.0))
      throw ConfigError(fmt::format("{}: '{}' is not a probability in [0, 1]", flag, item));
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(flag + ": expected at least one probability");
  return out;
}

std::string level_label(double perturbed_fraction) {
  return fmt::format("{}%", static_cast<long>(std::lround(perturbed_fraction * 100.0)));
}

namespace {

struct ClientFlags {
  std::string fixtures;
  std::string record;
  std::string endpoint;
  std::string model = HttpClientSettings{}.model;
  std::string api_key_env = HttpClientSettings{}.api_key_env;
  int max_retries = RetryPolicy{}.max_retries;
};

struct ClientStack {
  std::unique_ptr<GenerationClient> base;
  std::unique_ptr<RecordingClient> recorder;
  GenerationClient& get() { return recorder ? *recorder : *base; }
};

// Replay is the default; the network is only touched when an endpoint is given.
ClientStack make_client(const ClientFlags& f) {
  ClientStack stack;
  if (f.endpoint.empty()) {
    if (f.fixtures.empty()) throw ConfigError("give --fixtures to replay recorded completions, or --endpoint");
    stack.base = std::make_unique<ReplayClient>(load_fixtures(f.fixtures), "replay:" + fs::path(f.fixtures).filename().string());
  } else {
    HttpClientSettings s;
    s.base_url = f.endpoint;
    s.model = f.model;
    s.api_key_env = f.api_key_env;
    stack.base = make_http_client(s);
  }
  if (!f.record.empty()) stack.recorder = std::make_unique<RecordingClient>(*stack.base, f.record);
  return stack;
}

void add_client_flags(CLI::App* sub, ClientFlags& f) {
  sub->add_option("--fixtures", f.fixtures, "Recorded completions to replay (JSONL)");
  sub->add_option("--record", f.record, "Append every completion to this fixture file");
  sub->add_option("--endpoint", f.endpoint, "Completion endpoint base URL; enables network calls");
  sub->add_option("--model", f.model, "Model name sent to the endpoint");
  sub->add_option("--api-key-env", f.api_key_env, "Environment variable holding the API key");
  sub->add_option("--max-retries", f.max_retries, "Retries on rate limits and timeouts");
}

void add_generation_flags(CLI::App* sub, GenerationParams& p) {
  sub->add_option("--temperature", p.temperature, "Sampling temperature");
  sub->add_option("--top-p", p.top_p, "Nucleus sampling mass");
  sub->add_option("--logprobs", p.n_logprobs, "Top alternatives requested per token");
  sub->add_option("--max-tokens", p.max_tokens, "Completion length limit");
}

std::vector<RetrievedSet> ordered_sets(const std::vector<QAInstance>& instances,
                                       const std::map<std::string, RetrievedSet>& by_id) {
  std::vector<RetrievedSet> out;
  std::size_t missing = 0;
  for (const auto& q : instances) {
    auto it = by_id.find(q.id);
    if (it == by_id.end())
      ++missing;
    else
      out.push_back(it->second);
  }
  if (missing > 0) spdlog::warn("{} questions have no retrieved documents", missing);
  return out;
}

std::vector<RetrievedSet> truncate(std::vector<RetrievedSet> sets, std::size_t top_k) {
  for (auto& s : sets)
    if (s.documents.size() > top_k) s.documents.resize(top_k);
  return sets;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

std::string probability_tag(double p) { return fmt::format("{:.2f}", p); }

std::vector<RewriteDemo> load_demos(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<RewriteDemo> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      RewriteDemo d;
      d.instance.id = j.value("id", fmt::format("demo-{}", n));
      d.instance.question = j.at("question");
      d.instance.answers = j.at("answers").get<std::vector<std::string>>();
      d.instance.answer_type = parse_answer_type(j.value("answer_type", "NA"));
      d.document.doc_id = d.instance.id + "-doc";
      d.document.title = j.value("title", "");
      d.document.text = j.at("text");
      d.rewritten = j.at("rewritten");
      out.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), n);
    }
  }
  return out;
}

// ---- synth ----

struct SynthFlags {
  SyntheticOptions options;
};

int cmd_synth(RunConfig& cfg, SynthFlags& f, std::ostream& out) {
  cfg.validate();
  f.options.seed = static_cast<std::uint64_t>(*cfg.seed);
  f.options.docs_per_question = cfg.top_k;
  const auto corpus = make_synthetic_corpus(f.options);
  fs::create_directories(cfg.out_dir);
  write_qa_dataset(cfg.out_dir / "qa.jsonl", corpus.instances);
  write_retrievals(cfg.out_dir / "retrievals.jsonl", corpus.sets);
  out << fmt::format("wrote {} questions to {}\n", corpus.instances.size(), cfg.out_dir.string());
  return kExitOk;
}

// ---- perturb / generate ----

struct PerturbFlags {
  std::string qa;
  std::string retrievals;
  std::string probs;
  unsigned threads = 1;
  // macnoise
  ClientFlags client;
  std::string demos;
  std::size_t max_docs = MacNoiseOptions{}.max_docs_per_question;
  unsigned max_in_flight = 1;
  double min_ratio = LengthBand{}.min_ratio;
  double max_ratio = LengthBand{}.max_ratio;
  std::size_t max_client_failures = 0;
};

int run_macnoise(RunConfig& cfg, PerturbFlags& f, std::ostream& out) {
  cfg.inputs = {f.qa, f.retrievals, f.demos, f.client.fixtures};
  cfg.validate();
  const auto instances = load_qa_dataset(f.qa);
  const auto sets = ordered_sets(instances, load_retrievals(f.retrievals, cfg.top_k));
  const auto demos = f.demos.empty() ? std::vector<RewriteDemo>{} : load_demos(f.demos);
  auto client = make_client(f.client);

  MacNoiseOptions opts;
  opts.max_docs_per_question = f.max_docs;
  opts.retry.max_retries = f.client.max_retries;
  opts.params = cfg.params;
  opts.band = {f.min_ratio, f.max_ratio};
  opts.max_in_flight = f.max_in_flight;
  const auto split = build_macnoise_split(sets, instances, client.get(), demos, opts);

  out << split.stats.to_json().dump() << '\n';
  if (split.stats.client_errors > f.max_client_failures)
    throw ClientBudgetError(fmt::format("{} client failures exceed the budget of {}", split.stats.client_errors,
                                        f.max_client_failures));
  fs::create_directories(cfg.out_dir);
  write_labeled_split(cfg.out_dir / "macnoise.jsonl", split.sets, *cfg.seed,
                      {{"method", "macnoise"}, {"generator", client.get().id()}});
  return kExitOk;
}

int cmd_perturb(RunConfig& cfg, PerturbFlags& f, std::ostream& out) {
  if (cfg.method == "macnoise") {
    if (!f.probs.empty()) throw ConfigError("--prob applies to --method entity only");
    return run_macnoise(cfg, f, out);
  }
  cfg.probabilities = parse_probabilities(f.probs.empty() ? "0.3,0.5,0.75" : f.probs, "--prob");
  cfg.inputs = {f.qa, f.retrievals};
  cfg.validate();
  const auto instances = load_qa_dataset(f.qa);
  const auto sets = ordered_sets(instances, load_retrievals(f.retrievals, cfg.top_k));
  const auto pools = build_entity_pools(instances);
  fs::create_directories(cfg.out_dir);
  json reports = json::array();
  for (double p : cfg.probabilities) {
    const auto split = perturb_split(sets, instances, pools, p, static_cast<std::uint64_t>(*cfg.seed), f.threads);
    const auto name = fmt::format("entity_p{}.jsonl", probability_tag(p));
    write_labeled_split(cfg.out_dir / name, split.sets, *cfg.seed,
                        {{"method", "entity"}, {"probability", probability_tag(p)}});
    json r = split.report.to_json();
    r["probability"] = p;
    r["level"] = level_label(split.report.perturbed_fraction());
    r["file"] = name;
    out << r.dump() << '\n';
    reports.push_back(std::move(r));
  }
  write_text(cfg.out_dir / "perturb_report.json", reports.dump(2) + "\n");
  return kExitOk;
}

// ---- train ----

struct TrainFlags {
  std::string qa;
  std::vector<std::string> data;
  std::string loss = "qa,bce,contra";
  std::string contra_score = "logit";
  std::optional<double> resample_prob;
  std::size_t max_vocab = 0;
};

reader::LossFlags parse_loss(const std::string& text) {
  reader::LossFlags flags{false, false};
  bool qa = false;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "qa")
      qa = true;
    else if (item == "bce")
      flags.use_bce = true;
    else if (item == "contra")
      flags.use_contra = true;
    else
      throw ConfigError("--loss: unknown component '" + item + "'");
  }
  if (!qa) throw ConfigError("--loss must include qa");
  return flags;
}

int cmd_train(RunConfig& cfg, TrainFlags& f, std::ostream& out) {
  cfg.reader.loss = parse_loss(f.loss);
  if (f.contra_score != "logit" && f.contra_score != "probability")
    throw ConfigError("--contra-score must be logit or probability");
  cfg.reader.contra_score = f.contra_score == "logit" ? reader::ContraScore::Logit : reader::ContraScore::Probability;
  if (f.resample_prob) cfg.probabilities = {*f.resample_prob};
  cfg.inputs = {f.qa};
  cfg.inputs.insert(cfg.inputs.end(), f.data.begin(), f.data.end());
  cfg.reader.num_docs = cfg.top_k;
  cfg.reader.seed = static_cast<std::uint64_t>(*cfg.seed);
  cfg.validate();

  const auto instances = load_qa_dataset(f.qa);
  std::vector<reader::TrainingData> data;
  for (const auto& path : f.data) data.push_back({instances, truncate(load_labeled_split(path).sets, cfg.top_k)});
  reader::TrainOptions options;
  if (f.resample_prob) options.resampling = reader::Resampling{build_entity_pools(instances), *f.resample_prob, 0};
  reader::ReaderConfig rc = cfg.reader;
  if (f.max_vocab > 0) rc.vocab_size = f.max_vocab;
  auto vocab = reader::build_vocabulary(data, options.resampling, f.max_vocab);
  reader::ReaderModel model(rc, std::move(vocab));
  const auto history = reader::train_model(model, data, options);

  fs::create_directories(cfg.out_dir);
  reader::save_checkpoint(cfg.out_dir / "reader.ckpt", model, history);
  reader::write_history_csv(cfg.out_dir / "history.csv", history);
  out << fmt::format("trained {} epochs; checkpoint {}\n", history.size(), (cfg.out_dir / "reader.ckpt").string());
  return kExitOk;
}

// ---- evaluation of systems ----

// The same k samples serve every evaluation question.
std::vector<InContextSample> incontext_samples(const RunConfig& cfg, const std::vector<QAInstance>& instances,
                                               const std::string& heldout) {
  const auto index = index_by_id(instances);
  std::vector<InContextSample> pool;
  for (const auto& set : truncate(load_labeled_split(heldout).sets, cfg.top_k)) {
    auto it = index.find(set.question_id);
    if (it != index.end()) pool.push_back({*it->second, set});
  }
  Rng rng(derive_seed(static_cast<std::uint64_t>(*cfg.seed), "incontext"));
  return select_incontext_samples(pool, cfg.k, rng);
}

DiscDecider reader_decider(reader::ReaderModel& model) {
  return [&model](const QAInstance& q, const RetrievedSet& docs) {
    auto d = model.predict(q.question, docs).decisions;
    d.resize(docs.documents.size(), false);
    return d;
  };
}

struct SystemFlags {
  std::vector<std::string> checkpoints;  // NAME=PATH or PATH
  std::string systems;                   // prompt variants, comma separated
  std::string heldout;
  std::string qa;
  ClientFlags client;
  bool stability = false;
  bool csv = false;
  std::string baseline;
};

std::pair<std::string, std::string> split_named(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) return {fs::path(spec).stem().string(), spec};
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

std::vector<PromptVariant> parse_systems(const std::string& text) {
  std::vector<PromptVariant> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      out.push_back(parse_prompt_variant(item == "disc" ? "disc_inst" : item));
    } catch (const Error&) {
      throw ConfigError("--systems: unknown system '" + item + "'");
    }
  }
  return out;
}

int evaluate_systems(RunConfig& cfg, SystemFlags& f, const std::vector<QAInstance>& instances,
                     const std::vector<EvalSplit>& splits, std::ostream& out) {
  std::vector<std::unique_ptr<reader::LoadedCheckpoint>> models;
  std::vector<std::unique_ptr<EvaluatedSystem>> owned;
  for (const auto& spec : f.checkpoints) {
    auto [name, path] = split_named(spec);
    models.push_back(std::make_unique<reader::LoadedCheckpoint>(reader::load_checkpoint(path)));
    owned.push_back(std::make_unique<reader::ReaderSystem>(models.back()->model, name));
  }

  const auto variants = parse_systems(f.systems);
  std::optional<ClientStack> client;
  if (!variants.empty()) {
    if (f.heldout.empty()) throw ConfigError("prompting systems need --heldout samples");
    client = make_client(f.client);
    const auto samples = incontext_samples(cfg, instances, f.heldout);
    for (auto v : variants) {
      DiscDecider decider;
      if (v == PromptVariant::DiscFid) {
        if (models.empty()) throw ConfigError("disc_fid needs a reader --checkpoint for its decisions");
        decider = reader_decider(models.front()->model);
      }
      PromptingOptions po;
      po.variant = v;
      po.params = cfg.params;
      po.retry.max_retries = f.client.max_retries;
      owned.push_back(
          std::make_unique<PromptingSystem>(std::string(to_string(v)), client->get(), samples, po, std::move(decider)));
    }
  }
  if (owned.empty()) throw ConfigError("nothing to evaluate: give --checkpoint and/or --systems");

  std::vector<EvaluatedSystem*> systems;
  for (auto& s : owned) systems.push_back(s.get());
  json stability_json = json::object();
  auto on_cell = [&](EvaluatedSystem& s, const EvalSplit& split, const std::optional<LevelResult>& cell) {
    auto* p = dynamic_cast<PromptingSystem*>(&s);
    if (!p) return;
    if (f.stability && cell) stability_json[s.name()][split.level] = stability(p->iteration_ems(), cell->em).to_json();
    p->reset_iteration_stats();
  };
  const auto table = sweep(systems, instances, splits, f.baseline, on_cell);

  fs::create_directories(cfg.out_dir);
  const auto text = render_text(table);
  write_text(cfg.out_dir / "table.txt", text);
  write_text(cfg.out_dir / "metrics.json", to_json(table).dump(2) + "\n");
  if (f.csv) write_text(cfg.out_dir / "metrics.csv", render_csv(table));
  if (f.stability) write_text(cfg.out_dir / "stability.json", stability_json.dump(2) + "\n");
  out << text;
  return kExitOk;
}

struct EvaluateFlags {
  std::vector<std::string> splits;  // LABEL=PATH or PATH
};

int cmd_evaluate(RunConfig& cfg, SystemFlags& f, EvaluateFlags& e, std::ostream& out) {
  std::vector<std::pair<std::string, std::string>> named;
  for (const auto& spec : e.splits) named.push_back(split_named(spec));
  for (const auto& [label, path] : named)
    if (!fs::is_regular_file(path)) throw MissingSplitError("split not found: " + path);
  cfg.inputs = {f.qa, f.heldout, f.client.fixtures};
  for (const auto& c : f.checkpoints) cfg.inputs.push_back(split_named(c).second);
  cfg.validate();
  if (named.empty()) throw MissingSplitError("no --split given");

  const auto instances = load_qa_dataset(f.qa);
  std::vector<EvalSplit> splits;
  for (const auto& [label, path] : named) splits.push_back({label, truncate(load_labeled_split(path).sets, cfg.top_k)});
  return evaluate_systems(cfg, f, instances, splits, out);
}

struct SweepFlags {
  std::string retrievals;
  std::string probs = "0,0.3,0.5,0.75";
};

int cmd_sweep(RunConfig& cfg, SystemFlags& f, SweepFlags& s, std::ostream& out) {
  cfg.probabilities = parse_probabilities(s.probs, "--prob");
  cfg.inputs = {f.qa, s.retrievals, f.heldout, f.client.fixtures};
  for (const auto& c : f.checkpoints) cfg.inputs.push_back(split_named(c).second);
  cfg.validate();

  const auto instances = load_qa_dataset(f.qa);
  const auto sets = ordered_sets(instances, load_retrievals(s.retrievals, cfg.top_k));
  const auto pools = build_entity_pools(instances);
  std::vector<EvalSplit> splits;
  fs::create_directories(cfg.out_dir);
  for (double p : cfg.probabilities) {
    auto split = perturb_split(sets, instances, pools, p, static_cast<std::uint64_t>(*cfg.seed));
    write_labeled_split(cfg.out_dir / fmt::format("sweep_p{}.jsonl", probability_tag(p)), split.sets, *cfg.seed,
                        {{"method", "entity"}, {"probability", probability_tag(p)}});
    splits.push_back({level_label(split.report.perturbed_fraction()), std::move(split.sets)});
  }
  return evaluate_systems(cfg, f, instances, splits, out);
}

// ---- prompt-eval ----

struct PromptEvalFlags {
  std::string split;
  std::string variant = "semi_parametric";
  std::string checkpoint;
};

int cmd_prompt_eval(RunConfig& cfg, SystemFlags& f, PromptEvalFlags& p, std::ostream& out) {
  cfg.variant = parse_prompt_variant(p.variant);
  cfg.inputs = {f.qa, p.split, f.heldout, f.client.fixtures, p.checkpoint};
  cfg.validate();
  const auto instances = load_qa_dataset(f.qa);
  const auto sets = truncate(load_labeled_split(p.split).sets, cfg.top_k);

  if (f.heldout.empty()) throw ConfigError("prompt-eval needs --heldout samples");
  std::unique_ptr<reader::LoadedCheckpoint> model;
  if (!p.checkpoint.empty()) model = std::make_unique<reader::LoadedCheckpoint>(reader::load_checkpoint(p.checkpoint));
  auto client = make_client(f.client);
  const auto samples = incontext_samples(cfg, instances, f.heldout);
  DiscDecider decider;
  if (cfg.variant == PromptVariant::DiscFid) {
    if (!model) throw ConfigError("disc_fid needs --checkpoint");
    decider = reader_decider(model->model);
  }
  PromptingOptions po;
  po.variant = cfg.variant;
  po.params = cfg.params;
  po.retry.max_retries = f.client.max_retries;
  PromptingSystem system(std::string(to_string(cfg.variant)), client.get(), samples, po, std::move(decider));
  const auto result = evaluate_split(system, instances, sets);
  const auto report = stability(system.iteration_ems(), result.em);

  json j{{"variant", to_string(cfg.variant)}, {"k", cfg.k}, {"em", result.em}, {"stability", report.to_json()}};
  if (result.disc) {
    j["precision"] = result.disc->precision;
    j["recall"] = result.disc->recall;
    j["f1"] = result.disc->f1;
  }
  fs::create_directories(cfg.out_dir);
  write_text(cfg.out_dir / "prompt_eval.json", j.dump(2) + "\n");
  out << fmt::format("{} EM {}\n", to_string(cfg.variant), format_percent(result.em));
  if (result.disc)
    out << fmt::format("disc P {} R {} F1 {}\n", format_percent(result.disc->precision),
                       format_percent(result.disc->recall), format_percent(result.disc->f1));
  out << fmt::format("iterations best {} avg {} worst {} ensemble {}\n", format_percent(report.best),
                     format_percent(report.average), format_percent(report.worst), format_percent(report.ensemble_em));
  return kExitOk;
}

void add_common(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--seed", cfg.seed, "Random seed (required)");
  sub->add_option("--out", cfg.out_dir, "Output directory");
  sub->add_option("--top-k", cfg.top_k, "Documents per question");
}

void add_reader_flags(CLI::App* sub, reader::ReaderConfig& r) {
  sub->add_option("--lr", r.learning_rate, "AdamW learning rate");
  sub->add_option("--weight-decay", r.weight_decay, "Decoupled weight decay");
  sub->add_option("--epochs", r.epochs, "Training epochs");
  sub->add_option("--batch-size", r.batch_size, "Questions per forward pass");
  sub->add_option("--grad-accumulation", r.grad_accumulation, "Batches per optimizer step");
  sub->add_option("--grad-clip", r.grad_clip, "Global gradient-norm clip (0 disables)");
  sub->add_option("--embed-dim", r.embed_dim, "Model width");
  sub->add_option("--ffn-dim", r.ffn_dim, "Feed-forward width");
  sub->add_option("--heads", r.num_heads, "Attention heads");
  sub->add_option("--encoder-layers", r.encoder_layers, "Encoder layers");
  sub->add_option("--decoder-layers", r.decoder_layers, "Decoder layers");
  sub->add_option("--max-seq-len", r.max_seq_len, "Tokens per encoded document");
  sub->add_option("--max-answer-len", r.max_answer_len, "Decoded answer tokens");
  sub->add_option("--threshold", r.disc_threshold, "Discriminator decision threshold");
  sub->add_option("--disc-fusion", r.disc_fusion, "Feed discriminator logits back into the encoder states");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  auto logger = spdlog::get("conflictqa");
  if (!logger) logger = spdlog::stderr_color_mt("conflictqa");
  spdlog::set_default_logger(logger);

  CLI::App app{"Counterfactual-robust open-domain QA toolkit"};
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "Key-value config file; command-line flags win over it");
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  RunConfig cfg;
  std::string method = cfg.method;

  SynthFlags synth;
  auto* s_synth = app.add_subcommand("synth", "Write a synthetic conflict corpus");
  add_common(s_synth, cfg);
  s_synth->add_option("--subjects", synth.options.num_subjects, "Subjects (five questions each)");
  s_synth->add_option("--worlds", synth.options.worlds, "Independent fact draws per subject");
  s_synth->add_option("--offset", synth.options.subject_offset, "First subject index");
  s_synth->add_option("--prefix", synth.options.id_prefix, "Question id prefix");

  PerturbFlags perturb;
  auto* s_perturb = app.add_subcommand("perturb", "Write perturbed, labeled splits");
  add_common(s_perturb, cfg);
  s_perturb->add_option("--qa", perturb.qa, "QA dataset (JSONL)")->required();
  s_perturb->add_option("--retrievals", perturb.retrievals, "Retrieved documents (JSONL)")->required();
  s_perturb->add_option("--method", method, "entity or macnoise");
  s_perturb->add_option("--prob", perturb.probs, "Comma-separated perturbation probabilities (entity; default 0.3,0.5,0.75)");
  s_perturb->add_option("--threads", perturb.threads, "Worker threads");
  PerturbFlags generate;
  auto* s_generate = app.add_subcommand("generate", "Write a MacNoise split from generated counterfactuals");
  add_common(s_generate, cfg);
  for (auto [sub, f] : {std::pair{s_perturb, &perturb}, std::pair{s_generate, &generate}}) {
    if (sub == s_generate) {
      sub->add_option("--qa", f->qa, "QA dataset (JSONL)")->required();
      sub->add_option("--retrievals", f->retrievals, "Retrieved documents (JSONL)")->required();
    }
    add_client_flags(sub, f->client);
    add_generation_flags(sub, cfg.params);
    sub->add_option("--demos", f->demos, "Rewrite demonstrations (JSONL, zero or three)");
    sub->add_option("--max-docs", f->max_docs, "Documents rewritten per question");
    sub->add_option("--max-in-flight", f->max_in_flight, "Concurrent generation requests");
    sub->add_option("--min-ratio", f->min_ratio, "Smallest accepted length ratio");
    sub->add_option("--max-ratio", f->max_ratio, "Largest accepted length ratio");
    sub->add_option("--max-client-failures", f->max_client_failures, "Client failures tolerated before exit 3");
  }

  TrainFlags train;
  auto* s_train = app.add_subcommand("train", "Train the discriminator-augmented reader");
  add_common(s_train, cfg);
  s_train->add_option("--qa", train.qa, "QA dataset (JSONL)")->required();
  s_train->add_option("--data", train.data, "Labeled split; repeat to train on a mixture")->required();
  s_train->add_option("--loss", train.loss, "Loss components: qa[,bce][,contra]");
  s_train->add_option("--contra-score", train.contra_score, "Contrastive score: logit or probability");
  s_train->add_option("--resample-prob", train.resample_prob, "Re-perturb entities every epoch with this probability");
  s_train->add_option("--max-vocab", train.max_vocab, "Vocabulary cap (0: unlimited)");
  add_reader_flags(s_train, cfg.reader);

  SystemFlags sys;
  auto add_system_flags = [&](CLI::App* sub, bool with_checkpoints) {
    add_common(sub, cfg);
    sub->add_option("--qa", sys.qa, "QA dataset (JSONL)")->required();
    sub->add_option("--heldout", sys.heldout, "Labeled split to draw in-context samples from");
    sub->add_option("--k", cfg.k, "In-context iterations");
    add_client_flags(sub, sys.client);
    add_generation_flags(sub, cfg.params);
    if (with_checkpoints) {
      sub->add_option("--checkpoint", sys.checkpoints, "Reader checkpoint, NAME=PATH; repeatable");
      sub->add_option("--systems", sys.systems, "Prompting systems: parametric, semi, disc_inst, disc_fid");
      sub->add_option("--baseline", sys.baseline, "System the deltas are taken against (default: first)");
      sub->add_flag("--stability", sys.stability, "Write best/average/worst iteration EM");
      sub->add_flag("--csv", sys.csv, "Also write metrics.csv");
    }
  };

  PromptEvalFlags pe;
  auto* s_prompt = app.add_subcommand("prompt-eval", "Evaluate one prompt variant on a labeled split");
  add_system_flags(s_prompt, false);
  s_prompt->add_option("--split", pe.split, "Labeled split to evaluate")->required();
  s_prompt->add_option("--variant", pe.variant, "parametric, semi_parametric, disc_inst or disc_fid");
  s_prompt->add_option("--checkpoint", pe.checkpoint, "Reader checkpoint supplying disc_fid decisions");

  EvaluateFlags ev;
  auto* s_eval = app.add_subcommand("evaluate", "Score readers and prompting systems on labeled splits");
  add_system_flags(s_eval, true);
  s_eval->add_option("--split", ev.splits, "Labeled split, LABEL=PATH; repeatable");

  SweepFlags sw;
  auto* s_sweep = app.add_subcommand("sweep", "Perturb at several rates and score every system");
  add_system_flags(s_sweep, true);
  s_sweep->add_option("--retrievals", sw.retrievals, "Retrieved documents (JSONL)")->required();
  s_sweep->add_option("--prob", sw.probs, "Comma-separated perturbation probabilities");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    cfg.method = method;
    if (*s_synth) return cmd_synth(cfg, synth, out);
    if (*s_perturb) return cmd_perturb(cfg, perturb, out);
    if (*s_generate) {
      cfg.method = "macnoise";
      return run_macnoise(cfg, generate, out);
    }
    if (*s_train) return cmd_train(cfg, train, out);
    if (*s_prompt) return cmd_prompt_eval(cfg, sys, pe, out);
    if (*s_eval) return cmd_evaluate(cfg, sys, ev, out);
    if (*s_sweep) return cmd_sweep(cfg, sys, sw, out);
  } catch (const MissingSplitError& e) {
    err << "error: " << e.what() << '\n';
    return kExitMissingSplit;
  } catch (const reader::NonFiniteLossError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNonFinite;
  } catch (const ClientBudgetError& e) {
    err << "error: " << e.what() << '\n';
    return kExitClient;
  } catch (const ClientError& e) {
    err << "error: " << e.what() << '\n';
    return kExitClient;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const PreconditionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace conflictqa::cli
