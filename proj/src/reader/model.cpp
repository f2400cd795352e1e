#include "conflictqa/reader/model.hpp"

#include <cmath>

#include <fmt/format.h>

#include "conflictqa/errors.hpp"
#include "conflictqa/rng.hpp"

namespace conflictqa::reader {

void ReaderConfig::validate() const {
  if (embed_dim == 0 || max_seq_len == 0 || num_docs == 0 || ffn_dim == 0)
    throw ConfigError("embed_dim, ffn_dim, max_seq_len and num_docs must be positive");
  if (num_heads == 0 || embed_dim % num_heads != 0) throw ConfigError("num_heads must divide embed_dim");
  if (max_answer_len == 0) throw ConfigError("max_answer_len must be positive");
  if (encoder_layers == 0 || decoder_layers == 0) throw ConfigError("need at least one encoder and decoder layer");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (batch_size == 0 || grad_accumulation == 0) throw ConfigError("batch_size and grad_accumulation must be positive");
  if (!(disc_threshold > 0.0 && disc_threshold < 1.0)) throw ConfigError("disc_threshold must lie in (0, 1)");
  if (grad_clip < 0.0) throw ConfigError("grad_clip must be non-negative");
}

nlohmann::json ReaderConfig::to_json() const {
  return {{"vocab_size", vocab_size},
          {"embed_dim", embed_dim},
          {"ffn_dim", ffn_dim},
          {"num_heads", num_heads},
          {"max_seq_len", max_seq_len},
          {"max_answer_len", max_answer_len},
          {"num_docs", num_docs},
          {"encoder_layers", encoder_layers},
          {"decoder_layers", decoder_layers},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"grad_accumulation", grad_accumulation},
          {"epochs", epochs},
          {"grad_clip", grad_clip},
          {"use_bce", loss.use_bce},
          {"use_contra", loss.use_contra},
          {"contra_score", contra_score == ContraScore::Logit ? "logit" : "probability"},
          {"disc_threshold", disc_threshold},
          {"disc_fusion", disc_fusion},
          {"seed", seed}};
}

ReaderConfig ReaderConfig::from_json(const nlohmann::json& j) {
  ReaderConfig c;
  try {
    c.vocab_size = j.at("vocab_size");
    c.embed_dim = j.at("embed_dim");
    c.ffn_dim = j.at("ffn_dim");
    c.num_heads = j.at("num_heads");
    c.max_seq_len = j.at("max_seq_len");
    c.max_answer_len = j.at("max_answer_len");
    c.num_docs = j.at("num_docs");
    c.encoder_layers = j.at("encoder_layers");
    c.decoder_layers = j.at("decoder_layers");
    c.learning_rate = j.at("learning_rate");
    c.weight_decay = j.at("weight_decay");
    c.batch_size = j.at("batch_size");
    c.grad_accumulation = j.at("grad_accumulation");
    c.epochs = j.at("epochs");
    c.grad_clip = j.at("grad_clip");
    c.loss.use_bce = j.at("use_bce");
    c.loss.use_contra = j.at("use_contra");
    const std::string score = j.at("contra_score");
    if (score != "logit" && score != "probability") throw ConfigError("contra_score must be logit or probability");
    c.contra_score = score == "logit" ? ContraScore::Logit : ContraScore::Probability;
    c.disc_threshold = j.at("disc_threshold");
    c.disc_fusion = j.value("disc_fusion", true);
    c.seed = j.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("reader config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<int> encode_document(const Vocabulary& vocab, const std::string& question, const Document& doc,
                                 std::size_t max_seq_len) {
  std::vector<int> ids = vocab.encode(question);
  ids.push_back(kSep);
  for (int id : vocab.encode(doc.title)) ids.push_back(id);
  for (int id : vocab.encode(doc.text)) ids.push_back(id);
  ids.resize(max_seq_len, kPad);
  return ids;
}

ModelInput make_input(const Vocabulary& vocab, const std::string& question, const RetrievedSet& set,
                      const ReaderConfig& config) {
  if (set.documents.empty()) throw PreconditionError("retrieved set '" + set.question_id + "' has no documents");
  ModelInput in;
  const std::size_t m = std::min(set.documents.size(), config.num_docs);
  for (std::size_t i = 0; i < m; ++i)
    in.docs.push_back(encode_document(vocab, question, set.documents[i], config.max_seq_len));
  return in;
}

std::vector<int> make_target(const Vocabulary& vocab, const QAInstance& instance, const ReaderConfig& config) {
  if (instance.answers.empty()) throw PreconditionError("question '" + instance.id + "' has no answer");
  auto ids = vocab.encode(instance.answers.front());
  if (ids.size() > config.max_answer_len) ids.resize(config.max_answer_len);
  ids.push_back(kEos);
  return ids;
}

namespace {
// Parameter handles for the current tape, so each weight enters the graph once per pass.
thread_local std::map<std::string, Var>* tl_vars = nullptr;
}  // namespace

ReaderModel::ReaderModel(ReaderConfig config, Vocabulary vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
  if (config_.vocab_size != 0 && vocab_.size() > config_.vocab_size)
    throw ConfigError(fmt::format("vocabulary has {} tokens, config allows {}", vocab_.size(), config_.vocab_size));
  config_.vocab_size = vocab_.size();
  config_.validate();

  Rng rng(config_.seed);
  const std::size_t E = config_.embed_dim, F = config_.ffn_dim, V = config_.vocab_size;
  const double we = 1.0 / std::sqrt(static_cast<double>(E));
  const double wf = 1.0 / std::sqrt(static_cast<double>(F));
  auto init = [&](const std::string& name, std::size_t r, std::size_t c, double sd, bool decay) {
    Parameter& p = add_param(name, r, c, 0.0, decay);
    for (auto& v : p.value.data) v = sd * rng.normal();
  };
  auto layer_norm_params = [&](const std::string& prefix) {
    add_param(prefix + ".gain", 1, E, 0.0, false, 1.0);
    add_param(prefix + ".bias", 1, E, 0.0, false, 0.0);
  };
  auto attention_params = [&](const std::string& prefix) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) init(prefix + "." + w, E, E, we, true);
  };
  auto ffn_params = [&](const std::string& prefix) {
    init(prefix + ".w1", E, F, we, true);
    add_param(prefix + ".b1", 1, F, 0.0, false);
    init(prefix + ".w2", F, E, wf, true);
    add_param(prefix + ".b2", 1, E, 0.0, false);
  };

  // Output logits reuse the token embeddings, which makes copying a document token cheap to learn.
  init("tok_emb", V, E, we, false);
  init("enc_pos", config_.max_seq_len, E, we, false);
  init("dec_pos", config_.max_answer_len + 1, E, we, false);
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const auto p = fmt::format("enc{}", l);
    layer_norm_params(p + ".ln1");
    attention_params(p + ".attn");
    layer_norm_params(p + ".ln2");
    ffn_params(p + ".ffn");
  }
  layer_norm_params("enc.ln_f");
  init("disc.w", E, 1, we, true);
  add_param("disc.b", 1, 1, 0.0, false);
  if (config_.disc_fusion) add_param("disc.u", 1, E, 0.0, true);
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const auto p = fmt::format("dec{}", l);
    layer_norm_params(p + ".ln1");
    attention_params(p + ".self");
    layer_norm_params(p + ".ln2");
    attention_params(p + ".cross");
    layer_norm_params(p + ".ln3");
    ffn_params(p + ".ffn");
  }
  layer_norm_params("dec.ln_f");
  add_param("out.b", 1, V, 0.0, false);
}

Parameter& ReaderModel::add_param(const std::string& name, std::size_t rows, std::size_t cols, double, bool decay,
                                  double fill) {
  params_.push_back(std::make_unique<Parameter>(name, Matrix(rows, cols, fill), decay));
  by_name_[name] = params_.back().get();
  return *params_.back();
}

std::vector<Parameter*> ReaderModel::parameters() const {
  std::vector<Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

Parameter* ReaderModel::parameter(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

void ReaderModel::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

namespace {

Var P(Tape& t, ReaderModel& m, const std::string& name) {
  auto it = tl_vars->find(name);
  if (it != tl_vars->end()) return it->second;
  Parameter* p = m.parameter(name);
  if (!p) throw std::logic_error("missing parameter " + name);
  const Var v = t.param(*p);
  tl_vars->emplace(name, v);
  return v;
}

struct VarScope {
  std::map<std::string, Var> vars;
  std::map<std::string, Var>* previous;
  VarScope() : previous(tl_vars) { tl_vars = &vars; }
  ~VarScope() { tl_vars = previous; }
};

}  // namespace

Var ReaderModel::norm(Tape& t, const std::string& prefix, Var x) {
  return layer_norm(t, x, P(t, *this, prefix + ".gain"), P(t, *this, prefix + ".bias"));
}

Var ReaderModel::attention(Tape& t, const std::string& prefix, Var xq, Var xkv, const std::vector<char>& allowed) {
  const std::size_t heads = config_.num_heads;
  const std::size_t dh = config_.embed_dim / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const Var q = matmul(t, xq, P(t, *this, prefix + ".wq"));
  const Var k = matmul(t, xkv, P(t, *this, prefix + ".wk"));
  const Var v = matmul(t, xkv, P(t, *this, prefix + ".wv"));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? q : slice_cols(t, q, h * dh, dh);
    const Var kh = heads == 1 ? k : slice_cols(t, k, h * dh, dh);
    const Var vh = heads == 1 ? v : slice_cols(t, v, h * dh, dh);
    const Var probs = softmax_rows(t, scale(t, matmul_bt(t, qh, kh), inv_sqrt_dh), allowed);
    outs.push_back(matmul(t, probs, vh));
  }
  const Var o = heads == 1 ? outs.front() : concat_cols(t, outs);
  return matmul(t, o, P(t, *this, prefix + ".wo"));
}

Var ReaderModel::ffn(Tape& t, const std::string& prefix, Var x) {
  const Var h = gelu(t, add_row(t, matmul(t, x, P(t, *this, prefix + ".w1")), P(t, *this, prefix + ".b1")));
  return add_row(t, matmul(t, h, P(t, *this, prefix + ".w2")), P(t, *this, prefix + ".b2"));
}

Var ReaderModel::encode_document_rows(Tape& t, const std::vector<int>& ids) {
  const std::size_t T = ids.size();
  if (T != config_.max_seq_len) throw std::logic_error("document not padded to max_seq_len");
  std::vector<int> positions(T);
  for (std::size_t i = 0; i < T; ++i) positions[i] = static_cast<int>(i);
  Var x = add(t, t.embed(*by_name_.at("tok_emb"), ids), t.embed(*by_name_.at("enc_pos"), positions));
  std::vector<char> allowed(T * T);
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t c = 0; c < T; ++c) allowed[r * T + c] = ids[c] != kPad;
  for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
    const auto p = fmt::format("enc{}", l);
    const Var h = norm(t, p + ".ln1", x);
    x = add(t, x, attention(t, p + ".attn", h, h, allowed));
    x = add(t, x, ffn(t, p + ".ffn", norm(t, p + ".ln2", x)));
  }
  return norm(t, "enc.ln_f", x);
}

Var ReaderModel::decode(Tape& t, Var H, const std::vector<char>& key_valid, const std::vector<int>& decoder_input) {
  const std::size_t L = decoder_input.size();
  if (L == 0 || L > config_.max_answer_len + 1) throw std::logic_error("decoder input length out of range");
  std::vector<int> positions(L);
  for (std::size_t i = 0; i < L; ++i) positions[i] = static_cast<int>(i);
  Var x = add(t, t.embed(*by_name_.at("tok_emb"), decoder_input), t.embed(*by_name_.at("dec_pos"), positions));
  std::vector<char> causal(L * L), cross(L * key_valid.size());
  for (std::size_t r = 0; r < L; ++r) {
    for (std::size_t c = 0; c < L; ++c) causal[r * L + c] = c <= r;
    for (std::size_t c = 0; c < key_valid.size(); ++c) cross[r * key_valid.size() + c] = key_valid[c];
  }
  for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
    const auto p = fmt::format("dec{}", l);
    const Var h = norm(t, p + ".ln1", x);
    x = add(t, x, attention(t, p + ".self", h, h, causal));
    x = add(t, x, attention(t, p + ".cross", norm(t, p + ".ln2", x), H, cross));
    x = add(t, x, ffn(t, p + ".ffn", norm(t, p + ".ln3", x)));
  }
  x = norm(t, "dec.ln_f", x);
  return add_row(t, matmul_bt(t, x, P(t, *this, "tok_emb")), P(t, *this, "out.b"));
}

ForwardVars ReaderModel::forward(Tape& tape, const ModelInput& input, const std::optional<std::vector<int>>& decoder_input) {
  if (input.docs.empty()) throw PreconditionError("model input has no documents");
  if (input.docs.size() > config_.num_docs)
    throw ConfigError(fmt::format("{} documents exceed num_docs {}", input.docs.size(), config_.num_docs));
  VarScope scope;
  std::vector<Var> blocks, pooled;
  std::vector<char> key_valid;
  std::vector<Var> logits;
  const Var ones = config_.disc_fusion ? tape.constant(Matrix(config_.max_seq_len, 1, 1.0)) : Var{};
  for (const auto& ids : input.docs) {
    if (ids.size() != config_.max_seq_len)
      throw ConfigError(fmt::format("document has {} tokens, expected {}", ids.size(), config_.max_seq_len));
    Var block = encode_document_rows(tape, ids);
    pooled.push_back(mean_rows(tape, block));
    logits.push_back(add(tape, matmul(tape, pooled.back(), P(tape, *this, "disc.w")), P(tape, *this, "disc.b")));
    // Every token of the document gets its discriminator logit along a learned direction.
    if (config_.disc_fusion)
      block = add(tape, block, matmul(tape, ones, matmul(tape, logits.back(), P(tape, *this, "disc.u"))));
    blocks.push_back(block);
    for (int id : ids) key_valid.push_back(id != kPad);
  }
  ForwardVars out;
  out.H = blocks.size() == 1 ? blocks.front() : concat_rows(tape, blocks);
  out.doc_embeddings = pooled.size() == 1 ? pooled.front() : concat_rows(tape, pooled);
  out.disc_logits = logits.size() == 1 ? logits.front() : concat_rows(tape, logits);
  if (decoder_input) out.decoder_logits = decode(tape, out.H, key_valid, *decoder_input);
  return out;
}

EncodedBatch ReaderModel::encode(const ModelInput& input) {
  Tape tape;
  const auto f = forward(tape, input);
  EncodedBatch b;
  b.H = tape.value(f.H);
  b.doc_embeddings = tape.value(f.doc_embeddings);
  b.disc_logits = tape.value(f.disc_logits).data;
  for (double z : b.disc_logits) b.disc_probs.push_back(1.0 / (1.0 + std::exp(-z)));
  return b;
}

ReaderModel::LossVars ReaderModel::loss(Tape& tape, const ModelInput& input, const std::vector<bool>& labels,
                                        const std::vector<int>& target) {
  if (labels.size() != input.docs.size()) throw PreconditionError("one label per document required");
  if (target.empty()) throw PreconditionError("empty target");
  std::vector<int> dec_in{kBos};
  dec_in.insert(dec_in.end(), target.begin(), target.end() - 1);
  const auto f = forward(tape, input, dec_in);

  VarScope scope;
  LossVars out;
  Var total = cross_entropy(tape, *f.decoder_logits, target, kLossEpsilon, &out.clamped);
  const double l_qa = tape.value(total).data[0];
  double l_bce = 0.0, l_contra = 0.0;
  if (config_.loss.use_bce) {
    const Var b = bce_with_logits(tape, f.disc_logits, labels);
    l_bce = tape.value(b).data[0];
    total = add(tape, total, b);
  }
  if (config_.loss.use_contra) {
    const Var scores = config_.contra_score == ContraScore::Logit ? f.disc_logits : sigmoid(tape, f.disc_logits);
    const Var c = contrastive(tape, scores, labels);
    l_contra = tape.value(c).data[0];
    total = add(tape, total, c);
  }
  out.values = combine(l_qa, l_bce, l_contra, config_.loss);
  out.total = total;
  return out;
}

Prediction ReaderModel::predict(const ModelInput& input) {
  Tape tape;
  const auto f = forward(tape, input);
  std::vector<char> key_valid;
  for (const auto& ids : input.docs)
    for (int id : ids) key_valid.push_back(id != kPad);

  Prediction p;
  for (double z : tape.value(f.disc_logits).data) {
    const double prob = 1.0 / (1.0 + std::exp(-z));
    p.disc_probs.push_back(prob);
    p.decisions.push_back(prob >= config_.disc_threshold);
  }

  std::vector<int> dec_in{kBos};
  VarScope scope;
  for (std::size_t step = 0; step < config_.max_answer_len + 1; ++step) {
    const Var logits = decode(tape, f.H, key_valid, dec_in);
    const auto& z = tape.value(logits);
    const std::size_t last = z.rows - 1;
    int best = kEos;
    double best_v = -INFINITY;
    for (std::size_t c = 0; c < z.cols; ++c) {
      if (c == static_cast<std::size_t>(kPad) || c == static_cast<std::size_t>(kBos)) continue;
      if (z(last, c) > best_v) {
        best_v = z(last, c);
        best = static_cast<int>(c);
      }
    }
    if (best == kEos || step == config_.max_answer_len) break;
    p.answer_ids.push_back(best);
    dec_in.push_back(best);
  }
  p.answer = vocab_.decode(p.answer_ids);
  return p;
}

Prediction ReaderModel::predict(const std::string& question, const RetrievedSet& set) {
  return predict(make_input(vocab_, question, set, config_));
}

}  // namespace conflictqa::reader
