#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conflictqa/corpus.hpp"
#include "conflictqa/reader/autodiff.hpp"
#include "conflictqa/reader/losses.hpp"
#include "conflictqa/reader/tokenizer.hpp"

namespace conflictqa::reader {

struct ReaderConfig {
  std::size_t vocab_size = 0;  // 0: whatever the training data yields
  std::size_t embed_dim = 32;
  std::size_t ffn_dim = 64;
  std::size_t num_heads = 4;  // must divide embed_dim
  std::size_t max_seq_len = 200;
  std::size_t max_answer_len = 8;
  std::size_t num_docs = 5;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 1;
  std::size_t grad_accumulation = 64;
  std::size_t epochs = 10;
  double grad_clip = 1.0;  // global norm; 0 disables
  LossFlags loss;
  ContraScore contra_score = ContraScore::Logit;
  double disc_threshold = 0.5;
  // Add each document's discriminator logit to its encoder states before decoding.
  bool disc_fusion = true;
  std::uint64_t seed = 42;

  // Throws ConfigError.
  void validate() const;
  nlohmann::json to_json() const;
  static ReaderConfig from_json(const nlohmann::json& j);
  bool operator==(const ReaderConfig&) const = default;
};

// Token ids for one question: one row of max_seq_len ids per document, PAD-filled.
struct ModelInput {
  std::vector<std::vector<int>> docs;
};

// Question, separator, title, text; truncated to `max_seq_len` and padded.
std::vector<int> encode_document(const Vocabulary& vocab, const std::string& question, const Document& doc,
                                 std::size_t max_seq_len);
ModelInput make_input(const Vocabulary& vocab, const std::string& question, const RetrievedSet& set,
                      const ReaderConfig& config);
// First alias, truncated to max_answer_len tokens, followed by EOS.
std::vector<int> make_target(const Vocabulary& vocab, const QAInstance& instance, const ReaderConfig& config);

struct EncodedBatch {
  Matrix H;               // (M*T) x E, document m occupies rows [m*T, (m+1)*T)
  Matrix doc_embeddings;  // M x E
  std::vector<double> disc_logits;
  std::vector<double> disc_probs;
};

struct Prediction {
  std::string answer;
  std::vector<int> answer_ids;
  std::vector<double> disc_probs;
  std::vector<bool> decisions;
};

// Tape handles produced by one forward pass.
struct ForwardVars {
  Var H;
  Var doc_embeddings;
  Var disc_logits;
  std::optional<Var> decoder_logits;
};

class ReaderModel {
 public:
  ReaderModel(ReaderConfig config, Vocabulary vocab);
  ReaderModel(const ReaderModel&) = delete;
  ReaderModel& operator=(const ReaderModel&) = delete;
  ReaderModel(ReaderModel&&) = default;
  ReaderModel& operator=(ReaderModel&&) = default;

  const ReaderConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }

  std::vector<Parameter*> parameters() const;
  Parameter* parameter(const std::string& name) const;
  void zero_grad();

  // Encoder and discriminator; the decoder runs over `decoder_input` when given.
  ForwardVars forward(Tape& tape, const ModelInput& input,
                      const std::optional<std::vector<int>>& decoder_input = std::nullopt);

  EncodedBatch encode(const ModelInput& input);

  // Builds the loss on `tape`. Components that are switched off are neither computed nor
  // differentiated and report 0. `total` is the node to call backward on.
  struct LossVars {
    LossBreakdown values;
    Var total;
    bool clamped = false;
  };
  LossVars loss(Tape& tape, const ModelInput& input, const std::vector<bool>& labels, const std::vector<int>& target);

  Prediction predict(const ModelInput& input);
  Prediction predict(const std::string& question, const RetrievedSet& set);

 private:
  Parameter& add_param(const std::string& name, std::size_t rows, std::size_t cols, double stddev, bool decay,
                       double fill = 0.0);
  Var attention(Tape& t, const std::string& prefix, Var xq, Var xkv, const std::vector<char>& allowed);
  Var ffn(Tape& t, const std::string& prefix, Var x);
  Var norm(Tape& t, const std::string& prefix, Var x);
  Var encode_document_rows(Tape& t, const std::vector<int>& ids);
  Var decode(Tape& t, Var H, const std::vector<char>& key_valid, const std::vector<int>& decoder_input);

  ReaderConfig config_;
  Vocabulary vocab_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
};

}  // namespace conflictqa::reader
