#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "carryover/corpus.hpp"
#include "carryover/embeddings.hpp"
#include "carryover/error.hpp"

namespace carryover {

struct Hyperparams {
  int embedding_dim = 16;
  int encoder_hidden = 128;  // per direction
  int decoder_hidden = 256;
  int window = 2;
  int max_epochs = 40;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double positive_class_weight = 1.0;
  double threshold = 0.5;
  int oov_buckets = 64;
  std::uint64_t seed = 1;

  void validate() const;
};

// Named views into one flat parameter vector. Gradients, Adam moments and
// checkpoints all share this layout.
struct BlockSpec {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

struct ParamLayout {
  std::vector<BlockSpec> blocks;
  std::unordered_map<std::string, int> by_name;
  Eigen::Index total = 0;

  void add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  const BlockSpec& at(const std::string& name) const;
};

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;

MatMap map_block(const ParamLayout& layout, std::vector<double>& data,
                 const std::string& name);
ConstMatMap map_block(const ParamLayout& layout, const std::vector<double>& data,
                      const std::string& name);

struct CarryoverModel {
  Hyperparams hyper;
  std::vector<std::string> vocab;  // embedding-table tokens, then markers
  std::unordered_map<std::string, int> vocab_index;
  ParamLayout layout;
  std::vector<double> params;

  // Row of a token's embedding; out-of-vocabulary tokens hash into the
  // trailing bucket rows, so lookup is total.
  int token_row(const std::string& token) const;
  int embedding_rows() const;

  MatMap block(const std::string& name) { return map_block(layout, params, name); }
  ConstMatMap block(const std::string& name) const {
    return map_block(layout, params, name);
  }
};

struct Prediction {
  double probability = 0.0;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long step = 0;
};

CarryoverModel init_model(const Hyperparams& hyper, const EmbeddingTable& embeddings,
                          std::uint64_t seed);

Prediction forward(const CarryoverModel& model, const CandidateExample& example);

// Class-weighted binary cross-entropy averaged over the batch, plus exact
// reverse-mode gradients for every parameter.
std::pair<double, std::vector<double>> loss_and_grad(
    const CarryoverModel& model, const std::vector<CandidateExample>& batch,
    const Hyperparams& hyper);

// Bias-corrected Adam update in place. Rejects non-finite gradients.
void adam_step(CarryoverModel& model, const std::vector<double>& grads, AdamState& state,
               const Hyperparams& hyper);

struct PretrainedEncoder {
  Eigen::MatrixXd wx;  // 4h x d
  Eigen::MatrixXd wh;  // 4h x h
  Eigen::VectorXd b;   // 4h
  double initial_perplexity = 0.0;
  double final_perplexity = 0.0;
};

// Forward recurrent next-token language model over all utterances; its cell
// weights seed the forward halves of both encoders.
PretrainedEncoder pretrain_encoder(const std::vector<DialogueSession>& sessions,
                                   const Hyperparams& hyper, std::uint64_t seed,
                                   int epochs = 5);

void apply_pretrained_encoder(CarryoverModel& model, const PretrainedEncoder& pretrained);

// Source-language initialization: every non-embedding block copied from the
// source model, embedding rows re-looked-up from the target table by token.
CarryoverModel transfer_init(const CarryoverModel& source_model,
                             const EmbeddingTable& target_embeddings);

void save_checkpoint(const CarryoverModel& model, const std::string& path);
CarryoverModel load_checkpoint(const std::string& path);

void save_pretrained_encoder(const PretrainedEncoder& encoder, const std::string& path);
PretrainedEncoder load_pretrained_encoder(const std::string& path);

// Attention weights of the last forward pass are exposed for tests via this
// richer entry point.
struct ForwardDetails {
  Prediction prediction;
  Eigen::VectorXd attention_weights;
};
ForwardDetails forward_details(const CarryoverModel& model, const CandidateExample& example);

}  // namespace carryover
