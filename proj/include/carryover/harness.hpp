#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "carryover/corpus.hpp"
#include "carryover/embeddings.hpp"
#include "carryover/model.hpp"
#include "carryover/translation.hpp"

namespace carryover {

struct Metrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

Metrics prf1(long tp, long fp, long fn);

// Carry iff probability > tau, the slot key is not already present among the
// current turn's own slots, and the candidate came from the context window.
bool decide(const Prediction& prediction, const CandidateExample& example, double tau);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  Metrics dev;
};

struct TrainResult {
  CarryoverModel best_model;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

// Shuffled mini-batch training with per-epoch dev evaluation; returns the
// checkpoint with the best dev F1 (ties resolved to the earliest epoch).
TrainResult train(const std::vector<CandidateExample>& train_examples,
                  const std::vector<DialogueSession>& dev_sessions,
                  const Hyperparams& hyper, CarryoverModel initial_model,
                  const SchemaMap* schema_map = nullptr);

Metrics evaluate(const CarryoverModel& model, const std::vector<DialogueSession>& sessions,
                 const Hyperparams& hyper, const SchemaMap* schema_map = nullptr);

// Naive baseline: all slots of the most recent slot-bearing preceding turn,
// minus slots whose key repeats in the current turn.
std::set<Slot> naive_baseline_predict(const DialogueSession& session, int t);

Metrics evaluate_baseline(const std::vector<DialogueSession>& sessions);

// Inverse class frequency weight (#negatives / #positives) on a training set.
double inverse_frequency_weight(const std::vector<CandidateExample>& examples);

enum class EmbeddingMode { Monolingual, Multilingual };

struct ExperimentConfig {
  std::vector<double> fractions = {0.01, 0.25, 1.0};
  std::vector<bool> delex_options = {false, true};
  std::vector<bool> source_init_options = {false};
  std::vector<EmbeddingMode> embedding_modes = {EmbeddingMode::Monolingual};
  bool joint_training_with_source = false;
  std::vector<std::uint64_t> seeds = {1};
  Hyperparams hyper;
  // Fraction of the delexicalized source data mixed in (1.0 = all of it).
  double source_delex_fraction = 1.0;
};

struct GridResources {
  std::vector<DialogueSession> source_train;
  std::vector<DialogueSession> source_dev;
  std::vector<DialogueSession> target_train;  // translated source
  std::vector<DialogueSession> target_dev;
  std::vector<DialogueSession> target_test;
  std::optional<SchemaMap> schema_map;
  EmbeddingTable mono_source;
  EmbeddingTable mono_target;
  EmbeddingTable multi_shared;  // aligned cross-lingual space
};

// Distinct tokens appearing anywhere in a corpus: utterance tokens, act and
// intent symbols, slot keys, and slot value tokens. Sorted.
std::vector<std::string> corpus_vocabulary(const std::vector<DialogueSession>& sessions);

struct GridResourceOptions {
  int embedding_dim = 16;
  std::uint64_t seed = 2024;
};

// Assembles the shared inputs of an experiment grid from source-language
// corpora, native target dev/test corpora and a phrase table: translates the
// source training set into the target language, builds per-language random
// embedding tables, and constructs the shared cross-lingual space by planting
// a rotation of the source table for dictionary words and aligning the target
// table back with orthogonal Procrustes over the phrase table's single-word
// entries.
GridResources build_grid_resources(std::vector<DialogueSession> source_train,
                                   std::vector<DialogueSession> source_dev,
                                   std::vector<DialogueSession> target_dev,
                                   std::vector<DialogueSession> target_test,
                                   const LexiconTranslator& translator,
                                   const std::string& target_language,
                                   std::optional<SchemaMap> schema_map,
                                   const GridResourceOptions& options = {});

struct CellResult {
  double fraction = 1.0;
  bool use_delex = false;
  bool use_source_init = false;
  EmbeddingMode embedding_mode = EmbeddingMode::Monolingual;
  std::uint64_t seed = 0;
  Metrics metrics;
  bool failed = false;
  std::string failure;
};

struct ExperimentReport {
  std::vector<CellResult> cells;  // per seed
  std::vector<CellResult> means;  // aggregated over seeds, seed field unused

  std::string to_tsv() const;
  std::string to_table() const;
};

ExperimentReport run_experiment_grid(const ExperimentConfig& config,
                                     const GridResources& resources);

}  // namespace carryover
