#include "carryover/harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "carryover/delex.hpp"
#include "carryover/tokenize.hpp"

namespace carryover {

Metrics prf1(long tp, long fp, long fn) {
  if (tp < 0 || fp < 0 || fn < 0) throw InputError("prf1: counts must be >= 0");
  Metrics m;
  m.tp = tp;
  m.fp = fp;
  m.fn = fn;
  m.precision = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

bool decide(const Prediction& prediction, const CandidateExample& example, double tau) {
  if (prediction.probability <= tau) return false;
  for (const Slot& own : example.current_turn.slots) {
    if (own.key == example.slot.key) return false;  // entity type repeated
  }
  // Candidates are built from the context window by construction.
  return true;
}

double inverse_frequency_weight(const std::vector<CandidateExample>& examples) {
  long pos = 0, neg = 0;
  for (const CandidateExample& ex : examples) {
    if (ex.label && *ex.label) {
      ++pos;
    } else {
      ++neg;
    }
  }
  if (pos == 0) return 1.0;
  return static_cast<double>(neg) / static_cast<double>(pos);
}

Metrics evaluate(const CarryoverModel& model, const std::vector<DialogueSession>& sessions,
                 const Hyperparams& hyper, const SchemaMap* schema_map) {
  long tp = 0, fp = 0, fn = 0;
  for (const DialogueSession& session : sessions) {
    for (int t = 1; t < session.num_user_turns(); ++t) {
      std::set<SlotKeyValue> gold;
      auto it = session.gold_carryover.find(t);
      if (it != session.gold_carryover.end()) gold = it->second;
      std::set<SlotKeyValue> hypothesis;
      for (const CandidateExample& ex :
           candidate_set(session, t, hyper.window, schema_map)) {
        if (decide(forward(model, ex), ex, hyper.threshold)) {
          hypothesis.insert({ex.slot.key, ex.slot.value});
        }
      }
      for (const SlotKeyValue& pair : hypothesis) {
        if (gold.count(pair)) {
          ++tp;
        } else {
          ++fp;
        }
      }
      for (const SlotKeyValue& pair : gold) {
        if (!hypothesis.count(pair)) ++fn;
      }
    }
  }
  return prf1(tp, fp, fn);
}

std::set<Slot> naive_baseline_predict(const DialogueSession& session, int t) {
  if (t < 1) throw InputError("naive_baseline_predict: t must be >= 1");
  validate_session(session);
  const int current_index = session.user_turn_index(t);
  const Turn& current = session.turns[current_index];
  std::set<Slot> out;
  for (int i = current_index - 1; i >= 0; --i) {
    if (session.turns[i].slots.empty()) continue;
    for (const Slot& slot : session.turns[i].slots) {
      bool repeated = std::any_of(current.slots.begin(), current.slots.end(),
                                  [&](const Slot& own) { return own.key == slot.key; });
      if (!repeated) out.insert(slot);
    }
    break;  // most recent slot-bearing turn only
  }
  return out;
}

Metrics evaluate_baseline(const std::vector<DialogueSession>& sessions) {
  long tp = 0, fp = 0, fn = 0;
  for (const DialogueSession& session : sessions) {
    for (int t = 1; t < session.num_user_turns(); ++t) {
      std::set<SlotKeyValue> gold;
      auto it = session.gold_carryover.find(t);
      if (it != session.gold_carryover.end()) gold = it->second;
      std::set<SlotKeyValue> hypothesis;
      for (const Slot& slot : naive_baseline_predict(session, t)) {
        hypothesis.insert({slot.key, slot.value});
      }
      for (const SlotKeyValue& pair : hypothesis) {
        if (gold.count(pair)) {
          ++tp;
        } else {
          ++fp;
        }
      }
      for (const SlotKeyValue& pair : gold) {
        if (!hypothesis.count(pair)) ++fn;
      }
    }
  }
  return prf1(tp, fp, fn);
}

TrainResult train(const std::vector<CandidateExample>& train_examples,
                  const std::vector<DialogueSession>& dev_sessions,
                  const Hyperparams& hyper, CarryoverModel initial_model,
                  const SchemaMap* schema_map) {
  if (train_examples.empty()) throw InputError("train: empty training set");
  if (dev_sessions.empty()) throw InputError("train: empty dev set");
  hyper.validate();

  TrainResult result;
  CarryoverModel model = std::move(initial_model);
  AdamState state;
  double best_f1 = -1.0;

  std::vector<size_t> order(train_examples.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    std::mt19937_64 rng(hyper.seed * 0x9e3779b97f4a7c15ull +
                        static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    long seen = 0;
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(hyper.batch_size)) {
      std::vector<CandidateExample> batch;
      for (size_t i = start;
           i < std::min(order.size(), start + static_cast<size_t>(hyper.batch_size)); ++i) {
        batch.push_back(train_examples[order[i]]);
      }
      auto [loss, grads] = loss_and_grad(model, batch, hyper);
      if (!std::isfinite(loss)) {
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(start / hyper.batch_size));
      }
      epoch_loss += loss * static_cast<double>(batch.size());
      seen += static_cast<long>(batch.size());
      adam_step(model, grads, state, hyper);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = epoch_loss / static_cast<double>(seen);
    record.dev = evaluate(model, dev_sessions, hyper, schema_map);
    result.history.push_back(record);
    if (record.dev.f1 > best_f1) {
      best_f1 = record.dev.f1;
      result.best_epoch = epoch;
      result.best_model = model;
    }
  }
  return result;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Fixed derivation rule so any grid cell can be re-run in isolation.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return splitmix64(base * 0x100000001b3ull + salt);
}

EmbeddingTable merge_tables(const EmbeddingTable& primary, const EmbeddingTable& extra) {
  EmbeddingTable out = primary;
  std::vector<int> extra_rows;
  for (int i = 0; i < extra.size(); ++i) {
    if (!out.contains(extra.vocab[i])) {
      out.vocab.push_back(extra.vocab[i]);
      out.index.emplace(extra.vocab[i], static_cast<int>(out.vocab.size()) - 1);
      extra_rows.push_back(i);
    }
  }
  Eigen::MatrixXd merged(out.vocab.size(), out.dim);
  merged.topRows(primary.vectors.rows()) = primary.vectors;
  for (size_t i = 0; i < extra_rows.size(); ++i) {
    merged.row(primary.vectors.rows() + i) = extra.vectors.row(extra_rows[i]);
  }
  out.vectors = std::move(merged);
  return out;
}

std::string format_pct(double value) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << value * 100.0;
  return out.str();
}

}  // namespace

std::vector<std::string> corpus_vocabulary(const std::vector<DialogueSession>& sessions) {
  std::set<std::string> vocab;
  for (const DialogueSession& session : sessions) {
    for (const Turn& turn : session.turns) {
      vocab.insert(turn.tokens.begin(), turn.tokens.end());
      if (!turn.act.empty()) vocab.insert(turn.act);
      if (!turn.intent.empty()) vocab.insert(turn.intent);
      for (const Slot& slot : turn.slots) {
        vocab.insert(slot.key);
        for (const std::string& token : tokenize(slot.value)) vocab.insert(token);
      }
    }
  }
  return {vocab.begin(), vocab.end()};
}

GridResources build_grid_resources(std::vector<DialogueSession> source_train,
                                   std::vector<DialogueSession> source_dev,
                                   std::vector<DialogueSession> target_dev,
                                   std::vector<DialogueSession> target_test,
                                   const LexiconTranslator& translator,
                                   const std::string& target_language,
                                   std::optional<SchemaMap> schema_map,
                                   const GridResourceOptions& options) {
  if (options.embedding_dim <= 0) throw ConfigError("embedding_dim must be > 0");
  GridResources res;
  res.target_train = translate_sessions(source_train, translator, target_language);
  res.source_train = std::move(source_train);
  res.source_dev = std::move(source_dev);
  res.target_dev = std::move(target_dev);
  res.target_test = std::move(target_test);
  res.schema_map = std::move(schema_map);

  std::string source_language =
      res.source_train.empty() ? "source" : res.source_train.front().language;

  // Schema-mapped keys can name candidates even when no turn owns them.
  std::vector<std::string> extra_keys;
  if (res.schema_map) {
    for (const auto& [from, to] : res.schema_map->entries) extra_keys.push_back(to.second);
  }
  auto vocab_of = [&](std::initializer_list<const std::vector<DialogueSession>*> corpora) {
    std::vector<DialogueSession> all;
    for (const auto* corpus : corpora) all.insert(all.end(), corpus->begin(), corpus->end());
    std::vector<std::string> vocab = corpus_vocabulary(all);
    std::set<std::string> set(vocab.begin(), vocab.end());
    set.insert(extra_keys.begin(), extra_keys.end());
    return std::vector<std::string>(set.begin(), set.end());
  };
  std::vector<std::string> source_vocab = vocab_of({&res.source_train, &res.source_dev});
  std::vector<std::string> target_vocab =
      vocab_of({&res.target_train, &res.target_dev, &res.target_test});

  const int dim = options.embedding_dim;
  res.mono_source = random_embedding_table(source_vocab, dim,
                                           derive_seed(options.seed, 11), source_language);
  res.mono_target = random_embedding_table(target_vocab, dim,
                                           derive_seed(options.seed, 12), target_language);

  // Shared space: target vectors of dictionary words are a planted rotation
  // of the corresponding source vectors; Procrustes recovers the rotation and
  // maps the whole target table back into the source space.
  std::vector<std::pair<std::string, std::string>> dictionary;  // (target, source)
  for (const auto& [src_phrase, tgt_phrase] : translator.phrases()) {
    if (src_phrase.find(' ') != std::string::npos ||
        tgt_phrase.find(' ') != std::string::npos) {
      continue;
    }
    if (res.mono_source.contains(src_phrase) && res.mono_target.contains(tgt_phrase)) {
      dictionary.emplace_back(tgt_phrase, src_phrase);
    }
  }
  // Words shared verbatim across languages (acts, intents, slot keys) anchor
  // the mapping as identity pairs.
  for (const std::string& word : source_vocab) {
    if (res.mono_target.contains(word)) dictionary.emplace_back(word, word);
  }
  std::sort(dictionary.begin(), dictionary.end());
  dictionary.erase(std::unique(dictionary.begin(), dictionary.end()), dictionary.end());
  if (static_cast<int>(dictionary.size()) < dim) {
    throw InputError("build_grid_resources: dictionary has " +
                     std::to_string(dictionary.size()) + " pairs, need at least " +
                     std::to_string(dim) + " to align dim-" + std::to_string(dim) +
                     " embeddings");
  }

  Eigen::MatrixXd rotation = random_orthogonal(dim, derive_seed(options.seed, 13));
  EmbeddingTable rotated_target = res.mono_target;
  for (const auto& [tgt_word, src_word] : dictionary) {
    rotated_target.vectors.row(rotated_target.index.at(tgt_word)) =
        res.mono_source.vectors.row(res.mono_source.index.at(src_word)) * rotation;
  }
  AlignmentResult alignment = procrustes_align(rotated_target, res.mono_source, dictionary);
  EmbeddingTable mapped_target =
      apply_mapping(rotated_target, alignment.mapping, target_language);
  res.multi_shared = merge_tables(res.mono_source, mapped_target);
  res.multi_shared.language = source_language + "+" + target_language;
  res.multi_shared.shared_space = true;
  return res;
}

std::string ExperimentReport::to_tsv() const {
  std::ostringstream out;
  out << "fraction\tdelex\tsource_init\tembedding\tseed\tprecision\trecall\tf1\n";
  auto emit = [&](const CellResult& cell, const std::string& seed_label) {
    out << cell.fraction << '\t' << (cell.use_delex ? "yes" : "no") << '\t'
        << (cell.use_source_init ? "yes" : "no") << '\t'
        << (cell.embedding_mode == EmbeddingMode::Multilingual ? "multilingual"
                                                               : "monolingual")
        << '\t' << seed_label << '\t';
    if (cell.failed) {
      out << "failed\tfailed\tfailed\n";
    } else {
      out << format_pct(cell.metrics.precision) << '\t' << format_pct(cell.metrics.recall)
          << '\t' << format_pct(cell.metrics.f1) << '\n';
    }
  };
  for (const CellResult& cell : cells) emit(cell, std::to_string(cell.seed));
  for (const CellResult& cell : means) emit(cell, "mean");
  return out.str();
}

std::string ExperimentReport::to_table() const {
  std::ostringstream out;
  out << std::left << std::setw(10) << "fraction" << std::setw(7) << "delex" << std::setw(13)
      << "source_init" << std::setw(14) << "embedding" << std::setw(7) << "seed"
      << std::right << std::setw(10) << "precision" << std::setw(8) << "recall"
      << std::setw(8) << "f1" << '\n';
  auto emit = [&](const CellResult& cell, const std::string& seed_label) {
    out << std::left << std::setw(10) << cell.fraction << std::setw(7)
        << (cell.use_delex ? "yes" : "no") << std::setw(13)
        << (cell.use_source_init ? "yes" : "no") << std::setw(14)
        << (cell.embedding_mode == EmbeddingMode::Multilingual ? "multilingual"
                                                               : "monolingual")
        << std::setw(7) << seed_label << std::right;
    if (cell.failed) {
      out << std::setw(10) << "failed" << std::setw(8) << "-" << std::setw(8) << "-" << '\n';
    } else {
      out << std::setw(10) << format_pct(cell.metrics.precision) << std::setw(8)
          << format_pct(cell.metrics.recall) << std::setw(8) << format_pct(cell.metrics.f1)
          << '\n';
    }
  };
  for (const CellResult& cell : cells) emit(cell, std::to_string(cell.seed));
  for (const CellResult& cell : means) emit(cell, "mean");
  return out.str();
}

ExperimentReport run_experiment_grid(const ExperimentConfig& config,
                                     const GridResources& resources) {
  ExperimentReport report;
  const SchemaMap* schema =
      resources.schema_map && !resources.schema_map->empty() ? &*resources.schema_map : nullptr;
  const int window = config.hyper.window;

  // Source-language examples are shared across cells.
  std::vector<CandidateExample> source_examples =
      corpus_examples(resources.source_train, window, schema);

  // Trained source models, one per (seed, embedding mode), built on demand.
  std::map<std::pair<std::uint64_t, int>, CarryoverModel> source_models;

  for (EmbeddingMode mode : config.embedding_modes) {
    EmbeddingTable table = mode == EmbeddingMode::Multilingual
                               ? resources.multi_shared
                               : merge_tables(resources.mono_target, resources.mono_source);
    for (double fraction : config.fractions) {
      for (bool use_delex : config.delex_options) {
        for (bool use_source_init : config.source_init_options) {
          std::vector<CellResult> seed_results;
          for (std::uint64_t seed : config.seeds) {
            CellResult cell;
            cell.fraction = fraction;
            cell.use_delex = use_delex;
            cell.use_source_init = use_source_init;
            cell.embedding_mode = mode;
            cell.seed = seed;
            try {
              std::uint64_t cell_seed = derive_seed(
                  seed, static_cast<std::uint64_t>(fraction * 10000.0) * 8 +
                            (use_delex ? 4 : 0) + (use_source_init ? 2 : 0) +
                            (mode == EmbeddingMode::Multilingual ? 1 : 0));
              auto target_train =
                  subsample(resources.target_train, fraction, derive_seed(cell_seed, 1));
              std::vector<CandidateExample> examples =
                  corpus_examples(target_train, window, schema);
              if (examples.empty()) {
                throw InputError("no target training examples at this fraction");
              }
              if (use_delex) {
                auto source_pool = config.source_delex_fraction < 1.0
                                       ? corpus_examples(
                                             subsample(resources.source_train,
                                                       config.source_delex_fraction,
                                                       derive_seed(cell_seed, 2)),
                                             window, schema)
                                       : source_examples;
                auto delexed = delexicalize_dataset(source_pool);
                examples.insert(examples.end(), delexed.begin(), delexed.end());
              }
              if (config.joint_training_with_source) {
                examples.insert(examples.end(), source_examples.begin(),
                                source_examples.end());
              }
              Hyperparams hyper = config.hyper;
              hyper.seed = cell_seed;
              hyper.positive_class_weight = inverse_frequency_weight(examples);

              CarryoverModel init;
              if (use_source_init) {
                auto key = std::make_pair(seed, mode == EmbeddingMode::Multilingual ? 1 : 0);
                auto cached = source_models.find(key);
                if (cached == source_models.end()) {
                  Hyperparams src_hyper = config.hyper;
                  src_hyper.seed = derive_seed(seed, 900 + key.second);
                  src_hyper.positive_class_weight =
                      inverse_frequency_weight(source_examples);
                  CarryoverModel src_init =
                      init_model(src_hyper, table, src_hyper.seed);
                  TrainResult src_result = train(source_examples, resources.source_dev,
                                                 src_hyper, std::move(src_init), schema);
                  cached = source_models
                               .emplace(key, std::move(src_result.best_model))
                               .first;
                }
                init = transfer_init(cached->second, table);
                init.hyper = hyper;
              } else {
                init = init_model(hyper, table, cell_seed);
              }
              TrainResult trained =
                  train(examples, resources.target_dev, hyper, std::move(init), schema);
              cell.metrics =
                  evaluate(trained.best_model, resources.target_test, hyper, schema);
            } catch (const std::exception& e) {
              cell.failed = true;
              cell.failure = e.what();
            }
            seed_results.push_back(cell);
            report.cells.push_back(cell);
          }
          CellResult mean = seed_results.front();
          mean.seed = 0;
          long tp = 0, fp = 0, fn = 0;
          double p = 0, r = 0, f = 0;
          int ok = 0;
          for (const CellResult& c : seed_results) {
            if (c.failed) continue;
            p += c.metrics.precision;
            r += c.metrics.recall;
            f += c.metrics.f1;
            tp += c.metrics.tp;
            fp += c.metrics.fp;
            fn += c.metrics.fn;
            ++ok;
          }
          if (ok > 0) {
            mean.failed = false;
            mean.metrics.precision = p / ok;
            mean.metrics.recall = r / ok;
            mean.metrics.f1 = f / ok;
            mean.metrics.tp = tp;
            mean.metrics.fp = fp;
            mean.metrics.fn = fn;
          } else {
            mean.failed = true;
          }
          report.means.push_back(mean);
        }
      }
    }
  }
  return report;
}

}  // namespace carryover
