// Batch command-line front end: corpus generation, delexicalization,
// embedding alignment, translation projection, BLEU, pretraining, training,
// evaluation, and the cross-lingual experiment grid.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "carryover/corpus.hpp"
#include "carryover/delex.hpp"
#include "carryover/embeddings.hpp"
#include "carryover/error.hpp"
#include "carryover/generator.hpp"
#include "carryover/harness.hpp"
#include "carryover/model.hpp"
#include "carryover/tokenize.hpp"
#include "carryover/translation.hpp"

namespace fs = std::filesystem;
using namespace carryover;

namespace {

// All outputs go through a temp file + rename so a failed run never leaves a
// half-written artifact behind.
template <typename WriteFn>
void atomic_write(const std::string& path, WriteFn&& writer) {
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  writer(tmp.string());
  fs::rename(tmp, target);
}

void atomic_write_text(const std::string& path, const std::string& content) {
  atomic_write(path, [&](const std::string& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot open for writing: " + tmp);
    out << content;
    if (!out) throw Error("write failed: " + tmp);
  });
}

void echo_config(const std::string& command,
                 const std::vector<std::pair<std::string, std::string>>& entries) {
  std::cerr << "config: command=" << command;
  for (const auto& [key, value] : entries) std::cerr << ' ' << key << '=' << value;
  std::cerr << '\n';
}

std::string metrics_line(const Metrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "precision=%.2f recall=%.2f f1=%.2f tp=%ld fp=%ld fn=%ld",
                m.precision * 100.0, m.recall * 100.0, m.f1 * 100.0, m.tp, m.fp, m.fn);
  return buf;
}

// Hyperparameter flags shared by pretrain/train/grid; each flag's default is
// the model's own default so the echoed config is always complete.
void add_hyper_flags(CLI::App* cmd, Hyperparams& hyper) {
  cmd->add_option("--embedding-dim", hyper.embedding_dim, "Word embedding dimension")
      ->capture_default_str();
  cmd->add_option("--encoder-hidden", hyper.encoder_hidden,
                  "Encoder hidden size per direction")
      ->capture_default_str();
  cmd->add_option("--decoder-hidden", hyper.decoder_hidden, "Decoder hidden layer size")
      ->capture_default_str();
  cmd->add_option("--window", hyper.window, "Context window D in user/system turn pairs")
      ->capture_default_str();
  cmd->add_option("--epochs", hyper.max_epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch-size", hyper.batch_size, "Mini-batch size")
      ->capture_default_str();
  cmd->add_option("--learning-rate", hyper.learning_rate, "Adam learning rate")
      ->capture_default_str();
  cmd->add_option("--threshold", hyper.threshold, "Carryover decision threshold tau")
      ->capture_default_str();
  cmd->add_option("--oov-buckets", hyper.oov_buckets, "Hashed OOV embedding rows")
      ->capture_default_str();
}

std::vector<std::pair<std::string, std::string>> hyper_entries(const Hyperparams& h) {
  auto num = [](double v) {
    std::ostringstream out;
    out << v;
    return out.str();
  };
  return {{"embedding_dim", std::to_string(h.embedding_dim)},
          {"encoder_hidden", std::to_string(h.encoder_hidden)},
          {"decoder_hidden", std::to_string(h.decoder_hidden)},
          {"window", std::to_string(h.window)},
          {"epochs", std::to_string(h.max_epochs)},
          {"batch_size", std::to_string(h.batch_size)},
          {"learning_rate", num(h.learning_rate)},
          {"threshold", num(h.threshold)},
          {"oov_buckets", std::to_string(h.oov_buckets)}};
}

void write_sessions_atomic(const std::vector<DialogueSession>& sessions,
                           const std::string& path) {
  atomic_write(path, [&](const std::string& tmp) { write_sessions(sessions, tmp); });
}

std::vector<std::vector<std::string>> read_tokenized_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open: " + path);
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(tokenize(line));
  return lines;
}

EmbeddingTable training_embeddings(const std::string& embeddings_path,
                                   const std::vector<DialogueSession>& sessions,
                                   int dim, std::uint64_t seed) {
  if (!embeddings_path.empty()) {
    EmbeddingTable table = load_word_vectors_file(embeddings_path);
    if (table.dim != dim) {
      throw ConfigError("embedding file dimension " + std::to_string(table.dim) +
                        " does not match --embedding-dim " + std::to_string(dim));
    }
    return table;
  }
  std::string language = sessions.empty() ? "" : sessions.front().language;
  return random_embedding_table(corpus_vocabulary(sessions), dim, seed, language);
}

int run_generate(int sessions, int train_n, int dev_n, int test_n, std::uint64_t seed,
                 double distractor_rate, double extra_turn_rate, double topic_shift_rate,
                 const std::string& out_dir) {
  GeneratorConfig config = default_generator_config();
  config.distractor_rate = distractor_rate;
  config.extra_turn_rate = extra_turn_rate;
  config.topic_shift_rate = topic_shift_rate;
  fs::create_directories(out_dir);
  auto emit = [&](const std::string& split,
                  const std::map<std::string, std::vector<DialogueSession>>& corpus) {
    for (const auto& [language, data] : corpus) {
      std::string name = split.empty() ? language : split + "." + language;
      write_sessions_atomic(data, out_dir + "/" + name + ".jsonl");
      std::cerr << "wrote " << data.size() << " sessions: " << out_dir << '/' << name
                << ".jsonl\n";
    }
  };
  if (train_n > 0) {
    GeneratorConfig base = config;
    SyntheticBenchmark bench = make_benchmark(train_n, dev_n, test_n, seed, base);
    emit("train", bench.train);
    emit("dev", bench.dev);
    emit("test", bench.test);
  } else {
    config.num_sessions = sessions;
    emit("", synthesize_parallel_corpus(config, seed));
  }
  atomic_write(out_dir + "/schema_map.tsv", [&](const std::string& tmp) {
    write_schema_map(config.schema_map, tmp);
  });
  atomic_write(out_dir + "/phrase_table.tsv", [&](const std::string& tmp) {
    default_phrase_table().write_tsv(tmp);
  });
  return 0;
}

int run_delex(const std::string& input, const std::string& output) {
  std::vector<DialogueSession> sessions = read_sessions(input);
  for (DialogueSession& session : sessions) {
    for (Turn& turn : session.turns) turn = delexicalize_turn(turn);
    // Gold values follow the surface rewrite: every carried value becomes its
    // slot key symbol.
    for (auto& [t, gold] : session.gold_carryover) {
      std::set<SlotKeyValue> rewritten;
      for (const SlotKeyValue& pair : gold) rewritten.insert({pair.first, pair.first});
      gold = std::move(rewritten);
    }
  }
  write_sessions_atomic(sessions, output);
  std::cerr << "delexicalized " << sessions.size() << " sessions\n";
  return 0;
}

int run_align(const std::string& src_path, const std::string& tgt_path,
              const std::string& dict_path, const std::string& output,
              bool normalize) {
  EmbeddingTable src = load_word_vectors_file(src_path);
  EmbeddingTable tgt = load_word_vectors_file(tgt_path);
  if (normalize) {
    src.length_normalize();
    tgt.length_normalize();
  }
  std::ifstream dict_in(dict_path);
  if (!dict_in) throw InputError("cannot open dictionary: " + dict_path);
  std::vector<std::pair<std::string, std::string>> dictionary;
  std::string line;
  while (std::getline(dict_in, line)) {
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError("dictionary line without tab: " + line);
    }
    dictionary.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  AlignmentResult result = procrustes_align(src, tgt, dictionary);
  EmbeddingTable mapped = apply_mapping(src, result.mapping, tgt.language);
  atomic_write(output,
               [&](const std::string& tmp) { write_word_vectors_file(mapped, tmp); });
  char buf[128];
  std::snprintf(buf, sizeof buf, "residual=%.6f dictionary_accuracy=%.4f\n",
                result.residual, result.dictionary_accuracy);
  std::cout << buf;
  return 0;
}

int run_translate(const std::string& input, const std::string& phrase_table,
                  const std::string& command, const std::string& target_language,
                  const std::string& output) {
  std::vector<DialogueSession> sessions = read_sessions(input);
  std::unique_ptr<Translator> translator;
  if (!command.empty()) {
    translator = std::make_unique<ExternalCommandTranslator>(command);
  } else if (!phrase_table.empty()) {
    translator = std::make_unique<LexiconTranslator>(LexiconTranslator::from_tsv(phrase_table));
  } else {
    throw ConfigError("translate requires --phrase-table or --command");
  }
  write_sessions_atomic(translate_sessions(sessions, *translator, target_language), output);
  std::cerr << "translated " << sessions.size() << " sessions to " << target_language
            << '\n';
  return 0;
}

int run_bleu(const std::string& hyp_path, const std::string& ref_path, bool smooth) {
  BleuReport report =
      corpus_bleu(read_tokenized_lines(hyp_path), read_tokenized_lines(ref_path), 4, smooth);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "bleu=%.4f bp=%.4f p1=%.4f p2=%.4f p3=%.4f p4=%.4f hyp_len=%ld ref_len=%ld\n",
                report.score, report.brevity_penalty, report.per_n_precision[0],
                report.per_n_precision[1], report.per_n_precision[2],
                report.per_n_precision[3], report.hyp_length, report.ref_length);
  std::cout << buf;
  return 0;
}

int run_pretrain(const std::string& input, const std::string& output,
                 const Hyperparams& hyper, int epochs, std::uint64_t seed) {
  std::vector<DialogueSession> sessions = read_sessions(input);
  PretrainedEncoder encoder = pretrain_encoder(sessions, hyper, seed, epochs);
  atomic_write(output, [&](const std::string& tmp) {
    save_pretrained_encoder(encoder, tmp);
  });
  char buf[128];
  std::snprintf(buf, sizeof buf, "initial_perplexity=%.4f final_perplexity=%.4f\n",
                encoder.initial_perplexity, encoder.final_perplexity);
  std::cout << buf;
  return 0;
}

int run_train(const std::string& train_path, const std::string& dev_path,
              const std::string& model_out, const std::string& schema_path,
              const std::string& embeddings_path, const std::string& init_from,
              const std::string& pretrained_path, bool delex_augment, double fraction,
              double class_weight, Hyperparams hyper, std::uint64_t seed) {
  hyper.seed = seed;
  std::vector<DialogueSession> train_sessions = read_sessions(train_path);
  std::vector<DialogueSession> dev_sessions = read_sessions(dev_path);
  SchemaMap schema;
  if (!schema_path.empty()) schema = read_schema_map(schema_path);
  const SchemaMap* schema_ptr = schema.empty() ? nullptr : &schema;

  if (fraction < 1.0) train_sessions = subsample(train_sessions, fraction, seed);
  std::vector<CandidateExample> examples =
      corpus_examples(train_sessions, hyper.window, schema_ptr);
  if (delex_augment) {
    std::vector<std::string> skipped;
    examples = augment_with_delex(examples, &skipped);
    if (!skipped.empty()) {
      std::cerr << "delex skipped " << skipped.size() << " examples\n";
    }
  }
  hyper.positive_class_weight =
      class_weight > 0.0 ? class_weight : inverse_frequency_weight(examples);

  CarryoverModel init;
  if (!init_from.empty()) {
    CarryoverModel source = load_checkpoint(init_from);
    EmbeddingTable table = training_embeddings(embeddings_path, train_sessions,
                                               hyper.embedding_dim, seed);
    init = transfer_init(source, table);
    init.hyper = hyper;
  } else {
    EmbeddingTable table = training_embeddings(embeddings_path, train_sessions,
                                               hyper.embedding_dim, seed);
    init = init_model(hyper, table, seed);
  }
  if (!pretrained_path.empty()) {
    apply_pretrained_encoder(init, load_pretrained_encoder(pretrained_path));
  }

  std::cerr << "training on " << examples.size() << " examples (class weight "
            << hyper.positive_class_weight << ")\n";
  TrainResult result = train(examples, dev_sessions, hyper, std::move(init), schema_ptr);
  for (const EpochRecord& record : result.history) {
    std::cerr << "epoch " << record.epoch << " loss=" << record.train_loss << " dev "
              << metrics_line(record.dev) << '\n';
  }
  atomic_write(model_out, [&](const std::string& tmp) {
    save_checkpoint(result.best_model, tmp);
  });
  std::cout << "best_epoch=" << result.best_epoch << ' '
            << metrics_line(result.history[result.best_epoch - 1].dev) << '\n';
  return 0;
}

int run_evaluate(const std::string& model_path, const std::string& input,
                 const std::string& schema_path, double threshold,
                 const std::string& report_path) {
  CarryoverModel model = load_checkpoint(model_path);
  Hyperparams hyper = model.hyper;
  if (threshold > 0.0) hyper.threshold = threshold;
  std::vector<DialogueSession> sessions = read_sessions(input);
  SchemaMap schema;
  if (!schema_path.empty()) schema = read_schema_map(schema_path);
  Metrics metrics = evaluate(model, sessions, hyper, schema.empty() ? nullptr : &schema);
  std::string line = metrics_line(metrics) + "\n";
  std::cout << line;
  if (!report_path.empty()) atomic_write_text(report_path, line);
  return 0;
}

int run_baseline(const std::string& input, const std::string& report_path) {
  Metrics metrics = evaluate_baseline(read_sessions(input));
  std::string line = metrics_line(metrics) + "\n";
  std::cout << line;
  if (!report_path.empty()) atomic_write_text(report_path, line);
  return 0;
}

std::vector<bool> parse_toggle(const std::string& value, const std::string& flag) {
  if (value == "off") return {false};
  if (value == "on") return {true};
  if (value == "both") return {false, true};
  throw ConfigError(flag + " must be one of: off, on, both");
}

int run_grid(const std::string& source_train, const std::string& source_dev,
             const std::string& target_dev, const std::string& target_test,
             const std::string& phrase_table, const std::string& schema_path,
             const std::string& target_language, std::vector<double> fractions,
             const std::string& delex, const std::string& source_init,
             std::vector<std::string> embedding_modes, std::vector<std::uint64_t> seeds,
             double source_delex_fraction, const Hyperparams& hyper,
             std::uint64_t seed, const std::string& report_path) {
  ExperimentConfig config;
  config.hyper = hyper;
  config.hyper.seed = seed;
  if (!fractions.empty()) config.fractions = fractions;
  config.delex_options = parse_toggle(delex, "--delex");
  config.source_init_options = parse_toggle(source_init, "--source-init");
  config.embedding_modes.clear();
  for (const std::string& mode : embedding_modes) {
    if (mode == "mono") {
      config.embedding_modes.push_back(EmbeddingMode::Monolingual);
    } else if (mode == "multi") {
      config.embedding_modes.push_back(EmbeddingMode::Multilingual);
    } else {
      throw ConfigError("--embedding-modes entries must be 'mono' or 'multi'");
    }
  }
  if (config.embedding_modes.empty()) {
    config.embedding_modes.push_back(EmbeddingMode::Monolingual);
  }
  if (!seeds.empty()) config.seeds = seeds;
  config.source_delex_fraction = source_delex_fraction;

  std::optional<SchemaMap> schema;
  if (!schema_path.empty()) schema = read_schema_map(schema_path);
  LexiconTranslator translator = LexiconTranslator::from_tsv(phrase_table);
  GridResourceOptions options;
  options.embedding_dim = hyper.embedding_dim;
  options.seed = seed;
  GridResources resources = build_grid_resources(
      read_sessions(source_train), read_sessions(source_dev), read_sessions(target_dev),
      read_sessions(target_test), translator, target_language, std::move(schema), options);

  ExperimentReport report = run_experiment_grid(config, resources);
  for (const CellResult& cell : report.cells) {
    if (cell.failed) {
      std::cerr << "cell failed (fraction=" << cell.fraction << " seed=" << cell.seed
                << "): " << cell.failure << '\n';
    }
  }
  std::cout << report.to_table();
  if (!report_path.empty()) atomic_write_text(report_path, report.to_tsv());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-lingual contextual slot carryover toolkit"};
  app.require_subcommand(1);

  auto positive_fraction = CLI::Validator(
      [](std::string& value) -> std::string {
        double v = std::stod(value);
        if (v <= 0.0 || v > 1.0) return "must be in (0, 1]";
        return {};
      },
      "FRACTION");

  // generate
  auto* generate = app.add_subcommand("generate", "Synthesize a parallel dialogue corpus");
  int gen_sessions = 2000, gen_train = 0, gen_dev = 500, gen_test = 500;
  std::uint64_t gen_seed = 1;
  double gen_distractor = 0.6, gen_extra = 0.2, gen_shift = 0.15;
  std::string gen_out;
  generate->add_option("--sessions", gen_sessions, "Sessions per language")
      ->capture_default_str();
  generate->add_option("--train", gen_train,
                       "Benchmark mode: training sessions (enables dev/test splits)");
  generate->add_option("--dev", gen_dev, "Benchmark dev sessions")->capture_default_str();
  generate->add_option("--test", gen_test, "Benchmark test sessions")->capture_default_str();
  generate->add_option("--distractor-rate", gen_distractor, "Distractor reply rate")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  generate->add_option("--extra-turn-rate", gen_extra, "Third-user-turn rate")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  generate->add_option("--topic-shift-rate", gen_shift, "Topic shift rate")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  generate->add_option("--seed", gen_seed, "Random seed")->capture_default_str();
  generate->add_option("--out-dir", gen_out, "Output directory")->required();

  // delex
  auto* delex = app.add_subcommand("delex", "Delexicalize a corpus in place of values");
  std::string delex_in, delex_out;
  std::uint64_t delex_seed = 1;
  delex->add_option("--input", delex_in, "Input JSONL corpus")->required();
  delex->add_option("--output", delex_out, "Output JSONL corpus")->required();
  delex->add_option("--seed", delex_seed, "Unused; recorded for provenance")
      ->capture_default_str();

  // align-embeddings
  auto* align = app.add_subcommand("align-embeddings",
                                   "Map source vectors into the target space (Procrustes)");
  std::string align_src, align_tgt, align_dict, align_out;
  bool align_norm = false;
  std::uint64_t align_seed = 1;
  align->add_option("--src", align_src, "Source word vectors")->required();
  align->add_option("--tgt", align_tgt, "Target word vectors")->required();
  align->add_option("--dict", align_dict, "Dictionary TSV (source<TAB>target)")->required();
  align->add_option("--output", align_out, "Mapped source vectors")->required();
  align->add_flag("--normalize", align_norm, "Length-normalize before aligning");
  align->add_option("--seed", align_seed, "Unused; recorded for provenance")
      ->capture_default_str();

  // translate
  auto* translate = app.add_subcommand("translate", "Project a corpus into another language");
  std::string tr_in, tr_pt, tr_cmd, tr_lang, tr_out;
  std::uint64_t tr_seed = 1;
  translate->add_option("--input", tr_in, "Input JSONL corpus")->required();
  translate->add_option("--phrase-table", tr_pt, "Phrase table TSV");
  translate->add_option("--command", tr_cmd, "External translator command (line protocol)");
  translate->add_option("--target-language", tr_lang, "Target language tag")->required();
  translate->add_option("--output", tr_out, "Output JSONL corpus")->required();
  translate->add_option("--seed", tr_seed, "Unused; recorded for provenance")
      ->capture_default_str();

  // bleu
  auto* bleu = app.add_subcommand("bleu", "Corpus BLEU of hypothesis vs reference text");
  std::string bleu_hyp, bleu_ref;
  bool bleu_smooth = false;
  bleu->add_option("--hyp", bleu_hyp, "Hypothesis text, one segment per line")->required();
  bleu->add_option("--ref", bleu_ref, "Reference text, one segment per line")->required();
  bleu->add_flag("--smooth", bleu_smooth, "Add-one smoothing for higher-order n-grams");

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the forward encoder as an LM");
  std::string pre_in, pre_out;
  int pre_epochs = 5;
  std::uint64_t pre_seed = 1;
  Hyperparams pre_hyper;
  pretrain->add_option("--input", pre_in, "Training JSONL corpus")->required();
  pretrain->add_option("--output", pre_out, "Pretrained encoder file")->required();
  pretrain->add_option("--pretrain-epochs", pre_epochs, "Language-model epochs")
      ->capture_default_str();
  pretrain->add_option("--seed", pre_seed, "Random seed")->capture_default_str();
  add_hyper_flags(pretrain, pre_hyper);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the carryover classifier");
  std::string trn_train, trn_dev, trn_model, trn_schema, trn_emb, trn_init, trn_pre;
  bool trn_delex = false;
  double trn_fraction = 1.0, trn_weight = 0.0;
  std::uint64_t trn_seed = 1;
  Hyperparams trn_hyper;
  train_cmd->add_option("--train", trn_train, "Training JSONL corpus")->required();
  train_cmd->add_option("--dev", trn_dev, "Dev JSONL corpus")->required();
  train_cmd->add_option("--model-out", trn_model, "Checkpoint output path")->required();
  train_cmd->add_option("--schema-map", trn_schema, "Schema map TSV");
  train_cmd->add_option("--embeddings", trn_emb, "Initial word vectors");
  train_cmd->add_option("--init-from", trn_init, "Source-language checkpoint to transfer");
  train_cmd->add_option("--pretrained-encoder", trn_pre, "Pretrained encoder file");
  train_cmd->add_flag("--delex-augment", trn_delex, "Append delexicalized copies");
  train_cmd->add_option("--fraction", trn_fraction, "Training-data fraction")
      ->check(positive_fraction)
      ->capture_default_str();
  train_cmd->add_option("--positive-class-weight", trn_weight,
                        "Positive class weight (0 = inverse class frequency)")
      ->capture_default_str();
  train_cmd->add_option("--seed", trn_seed, "Random seed")->capture_default_str();
  add_hyper_flags(train_cmd, trn_hyper);

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a corpus");
  std::string ev_model, ev_in, ev_schema, ev_report;
  double ev_threshold = 0.0;
  eval_cmd->add_option("--model", ev_model, "Checkpoint path")->required();
  eval_cmd->add_option("--input", ev_in, "Evaluation JSONL corpus")->required();
  eval_cmd->add_option("--schema-map", ev_schema, "Schema map TSV");
  eval_cmd->add_option("--threshold", ev_threshold,
                       "Decision threshold override (0 = checkpoint value)")
      ->capture_default_str();
  eval_cmd->add_option("--report", ev_report, "Write the metrics line to this file");

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Most-recent-slots baseline metrics");
  std::string bl_in, bl_report;
  baseline->add_option("--input", bl_in, "Evaluation JSONL corpus")->required();
  baseline->add_option("--report", bl_report, "Write the metrics line to this file");

  // grid
  auto* grid = app.add_subcommand("grid", "Cross-lingual transfer experiment grid");
  std::string gr_src_train, gr_src_dev, gr_tgt_dev, gr_tgt_test, gr_pt, gr_schema;
  std::string gr_lang = "de_DE", gr_delex = "both", gr_source_init = "off", gr_report;
  std::vector<double> gr_fractions;
  std::vector<std::string> gr_modes = {"mono"};
  std::vector<std::uint64_t> gr_seeds;
  double gr_sdf = 1.0;
  std::uint64_t gr_seed = 1;
  Hyperparams gr_hyper;
  grid->add_option("--source-train", gr_src_train, "Source-language train JSONL")->required();
  grid->add_option("--source-dev", gr_src_dev, "Source-language dev JSONL")->required();
  grid->add_option("--target-dev", gr_tgt_dev, "Target-language dev JSONL")->required();
  grid->add_option("--target-test", gr_tgt_test, "Target-language test JSONL")->required();
  grid->add_option("--phrase-table", gr_pt, "Phrase table TSV")->required();
  grid->add_option("--schema-map", gr_schema, "Schema map TSV");
  grid->add_option("--target-language", gr_lang, "Target language tag")
      ->capture_default_str();
  grid->add_option("--fractions", gr_fractions, "Target-data fractions")
      ->check(positive_fraction);
  grid->add_option("--delex", gr_delex, "Delex augmentation: off, on, both")
      ->capture_default_str();
  grid->add_option("--source-init", gr_source_init,
                   "Source-model initialization: off, on, both")
      ->capture_default_str();
  grid->add_option("--embedding-modes", gr_modes, "Embedding spaces: mono, multi");
  grid->add_option("--seeds", gr_seeds, "Seeds to average over");
  grid->add_option("--source-delex-fraction", gr_sdf,
                   "Fraction of delexicalized source data mixed in")
      ->check(positive_fraction)
      ->capture_default_str();
  grid->add_option("--seed", gr_seed, "Base seed for derived per-cell seeds")
      ->capture_default_str();
  grid->add_option("--report", gr_report, "Report TSV output path");
  add_hyper_flags(grid, gr_hyper);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate) {
      echo_config("generate", {{"sessions", std::to_string(gen_sessions)},
                               {"train", std::to_string(gen_train)},
                               {"dev", std::to_string(gen_dev)},
                               {"test", std::to_string(gen_test)},
                               {"seed", std::to_string(gen_seed)},
                               {"out_dir", gen_out}});
      return run_generate(gen_sessions, gen_train, gen_dev, gen_test, gen_seed,
                          gen_distractor, gen_extra, gen_shift, gen_out);
    }
    if (*delex) {
      echo_config("delex", {{"input", delex_in},
                            {"output", delex_out},
                            {"seed", std::to_string(delex_seed)}});
      return run_delex(delex_in, delex_out);
    }
    if (*align) {
      echo_config("align-embeddings", {{"src", align_src},
                                       {"tgt", align_tgt},
                                       {"dict", align_dict},
                                       {"output", align_out},
                                       {"normalize", align_norm ? "yes" : "no"},
                                       {"seed", std::to_string(align_seed)}});
      return run_align(align_src, align_tgt, align_dict, align_out, align_norm);
    }
    if (*translate) {
      echo_config("translate", {{"input", tr_in},
                                {"phrase_table", tr_pt},
                                {"command", tr_cmd},
                                {"target_language", tr_lang},
                                {"output", tr_out},
                                {"seed", std::to_string(tr_seed)}});
      return run_translate(tr_in, tr_pt, tr_cmd, tr_lang, tr_out);
    }
    if (*bleu) {
      echo_config("bleu", {{"hyp", bleu_hyp},
                           {"ref", bleu_ref},
                           {"smooth", bleu_smooth ? "yes" : "no"}});
      return run_bleu(bleu_hyp, bleu_ref, bleu_smooth);
    }
    if (*pretrain) {
      auto entries = hyper_entries(pre_hyper);
      entries.insert(entries.begin(), {{"input", pre_in},
                                       {"output", pre_out},
                                       {"pretrain_epochs", std::to_string(pre_epochs)},
                                       {"seed", std::to_string(pre_seed)}});
      echo_config("pretrain", entries);
      return run_pretrain(pre_in, pre_out, pre_hyper, pre_epochs, pre_seed);
    }
    if (*train_cmd) {
      auto entries = hyper_entries(trn_hyper);
      entries.insert(entries.begin(),
                     {{"train", trn_train},
                      {"dev", trn_dev},
                      {"model_out", trn_model},
                      {"fraction", std::to_string(trn_fraction)},
                      {"delex_augment", trn_delex ? "yes" : "no"},
                      {"seed", std::to_string(trn_seed)}});
      echo_config("train", entries);
      return run_train(trn_train, trn_dev, trn_model, trn_schema, trn_emb, trn_init,
                       trn_pre, trn_delex, trn_fraction, trn_weight, trn_hyper, trn_seed);
    }
    if (*eval_cmd) {
      echo_config("evaluate", {{"model", ev_model},
                               {"input", ev_in},
                               {"schema_map", ev_schema},
                               {"threshold", std::to_string(ev_threshold)},
                               {"report", ev_report}});
      return run_evaluate(ev_model, ev_in, ev_schema, ev_threshold, ev_report);
    }
    if (*baseline) {
      echo_config("baseline", {{"input", bl_in}, {"report", bl_report}});
      return run_baseline(bl_in, bl_report);
    }
    if (*grid) {
      auto entries = hyper_entries(gr_hyper);
      entries.insert(entries.begin(), {{"source_train", gr_src_train},
                                       {"target_test", gr_tgt_test},
                                       {"delex", gr_delex},
                                       {"source_init", gr_source_init},
                                       {"seed", std::to_string(gr_seed)},
                                       {"report", gr_report}});
      echo_config("grid", entries);
      return run_grid(gr_src_train, gr_src_dev, gr_tgt_dev, gr_tgt_test, gr_pt, gr_schema,
                      gr_lang, gr_fractions, gr_delex, gr_source_init, gr_modes, gr_seeds,
                      gr_sdf, gr_hyper, gr_seed, gr_report);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
