#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <sstream>
#include <vector>

#include "carryover/generator.hpp"
#include "carryover/harness.hpp"
#include "carryover/model.hpp"
#include "fixtures.hpp"

using namespace carryover;
using carryover::testing::museum_session;

namespace {

Hyperparams tiny_hyper() {
  Hyperparams hp;
  hp.embedding_dim = 4;
  hp.encoder_hidden = 4;
  hp.decoder_hidden = 8;
  hp.window = 2;
  hp.oov_buckets = 4;
  hp.batch_size = 4;
  return hp;
}

EmbeddingTable fixture_table(int dim) {
  return random_embedding_table(corpus_vocabulary({museum_session()}), dim, 17, "en_US");
}

CarryoverModel tiny_model(std::uint64_t seed = 5) {
  return init_model(tiny_hyper(), fixture_table(4), seed);
}

std::vector<CandidateExample> fixture_examples() {
  SchemaMap schema = carryover::testing::local_to_calling_schema();
  return corpus_examples({museum_session()}, 2, &schema);
}

double sigmoid_scalar(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Plain scalar LSTM over std::vector rows; gate stacking i, f, g, o.
std::vector<std::vector<double>> scalar_lstm(const CarryoverModel& m,
                                             const std::string& prefix,
                                             const std::vector<std::vector<double>>& xs) {
  auto wx = m.block(prefix + "_wx");
  auto wh = m.block(prefix + "_wh");
  auto b = m.block(prefix + "_b");
  const int h = static_cast<int>(wh.cols());
  std::vector<double> hp(h, 0.0), cp(h, 0.0);
  std::vector<std::vector<double>> states;
  for (const auto& x : xs) {
    std::vector<double> pre(4 * h, 0.0);
    for (int r = 0; r < 4 * h; ++r) {
      double acc = b(r, 0);
      for (size_t c = 0; c < x.size(); ++c) acc += wx(r, c) * x[c];
      for (int c = 0; c < h; ++c) acc += wh(r, c) * hp[c];
      pre[r] = acc;
    }
    std::vector<double> hn(h), cn(h);
    for (int j = 0; j < h; ++j) {
      double gi = sigmoid_scalar(pre[j]);
      double gf = sigmoid_scalar(pre[h + j]);
      double gg = std::tanh(pre[2 * h + j]);
      double go = sigmoid_scalar(pre[3 * h + j]);
      cn[j] = gf * cp[j] + gi * gg;
      hn[j] = go * std::tanh(cn[j]);
    }
    states.push_back(hn);
    hp = hn;
    cp = cn;
  }
  return states;
}

std::vector<double> scalar_row(const CarryoverModel& m, const std::string& block, int row) {
  auto mat = m.block(block);
  std::vector<double> out(mat.cols());
  for (int c = 0; c < mat.cols(); ++c) out[c] = mat(row, c);
  return out;
}

// Independent straight-line re-implementation of the whole forward pass.
double scalar_forward(const CarryoverModel& m, const CandidateExample& ex) {
  const int h = m.hyper.encoder_hidden;
  const int d = m.hyper.embedding_dim;

  auto rows_of_turn = [&](const Turn& turn) {
    std::vector<std::vector<double>> rows;
    rows.push_back(scalar_row(m, "embedding",
                              m.token_row(turn.speaker == Speaker::User ? "<user>"
                                                                        : "<system>")));
    if (!turn.act.empty()) rows.push_back(scalar_row(m, "embedding", m.token_row(turn.act)));
    for (const auto& token : turn.tokens) {
      rows.push_back(scalar_row(m, "embedding", m.token_row(token)));
    }
    return rows;
  };

  std::vector<std::vector<double>> ctx_x;
  for (const Turn& turn : ex.context) {
    for (auto& row : rows_of_turn(turn)) ctx_x.push_back(row);
  }
  std::vector<std::vector<double>> cur_x = rows_of_turn(ex.current_turn);
  std::vector<std::vector<double>> ctx_rev(ctx_x.rbegin(), ctx_x.rend());
  std::vector<std::vector<double>> cur_rev(cur_x.rbegin(), cur_x.rend());

  auto ctx_f = scalar_lstm(m, "ctx_fwd", ctx_x);
  auto ctx_b = scalar_lstm(m, "ctx_bwd", ctx_rev);
  auto cur_f = scalar_lstm(m, "cur_fwd", cur_x);
  auto cur_b = scalar_lstm(m, "cur_bwd", cur_rev);

  const size_t t_ctx = ctx_x.size();
  std::vector<std::vector<double>> memory(t_ctx, std::vector<double>(2 * h));
  for (size_t i = 0; i < t_ctx; ++i) {
    for (int j = 0; j < h; ++j) {
      memory[i][j] = ctx_f[i][j];
      memory[i][h + j] = ctx_b[t_ctx - 1 - i][j];
    }
  }
  std::vector<double> u(2 * h);
  for (int j = 0; j < h; ++j) {
    u[j] = cur_f.back()[j];
    u[h + j] = cur_b.back()[j];
  }

  auto mean_rows = [&](const std::string& text) {
    std::istringstream in(text);
    std::string token;
    std::vector<double> mean(d, 0.0);
    int count = 0;
    while (in >> token) {
      auto row = scalar_row(m, "embedding", m.token_row(token));
      for (int c = 0; c < d; ++c) mean[c] += row[c];
      ++count;
    }
    for (int c = 0; c < d; ++c) mean[c] /= count;
    return mean;
  };
  std::vector<double> z;
  for (double v : mean_rows(ex.slot.key)) z.push_back(v);
  for (double v : mean_rows(ex.slot.value)) z.push_back(v);
  for (double v : scalar_row(m, "dist_embed", ex.distance)) z.push_back(v);

  auto slot_w = m.block("slot_w");
  auto slot_b = m.block("slot_b");
  std::vector<double> q(2 * h);
  for (int r = 0; r < 2 * h; ++r) {
    double acc = slot_b(r, 0);
    for (size_t c = 0; c < z.size(); ++c) acc += slot_w(r, c) * z[c];
    q[r] = acc;
  }

  auto wq = m.block("attn_wq");
  auto wm = m.block("attn_wm");
  auto av = m.block("attn_v");
  const int a = static_cast<int>(wq.rows());
  std::vector<double> scores(t_ctx);
  for (size_t i = 0; i < t_ctx; ++i) {
    double score = 0.0;
    for (int r = 0; r < a; ++r) {
      double acc = 0.0;
      for (int c = 0; c < 2 * h; ++c) acc += wq(r, c) * q[c] + wm(r, c) * memory[i][c];
      score += av(r, 0) * std::tanh(acc);
    }
    scores[i] = score;
  }
  double max_score = scores[0];
  for (double s : scores) max_score = std::max(max_score, s);
  double norm = 0.0;
  std::vector<double> alpha(t_ctx);
  for (size_t i = 0; i < t_ctx; ++i) {
    alpha[i] = std::exp(scores[i] - max_score);
    norm += alpha[i];
  }
  std::vector<double> ctxvec(2 * h, 0.0);
  for (size_t i = 0; i < t_ctx; ++i) {
    for (int c = 0; c < 2 * h; ++c) ctxvec[c] += (alpha[i] / norm) * memory[i][c];
  }

  std::vector<double> r;
  for (double v : q) r.push_back(v);
  for (double v : ctxvec) r.push_back(v);
  for (double v : u) r.push_back(v);
  auto w1 = m.block("dec_w1");
  auto b1 = m.block("dec_b1");
  auto w2 = m.block("dec_w2");
  double logit = m.block("dec_b2")(0, 0);
  for (int j = 0; j < m.hyper.decoder_hidden; ++j) {
    double acc = b1(j, 0);
    for (size_t c = 0; c < r.size(); ++c) acc += w1(j, c) * r[c];
    logit += w2(j, 0) * std::tanh(acc);
  }
  logit = std::min(30.0, std::max(-30.0, logit));
  return sigmoid_scalar(logit);
}

}  // namespace

TEST_CASE("init_model is deterministic and copies table rows") {
  EmbeddingTable table = fixture_table(4);
  CarryoverModel a = init_model(tiny_hyper(), table, 5);
  CarryoverModel b = init_model(tiny_hyper(), table, 5);
  CarryoverModel c = init_model(tiny_hyper(), table, 6);
  CHECK(a.params == b.params);
  CHECK(a.params != c.params);
  // In-vocab rows equal the table rows exactly.
  auto emb = a.block("embedding");
  for (int i = 0; i < table.size(); ++i) {
    int row = a.token_row(table.vocab[i]);
    for (int cidx = 0; cidx < 4; ++cidx) {
      CHECK(emb(row, cidx) == table.vectors(i, cidx));
    }
  }
  // Biases start at zero.
  CHECK(a.block("ctx_fwd_b").cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.block("dec_b1").cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init_model rejects a dimension mismatch") {
  CHECK_THROWS_AS(init_model(tiny_hyper(), fixture_table(6), 5), ConfigError);
}

TEST_CASE("xavier weights have near-zero mean") {
  Hyperparams hp = tiny_hyper();
  hp.encoder_hidden = 32;
  hp.decoder_hidden = 64;
  CarryoverModel m = init_model(hp, fixture_table(4), 9);
  auto w1 = m.block("dec_w1");
  double sum = 0.0;
  double bound = std::sqrt(6.0 / (w1.rows() + w1.cols()));
  for (int r = 0; r < w1.rows(); ++r) {
    for (int c = 0; c < w1.cols(); ++c) {
      sum += w1(r, c);
      CHECK(std::abs(w1(r, c)) <= bound);
    }
  }
  double n = static_cast<double>(w1.size());
  double sigma = bound / std::sqrt(3.0);  // stddev of uniform(-bound, bound)
  CHECK(std::abs(sum / n) < 3.0 * sigma / std::sqrt(n));
}

TEST_CASE("forward output is a probability and bitwise deterministic") {
  CarryoverModel m = tiny_model();
  for (const CandidateExample& ex : fixture_examples()) {
    Prediction p1 = forward(m, ex);
    Prediction p2 = forward(m, ex);
    CHECK(p1.probability > 0.0);
    CHECK(p1.probability < 1.0);
    CHECK(p1.probability == p2.probability);
  }
}

TEST_CASE("forward matches the straight-line scalar re-implementation") {
  CarryoverModel m = tiny_model();
  for (const CandidateExample& ex : fixture_examples()) {
    CHECK(forward(m, ex).probability ==
          doctest::Approx(scalar_forward(m, ex)).epsilon(1e-12));
  }
}

TEST_CASE("forward rejects malformed candidates") {
  CarryoverModel m = tiny_model();
  CandidateExample good = fixture_examples().front();

  CandidateExample empty_turn = good;
  empty_turn.current_turn.tokens.clear();
  CHECK_THROWS_AS(forward(m, empty_turn), InputError);

  CandidateExample no_context = good;
  no_context.context.clear();
  CHECK_THROWS_AS(forward(m, no_context), InputError);

  CandidateExample far = good;
  far.distance = m.hyper.window + 1;
  CHECK_THROWS_AS(forward(m, far), InputError);

  CandidateExample no_key = good;
  no_key.slot.key = " ";
  CHECK_THROWS_AS(forward(m, no_key), InputError);
}

TEST_CASE("OOV tokens hash into the bucket region deterministically") {
  CarryoverModel m = tiny_model();
  int row = m.token_row("completely-unseen-token");
  CHECK(row >= static_cast<int>(m.vocab.size()));
  CHECK(row < m.embedding_rows());
  CHECK(m.token_row("completely-unseen-token") == row);
}

TEST_CASE("analytic gradients match central finite differences") {
  Hyperparams hp = tiny_hyper();
  hp.positive_class_weight = 2.5;
  CarryoverModel m = init_model(hp, fixture_table(4), 7);
  std::vector<CandidateExample> all = fixture_examples();
  std::vector<CandidateExample> batch(all.begin(), all.begin() + 4);

  auto [loss, grads] = loss_and_grad(m, batch, hp);
  REQUIRE(grads.size() == m.params.size());
  const double eps = 1e-5;
  double max_rel = 0.0;
  for (size_t i = 0; i < m.params.size(); ++i) {
    double saved = m.params[i];
    m.params[i] = saved + eps;
    double up = loss_and_grad(m, batch, hp).first;
    m.params[i] = saved - eps;
    double down = loss_and_grad(m, batch, hp).first;
    m.params[i] = saved;
    double numeric = (up - down) / (2.0 * eps);
    double denom = std::max({1e-8, std::abs(numeric), std::abs(grads[i])});
    double rel = std::abs(numeric - grads[i]) / denom;
    if (std::abs(numeric) < 1e-10 && std::abs(grads[i]) < 1e-10) rel = 0.0;
    max_rel = std::max(max_rel, rel);
  }
  CHECK(max_rel < 1e-4);
}

TEST_CASE("positive class weight scales only the positive example term") {
  Hyperparams hp = tiny_hyper();
  CarryoverModel m = init_model(hp, fixture_table(4), 7);
  CandidateExample positive = fixture_examples().front();
  positive.label = true;
  CandidateExample negative = positive;
  negative.label = false;

  Hyperparams weighted = hp;
  weighted.positive_class_weight = 3.0;
  double pos_loss = loss_and_grad(m, {positive}, hp).first;
  double pos_weighted = loss_and_grad(m, {positive}, weighted).first;
  CHECK(pos_weighted == doctest::Approx(3.0 * pos_loss).epsilon(1e-12));
  double neg_loss = loss_and_grad(m, {negative}, hp).first;
  double neg_weighted = loss_and_grad(m, {negative}, weighted).first;
  CHECK(neg_weighted == doctest::Approx(neg_loss).epsilon(1e-12));
}

TEST_CASE("adam first step matches the closed form") {
  Hyperparams hp = tiny_hyper();
  CarryoverModel m = init_model(hp, fixture_table(4), 7);
  CarryoverModel before = m;
  std::vector<double> grads(m.params.size(), 0.0);
  grads[3] = 1.0;
  grads[10] = -0.25;
  AdamState state;
  adam_step(m, grads, state, hp);
  // First step: m_hat = g, v_hat = g^2, update = -lr * g / (|g| + eps).
  for (size_t i : {size_t(3), size_t(10)}) {
    double g = grads[i];
    double expected = before.params[i] -
                      hp.learning_rate * g / (std::abs(g) + hp.adam_epsilon);
    CHECK(m.params[i] == doctest::Approx(expected).epsilon(1e-9));
  }
  CHECK(m.params[0] == before.params[0]);
  CHECK(state.step == 1);
}

TEST_CASE("adam two-step unroll matches the hand computation") {
  Hyperparams hp = tiny_hyper();
  CarryoverModel m = init_model(hp, fixture_table(4), 7);
  const size_t i = 5;
  double theta = m.params[i];
  const double g1 = 0.7, g2 = -0.2;
  std::vector<double> grads(m.params.size(), 0.0);
  AdamState state;
  grads[i] = g1;
  adam_step(m, grads, state, hp);
  grads[i] = g2;
  adam_step(m, grads, state, hp);

  const double b1 = hp.adam_beta1, b2 = hp.adam_beta2, lr = hp.learning_rate,
               eps = hp.adam_epsilon;
  double m1 = (1 - b1) * g1, v1 = (1 - b2) * g1 * g1;
  theta -= lr * (m1 / (1 - b1)) / (std::sqrt(v1 / (1 - b2)) + eps);
  double m2 = b1 * m1 + (1 - b1) * g2, v2 = b2 * v1 + (1 - b2) * g2 * g2;
  theta -= lr * (m2 / (1 - b1 * b1)) / (std::sqrt(v2 / (1 - b2 * b2)) + eps);
  CHECK(m.params[i] == doctest::Approx(theta).epsilon(1e-12));
}

TEST_CASE("adam rejects non-finite gradients with a located diagnostic") {
  Hyperparams hp = tiny_hyper();
  CarryoverModel m = init_model(hp, fixture_table(4), 7);
  std::vector<double> grads(m.params.size(), 0.0);
  grads[m.layout.at("attn_v").offset] = std::nan("");
  AdamState state;
  try {
    adam_step(m, grads, state, hp);
    FAIL("expected Error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("attn_v") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  CarryoverModel m = tiny_model(21);
  std::string path = "/tmp/carryover-test-model.ckpt";
  save_checkpoint(m, path);
  CarryoverModel loaded = load_checkpoint(path);
  CHECK(loaded.params == m.params);
  CHECK(loaded.vocab == m.vocab);
  CHECK(loaded.hyper.encoder_hidden == m.hyper.encoder_hidden);
  CHECK(loaded.hyper.threshold == m.hyper.threshold);
  // Loaded model predicts identically.
  CandidateExample ex = fixture_examples().front();
  CHECK(forward(loaded, ex).probability == forward(m, ex).probability);
  std::remove(path.c_str());
}

TEST_CASE("load_checkpoint rejects an unknown header") {
  std::string path = "/tmp/carryover-test-bad.ckpt";
  FILE* f = std::fopen(path.c_str(), "w");
  std::fputs("not a checkpoint\n", f);
  std::fclose(f);
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("transfer_init copies non-embedding blocks and re-maps token rows") {
  Hyperparams hp = tiny_hyper();
  EmbeddingTable source_table = fixture_table(4);
  CarryoverModel source = init_model(hp, source_table, 31);

  EmbeddingTable target = random_embedding_table(
      {"finde", "eine", "apotheke", "exploratorium"}, 4, 33, "de_DE");
  CarryoverModel transferred = transfer_init(source, target);

  for (const BlockSpec& spec : source.layout.blocks) {
    if (spec.name == "embedding") continue;
    auto src_block = source.block(spec.name);
    auto dst_block = transferred.block(spec.name);
    CHECK((src_block - dst_block).cwiseAbs().maxCoeff() == 0.0);
  }
  // A target-table token takes the target row.
  auto emb = transferred.block("embedding");
  int row = transferred.token_row("apotheke");
  for (int c = 0; c < 4; ++c) {
    CHECK(emb(row, c) == target.vectors(target.index.at("apotheke"), c));
  }
  // Marker tokens are absent from the target table and keep their trained
  // source rows; the hashed-OOV region transfers wholesale.
  for (const char* marker : {"<user>", "<system>"}) {
    int src_row = source.token_row(marker);
    int dst_row = transferred.token_row(marker);
    for (int c = 0; c < 4; ++c) {
      CHECK(emb(dst_row, c) == source.block("embedding")(src_row, c));
    }
  }
  for (int b = 0; b < hp.oov_buckets; ++b) {
    for (int c = 0; c < 4; ++c) {
      CHECK(emb(static_cast<int>(transferred.vocab.size()) + b, c) ==
            source.block("embedding")(static_cast<int>(source.vocab.size()) + b, c));
    }
  }
}

TEST_CASE("encoder pretraining lowers perplexity and survives serialization") {
  GeneratorConfig config = default_generator_config();
  config.num_sessions = 60;
  auto sessions = synthesize_parallel_corpus(config, 51)["en_US"];
  Hyperparams hp = tiny_hyper();
  hp.encoder_hidden = 8;
  PretrainedEncoder encoder = pretrain_encoder(sessions, hp, 3, 4);
  CHECK(encoder.final_perplexity < encoder.initial_perplexity);

  std::string path = "/tmp/carryover-test-encoder.bin";
  save_pretrained_encoder(encoder, path);
  PretrainedEncoder loaded = load_pretrained_encoder(path);
  CHECK((loaded.wx - encoder.wx).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.wh - encoder.wh).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.b - encoder.b).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());

  Hyperparams model_hp = tiny_hyper();
  model_hp.encoder_hidden = 8;
  CarryoverModel m = init_model(model_hp, fixture_table(4), 9);
  apply_pretrained_encoder(m, encoder);
  CHECK((m.block("ctx_fwd_wx") - encoder.wx).cwiseAbs().maxCoeff() == 0.0);
  CHECK((m.block("cur_fwd_wx") - encoder.wx).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward_details exposes a softmax attention distribution") {
  CarryoverModel m = tiny_model();
  CandidateExample ex = fixture_examples().front();
  ForwardDetails details = forward_details(m, ex);
  CHECK(details.prediction.probability == forward(m, ex).probability);
  CHECK(details.attention_weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(details.attention_weights.minCoeff() > 0.0);
}

TEST_CASE("hyperparameter validation rejects bad values") {
  Hyperparams hp = tiny_hyper();
  hp.threshold = 1.5;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = tiny_hyper();
  hp.embedding_dim = 0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
  hp = tiny_hyper();
  hp.positive_class_weight = -1.0;
  CHECK_THROWS_AS(hp.validate(), ConfigError);
}
