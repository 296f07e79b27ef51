#include "carryover/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace carryover {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

constexpr const char* kUserMarker = "<user>";
constexpr const char* kSystemMarker = "<system>";
constexpr double kLogitClamp = 30.0;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return 0.0;
  return std::log1p(std::exp(x));
}

VectorXd sigmoid_vec(const VectorXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

}  // namespace

void Hyperparams::validate() const {
  if (embedding_dim < 1 || encoder_hidden < 1 || decoder_hidden < 1 || window < 1 ||
      batch_size < 1 || max_epochs < 1 || oov_buckets < 1) {
    throw ConfigError("hyperparams: all dims/counts must be >= 1");
  }
  if (threshold <= 0.0 || threshold >= 1.0) {
    throw ConfigError("hyperparams: threshold must be in (0, 1)");
  }
  if (positive_class_weight <= 0.0 || learning_rate <= 0.0) {
    throw ConfigError("hyperparams: weights and learning rate must be positive");
  }
}

void ParamLayout::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  by_name.emplace(name, static_cast<int>(blocks.size()));
  blocks.push_back({name, total, rows, cols});
  total += rows * cols;
}

const BlockSpec& ParamLayout::at(const std::string& name) const {
  auto it = by_name.find(name);
  if (it == by_name.end()) throw ConfigError("unknown parameter block: " + name);
  return blocks[it->second];
}

MatMap map_block(const ParamLayout& layout, std::vector<double>& data,
                 const std::string& name) {
  const BlockSpec& spec = layout.at(name);
  return MatMap(data.data() + spec.offset, spec.rows, spec.cols);
}

ConstMatMap map_block(const ParamLayout& layout, const std::vector<double>& data,
                      const std::string& name) {
  const BlockSpec& spec = layout.at(name);
  return ConstMatMap(data.data() + spec.offset, spec.rows, spec.cols);
}

int CarryoverModel::embedding_rows() const {
  return static_cast<int>(vocab.size()) + hyper.oov_buckets;
}

int CarryoverModel::token_row(const std::string& token) const {
  auto it = vocab_index.find(token);
  if (it != vocab_index.end()) return it->second;
  OovPolicy policy;
  policy.buckets = hyper.oov_buckets;
  return static_cast<int>(vocab.size()) + oov_bucket(token, policy);
}

namespace {

ParamLayout build_layout(const Hyperparams& hyper, int embedding_rows) {
  const int d = hyper.embedding_dim;
  const int h = hyper.encoder_hidden;
  const int a = hyper.encoder_hidden;  // attention dim
  const int dec = hyper.decoder_hidden;
  ParamLayout layout;
  layout.add("embedding", embedding_rows, d);
  for (const char* enc : {"ctx_fwd", "ctx_bwd", "cur_fwd", "cur_bwd"}) {
    layout.add(std::string(enc) + "_wx", 4 * h, d);
    layout.add(std::string(enc) + "_wh", 4 * h, h);
    layout.add(std::string(enc) + "_b", 4 * h, 1);
  }
  layout.add("dist_embed", hyper.window + 1, d);
  layout.add("slot_w", 2 * h, 3 * d);
  layout.add("slot_b", 2 * h, 1);
  layout.add("attn_wq", a, 2 * h);
  layout.add("attn_wm", a, 2 * h);
  layout.add("attn_v", a, 1);
  layout.add("dec_w1", dec, 6 * h);
  layout.add("dec_b1", dec, 1);
  layout.add("dec_w2", dec, 1);
  layout.add("dec_b2", 1, 1);
  return layout;
}

bool is_bias_block(const std::string& name) {
  return name.size() >= 2 && (name.ends_with("_b") || name.ends_with("_b1") ||
                              name.ends_with("_b2"));
}

}  // namespace

CarryoverModel init_model(const Hyperparams& hyper, const EmbeddingTable& embeddings,
                          std::uint64_t seed) {
  hyper.validate();
  if (embeddings.dim != hyper.embedding_dim) {
    throw ConfigError("init_model: embedding table dim " + std::to_string(embeddings.dim) +
                      " != hyperparameter embedding_dim " +
                      std::to_string(hyper.embedding_dim));
  }
  CarryoverModel model;
  model.hyper = hyper;
  model.vocab = embeddings.vocab;
  for (const char* marker : {kUserMarker, kSystemMarker}) {
    if (!embeddings.contains(marker)) model.vocab.push_back(marker);
  }
  for (size_t i = 0; i < model.vocab.size(); ++i) {
    model.vocab_index.emplace(model.vocab[i], static_cast<int>(i));
  }
  model.layout = build_layout(hyper, model.embedding_rows());
  model.params.assign(model.layout.total, 0.0);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> row_init(0.0, 0.1 / std::sqrt(hyper.embedding_dim));
  MatMap emb = model.block("embedding");
  for (size_t i = 0; i < model.vocab.size(); ++i) {
    auto it = embeddings.index.find(model.vocab[i]);
    if (it != embeddings.index.end()) {
      emb.row(i) = embeddings.vectors.row(it->second);
    } else {
      for (int dcol = 0; dcol < hyper.embedding_dim; ++dcol) emb(i, dcol) = row_init(rng);
    }
  }
  // OOV bucket rows stay consistent with the embeddings module's hash policy.
  OovPolicy policy;
  policy.buckets = hyper.oov_buckets;
  for (int b = 0; b < hyper.oov_buckets; ++b) {
    std::mt19937_64 bucket_rng(policy.seed * 0x9e3779b97f4a7c15ull +
                               static_cast<std::uint64_t>(b));
    std::normal_distribution<double> dist(0.0, 0.1 / std::sqrt(hyper.embedding_dim));
    for (int dcol = 0; dcol < hyper.embedding_dim; ++dcol) {
      emb(model.vocab.size() + b, dcol) = dist(bucket_rng);
    }
  }

  for (const BlockSpec& spec : model.layout.blocks) {
    if (spec.name == "embedding") continue;
    MatMap block = map_block(model.layout, model.params, spec.name);
    if (is_bias_block(spec.name)) {
      block.setZero();
      continue;
    }
    double a = std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
    std::uniform_real_distribution<double> uniform(-a, a);
    for (Eigen::Index c = 0; c < spec.cols; ++c) {
      for (Eigen::Index r = 0; r < spec.rows; ++r) block(r, c) = uniform(rng);
    }
  }
  return model;
}

namespace {

// ----- LSTM primitives -------------------------------------------------

struct LstmCache {
  MatrixXd x;                    // T x in
  MatrixXd gi, gf, gg, go, c, h;  // T x h each
};

LstmCache lstm_forward(ConstMatMap wx, ConstMatMap wh, ConstMatMap b, MatrixXd x) {
  const Eigen::Index t_count = x.rows();
  const Eigen::Index h = wh.cols();
  LstmCache cache;
  cache.x = std::move(x);
  cache.gi.resize(t_count, h);
  cache.gf.resize(t_count, h);
  cache.gg.resize(t_count, h);
  cache.go.resize(t_count, h);
  cache.c.resize(t_count, h);
  cache.h.resize(t_count, h);
  VectorXd hprev = VectorXd::Zero(h), cprev = VectorXd::Zero(h);
  for (Eigen::Index t = 0; t < t_count; ++t) {
    VectorXd pre = wx * cache.x.row(t).transpose() + wh * hprev + b.col(0);
    VectorXd gi = sigmoid_vec(pre.head(h));
    VectorXd gf = sigmoid_vec(pre.segment(h, h));
    VectorXd gg = pre.segment(2 * h, h).array().tanh();
    VectorXd go = sigmoid_vec(pre.tail(h));
    VectorXd c = gf.cwiseProduct(cprev) + gi.cwiseProduct(gg);
    VectorXd hv = go.cwiseProduct(c.array().tanh().matrix());
    cache.gi.row(t) = gi;
    cache.gf.row(t) = gf;
    cache.gg.row(t) = gg;
    cache.go.row(t) = go;
    cache.c.row(t) = c;
    cache.h.row(t) = hv;
    hprev = hv;
    cprev = c;
  }
  return cache;
}

MatrixXd lstm_backward(ConstMatMap wx, ConstMatMap wh, const LstmCache& cache,
                       const MatrixXd& dh_in, MatMap gwx, MatMap gwh, MatMap gb) {
  const Eigen::Index t_count = cache.x.rows();
  const Eigen::Index h = wh.cols();
  MatrixXd dx(t_count, cache.x.cols());
  VectorXd dh_next = VectorXd::Zero(h);
  VectorXd dc = VectorXd::Zero(h);
  for (Eigen::Index t = t_count - 1; t >= 0; --t) {
    VectorXd dh = dh_in.row(t).transpose() + dh_next;
    VectorXd gi = cache.gi.row(t), gf = cache.gf.row(t), gg = cache.gg.row(t),
             go = cache.go.row(t), c = cache.c.row(t);
    VectorXd tanh_c = c.array().tanh();
    VectorXd cprev = t > 0 ? VectorXd(cache.c.row(t - 1)) : VectorXd::Zero(h);
    VectorXd hprev = t > 0 ? VectorXd(cache.h.row(t - 1)) : VectorXd::Zero(h);

    VectorXd d_go = dh.cwiseProduct(tanh_c);
    dc += dh.cwiseProduct(go).cwiseProduct(
        (1.0 - tanh_c.array().square()).matrix());
    VectorXd d_gi = dc.cwiseProduct(gg);
    VectorXd d_gf = dc.cwiseProduct(cprev);
    VectorXd d_gg = dc.cwiseProduct(gi);

    VectorXd dpre(4 * h);
    dpre.head(h) = d_gi.cwiseProduct(gi).cwiseProduct((1.0 - gi.array()).matrix());
    dpre.segment(h, h) = d_gf.cwiseProduct(gf).cwiseProduct((1.0 - gf.array()).matrix());
    dpre.segment(2 * h, h) = d_gg.cwiseProduct((1.0 - gg.array().square()).matrix());
    dpre.tail(h) = d_go.cwiseProduct(go).cwiseProduct((1.0 - go.array()).matrix());

    gwx += dpre * cache.x.row(t);
    gwh += dpre * hprev.transpose();
    gb.col(0) += dpre;
    dx.row(t) = (wx.transpose() * dpre).transpose();
    dh_next = wh.transpose() * dpre;
    dc = dc.cwiseProduct(gf);
  }
  return dx;
}

// ----- carryover forward pass ------------------------------------------

std::vector<int> turn_rows(const CarryoverModel& model, const Turn& turn) {
  std::vector<int> rows;
  rows.push_back(
      model.token_row(turn.speaker == Speaker::User ? kUserMarker : kSystemMarker));
  if (!turn.act.empty()) rows.push_back(model.token_row(turn.act));
  for (const std::string& token : turn.tokens) rows.push_back(model.token_row(token));
  return rows;
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

struct ForwardCache {
  std::vector<int> ctx_rows, cur_rows, key_rows, val_rows;
  int dist_index = 0;
  MatrixXd ctx_x, cur_x;
  LstmCache ctx_f, ctx_b, cur_f, cur_b;
  MatrixXd memory;  // T_ctx x 2h
  VectorXd kbar, vbar, edist, z, q;
  MatrixXd attn_t;  // T_ctx x a
  VectorXd scores, alpha, ctxvec, u, r, hdec;
  double logit = 0.0;
  double p = 0.0;
  bool clamped = false;
};

MatrixXd gather_rows(ConstMatMap emb, const std::vector<int>& rows) {
  MatrixXd x(rows.size(), emb.cols());
  for (size_t i = 0; i < rows.size(); ++i) x.row(i) = emb.row(rows[i]);
  return x;
}

void forward_pass(const CarryoverModel& model, const CandidateExample& example,
                  ForwardCache& fc) {
  const Hyperparams& hp = model.hyper;
  const int h = hp.encoder_hidden;
  const int d = hp.embedding_dim;
  if (example.current_turn.tokens.empty()) {
    throw InputError("forward: empty current turn");
  }
  if (example.context.empty()) {
    throw InputError("forward: candidate has no context turns");
  }
  if (example.distance < 0 || example.distance > hp.window) {
    throw InputError("forward: candidate distance outside [0, window]");
  }
  ConstMatMap emb = model.block("embedding");

  for (const Turn& turn : example.context) {
    std::vector<int> rows = turn_rows(model, turn);
    fc.ctx_rows.insert(fc.ctx_rows.end(), rows.begin(), rows.end());
  }
  fc.cur_rows = turn_rows(model, example.current_turn);
  for (const std::string& tok : split_ws(example.slot.key)) {
    fc.key_rows.push_back(model.token_row(tok));
  }
  for (const std::string& tok : split_ws(example.slot.value)) {
    fc.val_rows.push_back(model.token_row(tok));
  }
  if (fc.key_rows.empty() || fc.val_rows.empty()) {
    throw InputError("forward: slot key/value empty");
  }
  fc.dist_index = example.distance;

  fc.ctx_x = gather_rows(emb, fc.ctx_rows);
  fc.cur_x = gather_rows(emb, fc.cur_rows);

  fc.ctx_f = lstm_forward(model.block("ctx_fwd_wx"), model.block("ctx_fwd_wh"),
                          model.block("ctx_fwd_b"), fc.ctx_x);
  fc.ctx_b = lstm_forward(model.block("ctx_bwd_wx"), model.block("ctx_bwd_wh"),
                          model.block("ctx_bwd_b"), fc.ctx_x.colwise().reverse());
  fc.cur_f = lstm_forward(model.block("cur_fwd_wx"), model.block("cur_fwd_wh"),
                          model.block("cur_fwd_b"), fc.cur_x);
  fc.cur_b = lstm_forward(model.block("cur_bwd_wx"), model.block("cur_bwd_wh"),
                          model.block("cur_bwd_b"), fc.cur_x.colwise().reverse());

  const Eigen::Index t_ctx = fc.ctx_x.rows();
  fc.memory.resize(t_ctx, 2 * h);
  for (Eigen::Index i = 0; i < t_ctx; ++i) {
    fc.memory.row(i) << fc.ctx_f.h.row(i), fc.ctx_b.h.row(t_ctx - 1 - i);
  }

  // Final current-turn state: forward last step, backward first token state.
  const Eigen::Index t_cur = fc.cur_x.rows();
  fc.u.resize(2 * h);
  fc.u << fc.cur_f.h.row(t_cur - 1).transpose(), fc.cur_b.h.row(t_cur - 1).transpose();

  fc.kbar = VectorXd::Zero(d);
  for (int row : fc.key_rows) fc.kbar += emb.row(row).transpose();
  fc.kbar /= static_cast<double>(fc.key_rows.size());
  fc.vbar = VectorXd::Zero(d);
  for (int row : fc.val_rows) fc.vbar += emb.row(row).transpose();
  fc.vbar /= static_cast<double>(fc.val_rows.size());
  fc.edist = model.block("dist_embed").row(fc.dist_index).transpose();

  fc.z.resize(3 * d);
  fc.z << fc.kbar, fc.vbar, fc.edist;
  fc.q = model.block("slot_w") * fc.z + model.block("slot_b").col(0);

  ConstMatMap wq = model.block("attn_wq");
  ConstMatMap wm = model.block("attn_wm");
  ConstMatMap av = model.block("attn_v");
  VectorXd query_proj = wq * fc.q;
  fc.attn_t.resize(t_ctx, wq.rows());
  fc.scores.resize(t_ctx);
  for (Eigen::Index i = 0; i < t_ctx; ++i) {
    VectorXd t = (query_proj + wm * fc.memory.row(i).transpose()).array().tanh();
    fc.attn_t.row(i) = t;
    fc.scores[i] = av.col(0).dot(t);
  }
  double max_score = fc.scores.maxCoeff();
  fc.alpha = (fc.scores.array() - max_score).exp();
  fc.alpha /= fc.alpha.sum();
  fc.ctxvec = fc.memory.transpose() * fc.alpha;

  fc.r.resize(6 * h);
  fc.r << fc.q, fc.ctxvec, fc.u;
  fc.hdec = (model.block("dec_w1") * fc.r + model.block("dec_b1").col(0)).array().tanh();
  double logit = model.block("dec_w2").col(0).dot(fc.hdec) + model.block("dec_b2")(0, 0);
  fc.clamped = std::abs(logit) > kLogitClamp;
  fc.logit = std::clamp(logit, -kLogitClamp, kLogitClamp);
  fc.p = sigmoid(fc.logit);
}

void backward_pass(const CarryoverModel& model, const ForwardCache& fc, double dlogit,
                   std::vector<double>& grads) {
  if (fc.clamped) dlogit = 0.0;
  const Hyperparams& hp = model.hyper;
  const int h = hp.encoder_hidden;
  const int d = hp.embedding_dim;
  const ParamLayout& layout = model.layout;

  MatMap g_emb = map_block(layout, grads, "embedding");

  // Decoder.
  map_block(layout, grads, "dec_b2")(0, 0) += dlogit;
  map_block(layout, grads, "dec_w2").col(0) += dlogit * fc.hdec;
  VectorXd dhdec = dlogit * model.block("dec_w2").col(0);
  VectorXd dpre1 = dhdec.cwiseProduct((1.0 - fc.hdec.array().square()).matrix());
  map_block(layout, grads, "dec_w1") += dpre1 * fc.r.transpose();
  map_block(layout, grads, "dec_b1").col(0) += dpre1;
  VectorXd dr = model.block("dec_w1").transpose() * dpre1;

  VectorXd dq = dr.head(2 * h);
  VectorXd dctxvec = dr.segment(2 * h, 2 * h);
  VectorXd du = dr.tail(2 * h);

  // Attention.
  const Eigen::Index t_ctx = fc.memory.rows();
  ConstMatMap wq = model.block("attn_wq");
  ConstMatMap wm = model.block("attn_wm");
  ConstMatMap av = model.block("attn_v");
  MatMap g_wq = map_block(layout, grads, "attn_wq");
  MatMap g_wm = map_block(layout, grads, "attn_wm");
  MatMap g_av = map_block(layout, grads, "attn_v");

  VectorXd dalpha = fc.memory * dctxvec;
  MatrixXd dmemory = fc.alpha * dctxvec.transpose();  // ctxvec path
  double mix = fc.alpha.dot(dalpha);
  VectorXd dscores = fc.alpha.cwiseProduct(dalpha.array().matrix() -
                                           VectorXd::Constant(t_ctx, mix));
  VectorXd du_sum = VectorXd::Zero(wq.rows());
  for (Eigen::Index i = 0; i < t_ctx; ++i) {
    VectorXd t = fc.attn_t.row(i).transpose();
    g_av.col(0) += dscores[i] * t;
    VectorXd dti = dscores[i] * av.col(0);
    VectorXd dui = dti.cwiseProduct((1.0 - t.array().square()).matrix());
    du_sum += dui;
    g_wm += dui * fc.memory.row(i);
    dmemory.row(i) += (wm.transpose() * dui).transpose();
  }
  g_wq += du_sum * fc.q.transpose();
  dq += wq.transpose() * du_sum;

  // Slot composition (linear).
  map_block(layout, grads, "slot_w") += dq * fc.z.transpose();
  map_block(layout, grads, "slot_b").col(0) += dq;
  VectorXd dz = model.block("slot_w").transpose() * dq;
  VectorXd dkbar = dz.head(d);
  VectorXd dvbar = dz.segment(d, d);
  map_block(layout, grads, "dist_embed").row(fc.dist_index) += dz.tail(d).transpose();
  for (int row : fc.key_rows) {
    g_emb.row(row) += dkbar.transpose() / static_cast<double>(fc.key_rows.size());
  }
  for (int row : fc.val_rows) {
    g_emb.row(row) += dvbar.transpose() / static_cast<double>(fc.val_rows.size());
  }

  // Context encoder (memory rows carry both attention and ctxvec gradients).
  MatrixXd dhf = MatrixXd::Zero(t_ctx, h);
  MatrixXd dhb = MatrixXd::Zero(t_ctx, h);  // in reversed time
  for (Eigen::Index i = 0; i < t_ctx; ++i) {
    dhf.row(i) = dmemory.row(i).head(h);
    dhb.row(t_ctx - 1 - i) = dmemory.row(i).tail(h);
  }
  MatrixXd dx_ctx = lstm_backward(model.block("ctx_fwd_wx"), model.block("ctx_fwd_wh"),
                                  fc.ctx_f, dhf, map_block(layout, grads, "ctx_fwd_wx"),
                                  map_block(layout, grads, "ctx_fwd_wh"),
                                  map_block(layout, grads, "ctx_fwd_b"));
  MatrixXd dx_ctx_rev = lstm_backward(model.block("ctx_bwd_wx"), model.block("ctx_bwd_wh"),
                                      fc.ctx_b, dhb, map_block(layout, grads, "ctx_bwd_wx"),
                                      map_block(layout, grads, "ctx_bwd_wh"),
                                      map_block(layout, grads, "ctx_bwd_b"));
  dx_ctx += dx_ctx_rev.colwise().reverse();
  for (Eigen::Index i = 0; i < t_ctx; ++i) g_emb.row(fc.ctx_rows[i]) += dx_ctx.row(i);

  // Current-turn encoder: only the final states feed the decoder.
  const Eigen::Index t_cur = fc.cur_x.rows();
  MatrixXd dhf_cur = MatrixXd::Zero(t_cur, h);
  MatrixXd dhb_cur = MatrixXd::Zero(t_cur, h);
  dhf_cur.row(t_cur - 1) = du.head(h);
  dhb_cur.row(t_cur - 1) = du.tail(h);
  MatrixXd dx_cur = lstm_backward(model.block("cur_fwd_wx"), model.block("cur_fwd_wh"),
                                  fc.cur_f, dhf_cur, map_block(layout, grads, "cur_fwd_wx"),
                                  map_block(layout, grads, "cur_fwd_wh"),
                                  map_block(layout, grads, "cur_fwd_b"));
  MatrixXd dx_cur_rev = lstm_backward(model.block("cur_bwd_wx"), model.block("cur_bwd_wh"),
                                      fc.cur_b, dhb_cur, map_block(layout, grads, "cur_bwd_wx"),
                                      map_block(layout, grads, "cur_bwd_wh"),
                                      map_block(layout, grads, "cur_bwd_b"));
  dx_cur += dx_cur_rev.colwise().reverse();
  for (Eigen::Index i = 0; i < t_cur; ++i) g_emb.row(fc.cur_rows[i]) += dx_cur.row(i);
}

}  // namespace

Prediction forward(const CarryoverModel& model, const CandidateExample& example) {
  ForwardCache fc;
  forward_pass(model, example, fc);
  return Prediction{fc.p};
}

ForwardDetails forward_details(const CarryoverModel& model, const CandidateExample& example) {
  ForwardCache fc;
  forward_pass(model, example, fc);
  return ForwardDetails{Prediction{fc.p}, fc.alpha};
}

std::pair<double, std::vector<double>> loss_and_grad(
    const CarryoverModel& model, const std::vector<CandidateExample>& batch,
    const Hyperparams& hyper) {
  if (batch.empty()) throw InputError("loss_and_grad: empty batch");
  std::vector<double> grads(model.layout.total, 0.0);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double w_pos = hyper.positive_class_weight;
  for (const CandidateExample& example : batch) {
    if (!example.label) throw InputError("loss_and_grad: unlabeled example in batch");
    ForwardCache fc;
    forward_pass(model, example, fc);
    const double y = *example.label ? 1.0 : 0.0;
    // -[w+ y ln p + (1-y) ln(1-p)] expressed through the logit for stability
    loss += inv_n * (y > 0.5 ? w_pos * softplus(-fc.logit) : softplus(fc.logit));
    double dlogit = inv_n * (w_pos * y * (fc.p - 1.0) + (1.0 - y) * fc.p);
    backward_pass(model, fc, dlogit, grads);
  }
  return {loss, std::move(grads)};
}

void adam_step(CarryoverModel& model, const std::vector<double>& grads, AdamState& state,
               const Hyperparams& hyper) {
  if (grads.size() != model.params.size()) {
    throw ConfigError("adam_step: gradient size mismatch");
  }
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      // Locate the owning block for the diagnostic.
      std::string owner = "?";
      for (const BlockSpec& spec : model.layout.blocks) {
        if (static_cast<Eigen::Index>(i) >= spec.offset &&
            static_cast<Eigen::Index>(i) < spec.offset + spec.rows * spec.cols) {
          owner = spec.name;
          break;
        }
      }
      throw Error("adam_step: non-finite gradient in block '" + owner + "' at flat index " +
                  std::to_string(i) + "; update rejected");
    }
  }
  if (state.m.empty()) {
    state.m.assign(grads.size(), 0.0);
    state.v.assign(grads.size(), 0.0);
  }
  ++state.step;
  const double b1 = hyper.adam_beta1, b2 = hyper.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (size_t i = 0; i < grads.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    model.params[i] -= hyper.learning_rate * mhat / (std::sqrt(vhat) + hyper.adam_epsilon);
  }
}

// ----- encoder pretraining ----------------------------------------------

PretrainedEncoder pretrain_encoder(const std::vector<DialogueSession>& sessions,
                                   const Hyperparams& hyper, std::uint64_t seed,
                                   int epochs) {
  hyper.validate();
  if (sessions.empty()) throw InputError("pretrain_encoder: no sessions");
  std::vector<std::string> vocab = {"<s>", "</s>"};
  {
    std::set<std::string> seen(vocab.begin(), vocab.end());
    for (const DialogueSession& session : sessions) {
      for (const Turn& turn : session.turns) {
        for (const std::string& tok : turn.tokens) {
          if (seen.insert(tok).second) vocab.push_back(tok);
        }
      }
    }
  }
  if (vocab.size() < 3) throw Error("pretrain_encoder: vocabulary too small");
  std::unordered_map<std::string, int> index;
  for (size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], static_cast<int>(i));

  const int v = static_cast<int>(vocab.size());
  const int d = hyper.embedding_dim;
  const int h = hyper.encoder_hidden;
  ParamLayout layout;
  layout.add("lm_embed", v, d);
  layout.add("lm_wx", 4 * h, d);
  layout.add("lm_wh", 4 * h, h);
  layout.add("lm_b", 4 * h, 1);
  layout.add("lm_ow", v, h);
  layout.add("lm_ob", v, 1);
  std::vector<double> params(layout.total, 0.0);
  std::mt19937_64 rng(seed);
  for (const BlockSpec& spec : layout.blocks) {
    if (spec.name == "lm_b" || spec.name == "lm_ob") continue;
    double a = std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
    std::uniform_real_distribution<double> uniform(-a, a);
    MatMap block = map_block(layout, params, spec.name);
    for (Eigen::Index c = 0; c < spec.cols; ++c) {
      for (Eigen::Index r = 0; r < spec.rows; ++r) block(r, c) = uniform(rng);
    }
  }

  std::vector<std::vector<int>> sequences;  // <s> tokens... ; targets shift by one
  for (const DialogueSession& session : sessions) {
    for (const Turn& turn : session.turns) {
      if (turn.tokens.empty()) continue;
      std::vector<int> seq;
      seq.push_back(index.at("<s>"));
      for (const std::string& tok : turn.tokens) seq.push_back(index.at(tok));
      seq.push_back(index.at("</s>"));
      sequences.push_back(std::move(seq));
    }
  }
  if (sequences.empty()) throw InputError("pretrain_encoder: no utterances");

  auto run = [&](const std::vector<int>& seq, std::vector<double>* grads) -> double {
    const int steps = static_cast<int>(seq.size()) - 1;
    ConstMatMap emb = map_block(layout, std::as_const(params), "lm_embed");
    MatrixXd x(steps, d);
    for (int t = 0; t < steps; ++t) x.row(t) = emb.row(seq[t]);
    LstmCache cache =
        lstm_forward(map_block(layout, std::as_const(params), "lm_wx"),
                     map_block(layout, std::as_const(params), "lm_wh"),
                     map_block(layout, std::as_const(params), "lm_b"), std::move(x));
    ConstMatMap ow = map_block(layout, std::as_const(params), "lm_ow");
    ConstMatMap ob = map_block(layout, std::as_const(params), "lm_ob");
    double nll = 0.0;
    MatrixXd dh = MatrixXd::Zero(steps, h);
    for (int t = 0; t < steps; ++t) {
      VectorXd logits = ow * cache.h.row(t).transpose() + ob.col(0);
      double max_l = logits.maxCoeff();
      VectorXd probs = (logits.array() - max_l).exp();
      probs /= probs.sum();
      int target = seq[t + 1];
      nll += -std::log(std::max(probs[target], 1e-300));
      if (grads) {
        VectorXd dlogits = probs;
        dlogits[target] -= 1.0;
        map_block(layout, *grads, "lm_ow") += dlogits * cache.h.row(t);
        map_block(layout, *grads, "lm_ob").col(0) += dlogits;
        dh.row(t) = (ow.transpose() * dlogits).transpose();
      }
    }
    if (grads) {
      MatrixXd dx = lstm_backward(map_block(layout, std::as_const(params), "lm_wx"),
                                  map_block(layout, std::as_const(params), "lm_wh"), cache, dh,
                                  map_block(layout, *grads, "lm_wx"),
                                  map_block(layout, *grads, "lm_wh"),
                                  map_block(layout, *grads, "lm_b"));
      MatMap g_emb = map_block(layout, *grads, "lm_embed");
      for (int t = 0; t < steps; ++t) g_emb.row(seq[t]) += dx.row(t);
    }
    return nll;
  };

  auto perplexity = [&]() {
    double nll = 0.0;
    long tokens = 0;
    for (const auto& seq : sequences) {
      nll += run(seq, nullptr);
      tokens += static_cast<long>(seq.size()) - 1;
    }
    return std::exp(nll / static_cast<double>(tokens));
  };

  PretrainedEncoder result;
  result.initial_perplexity = perplexity();

  std::vector<double> m(layout.total, 0.0), vst(layout.total, 0.0);
  long step = 0;
  const int batch = 8;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(seed + 1000 + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t start = 0; start < order.size(); start += batch) {
      std::vector<double> grads(layout.total, 0.0);
      long tokens = 0;
      for (size_t i = start; i < std::min(order.size(), start + batch); ++i) {
        run(sequences[order[i]], &grads);
        tokens += static_cast<long>(sequences[order[i]].size()) - 1;
      }
      double scale = 1.0 / static_cast<double>(tokens);
      for (double& g : grads) g *= scale;
      ++step;
      const double b1 = hyper.adam_beta1, b2 = hyper.adam_beta2;
      const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step));
      for (size_t i = 0; i < params.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * grads[i];
        vst[i] = b2 * vst[i] + (1.0 - b2) * grads[i] * grads[i];
        params[i] -= hyper.learning_rate * (m[i] / bc1) /
                     (std::sqrt(vst[i] / bc2) + hyper.adam_epsilon);
      }
    }
  }
  result.final_perplexity = perplexity();
  result.wx = map_block(layout, std::as_const(params), "lm_wx");
  result.wh = map_block(layout, std::as_const(params), "lm_wh");
  result.b = map_block(layout, std::as_const(params), "lm_b").col(0);
  return result;
}

void apply_pretrained_encoder(CarryoverModel& model, const PretrainedEncoder& pretrained) {
  for (const char* enc : {"ctx_fwd", "cur_fwd"}) {
    if (model.block(std::string(enc) + "_wx").rows() != pretrained.wx.rows() ||
        model.block(std::string(enc) + "_wx").cols() != pretrained.wx.cols()) {
      throw ConfigError("apply_pretrained_encoder: shape mismatch");
    }
    model.block(std::string(enc) + "_wx") = pretrained.wx;
    model.block(std::string(enc) + "_wh") = pretrained.wh;
    model.block(std::string(enc) + "_b").col(0) = pretrained.b;
  }
}

CarryoverModel transfer_init(const CarryoverModel& source_model,
                             const EmbeddingTable& target_embeddings) {
  if (target_embeddings.dim != source_model.hyper.embedding_dim) {
    throw ConfigError("transfer_init: embedding dim mismatch");
  }
  CarryoverModel out = init_model(source_model.hyper, target_embeddings,
                                  source_model.hyper.seed);
  for (const BlockSpec& spec : out.layout.blocks) {
    if (spec.name == "embedding") continue;
    map_block(out.layout, out.params, spec.name) =
        map_block(source_model.layout, source_model.params, spec.name);
  }
  // Tokens absent from the target table (markers) keep their source rows;
  // bucket rows transfer wholesale since the hash is shared.
  MatMap emb = out.block("embedding");
  ConstMatMap src_emb = source_model.block("embedding");
  for (size_t i = 0; i < out.vocab.size(); ++i) {
    if (target_embeddings.contains(out.vocab[i])) continue;
    auto it = source_model.vocab_index.find(out.vocab[i]);
    if (it != source_model.vocab_index.end()) emb.row(i) = src_emb.row(it->second);
  }
  for (int b = 0; b < out.hyper.oov_buckets; ++b) {
    emb.row(out.vocab.size() + b) = src_emb.row(source_model.vocab.size() + b);
  }
  return out;
}

// ----- checkpoints -------------------------------------------------------

void save_checkpoint(const CarryoverModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open checkpoint for writing: " + path);
  const Hyperparams& hp = model.hyper;
  json hyper = {{"embedding_dim", hp.embedding_dim},
                {"encoder_hidden", hp.encoder_hidden},
                {"decoder_hidden", hp.decoder_hidden},
                {"window", hp.window},
                {"max_epochs", hp.max_epochs},
                {"batch_size", hp.batch_size},
                {"learning_rate", hp.learning_rate},
                {"adam_beta1", hp.adam_beta1},
                {"adam_beta2", hp.adam_beta2},
                {"adam_epsilon", hp.adam_epsilon},
                {"positive_class_weight", hp.positive_class_weight},
                {"threshold", hp.threshold},
                {"oov_buckets", hp.oov_buckets},
                {"seed", hp.seed}};
  out << "carryover-checkpoint 1\n";
  out << hyper.dump() << '\n';
  out << "vocab " << model.vocab.size() << '\n';
  for (const std::string& tok : model.vocab) out << tok << '\n';
  out << "blocks " << model.layout.blocks.size() << '\n';
  char buf[64];
  for (const BlockSpec& spec : model.layout.blocks) {
    out << spec.name << ' ' << spec.rows << ' ' << spec.cols << '\n';
    const double* base = model.params.data() + spec.offset;
    for (Eigen::Index i = 0; i < spec.rows * spec.cols; ++i) {
      std::snprintf(buf, sizeof buf, "%a", base[i]);  // hexfloat: exact round trip
      out << buf << (i + 1 == spec.rows * spec.cols ? '\n' : ' ');
    }
  }
  if (!out) throw Error("checkpoint write failed: " + path);
}

namespace {

void write_matrix_hex(std::ostream& out, const MatrixXd& m) {
  char buf[64];
  out << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      std::snprintf(buf, sizeof buf, "%a", m(r, c));
      out << buf << ((r + 1 == m.rows() && c + 1 == m.cols()) ? '\n' : ' ');
    }
  }
}

MatrixXd read_matrix_hex(std::istream& in) {
  Eigen::Index rows, cols;
  if (!(in >> rows >> cols)) throw ParseError("pretrained encoder: truncated matrix header");
  MatrixXd m(rows, cols);
  std::string value;
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!(in >> value)) throw ParseError("pretrained encoder: truncated matrix");
      m(r, c) = std::strtod(value.c_str(), nullptr);
    }
  }
  return m;
}

}  // namespace

void save_pretrained_encoder(const PretrainedEncoder& encoder, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open pretrained encoder for writing: " + path);
  out << "carryover-pretrained-encoder 1\n";
  out << encoder.initial_perplexity << ' ' << encoder.final_perplexity << '\n';
  write_matrix_hex(out, encoder.wx);
  write_matrix_hex(out, encoder.wh);
  write_matrix_hex(out, encoder.b);
  if (!out) throw Error("pretrained encoder write failed: " + path);
}

PretrainedEncoder load_pretrained_encoder(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open pretrained encoder: " + path);
  std::string line;
  std::getline(in, line);
  if (line != "carryover-pretrained-encoder 1") {
    throw ParseError("pretrained encoder: unknown format header");
  }
  PretrainedEncoder encoder;
  in >> encoder.initial_perplexity >> encoder.final_perplexity;
  encoder.wx = read_matrix_hex(in);
  encoder.wh = read_matrix_hex(in);
  encoder.b = read_matrix_hex(in).col(0);
  return encoder;
}

CarryoverModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  std::string line;
  std::getline(in, line);
  if (line != "carryover-checkpoint 1") {
    throw ParseError("checkpoint: unknown format header '" + line + "'");
  }
  std::getline(in, line);
  json hyper = json::parse(line);
  CarryoverModel model;
  Hyperparams& hp = model.hyper;
  hp.embedding_dim = hyper.at("embedding_dim");
  hp.encoder_hidden = hyper.at("encoder_hidden");
  hp.decoder_hidden = hyper.at("decoder_hidden");
  hp.window = hyper.at("window");
  hp.max_epochs = hyper.at("max_epochs");
  hp.batch_size = hyper.at("batch_size");
  hp.learning_rate = hyper.at("learning_rate");
  hp.adam_beta1 = hyper.at("adam_beta1");
  hp.adam_beta2 = hyper.at("adam_beta2");
  hp.adam_epsilon = hyper.at("adam_epsilon");
  hp.positive_class_weight = hyper.at("positive_class_weight");
  hp.threshold = hyper.at("threshold");
  hp.oov_buckets = hyper.at("oov_buckets");
  hp.seed = hyper.at("seed");

  std::string word;
  size_t count = 0;
  in >> word >> count;
  if (word != "vocab") throw ParseError("checkpoint: expected vocab section");
  in.ignore();
  for (size_t i = 0; i < count; ++i) {
    std::getline(in, line);
    model.vocab.push_back(line);
    model.vocab_index.emplace(line, static_cast<int>(i));
  }
  size_t block_count = 0;
  in >> word >> block_count;
  if (word != "blocks") throw ParseError("checkpoint: expected blocks section");
  model.layout = build_layout(hp, model.embedding_rows());
  if (block_count != model.layout.blocks.size()) {
    throw ParseError("checkpoint: unexpected block count");
  }
  model.params.assign(model.layout.total, 0.0);
  for (size_t bi = 0; bi < block_count; ++bi) {
    std::string name;
    Eigen::Index rows, cols;
    in >> name >> rows >> cols;
    const BlockSpec& spec = model.layout.at(name);
    if (rows != spec.rows || cols != spec.cols) {
      throw ParseError("checkpoint: shape mismatch for block " + name);
    }
    double* base = model.params.data() + spec.offset;
    for (Eigen::Index i = 0; i < rows * cols; ++i) {
      std::string value;
      if (!(in >> value)) throw ParseError("checkpoint: truncated block " + name);
      base[i] = std::strtod(value.c_str(), nullptr);
    }
  }
  return model;
}

}  // namespace carryover
