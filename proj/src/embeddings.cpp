#include "carryover/embeddings.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace carryover {

void EmbeddingTable::rebuild_index() {
  index.clear();
  index.reserve(vocab.size());
  for (size_t i = 0; i < vocab.size(); ++i) index.emplace(vocab[i], static_cast<int>(i));
}

void EmbeddingTable::length_normalize() {
  for (int i = 0; i < vectors.rows(); ++i) {
    double norm = vectors.row(i).norm();
    if (norm > 0.0) vectors.row(i) /= norm;
  }
}

EmbeddingTable load_word_vectors(std::istream& in, const std::string& language) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("word vectors: empty stream");
  std::istringstream header(line);
  long count = 0;
  int dim = 0;
  if (!(header >> count >> dim) || count < 0 || dim < 1) {
    throw ParseError("word vectors:1: bad header, expected 'count dim'");
  }
  EmbeddingTable table;
  table.language = language;
  table.dim = dim;
  table.vectors.resize(count, dim);
  int row = 0;
  int line_number = 1;
  while (row < count) {
    if (!std::getline(in, line)) {
      throw ParseError("word vectors: header promises " + std::to_string(count) +
                       " entries but stream ends after " + std::to_string(row));
    }
    ++line_number;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string token;
    fields >> token;
    Eigen::VectorXd vec(dim);
    for (int d = 0; d < dim; ++d) {
      if (!(fields >> vec[d])) {
        throw ParseError("word vectors:" + std::to_string(line_number) +
                         ": expected " + std::to_string(dim) + " values for '" + token + "'");
      }
    }
    double extra;
    if (fields >> extra) {
      throw ParseError("word vectors:" + std::to_string(line_number) +
                       ": too many values for '" + token + "'");
    }
    if (table.index.count(token)) {
      std::cerr << "warning: duplicate token '" << token << "' at line " << line_number
                << ", first occurrence wins\n";
      table.vectors.conservativeResize(table.vectors.rows() - 1, dim);
      --count;
      continue;
    }
    table.index.emplace(token, row);
    table.vocab.push_back(token);
    table.vectors.row(row) = vec;
    ++row;
  }
  return table;
}

EmbeddingTable load_word_vectors_file(const std::string& path, const std::string& language) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open word-vector file: " + path);
  return load_word_vectors(in, language);
}

void write_word_vectors(const EmbeddingTable& table, std::ostream& out) {
  out << table.vocab.size() << ' ' << table.dim << '\n';
  out.precision(17);
  for (size_t i = 0; i < table.vocab.size(); ++i) {
    out << table.vocab[i];
    for (int d = 0; d < table.dim; ++d) out << ' ' << table.vectors(i, d);
    out << '\n';
  }
}

void write_word_vectors_file(const EmbeddingTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  write_word_vectors(table, out);
}

int oov_bucket(const std::string& token, const OovPolicy& policy) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : token) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return static_cast<int>(h % static_cast<std::uint64_t>(policy.buckets));
}

Eigen::VectorXd oov_vector(const std::string& token, int dim, const OovPolicy& policy) {
  int bucket = oov_bucket(token, policy);
  std::mt19937_64 rng(policy.seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(bucket));
  std::normal_distribution<double> dist(0.0, 0.1 / std::sqrt(static_cast<double>(dim)));
  Eigen::VectorXd vec(dim);
  for (int d = 0; d < dim; ++d) vec[d] = dist(rng);
  return vec;
}

Eigen::VectorXd lookup(const EmbeddingTable& table, const std::string& token,
                       const OovPolicy& policy) {
  auto it = table.index.find(token);
  if (it != table.index.end()) return table.vectors.row(it->second);
  if (policy.mode == OovMode::Zero) return Eigen::VectorXd::Zero(table.dim);
  return oov_vector(token, table.dim, policy);
}

AlignmentResult procrustes_align(
    const EmbeddingTable& src, const EmbeddingTable& tgt,
    const std::vector<std::pair<std::string, std::string>>& dictionary) {
  if (src.dim != tgt.dim) throw AlignmentError("procrustes: dimension mismatch");
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [s, t] : dictionary) {
    auto si = src.index.find(s);
    auto ti = tgt.index.find(t);
    if (si != src.index.end() && ti != tgt.index.end()) {
      pairs.emplace_back(si->second, ti->second);
    }
  }
  if (static_cast<int>(pairs.size()) < src.dim) {
    throw AlignmentError("procrustes: only " + std::to_string(pairs.size()) +
                         " usable dictionary pairs for dim " + std::to_string(src.dim));
  }
  Eigen::MatrixXd x(pairs.size(), src.dim), y(pairs.size(), src.dim);
  for (size_t i = 0; i < pairs.size(); ++i) {
    x.row(i) = src.vectors.row(pairs[i].first);
    y.row(i) = tgt.vectors.row(pairs[i].second);
  }

  AlignmentResult result;
  Eigen::MatrixXd m = x.transpose() * y;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  double cond = svd.singularValues()(0) /
                std::max(svd.singularValues()(svd.singularValues().size() - 1), 1e-300);
  if (cond > 1e12) {
    result.degenerate_dictionary = true;
    std::cerr << "warning: procrustes dictionary matrix is near rank-deficient (cond "
              << cond << ")\n";
  }
  result.mapping = svd.matrixU() * svd.matrixV().transpose();
  result.residual = (x * result.mapping - y).norm();

  // Nearest-neighbor translation accuracy of mapped dictionary source words.
  int correct = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    Eigen::VectorXd mapped = result.mapping.transpose() * x.row(i).transpose();
    double mapped_norm = std::max(mapped.norm(), 1e-300);
    int best = -1;
    double best_sim = -2.0;
    for (int r = 0; r < tgt.vectors.rows(); ++r) {
      double denom = std::max(tgt.vectors.row(r).norm(), 1e-300) * mapped_norm;
      double sim = tgt.vectors.row(r).dot(mapped) / denom;
      if (sim > best_sim) {
        best_sim = sim;
        best = r;
      }
    }
    if (best == pairs[i].second) ++correct;
  }
  result.dictionary_accuracy =
      pairs.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pairs.size());
  return result;
}

EmbeddingTable apply_mapping(const EmbeddingTable& table, const Eigen::MatrixXd& mapping,
                             const std::string& new_language) {
  EmbeddingTable out = table;
  out.vectors = table.vectors * mapping;
  if (!new_language.empty()) out.language = new_language;
  out.shared_space = true;
  return out;
}

EmbeddingTable random_embedding_table(const std::vector<std::string>& vocab, int dim,
                                      std::uint64_t seed, const std::string& language) {
  EmbeddingTable table;
  table.language = language;
  table.dim = dim;
  table.vocab = vocab;
  table.vectors.resize(vocab.size(), dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (Eigen::Index i = 0; i < table.vectors.rows(); ++i) {
    for (int d = 0; d < dim; ++d) table.vectors(i, d) = dist(rng);
  }
  table.rebuild_index();
  return table;
}

Eigen::MatrixXd random_orthogonal(int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd g(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) g(i, j) = dist(rng);
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fix signs so the factorization is unique.
  for (int i = 0; i < dim; ++i) {
    if (r(i, i) < 0) q.col(i) = -q.col(i);
  }
  return q;
}

}  // namespace carryover
