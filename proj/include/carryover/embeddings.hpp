#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "carryover/error.hpp"

namespace carryover {

struct AlignmentError : Error {
  using Error::Error;
};

struct EmbeddingTable {
  std::string language;
  int dim = 0;
  std::vector<std::string> vocab;
  Eigen::MatrixXd vectors;  // |vocab| x dim
  bool shared_space = false;

  std::unordered_map<std::string, int> index;

  void rebuild_index();
  bool contains(const std::string& token) const { return index.count(token) > 0; }
  int size() const { return static_cast<int>(vocab.size()); }
  // Scales every row to unit L2 norm (zero rows stay zero).
  void length_normalize();
};

enum class OovMode { Zero, HashBuckets };

struct OovPolicy {
  OovMode mode = OovMode::HashBuckets;
  int buckets = 1000;
  std::uint64_t seed = 12345;
};

struct AlignmentResult {
  Eigen::MatrixXd mapping;  // dim x dim orthogonal W, minimizes ||XW - Y||_F
  double residual = 0.0;
  double dictionary_accuracy = 0.0;
  bool degenerate_dictionary = false;
};

// Text format: header "count dim", then one "token v1 ... vdim" per line.
EmbeddingTable load_word_vectors(std::istream& in, const std::string& language = "");
EmbeddingTable load_word_vectors_file(const std::string& path,
                                      const std::string& language = "");
void write_word_vectors(const EmbeddingTable& table, std::ostream& out);
void write_word_vectors_file(const EmbeddingTable& table, const std::string& path);

// Total lookup: stored row for in-vocab tokens, else the policy's OOV vector.
Eigen::VectorXd lookup(const EmbeddingTable& table, const std::string& token,
                       const OovPolicy& policy = {});

// Deterministic bucket index / vector used by the hash OOV policy.
int oov_bucket(const std::string& token, const OovPolicy& policy);
Eigen::VectorXd oov_vector(const std::string& token, int dim, const OovPolicy& policy);

// Orthogonal Procrustes: W = argmin_{W orthogonal} ||XW - Y||_F where X/Y
// stack the dictionary rows of src/tgt. Reports the Frobenius residual and
// nearest-neighbor translation accuracy of the mapped dictionary words.
AlignmentResult procrustes_align(
    const EmbeddingTable& src, const EmbeddingTable& tgt,
    const std::vector<std::pair<std::string, std::string>>& dictionary);

// Applies an alignment mapping to every vector of a table.
EmbeddingTable apply_mapping(const EmbeddingTable& table, const Eigen::MatrixXd& mapping,
                             const std::string& new_language = "");

// Random table over a vocabulary, deterministic per seed. Rows ~ N(0, 1/sqrt(dim)).
EmbeddingTable random_embedding_table(const std::vector<std::string>& vocab, int dim,
                                      std::uint64_t seed, const std::string& language);

// Uniformly random orthogonal matrix (QR of a Gaussian), deterministic per seed.
Eigen::MatrixXd random_orthogonal(int dim, std::uint64_t seed);

}  // namespace carryover
