#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sdna/embedding_io.hpp"

namespace sdna {

// Dense square matrix of doubles, row-major.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n) : n_(n), data_(n * n, 0.0) {}

  std::size_t size() const noexcept { return n_; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * n_ + j]; }
  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * n_ + j]; }

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

// Pairwise cosine similarity of token vectors. Symmetric (upper triangle is
// computed once and mirrored), entries clamped to [-1, 1].
using SimilarityMatrix = SquareMatrix;

// Contiguous token range [start, end] (both inclusive).
struct Codon {
  std::size_t start = 0;
  std::size_t end = 0;
  std::vector<double> embedding;  // mean of member token vectors
  double binding_force = 1.0;

  std::size_t size() const noexcept { return end - start + 1; }
};

struct Segmentation {
  std::vector<Codon> codons;
  std::size_t n_tokens = 0;
};

// How the intra-codon pair sum is normalized.
//   PairMean: mean over unordered distinct pairs i<j, stays in [-1, 1].
//   Literal:  the same pair sum scaled by 1/(|C|-1).
// Singletons are 1.0 in both modes.
enum class BindingNormalization { PairMean, Literal };

BindingNormalization parse_binding_normalization(std::string_view name);
std::string_view binding_normalization_name(BindingNormalization mode) noexcept;

SimilarityMatrix similarity_matrix(const EmbeddingMatrix& m);

// E_s(i, j) = 1 - S(i, j).
SquareMatrix semantic_energy(const SimilarityMatrix& s);

// Single left-to-right pass: token i+1 joins the current codon iff
// S(i, i+1) >= tau, otherwise it opens a new codon.
Segmentation assemble_codons(const EmbeddingMatrix& m, double tau,
                             BindingNormalization mode = BindingNormalization::PairMean);
Segmentation assemble_codons(const EmbeddingMatrix& m, double tau, const SimilarityMatrix& s,
                             BindingNormalization mode = BindingNormalization::PairMean);

double binding_force(const SimilarityMatrix& s, const Codon& c,
                     BindingNormalization mode = BindingNormalization::PairMean);

// Mean cross-similarity between two disjoint codons.
double non_binding_force(const SimilarityMatrix& s, const Codon& a, const Codon& b);

std::string segmentation_json(std::string_view doc_id, double tau, const Segmentation& seg);

// n x n CSV of semantic energies, no header.
std::string energy_heatmap_csv(const SquareMatrix& energy);

}  // namespace sdna
