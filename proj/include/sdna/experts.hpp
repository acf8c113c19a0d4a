#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdna/codon.hpp"
#include "sdna/embedding_io.hpp"

namespace sdna {

// SplitMix64:
//   state += 0x9E3779B97F4A7C15
//   z = state; z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB; return z ^ (z >> 31)
// uniform() maps the top 53 bits to [0, 1).
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

// What a document contributes to the expert fit, and how a document vector is
// formed for routing.
enum class FitPoints { Codons, Documents };
enum class DocEmbedding { CodonMean, TokenMean };

FitPoints parse_fit_points(std::string_view name);
DocEmbedding parse_doc_embedding(std::string_view name);

struct FitStats {
  std::size_t iterations = 0;
  double inertia = 0.0;
  // Inertia after each assignment step, final assignment last. Not serialized.
  std::vector<double> inertia_history;
};

struct ExpertModel {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // k x dim, row-major
  double tau = 0.75;
  double beta = 0.1;
  double gamma = 0.01;
  std::vector<double> cost_table;  // J/token per expert
  double temperature = 1.0;
  std::uint64_t seed = 0;
  FitStats fit_stats;

  std::span<const double> centroid(std::size_t i) const noexcept {
    return {centroids.data() + i * dim, dim};
  }

  // Throws InvalidArgument when a structural invariant does not hold.
  void validate() const;
};

struct FitOptions {
  std::size_t k = 50;
  double tau = 0.75;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  double tol = 1e-6;
  double beta = 0.1;
  double gamma = 0.01;
  double temperature = 1.0;
  std::vector<double> cost_table;  // empty means all zero
  FitPoints points = FitPoints::Codons;
  DocEmbedding doc_embedding = DocEmbedding::CodonMean;
  BindingNormalization binding = BindingNormalization::PairMean;
};

// Lloyd's k-means over raw points (row-major, n x dim), k-means++ seeded from
// SplitMix64(seed). Centroids are returned rounded to 9 significant digits so
// an in-memory model equals its serialized form.
struct KMeansResult {
  std::vector<double> centroids;
  std::vector<std::size_t> labels;
  FitStats stats;
};
KMeansResult kmeans(std::span<const double> points, std::size_t dim, std::size_t k,
                    std::uint64_t seed, std::size_t max_iter, double tol);

// Segments every document at tau and collects fit points (codon embeddings or
// one document embedding per document) in corpus order.
std::vector<double> collect_fit_points(std::span<const CorpusDocument> corpus, double tau,
                                       FitPoints points, DocEmbedding doc_embedding,
                                       BindingNormalization binding);

std::vector<double> document_embedding(const EmbeddingMatrix& m, const Segmentation& seg,
                                       DocEmbedding mode);

ExpertModel fit_experts(std::span<const CorpusDocument> corpus, const FitOptions& options);

// Cosine of x to every centroid.
std::vector<double> expert_affinity(std::span<const double> x, const ExpertModel& model);

// Softmax of affinities / temperature, max-subtracted.
std::vector<double> activation_distribution(std::span<const double> affinities, double temperature);

std::string model_to_json(const ExpertModel& model);
ExpertModel model_from_json(std::string_view text);

double round_significant(double v, int digits);

}  // namespace sdna
