#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdna/codon.hpp"
#include "sdna/embedding_io.hpp"
#include "sdna/experts.hpp"

namespace sdna {

// How codon cohesion deficits enter the total energy.
//   Sum:  sum over codons of (1 - F_binding)
//   Mean: the same sum divided by the codon count
//   None: cohesion left out (it is expert-independent either way)
enum class CohesionMode { Sum, Mean, None };

CohesionMode parse_cohesion_mode(std::string_view name);
std::string_view cohesion_mode_name(CohesionMode mode) noexcept;

struct RouteOptions {
  CohesionMode cohesion = CohesionMode::Sum;
  BindingNormalization binding = BindingNormalization::PairMean;
  DocEmbedding doc_embedding = DocEmbedding::CodonMean;
};

struct RoutingOutcome {
  std::string doc_id;
  std::size_t chosen_expert = 0;
  std::vector<double> energies;    // E_total per expert
  std::vector<double> affinities;  // cosine to each centroid
  std::vector<double> p;           // activation distribution
  double entropy_h_a = 0.0;        // nats
  double ssi = 1.0;
  double cohesion_term = 0.0;
  double latency_term_used = 0.0;  // gamma * L_c of the chosen expert
  std::size_t n_codons = 0;
};

// Natural-log entropy; zero entries contribute nothing. Throws
// NotADistribution for negative/non-finite entries or a sum off by > 1e-6.
double activation_entropy(std::span<const double> p);

// 1 - H_a / ln k for k >= 2, clamped to [0, 1]; 1 for k = 1.
double stability_index(double entropy, std::size_t k);

double cohesion_term(const Segmentation& seg, const SimilarityMatrix& s, CohesionMode mode,
                     BindingNormalization binding);

// cohesion + (1 - affinity) + beta * H_a(p) + gamma * L_c(expert)
double total_energy(const Segmentation& seg, const SimilarityMatrix& s, std::span<const double> p,
                    const ExpertModel& model, std::size_t expert, double affinity,
                    const RouteOptions& options = {});

RoutingOutcome route(const CorpusDocument& doc, const ExpertModel& model,
                     const RouteOptions& options = {});

// Routes every document; threads > 1 splits documents across workers.
// Results are in corpus order and independent of the thread count.
std::vector<RoutingOutcome> route_corpus(std::span<const CorpusDocument> docs, const ExpertModel& model,
                                         const RouteOptions& options = {}, std::size_t threads = 1);

// One JSON-lines record. The full energy vector is included only when verbose.
std::string routing_report_line(const RoutingOutcome& outcome, bool verbose = false);

}  // namespace sdna
