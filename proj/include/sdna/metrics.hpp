#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdna/embedding_io.hpp"
#include "sdna/energy.hpp"
#include "sdna/experts.hpp"

namespace sdna {

struct DocEnergy {
  double joules = 0.0;
  std::size_t tokens = 0;
};

// E_d = sum_t P_d(t) * dt
double document_energy(const PowerTrace& trace);

// rho_d = E_d / T_d. Throws ZeroTokens for t_d == 0.
double energy_density(double joules, std::size_t tokens);

// EUD = sum E_d / sum T_d. This is a ratio of totals, not the mean of rho_d.
double corpus_eud(std::span<const DocEnergy> per_doc);

// Mean of per-document SSI. Throws EmptyInput.
double aggregate_ssi(std::span<const RoutingOutcome> outcomes);

struct DocMetrics {
  std::string doc_id;
  std::size_t tokens = 0;
  std::optional<double> energy_j;
  std::optional<double> rho_j_per_token;
  double ssi = 0.0;
};

struct MetricsReport {
  std::string corpus_id;
  std::size_t n_docs = 0;
  double mean_ssi = 0.0;
  std::optional<double> eud_j_per_token;
  std::optional<double> mean_rho_j_per_token;
  std::vector<DocMetrics> per_doc;
  double wall_time_route_s = 0.0;
};

// traces, when given, must already be aligned with docs (see align_traces).
MetricsReport build_metrics_report(std::string corpus_id, std::span<const CorpusDocument> docs,
                                   std::span<const RoutingOutcome> outcomes,
                                   std::optional<std::span<const PowerTrace>> traces,
                                   double wall_time_route_s);

std::string metrics_report_json(const MetricsReport& report);

struct ExperimentConfig {
  FitOptions fit;  // k and tau are overridden per cell
  RouteOptions route;
  std::size_t route_threads = 1;
};

struct AblationRow {
  std::size_t k = 0;
  double tau = 0.0;
  std::optional<double> eud_j_per_token;
  double mean_ssi = 0.0;
  double route_time_s = 0.0;
  std::size_t route_threads = 1;
  std::string status;  // "ok" or the error kind of a failed cell
};

// For every (k, tau) in grid order: fit, route the corpus, compute metrics.
// A failing cell is recorded in its row instead of aborting the grid.
std::vector<AblationRow> ablation_grid(std::span<const CorpusDocument> corpus,
                                       std::span<const std::size_t> ks, std::span<const double> taus,
                                       std::optional<std::span<const PowerTrace>> traces,
                                       const ExperimentConfig& config);

std::string ablation_csv(std::span<const AblationRow> rows);

struct ScalingPoint {
  std::size_t k = 0;
  double ssi = 0.0;
  double routing_time_s = 0.0;
  std::optional<double> eud_j_per_token;
};

// Least-squares fit of ssi = a + b * ln(k); r2 = 1 - SS_res / SS_tot.
// A zero SS_tot (or zero spread in ln k) reports r2 = 0 with degenerate set.
struct LogFit {
  double a = 0.0;
  double b = 0.0;
  double r2 = 0.0;
  bool degenerate = false;
};

LogFit fit_log_trend(std::span<const double> ks, std::span<const double> ssi);

struct ScalingResult {
  std::vector<ScalingPoint> points;
  LogFit fit;
};

// ks must be strictly ascending with at least three entries.
ScalingResult scaling_study(std::span<const CorpusDocument> corpus, std::span<const std::size_t> ks,
                            std::uint64_t seed, std::optional<std::span<const PowerTrace>> traces,
                            const ExperimentConfig& config);

std::string scaling_csv(const ScalingResult& result);

}  // namespace sdna
