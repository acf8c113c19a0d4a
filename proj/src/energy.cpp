#include "sdna/energy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include <json.hpp>

#include "sdna/error.hpp"

namespace sdna {

CohesionMode parse_cohesion_mode(std::string_view name) {
  if (name == "sum") return CohesionMode::Sum;
  if (name == "mean") return CohesionMode::Mean;
  if (name == "none") return CohesionMode::None;
  throw Error(ErrorKind::InvalidArgument, "cohesion must be 'sum', 'mean' or 'none'");
}

std::string_view cohesion_mode_name(CohesionMode mode) noexcept {
  switch (mode) {
    case CohesionMode::Sum: return "sum";
    case CohesionMode::Mean: return "mean";
    case CohesionMode::None: return "none";
  }
  return "sum";
}

double activation_entropy(std::span<const double> p) {
  if (p.empty()) throw Error(ErrorKind::NotADistribution, "empty distribution");
  double total = 0.0;
  double h = 0.0;
  for (double v : p) {
    if (!std::isfinite(v) || v < 0.0) throw Error(ErrorKind::NotADistribution, "entries must be finite and >= 0");
    total += v;
    if (v > 0.0) h -= v * std::log(v);
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw Error(ErrorKind::NotADistribution, "entries sum to " + std::to_string(total));
  }
  return std::max(h, 0.0);
}

double stability_index(double entropy, std::size_t k) {
  if (k <= 1) return 1.0;
  return std::clamp(1.0 - entropy / std::log(static_cast<double>(k)), 0.0, 1.0);
}

double cohesion_term(const Segmentation& seg, const SimilarityMatrix& s, CohesionMode mode,
                     BindingNormalization binding) {
  if (mode == CohesionMode::None || seg.codons.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : seg.codons) sum += 1.0 - binding_force(s, c, binding);
  return mode == CohesionMode::Mean ? sum / static_cast<double>(seg.codons.size()) : sum;
}

double total_energy(const Segmentation& seg, const SimilarityMatrix& s, std::span<const double> p,
                    const ExpertModel& model, std::size_t expert, double affinity,
                    const RouteOptions& options) {
  if (expert >= model.k || expert >= model.cost_table.size()) {
    throw Error(ErrorKind::IndexOutOfRange,
                "expert " + std::to_string(expert) + " with k=" + std::to_string(model.k));
  }
  return cohesion_term(seg, s, options.cohesion, options.binding) + (1.0 - affinity) +
         model.beta * activation_entropy(p) + model.gamma * model.cost_table[expert];
}

RoutingOutcome route(const CorpusDocument& doc, const ExpertModel& model, const RouteOptions& options) {
  const auto& m = doc.embeddings;
  if (m.dim() != model.dim) {
    throw Error(ErrorKind::DimMismatch, "doc=" + doc.doc_id + " dim " + std::to_string(m.dim()) +
                                            ", model dim " + std::to_string(model.dim));
  }
  const SimilarityMatrix s = similarity_matrix(m);
  const Segmentation seg = assemble_codons(m, model.tau, s, options.binding);
  const auto x = document_embedding(m, seg, options.doc_embedding);

  RoutingOutcome out;
  out.doc_id = doc.doc_id;
  out.n_codons = seg.codons.size();
  try {
    out.affinities = expert_affinity(x, model);
  } catch (const Error& e) {
    throw Error(e.kind(), "doc=" + doc.doc_id + " " + e.detail());
  }
  out.p = activation_distribution(out.affinities, model.temperature);
  out.entropy_h_a = activation_entropy(out.p);
  out.ssi = stability_index(out.entropy_h_a, model.k);
  out.cohesion_term = cohesion_term(seg, s, options.cohesion, options.binding);

  // Cohesion and entropy are shared by every expert; only affinity and cost vary.
  const double entropy_term = model.beta * out.entropy_h_a;
  out.energies.resize(model.k);
  for (std::size_t e = 0; e < model.k; ++e) {
    out.energies[e] = out.cohesion_term + (1.0 - out.affinities[e]) + entropy_term +
                      model.gamma * model.cost_table[e];
  }
  out.chosen_expert = static_cast<std::size_t>(
      std::min_element(out.energies.begin(), out.energies.end()) - out.energies.begin());
  out.latency_term_used = model.gamma * model.cost_table[out.chosen_expert];
  return out;
}

std::vector<RoutingOutcome> route_corpus(std::span<const CorpusDocument> docs, const ExpertModel& model,
                                         const RouteOptions& options, std::size_t threads) {
  std::vector<RoutingOutcome> out(docs.size());
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(docs.size(), 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < docs.size(); ++i) out[i] = route(docs[i], model, options);
    return out;
  }

  std::vector<std::exception_ptr> errors(docs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < docs.size(); i = next++) {
      try {
        out[i] = route(docs[i], model, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  pool.clear();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::string routing_report_line(const RoutingOutcome& o, bool verbose) {
  nlohmann::ordered_json j;
  j["doc_id"] = o.doc_id;
  j["chosen_expert"] = o.chosen_expert;
  j["ssi"] = o.ssi;
  j["h_a"] = o.entropy_h_a;
  j["cohesion_term"] = o.cohesion_term;
  j["energies_min"] = o.energies.empty() ? 0.0 : *std::min_element(o.energies.begin(), o.energies.end());
  j["energies_max"] = o.energies.empty() ? 0.0 : *std::max_element(o.energies.begin(), o.energies.end());
  j["n_codons"] = o.n_codons;
  if (verbose) j["energies"] = o.energies;
  return j.dump();
}

}  // namespace sdna
