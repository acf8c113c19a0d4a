#include "sdna/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "sdna/error.hpp"

namespace sdna {

namespace {

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::optional<double> traces_eud(std::span<const CorpusDocument> corpus,
                                 std::optional<std::span<const PowerTrace>> traces) {
  if (!traces) return std::nullopt;
  std::vector<DocEnergy> per_doc;
  per_doc.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    per_doc.push_back({document_energy((*traces)[i]), corpus[i].token_count()});
  }
  return corpus_eud(per_doc);
}

struct CellResult {
  double mean_ssi = 0.0;
  double route_time_s = 0.0;
};

CellResult run_cell(std::span<const CorpusDocument> corpus, std::size_t k, double tau,
                    std::uint64_t seed, const ExperimentConfig& config) {
  FitOptions fit = config.fit;
  fit.k = k;
  fit.tau = tau;
  fit.seed = seed;
  const ExpertModel model = fit_experts(corpus, fit);

  const auto start = std::chrono::steady_clock::now();
  const auto outcomes = route_corpus(corpus, model, config.route, config.route_threads);
  const auto stop = std::chrono::steady_clock::now();
  return {aggregate_ssi(outcomes), std::chrono::duration<double>(stop - start).count()};
}

void check_traces_aligned(std::span<const CorpusDocument> docs,
                          std::optional<std::span<const PowerTrace>> traces) {
  if (!traces) return;
  if (traces->size() != docs.size()) {
    throw Error(ErrorKind::MissingTrace, std::to_string(traces->size()) + " traces for " +
                                             std::to_string(docs.size()) + " documents");
  }
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if ((*traces)[i].doc_id != docs[i].doc_id) {
      throw Error(ErrorKind::InvalidArgument, "traces are not aligned with the corpus at doc=" + docs[i].doc_id);
    }
  }
}

}  // namespace

double document_energy(const PowerTrace& trace) {
  double joules = 0.0;
  for (double w : trace.samples_w) joules += w * trace.delta_t_s;
  return joules;
}

double energy_density(double joules, std::size_t tokens) {
  if (tokens == 0) throw Error(ErrorKind::ZeroTokens, "document has no tokens");
  return joules / static_cast<double>(tokens);
}

double corpus_eud(std::span<const DocEnergy> per_doc) {
  double joules = 0.0;
  std::size_t tokens = 0;
  for (const auto& d : per_doc) {
    joules += d.joules;
    tokens += d.tokens;
  }
  if (tokens == 0) throw Error(ErrorKind::ZeroTokens, "corpus has no tokens");
  return joules / static_cast<double>(tokens);
}

double aggregate_ssi(std::span<const RoutingOutcome> outcomes) {
  if (outcomes.empty()) throw Error(ErrorKind::EmptyInput, "no routing outcomes");
  double sum = 0.0;
  for (const auto& o : outcomes) sum += o.ssi;
  return sum / static_cast<double>(outcomes.size());
}

MetricsReport build_metrics_report(std::string corpus_id, std::span<const CorpusDocument> docs,
                                   std::span<const RoutingOutcome> outcomes,
                                   std::optional<std::span<const PowerTrace>> traces,
                                   double wall_time_route_s) {
  if (outcomes.size() != docs.size()) {
    throw Error(ErrorKind::InvalidArgument, "one routing outcome per document is required");
  }
  check_traces_aligned(docs, traces);

  MetricsReport r;
  r.corpus_id = std::move(corpus_id);
  r.n_docs = docs.size();
  r.mean_ssi = aggregate_ssi(outcomes);
  r.wall_time_route_s = wall_time_route_s;

  std::vector<DocEnergy> energies;
  double rho_sum = 0.0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    DocMetrics d;
    d.doc_id = docs[i].doc_id;
    d.tokens = docs[i].token_count();
    d.ssi = outcomes[i].ssi;
    if (traces) {
      d.energy_j = document_energy((*traces)[i]);
      d.rho_j_per_token = energy_density(*d.energy_j, d.tokens);
      energies.push_back({*d.energy_j, d.tokens});
      rho_sum += *d.rho_j_per_token;
    }
    r.per_doc.push_back(std::move(d));
  }
  if (traces) {
    r.eud_j_per_token = corpus_eud(energies);
    r.mean_rho_j_per_token = rho_sum / static_cast<double>(docs.size());
  }
  return r;
}

std::string metrics_report_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["corpus_id"] = r.corpus_id;
  j["n_docs"] = r.n_docs;
  j["mean_ssi"] = r.mean_ssi;
  if (r.eud_j_per_token) j["eud_j_per_token"] = *r.eud_j_per_token;
  if (r.mean_rho_j_per_token) j["mean_rho_j_per_token"] = *r.mean_rho_j_per_token;
  auto docs = nlohmann::ordered_json::array();
  for (const auto& d : r.per_doc) {
    nlohmann::ordered_json e;
    e["doc_id"] = d.doc_id;
    e["T_d"] = d.tokens;
    if (d.energy_j) e["E_d_j"] = *d.energy_j;
    if (d.rho_j_per_token) e["rho_d_j_per_token"] = *d.rho_j_per_token;
    e["ssi"] = d.ssi;
    docs.push_back(std::move(e));
  }
  j["per_doc"] = std::move(docs);
  j["wall_time_route_s"] = std::round(r.wall_time_route_s * 1e6) / 1e6;
  return j.dump(2) + "\n";
}

std::vector<AblationRow> ablation_grid(std::span<const CorpusDocument> corpus,
                                       std::span<const std::size_t> ks, std::span<const double> taus,
                                       std::optional<std::span<const PowerTrace>> traces,
                                       const ExperimentConfig& config) {
  if (ks.empty() || taus.empty()) throw Error(ErrorKind::EmptyInput, "ablation grid needs k and tau values");
  check_traces_aligned(corpus, traces);
  const auto eud = traces_eud(corpus, traces);

  std::vector<AblationRow> rows;
  for (std::size_t k : ks) {
    for (double tau : taus) {
      AblationRow row;
      row.k = k;
      row.tau = tau;
      row.route_threads = config.route_threads;
      try {
        const auto cell = run_cell(corpus, k, tau, config.fit.seed, config);
        row.mean_ssi = cell.mean_ssi;
        row.route_time_s = cell.route_time_s;
        row.eud_j_per_token = eud;
        row.status = "ok";
      } catch (const Error& e) {
        row.status = std::string(error_kind_name(e.kind()));
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "k,tau,eud_j_per_token,mean_ssi,route_time_s,route_threads,status\n";
  for (const auto& r : rows) {
    const bool ok = r.status == "ok";
    out += std::to_string(r.k) + ',' + format("%.9g", r.tau) + ',' +
           (ok && r.eud_j_per_token ? format("%.10g", *r.eud_j_per_token) : std::string()) + ',' +
           (ok ? format("%.10g", r.mean_ssi) : std::string()) + ',' +
           (ok ? format("%.6f", r.route_time_s) : std::string()) + ',' +
           std::to_string(r.route_threads) + ',' + r.status + '\n';
  }
  return out;
}

LogFit fit_log_trend(std::span<const double> ks, std::span<const double> ssi) {
  if (ks.size() != ssi.size()) throw Error(ErrorKind::InvalidArgument, "k and ssi lists differ in length");
  if (ks.size() < 3) throw Error(ErrorKind::TooFewPoints, "log fit needs at least 3 points");
  const double n = static_cast<double>(ks.size());
  std::vector<double> x(ks.size());
  double x_mean = 0.0;
  double y_mean = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (!(ks[i] > 0.0)) throw Error(ErrorKind::InvalidArgument, "k must be positive");
    x[i] = std::log(ks[i]);
    x_mean += x[i];
    y_mean += ssi[i];
  }
  x_mean /= n;
  y_mean /= n;

  double sxx = 0.0;
  double sxy = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - x_mean) * (x[i] - x_mean);
    sxy += (x[i] - x_mean) * (ssi[i] - y_mean);
    ss_tot += (ssi[i] - y_mean) * (ssi[i] - y_mean);
  }

  LogFit fit;
  if (sxx == 0.0) {
    fit.a = y_mean;
    fit.degenerate = true;
    return fit;
  }
  fit.b = sxy / sxx;
  fit.a = y_mean - fit.b * x_mean;
  if (ss_tot == 0.0) {
    fit.degenerate = true;
    return fit;
  }
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = ssi[i] - (fit.a + fit.b * x[i]);
    ss_res += r * r;
  }
  fit.r2 = 1.0 - ss_res / ss_tot;
  return fit;
}

ScalingResult scaling_study(std::span<const CorpusDocument> corpus, std::span<const std::size_t> ks,
                            std::uint64_t seed, std::optional<std::span<const PowerTrace>> traces,
                            const ExperimentConfig& config) {
  if (ks.size() < 3) throw Error(ErrorKind::TooFewPoints, "scaling study needs at least 3 values of k");
  for (std::size_t i = 1; i < ks.size(); ++i) {
    if (ks[i] <= ks[i - 1]) throw Error(ErrorKind::InvalidArgument, "k values must be strictly ascending");
  }
  check_traces_aligned(corpus, traces);
  const auto eud = traces_eud(corpus, traces);

  ScalingResult result;
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t k : ks) {
    const auto cell = run_cell(corpus, k, config.fit.tau, seed, config);
    result.points.push_back({k, cell.mean_ssi, cell.route_time_s, eud});
    xs.push_back(static_cast<double>(k));
    ys.push_back(cell.mean_ssi);
  }
  result.fit = fit_log_trend(xs, ys);
  return result;
}

std::string scaling_csv(const ScalingResult& result) {
  std::string out = "k,ssi,route_time_s,eud_j_per_token\n";
  for (const auto& p : result.points) {
    out += std::to_string(p.k) + ',' + format("%.10g", p.ssi) + ',' + format("%.6f", p.routing_time_s) +
           ',' + (p.eud_j_per_token ? format("%.10g", *p.eud_j_per_token) : std::string()) + '\n';
  }
  out += "# fit a=" + format("%.10g", result.fit.a) + " b=" + format("%.10g", result.fit.b) +
         " r2=" + format("%.10g", result.fit.r2);
  if (result.fit.degenerate) out += " degenerate=1";
  out += '\n';
  return out;
}

}  // namespace sdna
