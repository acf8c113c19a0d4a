#include "sdna/experts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>

#include <json.hpp>

#include "sdna/error.hpp"

namespace sdna {

namespace {

double squared_distance(const double* a, const double* b, std::size_t dim) noexcept {
  double acc = 0.0;
  for (std::size_t t = 0; t < dim; ++t) {
    const double diff = a[t] - b[t];
    acc += diff * diff;
  }
  return acc;
}

double norm(std::span<const double> v) noexcept {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

// Nearest centroid per point, lowest index on ties. Returns the inertia.
double assign(std::span<const double> points, std::size_t dim, std::span<const double> centroids,
              std::size_t k, std::vector<std::size_t>& labels, std::vector<double>& dist) {
  const std::size_t n = points.size() / dim;
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = points.data() + i * dim;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = squared_distance(p, centroids.data() + c * dim, dim);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    labels[i] = best;
    dist[i] = best_d;
    inertia += best_d;
  }
  return inertia;
}

std::vector<double> kmeans_plus_plus(std::span<const double> points, std::size_t dim,
                                     std::size_t k, SplitMix64& rng) {
  const std::size_t n = points.size() / dim;
  std::vector<double> centroids;
  centroids.reserve(k * dim);
  std::vector<bool> taken(n, false);

  auto take = [&](std::size_t i) {
    taken[i] = true;
    centroids.insert(centroids.end(), points.begin() + static_cast<std::ptrdiff_t>(i * dim),
                     points.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
  };

  const std::size_t first = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
  take(first);

  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) {
    d2[i] = squared_distance(points.data() + i * dim, points.data() + first * dim, dim);
  }

  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double v : d2) total += v;

    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double cum = 0.0;
      std::size_t last_positive = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        last_positive = i;
        cum += d2[i];
        if (cum > target) {
          pick = i;
          break;
        }
      }
      if (pick == n) pick = last_positive;
    } else {
      // Fewer distinct points than k: duplicate an unused point.
      rng.next();
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (!taken[i]) pick = i;
      }
    }
    take(pick);
    const double* chosen = points.data() + pick * dim;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.data() + i * dim, chosen, dim));
    }
  }
  return centroids;
}

void check_options(const FitOptions& o) {
  if (o.k == 0) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  if (o.max_iter == 0) throw Error(ErrorKind::InvalidArgument, "max_iter must be >= 1");
  if (!(o.tol >= 0.0)) throw Error(ErrorKind::InvalidArgument, "tol must be >= 0");
  if (!(o.beta >= 0.0) || !std::isfinite(o.beta)) throw Error(ErrorKind::InvalidArgument, "beta must be >= 0");
  if (!(o.gamma >= 0.0) || !std::isfinite(o.gamma)) throw Error(ErrorKind::InvalidArgument, "gamma must be >= 0");
  if (!(o.temperature > 0.0) || !std::isfinite(o.temperature)) {
    throw Error(ErrorKind::InvalidArgument, "temperature must be > 0");
  }
  if (!std::isfinite(o.tau)) throw Error(ErrorKind::InvalidArgument, "tau must be finite");
  if (!o.cost_table.empty() && o.cost_table.size() != o.k) {
    throw Error(ErrorKind::InvalidArgument, "cost_table needs exactly k entries");
  }
}

}  // namespace

FitPoints parse_fit_points(std::string_view name) {
  if (name == "codons") return FitPoints::Codons;
  if (name == "documents") return FitPoints::Documents;
  throw Error(ErrorKind::InvalidArgument, "fit points must be 'codons' or 'documents'");
}

DocEmbedding parse_doc_embedding(std::string_view name) {
  if (name == "codon-mean") return DocEmbedding::CodonMean;
  if (name == "token-mean") return DocEmbedding::TokenMean;
  throw Error(ErrorKind::InvalidArgument, "document embedding must be 'codon-mean' or 'token-mean'");
}

void ExpertModel::validate() const {
  if (k == 0 || dim == 0) throw Error(ErrorKind::InvalidArgument, "model needs k >= 1 and dim >= 1");
  if (centroids.size() != k * dim) throw Error(ErrorKind::InvalidArgument, "centroids must be k x dim");
  for (std::size_t c = 0; c < k; ++c) {
    const auto row = centroid(c);
    if (!std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); })) {
      throw Error(ErrorKind::InvalidArgument, "centroid " + std::to_string(c) + " is not finite");
    }
    if (!(norm(row) > 0.0)) throw Error(ErrorKind::InvalidArgument, "centroid " + std::to_string(c) + " has zero norm");
  }
  if (cost_table.size() != k) throw Error(ErrorKind::InvalidArgument, "cost_table length must equal k");
  for (double v : cost_table) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "cost_table entries must be >= 0");
  }
  if (!(beta >= 0.0) || !(gamma >= 0.0)) throw Error(ErrorKind::InvalidArgument, "beta and gamma must be >= 0");
  if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidArgument, "temperature must be > 0");
}

double round_significant(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return std::strtod(buf, nullptr);
}

KMeansResult kmeans(std::span<const double> points, std::size_t dim, std::size_t k,
                    std::uint64_t seed, std::size_t max_iter, double tol) {
  if (dim == 0 || points.size() % dim != 0) throw Error(ErrorKind::DimMismatch, "points are not n x dim");
  if (k == 0) throw Error(ErrorKind::InvalidArgument, "k must be >= 1");
  const std::size_t n = points.size() / dim;
  if (n < k) {
    throw Error(ErrorKind::TooFewPoints, std::to_string(n) + " fit points for k=" + std::to_string(k));
  }
  if (k > 1) {
    bool identical = true;
    for (std::size_t i = 1; i < n && identical; ++i) {
      identical = std::equal(points.begin(), points.begin() + static_cast<std::ptrdiff_t>(dim),
                             points.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    if (identical) throw Error(ErrorKind::DegenerateInput, "all fit points are identical and k > 1");
  }

  SplitMix64 rng(seed);
  KMeansResult result;
  result.centroids = kmeans_plus_plus(points, dim, k, rng);
  result.labels.assign(n, 0);
  std::vector<double> dist(n);
  std::vector<double> sums(k * dim);
  std::vector<std::size_t> counts(k);

  for (std::size_t iter = 1; iter <= max_iter; ++iter) {
    result.stats.inertia_history.push_back(assign(points, dim, result.centroids, k, result.labels, dist));

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = result.labels[i];
      ++counts[c];
      for (std::size_t t = 0; t < dim; ++t) sums[c * dim + t] += points[i * dim + t];
    }

    std::vector<bool> reseeded(n, false);
    double max_shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> next(dim);
      if (counts[c] > 0) {
        for (std::size_t t = 0; t < dim; ++t) next[t] = sums[c * dim + t] / static_cast<double>(counts[c]);
      } else {
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (!reseeded[i] && dist[i] > far_d) {
            far_d = dist[i];
            far = i;
          }
        }
        reseeded[far] = true;
        std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(far * dim), dim, next.begin());
      }
      double* cur = result.centroids.data() + c * dim;
      max_shift = std::max(max_shift, std::sqrt(squared_distance(cur, next.data(), dim)));
      std::copy(next.begin(), next.end(), cur);
    }
    result.stats.iterations = iter;
    if (max_shift < tol) break;
  }

  for (double& v : result.centroids) v = round_significant(v, 9);
  result.stats.inertia = assign(points, dim, result.centroids, k, result.labels, dist);
  return result;
}

std::vector<double> document_embedding(const EmbeddingMatrix& m, const Segmentation& seg,
                                       DocEmbedding mode) {
  std::vector<double> out(m.dim(), 0.0);
  if (mode == DocEmbedding::CodonMean) {
    for (const auto& c : seg.codons) {
      for (std::size_t t = 0; t < m.dim(); ++t) out[t] += c.embedding[t];
    }
    for (double& v : out) v /= static_cast<double>(seg.codons.size());
  } else {
    for (std::size_t i = 0; i < m.n_tokens(); ++i) {
      for (std::size_t t = 0; t < m.dim(); ++t) out[t] += m.row(i)[t];
    }
    for (double& v : out) v /= static_cast<double>(m.n_tokens());
  }
  return out;
}

std::vector<double> collect_fit_points(std::span<const CorpusDocument> corpus, double tau,
                                       FitPoints points, DocEmbedding doc_embedding,
                                       BindingNormalization binding) {
  std::vector<double> out;
  if (corpus.empty()) return out;
  const std::size_t dim = corpus.front().embeddings.dim();
  for (const auto& doc : corpus) {
    if (doc.embeddings.dim() != dim) {
      throw Error(ErrorKind::DimMismatch, "doc=" + doc.doc_id + " has dim " +
                                              std::to_string(doc.embeddings.dim()) + ", expected " +
                                              std::to_string(dim));
    }
    const Segmentation seg = assemble_codons(doc.embeddings, tau, binding);
    if (points == FitPoints::Codons) {
      for (const auto& c : seg.codons) out.insert(out.end(), c.embedding.begin(), c.embedding.end());
    } else {
      const auto e = document_embedding(doc.embeddings, seg, doc_embedding);
      out.insert(out.end(), e.begin(), e.end());
    }
  }
  return out;
}

ExpertModel fit_experts(std::span<const CorpusDocument> corpus, const FitOptions& options) {
  check_options(options);
  if (corpus.empty()) throw Error(ErrorKind::TooFewPoints, "empty corpus");
  const std::size_t dim = corpus.front().embeddings.dim();
  const auto points =
      collect_fit_points(corpus, options.tau, options.points, options.doc_embedding, options.binding);

  KMeansResult km = kmeans(points, dim, options.k, options.seed, options.max_iter, options.tol);

  ExpertModel model;
  model.k = options.k;
  model.dim = dim;
  model.centroids = std::move(km.centroids);
  model.tau = options.tau;
  model.beta = options.beta;
  model.gamma = options.gamma;
  model.cost_table = options.cost_table.empty() ? std::vector<double>(options.k, 0.0) : options.cost_table;
  model.temperature = options.temperature;
  model.seed = options.seed;
  model.fit_stats = std::move(km.stats);
  for (std::size_t c = 0; c < model.k; ++c) {
    if (!(norm(model.centroid(c)) > 0.0)) {
      throw Error(ErrorKind::DegenerateInput, "centroid " + std::to_string(c) + " collapsed to the origin");
    }
  }
  return model;
}

std::vector<double> expert_affinity(std::span<const double> x, const ExpertModel& model) {
  if (x.size() != model.dim) {
    throw Error(ErrorKind::DimMismatch, "input dim " + std::to_string(x.size()) + ", model dim " +
                                            std::to_string(model.dim));
  }
  const double xn = norm(x);
  if (!(xn > 0.0)) throw Error(ErrorKind::ZeroNormInput, "input vector has zero norm");
  std::vector<double> out(model.k);
  for (std::size_t c = 0; c < model.k; ++c) {
    const auto row = model.centroid(c);
    double dot = 0.0;
    for (std::size_t t = 0; t < model.dim; ++t) dot += x[t] * row[t];
    out[c] = std::clamp(dot / (xn * norm(row)), -1.0, 1.0);
  }
  return out;
}

std::vector<double> activation_distribution(std::span<const double> affinities, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidArgument, "temperature must be > 0");
  if (affinities.empty()) throw Error(ErrorKind::EmptyInput, "no affinities");
  const double peak = *std::max_element(affinities.begin(), affinities.end());
  std::vector<double> p(affinities.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp((affinities[i] - peak) / temperature);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::string model_to_json(const ExpertModel& model) {
  nlohmann::ordered_json j;
  j["k"] = model.k;
  j["dim"] = model.dim;
  j["tau"] = model.tau;
  j["beta"] = model.beta;
  j["gamma"] = model.gamma;
  j["temperature"] = model.temperature;
  j["seed"] = model.seed;
  j["cost_table"] = model.cost_table;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < model.k; ++c) {
    auto row = nlohmann::ordered_json::array();
    for (double v : model.centroid(c)) row.push_back(round_significant(v, 9));
    rows.push_back(std::move(row));
  }
  j["centroids"] = std::move(rows);
  j["fit_stats"] = {{"iterations", model.fit_stats.iterations}, {"inertia", model.fit_stats.inertia}};
  return j.dump(2) + "\n";
}

ExpertModel model_from_json(std::string_view text) {
  ExpertModel m;
  try {
    const auto j = nlohmann::json::parse(text);
    m.k = j.at("k").get<std::size_t>();
    m.dim = j.at("dim").get<std::size_t>();
    m.tau = j.at("tau").get<double>();
    m.beta = j.at("beta").get<double>();
    m.gamma = j.at("gamma").get<double>();
    m.temperature = j.at("temperature").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.cost_table = j.at("cost_table").get<std::vector<double>>();
    const auto rows = j.at("centroids").get<std::vector<std::vector<double>>>();
    if (rows.size() != m.k) throw Error(ErrorKind::DimensionMismatch, "centroid count != k");
    for (const auto& row : rows) {
      if (row.size() != m.dim) throw Error(ErrorKind::DimensionMismatch, "centroid length != dim");
      m.centroids.insert(m.centroids.end(), row.begin(), row.end());
    }
    if (j.contains("fit_stats")) {
      m.fit_stats.iterations = j["fit_stats"].value("iterations", std::size_t{0});
      m.fit_stats.inertia = j["fit_stats"].value("inertia", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedFile, std::string("model file: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace sdna
