#include "sdna/codon.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "sdna/error.hpp"

namespace sdna {

namespace {

void check_codon_range(const SimilarityMatrix& s, const Codon& c) {
  if (c.start > c.end || c.end >= s.size()) {
    throw Error(ErrorKind::IndexOutOfRange,
                "codon [" + std::to_string(c.start) + ", " + std::to_string(c.end) +
                    "] outside " + std::to_string(s.size()) + " tokens");
  }
}

Codon make_codon(const EmbeddingMatrix& m, const SimilarityMatrix& s, std::size_t start,
                 std::size_t end, BindingNormalization mode) {
  Codon c;
  c.start = start;
  c.end = end;
  c.embedding.assign(m.dim(), 0.0);
  for (std::size_t i = start; i <= end; ++i) {
    const auto row = m.row(i);
    for (std::size_t j = 0; j < m.dim(); ++j) c.embedding[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(c.size());
  for (double& v : c.embedding) v *= inv;
  c.binding_force = binding_force(s, c, mode);
  return c;
}

}  // namespace

BindingNormalization parse_binding_normalization(std::string_view name) {
  if (name == "pair-mean" || name == "mean") return BindingNormalization::PairMean;
  if (name == "literal") return BindingNormalization::Literal;
  throw Error(ErrorKind::InvalidArgument,
              "binding normalization must be 'pair-mean' or 'literal', got '" + std::string(name) + "'");
}

std::string_view binding_normalization_name(BindingNormalization mode) noexcept {
  return mode == BindingNormalization::Literal ? "literal" : "pair-mean";
}

SimilarityMatrix similarity_matrix(const EmbeddingMatrix& m) {
  const std::size_t n = m.n_tokens();
  const std::size_t d = m.dim();
  std::vector<double> unit(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const double norm = m.row_norm(i);
    if (!(norm > 0.0)) throw Error(ErrorKind::ZeroNormRow, "row=" + std::to_string(i));
    for (std::size_t j = 0; j < d; ++j) unit[i * d + j] = m.row(i)[j] / norm;
  }

  SimilarityMatrix s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = unit.data() + i * d;
    for (std::size_t j = i; j < n; ++j) {
      const double* b = unit.data() + j * d;
      double dot = 0.0;
      for (std::size_t t = 0; t < d; ++t) dot += a[t] * b[t];
      dot = std::clamp(dot, -1.0, 1.0);
      s(i, j) = dot;
      s(j, i) = dot;
    }
  }
  return s;
}

SquareMatrix semantic_energy(const SimilarityMatrix& s) {
  SquareMatrix e(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) e(i, j) = 1.0 - s(i, j);
  }
  return e;
}

Segmentation assemble_codons(const EmbeddingMatrix& m, double tau, BindingNormalization mode) {
  return assemble_codons(m, tau, similarity_matrix(m), mode);
}

Segmentation assemble_codons(const EmbeddingMatrix& m, double tau, const SimilarityMatrix& s,
                             BindingNormalization mode) {
  if (s.size() != m.n_tokens()) {
    throw Error(ErrorKind::DimMismatch, "similarity matrix does not match the embedding matrix");
  }
  Segmentation seg;
  seg.n_tokens = m.n_tokens();
  std::size_t start = 0;
  for (std::size_t i = 0; i + 1 < m.n_tokens(); ++i) {
    if (!(s(i, i + 1) >= tau)) {
      seg.codons.push_back(make_codon(m, s, start, i, mode));
      start = i + 1;
    }
  }
  seg.codons.push_back(make_codon(m, s, start, m.n_tokens() - 1, mode));
  return seg;
}

double binding_force(const SimilarityMatrix& s, const Codon& c, BindingNormalization mode) {
  check_codon_range(s, c);
  const std::size_t size = c.size();
  if (size == 1) return 1.0;
  double sum = 0.0;
  for (std::size_t i = c.start; i <= c.end; ++i) {
    for (std::size_t j = i + 1; j <= c.end; ++j) sum += s(i, j);
  }
  const double pairs = static_cast<double>(size) * static_cast<double>(size - 1) / 2.0;
  const double denom = mode == BindingNormalization::Literal ? static_cast<double>(size - 1) : pairs;
  return sum / denom;
}

double non_binding_force(const SimilarityMatrix& s, const Codon& a, const Codon& b) {
  check_codon_range(s, a);
  check_codon_range(s, b);
  if (a.start <= b.end && b.start <= a.end) {
    throw Error(ErrorKind::OverlappingCodons,
                "[" + std::to_string(a.start) + ", " + std::to_string(a.end) + "] and [" +
                    std::to_string(b.start) + ", " + std::to_string(b.end) + "]");
  }
  double sum = 0.0;
  for (std::size_t i = a.start; i <= a.end; ++i) {
    for (std::size_t j = b.start; j <= b.end; ++j) sum += s(i, j);
  }
  return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
}

std::string segmentation_json(std::string_view doc_id, double tau, const Segmentation& seg) {
  nlohmann::ordered_json obj;
  obj["doc_id"] = doc_id;
  obj["tau"] = tau;
  auto codons = nlohmann::ordered_json::array();
  for (const auto& c : seg.codons) {
    nlohmann::ordered_json entry;
    entry["start"] = c.start;
    entry["end"] = c.end;
    entry["binding_force"] = c.binding_force;
    codons.push_back(std::move(entry));
  }
  obj["codons"] = std::move(codons);
  return obj.dump();
}

std::string energy_heatmap_csv(const SquareMatrix& energy) {
  std::ostringstream out;
  out.precision(9);
  for (std::size_t i = 0; i < energy.size(); ++i) {
    for (std::size_t j = 0; j < energy.size(); ++j) {
      if (j != 0) out << ',';
      out << energy(i, j);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace sdna
