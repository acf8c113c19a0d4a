#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sdna/codon.hpp"
#include "sdna/embedding_io.hpp"
#include "sdna/energy.hpp"
#include "sdna/experts.hpp"

namespace sdna {

// Every knob of the command line. Values come from defaults, then an optional
// JSON config file (keys are the flag names without dashes), then flags.
struct RunConfig {
  std::string corpus_path;
  CorpusFormat format = CorpusFormat::Binary;
  std::string model_path;
  std::string output_path;
  std::string traces_path;
  std::string metrics_path;
  std::string heatmap_dir;
  std::size_t k = 50;
  double tau = 0.75;
  double beta = 0.1;
  double gamma = 0.01;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_iter = 100;
  double tol = 1e-6;
  CohesionMode cohesion = CohesionMode::Sum;
  BindingNormalization binding = BindingNormalization::PairMean;
  FitPoints fit_points = FitPoints::Codons;
  DocEmbedding doc_embedding = DocEmbedding::CodonMean;
  std::vector<double> cost_table;
  std::size_t route_threads = 1;
  std::vector<std::size_t> ks;
  std::vector<double> taus;
  bool verbose = false;
};

// Exit codes: 0 success, 1 input/validation error, 2 internal error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sdna
