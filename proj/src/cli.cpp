#include "sdna/cli.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "sdna/error.hpp"
#include "sdna/metrics.hpp"

namespace sdna {

namespace {

namespace fs = std::filesystem;

using Override = std::function<void(RunConfig&)>;

struct Usage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T, typename Setter>
void add_flag_option(CLI::App& app, std::vector<Override>& overrides, const std::string& name,
                     const std::string& help, Setter setter) {
  app.add_option_function<T>(
      name, [&overrides, setter](const T& v) { overrides.push_back([setter, v](RunConfig& c) { setter(c, v); }); },
      help);
}

// Applies one config-file key onto the config; keys mirror flag names.
void apply_config_json(const nlohmann::json& j, RunConfig& c) {
  auto str = [&](const char* key, auto&& fn) {
    if (j.contains(key)) fn(j.at(key).get<std::string>());
  };
  auto num = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  str("corpus", [&](const std::string& v) { c.corpus_path = v; });
  str("format", [&](const std::string& v) { c.format = parse_corpus_format(v); });
  str("model", [&](const std::string& v) { c.model_path = v; });
  str("out", [&](const std::string& v) { c.output_path = v; });
  str("traces", [&](const std::string& v) { c.traces_path = v; });
  str("metrics-out", [&](const std::string& v) { c.metrics_path = v; });
  str("heatmap-dir", [&](const std::string& v) { c.heatmap_dir = v; });
  str("cohesion", [&](const std::string& v) { c.cohesion = parse_cohesion_mode(v); });
  str("binding-normalization", [&](const std::string& v) { c.binding = parse_binding_normalization(v); });
  str("fit-points", [&](const std::string& v) { c.fit_points = parse_fit_points(v); });
  str("doc-embedding", [&](const std::string& v) { c.doc_embedding = parse_doc_embedding(v); });
  num("k", c.k);
  num("tau", c.tau);
  num("beta", c.beta);
  num("gamma", c.gamma);
  num("temperature", c.temperature);
  num("seed", c.seed);
  num("max-iter", c.max_iter);
  num("tol", c.tol);
  num("route-threads", c.route_threads);
  num("cost-table", c.cost_table);
  num("ks", c.ks);
  num("taus", c.taus);
  num("verbose", c.verbose);
}

bool has_json_extension(const std::string& path) {
  return fs::path(path).extension() == ".json";
}

void require(const std::string& value, const char* flag, const char* command) {
  if (value.empty()) throw Usage(std::string(command) + " requires " + flag);
}

FitOptions fit_options(const RunConfig& c) {
  FitOptions o;
  o.k = c.k;
  o.tau = c.tau;
  o.seed = c.seed;
  o.max_iter = c.max_iter;
  o.tol = c.tol;
  o.beta = c.beta;
  o.gamma = c.gamma;
  o.temperature = c.temperature;
  o.cost_table = c.cost_table;
  o.points = c.fit_points;
  o.doc_embedding = c.doc_embedding;
  o.binding = c.binding;
  return o;
}

RouteOptions route_options(const RunConfig& c) {
  return {c.cohesion, c.binding, c.doc_embedding};
}

ExperimentConfig experiment_config(const RunConfig& c) {
  return {fit_options(c), route_options(c), c.route_threads};
}

std::vector<CorpusDocument> load(const RunConfig& c, const char* command) {
  require(c.corpus_path, "--corpus", command);
  return load_corpus(c.corpus_path, c.format);
}

std::optional<std::vector<PowerTrace>> load_aligned_traces(const RunConfig& c,
                                                           std::span<const CorpusDocument> docs) {
  if (c.traces_path.empty()) return std::nullopt;
  return align_traces(load_power_traces(c.traces_path), docs);
}

std::optional<std::span<const PowerTrace>> as_span(const std::optional<std::vector<PowerTrace>>& t) {
  if (!t) return std::nullopt;
  return std::span<const PowerTrace>(*t);
}

int cmd_validate(const RunConfig& c, std::ostream& out) {
  const auto docs = load(c, "validate");
  std::size_t tokens = 0;
  for (const auto& d : docs) tokens += d.token_count();
  if (!c.traces_path.empty()) check_traces_against_corpus(load_power_traces(c.traces_path), docs);
  out << "ok: " << docs.size() << " documents, " << tokens << " tokens\n";
  return 0;
}

int cmd_fit(const RunConfig& c, std::ostream& out) {
  require(c.output_path, "--out", "fit");
  const auto docs = load(c, "fit");
  const ExpertModel model = fit_experts(docs, fit_options(c));
  write_file_atomic(c.output_path, model_to_json(model));
  out << "fit: k=" << model.k << " dim=" << model.dim << " iterations=" << model.fit_stats.iterations
      << " inertia=" << model.fit_stats.inertia << '\n';
  if (c.verbose) {
    for (std::size_t i = 0; i < model.fit_stats.inertia_history.size(); ++i) {
      out << "  iteration " << i + 1 << " inertia=" << model.fit_stats.inertia_history[i] << '\n';
    }
  }
  return 0;
}

int cmd_segment(const RunConfig& c, std::ostream& out) {
  const auto docs = load(c, "segment");
  std::string body = "[\n";
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& m = docs[i].embeddings;
    const SimilarityMatrix s = similarity_matrix(m);
    const Segmentation seg = assemble_codons(m, c.tau, s, c.binding);
    body += segmentation_json(docs[i].doc_id, c.tau, seg);
    body += i + 1 < docs.size() ? ",\n" : "\n";
    if (!c.heatmap_dir.empty()) {
      std::string name = docs[i].doc_id;
      for (char& ch : name) {
        if (ch == '/' || ch == '\\') ch = '_';
      }
      fs::create_directories(c.heatmap_dir);
      write_file_atomic(fs::path(c.heatmap_dir) / (name + ".energy.csv"), energy_heatmap_csv(semantic_energy(s)));
    }
  }
  body += "]\n";
  if (c.output_path.empty()) {
    out << body;
  } else {
    write_file_atomic(c.output_path, body);
    out << "segment: " << docs.size() << " documents written to " << c.output_path << '\n';
  }
  return 0;
}

int cmd_route(const RunConfig& c, std::ostream& out) {
  require(c.model_path, "--model", "route");
  require(c.output_path, "--out", "route");
  const ExpertModel model = model_from_json(read_file(c.model_path));
  const auto docs = load(c, "route");
  const auto traces = load_aligned_traces(c, docs);

  const auto start = std::chrono::steady_clock::now();
  const auto outcomes = route_corpus(docs, model, route_options(c), c.route_threads);
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::string report;
  for (const auto& o : outcomes) report += routing_report_line(o, c.verbose) + '\n';
  write_file_atomic(c.output_path, report);

  const auto metrics = build_metrics_report(fs::path(c.corpus_path).stem().string(), docs, outcomes,
                                            as_span(traces), elapsed);
  const std::string metrics_path = c.metrics_path.empty() ? c.output_path + ".metrics.json" : c.metrics_path;
  write_file_atomic(metrics_path, metrics_report_json(metrics));

  out << "route: " << docs.size() << " documents, mean_ssi=" << metrics.mean_ssi;
  if (metrics.eud_j_per_token) out << " eud_j_per_token=" << *metrics.eud_j_per_token;
  out << " route_time_s=" << elapsed << '\n';
  return 0;
}

int cmd_ablate(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (c.ks.empty()) throw Usage("ablate requires a non-empty --ks list");
  if (c.taus.empty()) throw Usage("ablate requires a non-empty --taus list");
  require(c.output_path, "--out", "ablate");
  const auto docs = load(c, "ablate");
  const auto traces = load_aligned_traces(c, docs);
  const auto rows = ablation_grid(docs, c.ks, c.taus, as_span(traces), experiment_config(c));
  write_file_atomic(c.output_path, ablation_csv(rows));

  std::size_t ok = 0;
  for (const auto& r : rows) {
    if (r.status == "ok") {
      ++ok;
    } else {
      err << "cell k=" << r.k << " tau=" << r.tau << " failed: " << r.status << '\n';
    }
  }
  out << "ablate: " << ok << "/" << rows.size() << " cells succeeded\n";
  return ok > 0 ? 0 : 1;
}

int cmd_scaling(const RunConfig& c, std::ostream& out) {
  if (c.ks.empty()) throw Usage("scaling requires a non-empty --ks list");
  require(c.output_path, "--out", "scaling");
  const auto docs = load(c, "scaling");
  const auto traces = load_aligned_traces(c, docs);
  const auto result = scaling_study(docs, c.ks, c.seed, as_span(traces), experiment_config(c));
  write_file_atomic(c.output_path, scaling_csv(result));
  out << "scaling: " << result.points.size() << " points, a=" << result.fit.a << " b=" << result.fit.b
      << " r2=" << result.fit.r2 << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Energy-guided codon routing: segmentation, expert fitting, routing and metrics", "sdna"};
  app.require_subcommand(1, 1);

  RunConfig flags;
  std::vector<Override> overrides;
  std::string config_path;
  bool format_given = false;

  app.add_option("--config", config_path, "JSON config file; flags override its values");
  add_flag_option<std::string>(app, overrides, "--corpus", "Corpus file",
                               [](RunConfig& c, const std::string& v) { c.corpus_path = v; });
  app.add_option_function<std::string>(
      "--format",
      [&](const std::string& v) {
        format_given = true;
        overrides.push_back([v](RunConfig& c) { c.format = parse_corpus_format(v); });
      },
      "Corpus format: binary or json (default: by extension, else binary)");
  add_flag_option<std::string>(app, overrides, "--model", "Model JSON file",
                               [](RunConfig& c, const std::string& v) { c.model_path = v; });
  add_flag_option<std::string>(app, overrides, "--out", "Output file",
                               [](RunConfig& c, const std::string& v) { c.output_path = v; });
  add_flag_option<std::string>(app, overrides, "--traces", "Power trace CSV",
                               [](RunConfig& c, const std::string& v) { c.traces_path = v; });
  add_flag_option<std::string>(app, overrides, "--metrics-out", "Metrics JSON (route; default <out>.metrics.json)",
                               [](RunConfig& c, const std::string& v) { c.metrics_path = v; });
  add_flag_option<std::string>(app, overrides, "--heatmap-dir", "Write per-document semantic-energy CSVs here",
                               [](RunConfig& c, const std::string& v) { c.heatmap_dir = v; });
  add_flag_option<std::size_t>(app, overrides, "--k", "Number of experts",
                               [](RunConfig& c, std::size_t v) { c.k = v; });
  add_flag_option<double>(app, overrides, "--tau", "Codon merge threshold",
                          [](RunConfig& c, double v) { c.tau = v; });
  add_flag_option<double>(app, overrides, "--beta", "Entropy weight",
                          [](RunConfig& c, double v) { c.beta = v; });
  add_flag_option<double>(app, overrides, "--gamma", "Cost weight",
                          [](RunConfig& c, double v) { c.gamma = v; });
  add_flag_option<double>(app, overrides, "--temperature", "Activation softmax temperature",
                          [](RunConfig& c, double v) { c.temperature = v; });
  add_flag_option<std::uint64_t>(app, overrides, "--seed", "k-means++ seed",
                                 [](RunConfig& c, std::uint64_t v) { c.seed = v; });
  add_flag_option<std::size_t>(app, overrides, "--max-iter", "Lloyd iteration cap",
                               [](RunConfig& c, std::size_t v) { c.max_iter = v; });
  add_flag_option<double>(app, overrides, "--tol", "Centroid shift tolerance",
                          [](RunConfig& c, double v) { c.tol = v; });
  add_flag_option<std::string>(app, overrides, "--cohesion", "sum, mean or none",
                               [](RunConfig& c, const std::string& v) { c.cohesion = parse_cohesion_mode(v); });
  add_flag_option<std::string>(app, overrides, "--binding-normalization", "pair-mean or literal",
                               [](RunConfig& c, const std::string& v) { c.binding = parse_binding_normalization(v); });
  add_flag_option<std::string>(app, overrides, "--fit-points", "codons or documents",
                               [](RunConfig& c, const std::string& v) { c.fit_points = parse_fit_points(v); });
  add_flag_option<std::string>(app, overrides, "--doc-embedding", "codon-mean or token-mean",
                               [](RunConfig& c, const std::string& v) { c.doc_embedding = parse_doc_embedding(v); });
  add_flag_option<std::size_t>(app, overrides, "--route-threads", "Routing worker threads",
                               [](RunConfig& c, std::size_t v) { c.route_threads = v; });
  add_flag_option<std::vector<double>>(app, overrides, "--cost-table", "Per-expert cost in J/token (comma list)",
                                       [](RunConfig& c, const std::vector<double>& v) { c.cost_table = v; });
  add_flag_option<std::vector<std::size_t>>(app, overrides, "--ks", "List of k values (comma list)",
                                            [](RunConfig& c, const std::vector<std::size_t>& v) { c.ks = v; });
  add_flag_option<std::vector<double>>(app, overrides, "--taus", "List of tau values (comma list)",
                                       [](RunConfig& c, const std::vector<double>& v) { c.taus = v; });
  app.add_flag_function(
      "--verbose", [&](std::int64_t) { overrides.push_back([](RunConfig& c) { c.verbose = true; }); },
      "Verbose output");
  for (const char* name : {"--cost-table", "--ks", "--taus"}) app.get_option(name)->delimiter(',');

  app.fallthrough();
  auto* validate = app.add_subcommand("validate", "Check a corpus (and optional traces) against all invariants");
  auto* fit = app.add_subcommand("fit", "Fit expert centroids and write a model file");
  auto* segment = app.add_subcommand("segment", "Write codon segmentations as JSON");
  auto* route = app.add_subcommand("route", "Route a corpus and write the report and metrics");
  auto* ablate = app.add_subcommand("ablate", "Run the (k, tau) ablation grid");
  auto* scaling = app.add_subcommand("scaling", "Run the SSI-vs-k scaling study");

  std::vector<std::string> argv_store;
  argv_store.reserve(args.size() + 1);
  argv_store.emplace_back("sdna");
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) {
      try {
        const auto j = nlohmann::json::parse(read_file(config_path));
        apply_config_json(j, config);
        format_given = format_given || j.contains("format");
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedFile, "config " + config_path + ": " + e.what());
      }
    }
    for (const auto& apply : overrides) apply(config);
    if (!format_given && has_json_extension(config.corpus_path)) config.format = CorpusFormat::Json;

    if (validate->parsed()) return cmd_validate(config, out);
    if (fit->parsed()) return cmd_fit(config, out);
    if (segment->parsed()) return cmd_segment(config, out);
    if (route->parsed()) return cmd_route(config, out);
    if (ablate->parsed()) return cmd_ablate(config, out, err);
    if (scaling->parsed()) return cmd_scaling(config, out);
    return 1;
  } catch (const Usage& e) {
    err << "usage error: " << e.what() << '\n' << app.help();
    return 1;
  } catch (const Error& e) {
    err << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace sdna
