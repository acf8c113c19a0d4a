#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include <json.hpp>

#include "sdna/cli.hpp"
#include "sdna/embedding_io.hpp"
#include "synthetic.hpp"

using namespace sdna;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
  const fs::path dir = fs::path(SDNA_TEST_TMP) / "cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

testing::PlantedCorpus planted(std::uint64_t seed, std::size_t n_docs, std::size_t n_dirs = 4) {
  std::mt19937_64 rng(seed);
  testing::Rows dirs;
  for (std::size_t i = 0; i < n_dirs; ++i) dirs.push_back(testing::basis(std::max<std::size_t>(8, n_dirs), i));
  return testing::planted_corpus(rng, dirs, n_docs, 2, 6, 0.05);
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("validate") {
  const auto dir = tmp_dir("validate");
  const auto corpus = planted(1, 6);
  const auto path = dir / "c.sdna";
  write_corpus(path, corpus.docs, CorpusFormat::Binary);

  const auto ok = run({"validate", "--corpus", path.string()});
  CHECK(ok.code == 0);
  CHECK(ok.out.rfind("ok: 6 documents", 0) == 0);

  auto bytes = read_file(path);
  bytes[0] = 'Z';
  write_file_atomic(dir / "bad.sdna", bytes);
  const auto bad = run({"validate", "--corpus", (dir / "bad.sdna").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("MalformedHeader") != std::string::npos);

  const std::vector<CorpusDocument> five{testing::make_doc("n1", {{1, 0}, {0, 1}, {1, 1}, {2, 1}, {1, 3}})};
  auto nan_bytes = encode_corpus_binary(five);
  const std::uint32_t nan_bits = 0x7FC00000u;
  std::memcpy(nan_bytes.data() + 26 + 3 * 2 * 4, &nan_bits, 4);
  write_file_atomic(dir / "nan.sdna", nan_bytes);
  const auto nan = run({"validate", "--corpus", (dir / "nan.sdna").string()});
  CHECK(nan.code == 1);
  CHECK(nan.err.find("NonFiniteValue doc=n1 row=3") != std::string::npos);

  write_corpus(dir / "c.json", corpus.docs, CorpusFormat::Json);
  CHECK(run({"validate", "--corpus", (dir / "c.json").string()}).code == 0);

  CHECK(run({"validate"}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({"validate", "--corpus", (dir / "missing.sdna").string()}).code == 1);
}

TEST_CASE("fit writes a deterministic model") {
  const auto dir = tmp_dir("fit");
  const auto corpus = planted(2, 16);
  const auto path = (dir / "c.sdna").string();
  write_corpus(path, corpus.docs, CorpusFormat::Binary);

  const auto a = run({"fit", "--corpus", path, "--k", "4", "--seed", "3", "--out", (dir / "a.json").string()});
  REQUIRE(a.code == 0);
  CHECK(run({"fit", "--corpus", path, "--k", "4", "--seed", "3", "--out", (dir / "b.json").string()}).code == 0);
  CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
  const auto model = nlohmann::json::parse(read_file(dir / "a.json"));
  CHECK(model["k"] == 4);
  CHECK(model["dim"] == 8);
  CHECK(model["centroids"].size() == 4);

  const auto too_many = run({"fit", "--corpus", path, "--k", "10000", "--out", (dir / "c.json").string()});
  CHECK(too_many.code == 1);
  CHECK(too_many.err.find("TooFewPoints") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "c.json"));
}

TEST_CASE("route writes a report and metrics") {
  const auto dir = tmp_dir("route");
  const auto corpus = planted(3, 24);
  const auto path = (dir / "c.sdna").string();
  write_corpus(path, corpus.docs, CorpusFormat::Binary);
  const auto model = (dir / "m.json").string();
  REQUIRE(run({"fit", "--corpus", path, "--k", "4", "--seed", "1", "--out", model}).code == 0);

  SUBCASE("without traces") {
    const auto r = run({"route", "--corpus", path, "--model", model, "--out", (dir / "r.jsonl").string()});
    REQUIRE(r.code == 0);
    const auto lines = lines_of(read_file(dir / "r.jsonl"));
    REQUIRE(lines.size() == 24);
    // one chosen expert per planted direction
    std::vector<int> expert_of_label(4, -1);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto j = nlohmann::json::parse(lines[i]);
      CHECK(j["doc_id"] == corpus.docs[i].doc_id);
      const int chosen = j["chosen_expert"];
      int& slot = expert_of_label[corpus.labels[i]];
      if (slot < 0) slot = chosen;
      CHECK(slot == chosen);
    }
    const auto metrics = nlohmann::json::parse(read_file(dir / "r.jsonl.metrics.json"));
    CHECK(metrics["n_docs"] == 24);
    CHECK_FALSE(metrics.contains("eud_j_per_token"));
  }
  SUBCASE("with traces") {
    std::vector<PowerTrace> traces;
    for (const auto& d : corpus.docs) traces.push_back({d.doc_id, 0.01, std::vector<double>(7, 42.95)});
    write_power_traces(dir / "t.csv", traces);
    const auto r = run({"route", "--corpus", path, "--model", model, "--traces", (dir / "t.csv").string(), "--out",
                        (dir / "r.jsonl").string(), "--metrics-out", (dir / "m.out.json").string()});
    REQUIRE(r.code == 0);
    const auto metrics = nlohmann::json::parse(read_file(dir / "m.out.json"));
    std::size_t tokens = 0;
    for (const auto& d : corpus.docs) tokens += d.token_count();
    CHECK(metrics["eud_j_per_token"].get<double>() == doctest::Approx(3.0065 * 24 / tokens).epsilon(1e-9));
    CHECK(metrics["per_doc"][0]["E_d_j"].get<double>() == doctest::Approx(3.0065).epsilon(1e-9));
  }
  SUBCASE("missing trace") {
    std::vector<PowerTrace> traces;
    for (std::size_t i = 1; i < corpus.docs.size(); ++i) traces.push_back({corpus.docs[i].doc_id, 0.01, {1.0}});
    write_power_traces(dir / "t.csv", traces);
    const auto r = run({"route", "--corpus", path, "--model", model, "--traces", (dir / "t.csv").string(), "--out",
                        (dir / "r.jsonl").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("MissingTrace") != std::string::npos);
  }
  SUBCASE("single document, single expert") {
    write_corpus(dir / "one.sdna", std::vector<CorpusDocument>{corpus.docs[0]}, CorpusFormat::Binary);
    const auto one = (dir / "one.sdna").string();
    REQUIRE(run({"fit", "--corpus", one, "--k", "1", "--out", (dir / "m1.json").string()}).code == 0);
    REQUIRE(run({"route", "--corpus", one, "--model", (dir / "m1.json").string(), "--out",
                 (dir / "r1.jsonl").string()})
                .code == 0);
    const auto j = nlohmann::json::parse(lines_of(read_file(dir / "r1.jsonl")).at(0));
    CHECK(j["chosen_expert"] == 0);
    CHECK(j["ssi"] == 1.0);
  }
  SUBCASE("report is independent of thread count") {
    REQUIRE(run({"route", "--corpus", path, "--model", model, "--out", (dir / "a.jsonl").string()}).code == 0);
    REQUIRE(run({"route", "--corpus", path, "--model", model, "--route-threads", "4", "--out",
                 (dir / "b.jsonl").string()})
                .code == 0);
    CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
  }
}

TEST_CASE("ablate and scaling") {
  const auto dir = tmp_dir("ablate");
  const auto corpus = planted(4, 24);
  const auto path = (dir / "c.sdna").string();
  write_corpus(path, corpus.docs, CorpusFormat::Binary);

  const auto one = run({"ablate", "--corpus", path, "--ks", "4", "--taus", "0.75", "--out", (dir / "a.csv").string()});
  REQUIRE(one.code == 0);
  auto lines = lines_of(read_file(dir / "a.csv"));
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "k,tau,eud_j_per_token,mean_ssi,route_time_s,route_threads,status");
  CHECK(lines[1].rfind("4,0.75,,", 0) == 0);
  CHECK(lines[1].size() > 3);
  CHECK(lines[1].substr(lines[1].size() - 3) == ",ok");

  const auto grid = run({"ablate", "--corpus", path, "--ks", "2,4", "--taus", "0.5,0.9", "--out",
                         (dir / "g.csv").string()});
  CHECK(grid.code == 0);
  CHECK(lines_of(read_file(dir / "g.csv")).size() == 5);

  CHECK(run({"ablate", "--corpus", path, "--taus", "0.75", "--out", (dir / "e.csv").string()}).code == 1);

  const auto wide = (dir / "wide.sdna").string();
  write_corpus(wide, planted(6, 64, 16).docs, CorpusFormat::Binary);
  const auto s = run({"scaling", "--corpus", wide, "--ks", "2,4,8,12,16", "--temperature", "0.1", "--out",
                      (dir / "s.csv").string()});
  REQUIRE(s.code == 0);
  lines = lines_of(read_file(dir / "s.csv"));
  REQUIRE(lines.size() == 7);
  CHECK(lines[0] == "k,ssi,route_time_s,eud_j_per_token");
  CHECK(lines[6].rfind("# fit a=", 0) == 0);
  const auto b_at = lines[6].find(" b=");
  REQUIRE(b_at != std::string::npos);
  CHECK(std::stod(lines[6].substr(b_at + 3)) > 0.0);
}

TEST_CASE("config file values are overridden by flags") {
  const auto dir = tmp_dir("config");
  const auto corpus = planted(5, 12);
  write_corpus(dir / "c.data", corpus.docs, CorpusFormat::Json);
  nlohmann::json cfg{{"corpus", (dir / "c.data").string()}, {"format", "json"}, {"k", 3}, {"seed", 9},
                     {"out", (dir / "from_config.json").string()}};
  write_file_atomic(dir / "cfg.json", cfg.dump());

  REQUIRE(run({"fit", "--config", (dir / "cfg.json").string()}).code == 0);
  CHECK(nlohmann::json::parse(read_file(dir / "from_config.json"))["k"] == 3);

  REQUIRE(run({"fit", "--config", (dir / "cfg.json").string(), "--k", "2", "--out", (dir / "flag.json").string()})
              .code == 0);
  const auto m = nlohmann::json::parse(read_file(dir / "flag.json"));
  CHECK(m["k"] == 2);
  CHECK(m["seed"] == 9);

  write_file_atomic(dir / "broken.json", "{");
  CHECK(run({"fit", "--config", (dir / "broken.json").string()}).code == 1);
}

TEST_CASE("segment") {
  const auto dir = tmp_dir("segment");
  const std::vector<CorpusDocument> docs{testing::make_doc("s/1", {{1, 0}, {1, 0.05}, {0, 1}})};
  write_corpus(dir / "c.json", docs, CorpusFormat::Json);
  const auto r = run({"segment", "--corpus", (dir / "c.json").string(), "--tau", "0.9", "--heatmap-dir",
                      (dir / "heat").string()});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  REQUIRE(j.size() == 1);
  CHECK(j[0]["doc_id"] == "s/1");
  REQUIRE(j[0]["codons"].size() == 2);
  CHECK(j[0]["codons"][0]["end"] == 1);
  CHECK(lines_of(read_file(dir / "heat" / "s_1.energy.csv")).size() == 3);
}
