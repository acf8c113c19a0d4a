#include "sdna/embedding_io.hpp"

#include <unistd.h>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "sdna/error.hpp"

namespace sdna {

namespace {

constexpr std::string_view kMagic = "SDNA";
constexpr std::uint32_t kVersion = 1;

std::string row_detail(std::size_t row) { return "row=" + std::to_string(row); }

// Re-raises a matrix validation error with the owning document named.
[[noreturn]] void rethrow_with_doc(const Error& e, const std::string& doc_id) {
  throw Error(e.kind(), "doc=" + doc_id + (e.detail().empty() ? "" : " " + e.detail()));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]);
    }
    pos_ += 4;
    return v;
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t len) {
    need(len);
    std::string out(bytes_.substr(pos_, len));
    pos_ += len;
    return out;
  }

  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorKind::MalformedFile,
                  "unexpected end of file at byte " + std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xFFFFFFFFu) {
    throw Error(ErrorKind::InvalidArgument, std::string(what) + " exceeds u32 range");
  }
  return static_cast<std::uint32_t>(v);
}

void check_unique_ids(std::span<const CorpusDocument> docs) {
  std::unordered_set<std::string_view> seen;
  for (const auto& d : docs) {
    if (!seen.insert(d.doc_id).second) {
      throw Error(ErrorKind::DuplicateDocId, "doc=" + d.doc_id);
    }
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

double parse_double(std::string_view s, std::size_t line) {
  s = trim(s);
  // from_chars rejects a leading '+'
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::MalformedFile,
                "line=" + std::to_string(line) + " not a number: '" + std::string(s) + "'");
  }
  return v;
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t n_tokens, std::size_t dim, std::vector<float> values,
                                 std::optional<std::vector<std::string>> tokens)
    : n_tokens_(n_tokens), dim_(dim), values_(std::move(values)), tokens_(std::move(tokens)) {
  if (n_tokens_ == 0) throw Error(ErrorKind::MalformedFile, "n_tokens must be >= 1");
  if (dim_ == 0) throw Error(ErrorKind::MalformedFile, "dim must be >= 1");
  if (values_.size() != n_tokens_ * dim_) {
    throw Error(ErrorKind::DimensionMismatch,
                "expected " + std::to_string(n_tokens_ * dim_) + " values, got " +
                    std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < n_tokens_; ++i) {
    for (float v : row(i)) {
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, row_detail(i));
    }
    if (!(row_norm(i) > 0.0)) throw Error(ErrorKind::ZeroNormRow, row_detail(i));
  }
  if (tokens_ && tokens_->size() != n_tokens_) {
    throw Error(ErrorKind::DimensionMismatch,
                "token list has " + std::to_string(tokens_->size()) + " entries for " +
                    std::to_string(n_tokens_) + " rows");
  }
}

double EmbeddingMatrix::row_norm(std::size_t i) const noexcept {
  double acc = 0.0;
  for (float v : row(i)) acc += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(acc);
}

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "binary") return CorpusFormat::Binary;
  if (name == "json") return CorpusFormat::Json;
  throw Error(ErrorKind::InvalidArgument, "unknown corpus format '" + std::string(name) + "'");
}

std::vector<CorpusDocument> decode_corpus_binary(std::string_view bytes) {
  if (bytes.substr(0, 4) != kMagic) {
    throw Error(ErrorKind::MalformedHeader, "bad magic bytes");
  }
  ByteReader in(bytes.substr(4));
  const std::uint32_t version = in.u32();
  if (version != kVersion) {
    throw Error(ErrorKind::MalformedHeader, "unsupported version " + std::to_string(version));
  }
  const std::uint32_t doc_count = in.u32();

  std::vector<CorpusDocument> docs;
  for (std::uint32_t d = 0; d < doc_count; ++d) {
    std::string id = in.str(in.u32());
    const std::uint32_t n_tokens = in.u32();
    const std::uint32_t dim = in.u32();
    const std::size_t n_values = static_cast<std::size_t>(n_tokens) * dim;
    if (n_values > in.remaining() / 4) {
      throw Error(ErrorKind::MalformedFile, "doc=" + id + " declares more values than the file holds");
    }
    std::vector<float> values(n_values);
    for (auto& v : values) v = in.f32();

    std::optional<std::vector<std::string>> tokens;
    const std::uint8_t has_tokens = in.u8();
    if (has_tokens > 1) {
      throw Error(ErrorKind::MalformedFile, "doc=" + id + " has_tokens flag must be 0 or 1");
    }
    if (has_tokens == 1) {
      tokens.emplace();
      tokens->reserve(n_tokens);
      for (std::uint32_t t = 0; t < n_tokens; ++t) tokens->push_back(in.str(in.u32()));
    }
    try {
      docs.push_back({id, EmbeddingMatrix(n_tokens, dim, std::move(values), std::move(tokens))});
    } catch (const Error& e) {
      rethrow_with_doc(e, id);
    }
  }
  if (!in.done()) throw Error(ErrorKind::MalformedFile, "trailing bytes after last document");
  check_unique_ids(docs);
  return docs;
}

std::string encode_corpus_binary(std::span<const CorpusDocument> docs) {
  std::string out(kMagic);
  put_u32(out, kVersion);
  put_u32(out, checked_u32(docs.size(), "doc_count"));
  for (const auto& d : docs) {
    const auto& m = d.embeddings;
    put_u32(out, checked_u32(d.doc_id.size(), "id_len"));
    out += d.doc_id;
    put_u32(out, checked_u32(m.n_tokens(), "n_tokens"));
    put_u32(out, checked_u32(m.dim(), "dim"));
    for (float v : m.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    out.push_back(m.tokens() ? '\x01' : '\x00');
    if (m.tokens()) {
      for (const auto& t : *m.tokens()) {
        put_u32(out, checked_u32(t.size(), "token length"));
        out += t;
      }
    }
  }
  return out;
}

std::vector<CorpusDocument> decode_corpus_json(std::string_view text) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::MalformedFile, e.what());
  }
  if (!root.is_array()) throw Error(ErrorKind::MalformedHeader, "top level must be an array");

  std::vector<CorpusDocument> docs;
  for (std::size_t d = 0; d < root.size(); ++d) {
    const auto& obj = root[d];
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("dim") ||
        !obj.contains("embeddings") || !obj["id"].is_string() ||
        !obj["dim"].is_number_unsigned() || !obj["embeddings"].is_array()) {
      throw Error(ErrorKind::MalformedFile,
                  "document " + std::to_string(d) + " needs string id, unsigned dim, embeddings array");
    }
    const std::string id = obj["id"].get<std::string>();
    const auto dim = obj["dim"].get<std::size_t>();
    const auto& rows = obj["embeddings"];

    std::vector<float> values;
    values.reserve(rows.size() * dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r].is_array()) {
        throw Error(ErrorKind::MalformedFile, "doc=" + id + " " + row_detail(r) + " is not an array");
      }
      if (rows[r].size() != dim) {
        throw Error(ErrorKind::DimensionMismatch,
                    "doc=" + id + " " + row_detail(r) + " has " + std::to_string(rows[r].size()) +
                        " values, dim=" + std::to_string(dim));
      }
      for (const auto& v : rows[r]) {
        if (!v.is_number()) {
          if (v.is_null()) throw Error(ErrorKind::NonFiniteValue, "doc=" + id + " " + row_detail(r));
          throw Error(ErrorKind::MalformedFile, "doc=" + id + " " + row_detail(r) + " non-numeric value");
        }
        values.push_back(static_cast<float>(v.get<double>()));
      }
    }

    std::optional<std::vector<std::string>> tokens;
    if (obj.contains("tokens") && !obj["tokens"].is_null()) {
      try {
        tokens = obj["tokens"].get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception&) {
        throw Error(ErrorKind::MalformedFile, "doc=" + id + " tokens must be a list of strings");
      }
    }
    try {
      docs.push_back({id, EmbeddingMatrix(rows.size(), dim, std::move(values), std::move(tokens))});
    } catch (const Error& e) {
      rethrow_with_doc(e, id);
    }
  }
  check_unique_ids(docs);
  return docs;
}

std::string encode_corpus_json(std::span<const CorpusDocument> docs) {
  nlohmann::ordered_json root = nlohmann::ordered_json::array();
  for (const auto& d : docs) {
    const auto& m = d.embeddings;
    nlohmann::ordered_json obj;
    obj["id"] = d.doc_id;
    obj["dim"] = m.dim();
    auto rows = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < m.n_tokens(); ++i) {
      auto row = nlohmann::ordered_json::array();
      for (float v : m.row(i)) row.push_back(v);
      rows.push_back(std::move(row));
    }
    obj["embeddings"] = std::move(rows);
    if (m.tokens()) obj["tokens"] = *m.tokens();
    root.push_back(std::move(obj));
  }
  return root.dump() + "\n";
}

std::vector<CorpusDocument> load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  const std::string bytes = read_file(path);
  return format == CorpusFormat::Binary ? decode_corpus_binary(bytes) : decode_corpus_json(bytes);
}

void write_corpus(const std::filesystem::path& path, std::span<const CorpusDocument> docs,
                  CorpusFormat format) {
  write_file_atomic(path, format == CorpusFormat::Binary ? encode_corpus_binary(docs)
                                                         : encode_corpus_json(docs));
}

std::vector<PowerTrace> parse_power_traces(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || trim(line) != "doc_id,delta_t_s,watts") {
    throw Error(ErrorKind::MalformedHeader, "expected CSV header 'doc_id,delta_t_s,watts'");
  }

  std::vector<PowerTrace> traces;
  std::unordered_set<std::string> closed;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view row = trim(line);
    if (row.empty()) continue;
    const auto c1 = row.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : row.find(',', c1 + 1);
    if (c2 == std::string_view::npos || row.find(',', c2 + 1) != std::string_view::npos) {
      throw Error(ErrorKind::MalformedFile, "line=" + std::to_string(line_no) + " expects 3 fields");
    }
    const std::string doc_id(trim(row.substr(0, c1)));
    const double dt = parse_double(row.substr(c1 + 1, c2 - c1 - 1), line_no);
    const double watts = parse_double(row.substr(c2 + 1), line_no);

    const std::string where = "doc=" + doc_id + " line=" + std::to_string(line_no);
    if (!std::isfinite(dt) || !(dt > 0.0)) {
      throw Error(ErrorKind::MalformedFile, where + " delta_t_s must be finite and > 0");
    }
    if (!std::isfinite(watts)) throw Error(ErrorKind::NonFiniteValue, where);
    if (watts < 0.0) throw Error(ErrorKind::NegativePower, where);

    if (traces.empty() || traces.back().doc_id != doc_id) {
      if (!traces.empty()) closed.insert(traces.back().doc_id);
      if (closed.count(doc_id) != 0) {
        throw Error(ErrorKind::DuplicateDocId, where + " rows for a document must be contiguous");
      }
      traces.push_back({doc_id, dt, {}});
    } else if (traces.back().delta_t_s != dt) {
      throw Error(ErrorKind::NonUniformDeltaT, where);
    }
    traces.back().samples_w.push_back(watts);
  }
  return traces;
}

std::vector<PowerTrace> load_power_traces(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  return parse_power_traces(in);
}

void write_power_traces(const std::filesystem::path& path, std::span<const PowerTrace> traces) {
  std::ostringstream out;
  out.precision(17);
  out << "doc_id,delta_t_s,watts\n";
  for (const auto& t : traces) {
    for (double w : t.samples_w) out << t.doc_id << ',' << t.delta_t_s << ',' << w << '\n';
  }
  write_file_atomic(path, out.str());
}

void check_traces_against_corpus(std::span<const PowerTrace> traces,
                                 std::span<const CorpusDocument> docs) {
  std::unordered_set<std::string_view> ids;
  for (const auto& d : docs) ids.insert(d.doc_id);
  for (const auto& t : traces) {
    if (ids.count(t.doc_id) == 0) throw Error(ErrorKind::UnknownDocId, "doc=" + t.doc_id);
  }
}

std::vector<PowerTrace> align_traces(std::span<const PowerTrace> traces,
                                     std::span<const CorpusDocument> docs) {
  check_traces_against_corpus(traces, docs);
  std::unordered_map<std::string_view, const PowerTrace*> by_id;
  for (const auto& t : traces) by_id.emplace(t.doc_id, &t);
  std::vector<PowerTrace> aligned;
  aligned.reserve(docs.size());
  for (const auto& d : docs) {
    auto it = by_id.find(d.doc_id);
    if (it == by_id.end()) throw Error(ErrorKind::MissingTrace, "doc=" + d.doc_id);
    aligned.push_back(*it->second);
  }
  return aligned;
}

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m) {
  std::vector<float> out(m.values().begin(), m.values().end());
  for (std::size_t i = 0; i < m.n_tokens(); ++i) {
    const double norm = m.row_norm(i);
    if (!(norm > 0.0)) throw Error(ErrorKind::ZeroNormRow, row_detail(i));
    for (std::size_t j = 0; j < m.dim(); ++j) {
      out[i * m.dim() + j] = static_cast<float>(static_cast<double>(m.row(i)[j]) / norm);
    }
  }
  return EmbeddingMatrix(m.n_tokens(), m.dim(), std::move(out), m.tokens());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(tmp, ignored);
      throw Error(ErrorKind::Io, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::Io, "cannot rename onto " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace sdna
