#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sdna {

// Token vectors of one document, row-major, stored as 32-bit floats exactly as
// they appear on disk. Reductions over them are carried out in double.
//
// Construction validates: n_tokens >= 1, dim >= 1, every value finite, every
// row with non-zero norm, and a token list (when given) of length n_tokens.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix(std::size_t n_tokens, std::size_t dim, std::vector<float> values,
                  std::optional<std::vector<std::string>> tokens = std::nullopt);

  std::size_t n_tokens() const noexcept { return n_tokens_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> row(std::size_t i) const noexcept {
    return {values_.data() + i * dim_, dim_};
  }
  const std::optional<std::vector<std::string>>& tokens() const noexcept { return tokens_; }

  // Euclidean norm of row i, accumulated in double.
  double row_norm(std::size_t i) const noexcept;

 private:
  std::size_t n_tokens_;
  std::size_t dim_;
  std::vector<float> values_;
  std::optional<std::vector<std::string>> tokens_;
};

struct CorpusDocument {
  std::string doc_id;
  EmbeddingMatrix embeddings;

  std::size_t token_count() const noexcept { return embeddings.n_tokens(); }
};

// Uniformly sampled power readings attributed to one document.
struct PowerTrace {
  std::string doc_id;
  double delta_t_s;
  std::vector<double> samples_w;
};

enum class CorpusFormat { Binary, Json };

CorpusFormat parse_corpus_format(std::string_view name);

std::vector<CorpusDocument> load_corpus(const std::filesystem::path& path, CorpusFormat format);

// Binary corpus codec: "SDNA", u32 version (1), u32 doc_count, then per doc
// u32 id_len, id bytes, u32 n_tokens, u32 dim, n_tokens*dim f32, u8 has_tokens,
// and when set, n_tokens strings as u32 len + bytes. All integers little-endian.
std::vector<CorpusDocument> decode_corpus_binary(std::string_view bytes);
std::string encode_corpus_binary(std::span<const CorpusDocument> docs);

// JSON corpus: [{"id", "dim", "embeddings": [[...]], "tokens": [...]?}, ...]
std::vector<CorpusDocument> decode_corpus_json(std::string_view text);
std::string encode_corpus_json(std::span<const CorpusDocument> docs);

void write_corpus(const std::filesystem::path& path, std::span<const CorpusDocument> docs,
                  CorpusFormat format);

// CSV with header `doc_id,delta_t_s,watts`, one row per sample, rows of a
// document contiguous. Traces are returned in first-appearance order.
std::vector<PowerTrace> load_power_traces(const std::filesystem::path& path);
std::vector<PowerTrace> parse_power_traces(std::istream& in);
void write_power_traces(const std::filesystem::path& path, std::span<const PowerTrace> traces);

// Throws UnknownDocId for any trace whose doc_id is not in the corpus.
void check_traces_against_corpus(std::span<const PowerTrace> traces,
                                 std::span<const CorpusDocument> docs);

// Returns traces reordered to align with docs. Throws UnknownDocId for stray
// traces and MissingTrace for documents without one.
std::vector<PowerTrace> align_traces(std::span<const PowerTrace> traces,
                                     std::span<const CorpusDocument> docs);

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& m);

// Writes to a sibling temporary file and renames it over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace sdna
