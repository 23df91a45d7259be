#pragma once
// Text interchange format for embeddings.
//
//   line 1   : header JSON {"count","dimension","format_version","model","pooling"}
//   line 2.. : id<TAB>tags-as-JSON<TAB>v1 v2 ... vd
//
// Values are 32-bit floats printed with 9 significant digits, which is enough
// for a bit-exact round trip. UTF-8, LF line endings, every line terminated.

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace repprobe {

enum class Pooling { CLS, MeanPieces };
std::string_view to_string(Pooling p);

inline constexpr int kEmbeddingFormatVersion = 1;

struct EmbeddingFileHeader {
  int format_version = kEmbeddingFormatVersion;
  std::size_t dimension = 0;
  std::string model;
  Pooling pooling = Pooling::CLS;
  std::size_t count = 0;

  friend bool operator==(const EmbeddingFileHeader&, const EmbeddingFileHeader&) = default;
};

struct EmbeddingRecord {
  std::string id;
  std::map<std::string, std::string> tags;
  std::vector<float> vector;

  std::optional<std::string> tag(const std::string& key) const {
    auto it = tags.find(key);
    if (it == tags.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const EmbeddingRecord&, const EmbeddingRecord&) = default;
};

struct EmbeddingFile {
  EmbeddingFileHeader header;
  std::vector<EmbeddingRecord> records;
};

/// Writes header and records; returns the number of bytes written.
/// Throws DimensionMismatch, DuplicateId, NonFinite or InvalidArgument (count
/// disagreeing with the records, ids containing tabs or newlines).
std::size_t write_embeddings(const EmbeddingFileHeader& header, const std::vector<EmbeddingRecord>& records,
                             std::ostream& sink);

/// Writes under an exclusive lock on `<path>.lock`, via a temporary file that
/// is renamed into place.
std::size_t write_embeddings_file(const std::filesystem::path& path, const EmbeddingFileHeader& header,
                                  const std::vector<EmbeddingRecord>& records);

/// Throws FormatError carrying the 1-based line number.
EmbeddingFile read_embeddings(std::istream& source);
EmbeddingFile read_embeddings_file(const std::filesystem::path& path);

/// Stacks record vectors as rows.
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> to_matrix(const std::vector<EmbeddingRecord>& records) {
  const Eigen::Index d = records.empty() ? 0 : static_cast<Eigen::Index>(records.front().vector.size());
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m(static_cast<Eigen::Index>(records.size()), d);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      m(i, j) = static_cast<Scalar>(records[static_cast<std::size_t>(i)].vector[static_cast<std::size_t>(j)]);
  return m;
}

}  // namespace repprobe
