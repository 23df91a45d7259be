#include "repprobe/embedding_store.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <json.hpp>

#include "repprobe/error.hpp"

namespace repprobe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<Pooling> parse_pooling(std::string_view s) {
  if (s == "CLS") return Pooling::CLS;
  if (s == "MeanPieces") return Pooling::MeanPieces;
  return std::nullopt;
}

void append_float(std::string& out, float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  out.append(buf, end);
}

class FileLock {
 public:
  explicit FileLock(const fs::path& path) : fd_(::open(path.c_str(), O_CREAT | O_RDWR, 0644)) {
    if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) throw Error("cannot lock " + path.string(), false);
  }
  ~FileLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_;
};

EmbeddingFileHeader parse_header(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(1, std::string("header is not JSON: ") + e.what());
  }
  EmbeddingFileHeader h;
  try {
    h.format_version = j.at("format_version").get<int>();
    const auto dim = j.at("dimension").get<std::int64_t>();
    const auto count = j.at("count").get<std::int64_t>();
    if (dim < 1) throw FormatError(1, "dimension must be >= 1");
    if (count < 0) throw FormatError(1, "count must be >= 0");
    h.dimension = static_cast<std::size_t>(dim);
    h.count = static_cast<std::size_t>(count);
    h.model = j.at("model").get<std::string>();
    auto pooling = parse_pooling(j.at("pooling").get<std::string>());
    if (!pooling) throw FormatError(1, "pooling must be CLS or MeanPieces");
    h.pooling = *pooling;
  } catch (const json::exception& e) {
    throw FormatError(1, std::string("bad header: ") + e.what());
  }
  if (h.format_version != kEmbeddingFormatVersion)
    throw FormatError(1, "unsupported format_version " + std::to_string(h.format_version));
  return h;
}

EmbeddingRecord parse_record(std::string_view line, std::size_t line_no, std::size_t dimension) {
  const auto t1 = line.find('\t');
  const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
  if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos)
    throw FormatError(line_no, "expected id<TAB>tags<TAB>values");

  EmbeddingRecord rec;
  rec.id = std::string(line.substr(0, t1));
  if (rec.id.empty()) throw FormatError(line_no, "empty id");
  try {
    const json tags = json::parse(line.substr(t1 + 1, t2 - t1 - 1));
    if (!tags.is_object()) throw FormatError(line_no, "tags must be a JSON object");
    for (const auto& [k, v] : tags.items()) {
      if (!v.is_string()) throw FormatError(line_no, "tag '" + k + "' must be a string");
      rec.tags.emplace(k, v.get<std::string>());
    }
  } catch (const json::exception& e) {
    throw FormatError(line_no, std::string("bad tags: ") + e.what());
  }

  std::string_view values = line.substr(t2 + 1);
  rec.vector.reserve(dimension);
  std::size_t pos = 0;
  while (pos <= values.size()) {
    auto next = values.find(' ', pos);
    if (next == std::string_view::npos) next = values.size();
    const std::string_view tok = values.substr(pos, next - pos);
    float v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (tok.empty() || ec != std::errc{} || ptr != tok.data() + tok.size())
      throw FormatError(line_no, "bad value '" + std::string(tok) + "'");
    if (!std::isfinite(v)) throw FormatError(line_no, "non-finite value");
    rec.vector.push_back(v);
    pos = next + 1;
  }
  if (rec.vector.size() != dimension)
    throw FormatError(line_no, "expected " + std::to_string(dimension) + " values, found " +
                                   std::to_string(rec.vector.size()));
  return rec;
}

}  // namespace

std::string_view to_string(Pooling p) { return p == Pooling::CLS ? "CLS" : "MeanPieces"; }

std::size_t write_embeddings(const EmbeddingFileHeader& header, const std::vector<EmbeddingRecord>& records,
                             std::ostream& sink) {
  if (header.dimension < 1) throw InvalidArgument("dimension must be >= 1");
  if (header.count != records.size())
    throw InvalidArgument("header count " + std::to_string(header.count) + " but " +
                          std::to_string(records.size()) + " records");
  std::set<std::string_view> ids;
  std::string out = json{{"format_version", header.format_version},
                         {"dimension", header.dimension},
                         {"model", header.model},
                         {"pooling", to_string(header.pooling)},
                         {"count", header.count}}
                        .dump();
  out += '\n';
  for (const auto& rec : records) {
    if (rec.id.empty() || rec.id.find_first_of("\t\n\r") != std::string::npos)
      throw InvalidArgument("record id must be non-empty without tabs or newlines");
    if (rec.vector.size() != header.dimension)
      throw DimensionMismatch("record '" + rec.id + "' has " + std::to_string(rec.vector.size()) +
                              " values, file dimension is " + std::to_string(header.dimension));
    if (!ids.insert(rec.id).second) throw DuplicateId(rec.id);
    for (float v : rec.vector)
      if (!std::isfinite(v)) throw NonFinite("record '" + rec.id + "'");

    out += rec.id;
    out += '\t';
    json tags = json::object();
    for (const auto& [k, v] : rec.tags) tags[k] = v;
    out += tags.dump();
    out += '\t';
    for (std::size_t i = 0; i < rec.vector.size(); ++i) {
      if (i) out += ' ';
      append_float(out, rec.vector[i]);
    }
    out += '\n';
  }
  sink.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!sink) throw Error("failed writing embeddings", false);
  return out.size();
}

std::size_t write_embeddings_file(const fs::path& path, const EmbeddingFileHeader& header,
                                  const std::vector<EmbeddingRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path lock_path = path;
  lock_path += ".lock";
  FileLock lock(lock_path);
  fs::path tmp = path;
  tmp += ".tmp";
  std::size_t bytes = 0;
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string(), false);
    bytes = write_embeddings(header, records, out);
  }
  fs::rename(tmp, path);
  return bytes;
}

EmbeddingFile read_embeddings(std::istream& source) {
  const std::string text{std::istreambuf_iterator<char>(source), std::istreambuf_iterator<char>()};
  if (text.empty()) throw FormatError(1, "empty embedding file");

  EmbeddingFile file;
  std::set<std::string> ids;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    ++line_no;
    const auto nl = text.find('\n', start);
    if (nl == std::string::npos) throw FormatError(line_no, "truncated line (missing newline)");
    const std::string_view line(text.data() + start, nl - start);
    start = nl + 1;
    if (!line.empty() && line.back() == '\r') throw FormatError(line_no, "CRLF line ending");
    if (line_no == 1) {
      file.header = parse_header(std::string(line));
      file.records.reserve(file.header.count);
      continue;
    }
    auto rec = parse_record(line, line_no, file.header.dimension);
    if (!ids.insert(rec.id).second) throw FormatError(line_no, "duplicate id '" + rec.id + "'");
    file.records.push_back(std::move(rec));
  }
  if (file.records.size() != file.header.count)
    throw FormatError(line_no + 1, "header count " + std::to_string(file.header.count) + " but " +
                                       std::to_string(file.records.size()) + " records");
  return file;
}

EmbeddingFile read_embeddings_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open embeddings file " + path.string());
  return read_embeddings(in);
}

}  // namespace repprobe
