#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace repprobe {

/// Base of every error raised by the toolkit. `validation()` separates bad
/// input (exit code 1) from runtime failures (exit code 2).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, bool validation = true)
      : std::runtime_error(what), validation_(validation) {}
  bool validation() const noexcept { return validation_; }

 private:
  bool validation_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& why) : Error("invalid argument: " + why) {}
};

class MalformedRecord : public Error {
 public:
  MalformedRecord(std::string locator, std::string field, const std::string& why)
      : Error("malformed record at " + locator + ": field '" + field + "': " + why),
        locator_(std::move(locator)),
        field_(std::move(field)) {}
  const std::string& locator() const noexcept { return locator_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::string locator_;
  std::string field_;
};

class EmptySource : public Error {
 public:
  EmptySource() : Error("empty knowledge-base source") {}
};

class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& why)
      : Error("format error at line " + std::to_string(line) + ": " + why), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NetworkError : public Error {
 public:
  explicit NetworkError(const std::string& why) : Error("network error: " + why, false) {}
};

class HttpStatus : public Error {
 public:
  explicit HttpStatus(int code)
      : Error("unexpected HTTP status " + std::to_string(code), false), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

class ExhaustedSpace : public Error {
 public:
  explicit ExhaustedSpace(const std::string& why) : Error("negative sampling exhausted: " + why) {}
};

class EmptyTrainSet : public Error {
 public:
  EmptyTrainSet() : Error("training set is empty") {}
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& why) : Error("dimension mismatch: " + why) {}
};

class DuplicateId : public Error {
 public:
  explicit DuplicateId(const std::string& id) : Error("duplicate id: " + id), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class NonFinite : public Error {
 public:
  explicit NonFinite(const std::string& what) : Error("non-finite value in " + what, false) {}
};

class InsufficientData : public Error {
 public:
  explicit InsufficientData(const std::string& why) : Error("insufficient data: " + why) {}
};

class InvalidThreshold : public Error {
 public:
  explicit InvalidThreshold(const std::string& why) : Error("invalid dendrogram cut: " + why) {}
};

class UnknownId : public Error {
 public:
  explicit UnknownId(const std::string& id) : Error("unknown id: " + id), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class SingleClass : public Error {
 public:
  SingleClass() : Error("AUC needs both classes present") {}
};

class EmptyInput : public Error {
 public:
  explicit EmptyInput(const std::string& what) : Error("empty input: " + what) {}
};

class LengthMismatch : public Error {
 public:
  LengthMismatch(std::size_t a, std::size_t b)
      : Error("length mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

class ConstantInput : public Error {
 public:
  ConstantInput() : Error("constant input, correlation undefined") {}
};

class MissingInput : public Error {
 public:
  MissingInput(std::string stage, const std::string& what)
      : Error("missing input for stage '" + stage + "': " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& why) : Error("config error: " + why) {}
};

}  // namespace repprobe
