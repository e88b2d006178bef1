#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace docaug {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
using GroupTags = std::vector<std::int32_t>;

enum class Unit { sentence, document };

// Error hierarchy. Every failure surfaced by the library derives from Error so
// the CLI can map validation problems and runtime faults to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: malformed files, inconsistent configuration, violated contracts.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class AlignmentError : public ValidationError {
 public:
  AlignmentError(std::string doc_id, const std::string& what)
      : ValidationError("document '" + doc_id + "': " + what), doc_id_(std::move(doc_id)) {}
  const std::string& doc_id() const { return doc_id_; }

 private:
  std::string doc_id_;
};

// Runtime faults: numerical blow-ups, diverged training.
class RuntimeFault : public Error {
 public:
  using Error::Error;
};

class NumericFault : public RuntimeFault {
 public:
  NumericFault(int layer, const std::string& where)
      : RuntimeFault("non-finite activations in " + where + " layer " + std::to_string(layer)),
        layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

std::string to_string(Unit unit);
Unit parse_unit(const std::string& text);

}  // namespace docaug
