#pragma once

#include <stdexcept>
#include <string>

namespace xtod {

// Malformed input bytes: carries the byte offset (or line number) when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string msg, std::size_t byte_offset = 0)
      : std::runtime_error(std::move(msg)), byte_offset(byte_offset) {}
  std::size_t byte_offset;
};

// Well-formed input that violates a documented invariant.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string msg, std::string subject = {}, std::string rule = {})
      : std::runtime_error(std::move(msg)), subject(std::move(subject)), rule(std::move(rule)) {}
  std::string subject;  // e.g. the offending dialog_id
  std::string rule;     // short name of the violated invariant
};

}  // namespace xtod
