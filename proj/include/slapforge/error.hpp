#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace slapforge {

// Root of every error this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedMessage : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::string origin, std::size_t line, const std::string& what)
      : Error(origin + ":" + std::to_string(line) + ": " + what),
        origin_(std::move(origin)), line_(line) {}

  const std::string& origin() const noexcept { return origin_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string origin_;
  std::size_t line_;
};

// Carries the chain of names that led to the failure, e.g. s:a -> s:b -> s:a.
class ChainError : public Error {
 public:
  ChainError(const std::string& prefix, std::vector<std::string> chain)
      : Error(prefix + ": " + join(chain)), chain_(std::move(chain)) {}

  const std::vector<std::string>& chain() const noexcept { return chain_; }

  static std::string join(const std::vector<std::string>& chain) {
    std::string out;
    for (std::size_t i = 0; i < chain.size(); ++i) {
      if (i) out += " -> ";
      out += chain[i];
    }
    return out;
  }

 private:
  std::vector<std::string> chain_;
};

class ExtendsCycleError : public ChainError {
 public:
  explicit ExtendsCycleError(std::vector<std::string> chain)
      : ChainError("extends cycle", std::move(chain)) {}
};

class FetchError : public Error {
 public:
  using Error::Error;
};

class SubstitutionCycleError : public ChainError {
 public:
  explicit SubstitutionCycleError(std::vector<std::string> chain)
      : ChainError("substitution cycle", std::move(chain)) {}
};

class MacroCycleError : public ChainError {
 public:
  explicit MacroCycleError(std::vector<std::string> chain)
      : ChainError("macro cycle", std::move(chain)) {}
};

class MissingReferenceError : public ChainError {
 public:
  explicit MissingReferenceError(std::vector<std::string> chain)
      : ChainError("missing reference", std::move(chain)) {}
};

class PlanError : public Error {
 public:
  PlanError(std::string part, const std::string& what)
      : Error("part '" + part + "': " + what), part_(std::move(part)) {}
  const std::string& part() const noexcept { return part_; }

 private:
  std::string part_;
};

class RecipeError : public Error {
 public:
  using Error::Error;
};

class AuthError : public Error {
 public:
  using Error::Error;
};

class UnknownNodeError : public Error {
 public:
  using Error::Error;
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class GridError : public Error {
 public:
  using Error::Error;
};

class PolicyError : public Error {
 public:
  using Error::Error;
};

}  // namespace slapforge
