#pragma once

#include <stdexcept>
#include <string>

namespace raydet {

// Thrown on malformed files, unwritable paths and the like. The CLI maps
// this to exit code 2.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a loss term goes non-finite during training; carries the name
// of the offending term. CLI exit code 3.
struct divergence_error : std::runtime_error {
  std::string term;
  explicit divergence_error(const std::string& term_name)
      : std::runtime_error("non-finite loss term: " + term_name), term(term_name) {}
};

}  // namespace raydet
