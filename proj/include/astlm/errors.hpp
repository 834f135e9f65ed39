#pragma once

#include <stdexcept>
#include <string>

namespace astlm {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StructureError : std::runtime_error {
  StructureError(const std::string& msg, std::size_t node_index)
      : std::runtime_error(msg + " (node " + std::to_string(node_index) + ")"),
        node_index(node_index) {}
  std::size_t node_index;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct KeyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyCorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace astlm
