#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "astlm/ast.hpp"
#include "astlm/vocab.hpp"

namespace astlm {

/// Vocabulary-id form of a path-to-root, fixed length m, PAD-filled.
struct EncodedPath {
  std::vector<int> ids;
  std::size_t true_length = 0;
};

/// One program's flat node sequence plus the per-node target paths.
struct EncodedProgram {
  std::vector<int> type_ids;
  std::vector<int> value_ids;
  std::vector<EncodedPath> paths;  // paths[i] belongs to the node at flat position i

  std::size_t size() const { return type_ids.size(); }
};

struct Shard {
  std::vector<EncodedProgram> programs;
  std::uint64_t type_vocab_fingerprint = 0;
  std::uint64_t value_vocab_fingerprint = 0;
  std::size_t path_length = 0;

  std::size_t total_nodes() const;
};

EncodedProgram encode_program(const AstTree& tree, const Vocab& types, const Vocab& values,
                              std::size_t m);

/// JSON-lines: a header line with fingerprints and m, then one program per line.
void write_shard(const Shard& shard, const std::string& path);
Shard read_shard(const std::string& path);

}  // namespace astlm
