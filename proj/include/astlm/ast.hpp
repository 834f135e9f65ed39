#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace astlm {

inline constexpr std::string_view kEmptyValue = "EMPTY";
inline constexpr std::string_view kPadToken = "PAD";

struct AstNode {
  std::string type;
  std::optional<std::string> value;
  std::vector<std::size_t> children;
};

/// A parsed program. Node 0 is the root; child indices are strictly greater
/// than their parent's index.
struct AstTree {
  std::vector<AstNode> nodes;
  std::vector<std::size_t> parent;  // parent[0] is unused

  std::size_t size() const { return nodes.size(); }
};

/// (type, value) pair of a flattened node. Value is "EMPTY" for non-leaves.
struct NodeLabel {
  std::string type;
  std::string value;

  bool operator==(const NodeLabel&) const = default;
};

/// Ancestor types of a predicting node, nearest-first, fixed length m.
/// Entries beyond true_length are "PAD".
struct Path {
  std::vector<std::string> types;
  std::size_t true_length = 0;
};

struct Query {
  std::vector<NodeLabel> context;  // nodes strictly left of the target
  NodeLabel target;
  Path path;
  std::size_t position = 0;
};

/// Parses one newline-delimited-JSON line: an array of node objects with
/// "type" (required), "value" (optional), "children" (optional index list).
/// Throws ParseError on malformed JSON and StructureError on dangling or
/// duplicate child indices, cycles, or multiple roots.
AstTree parse_ast_json(const std::string& line);

/// Depth-first flattening, each node emitted before its children, children
/// in stored order. Value-absent nodes are emitted with value "EMPTY".
std::vector<NodeLabel> flatten(const AstTree& tree);

/// Node index at each flat position (same traversal as flatten()).
std::vector<std::size_t> flatten_order(const AstTree& tree);

/// Ancestor types of node_index, parent first. Keeps the m nearest ancestors
/// when the node is deeper than m; pads with "PAD" at the root end otherwise.
Path path_to_root(const AstTree& tree, std::size_t node_index, std::size_t m);

/// One query per node in flat order; query i's context is flatten(tree)[0..i).
std::vector<Query> make_queries(const AstTree& tree, std::size_t m);

}  // namespace astlm
