#include "astlm/ast.hpp"

#include <nlohmann/json.hpp>

#include "astlm/errors.hpp"

namespace astlm {

namespace {

void validate_tree(AstTree& tree) {
  const std::size_t n = tree.nodes.size();
  tree.parent.assign(n, 0);
  std::vector<bool> has_parent(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c : tree.nodes[i].children) {
      if (c >= n) {
        throw StructureError("child index " + std::to_string(c) + " out of range", i);
      }
      if (c <= i) {
        throw StructureError("child index " + std::to_string(c) + " not greater than parent", i);
      }
      if (has_parent[c]) {
        throw StructureError("node has multiple parents", c);
      }
      has_parent[c] = true;
      tree.parent[c] = i;
    }
  }
  for (std::size_t i = 1; i < n; ++i) {
    if (!has_parent[i]) {
      throw StructureError("node unreachable from root (multiple roots?)", i);
    }
  }
  if (n > 0 && has_parent[0]) {
    throw StructureError("root node has a parent", 0);
  }
}

}  // namespace

AstTree parse_ast_json(const std::string& line) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_array() || doc.empty()) {
    throw ParseError("expected a nonempty JSON array of nodes");
  }
  AstTree tree;
  tree.nodes.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& obj = doc[i];
    if (!obj.is_object() || !obj.contains("type") || !obj["type"].is_string()) {
      throw ParseError("node " + std::to_string(i) + ": missing string \"type\"");
    }
    AstNode node;
    node.type = obj["type"].get<std::string>();
    if (node.type.empty()) {
      throw ParseError("node " + std::to_string(i) + ": empty type");
    }
    if (obj.contains("value")) {
      if (obj["value"].is_string()) {
        node.value = obj["value"].get<std::string>();
      } else if (!obj["value"].is_null()) {
        throw ParseError("node " + std::to_string(i) + ": \"value\" must be a string");
      }
    }
    if (obj.contains("children")) {
      if (!obj["children"].is_array()) {
        throw ParseError("node " + std::to_string(i) + ": \"children\" must be an array");
      }
      for (const auto& c : obj["children"]) {
        if (!c.is_number_unsigned()) {
          throw ParseError("node " + std::to_string(i) + ": child index must be a nonnegative integer");
        }
        node.children.push_back(c.get<std::size_t>());
      }
    }
    tree.nodes.push_back(std::move(node));
  }
  validate_tree(tree);
  return tree;
}

std::vector<std::size_t> flatten_order(const AstTree& tree) {
  std::vector<std::size_t> order;
  order.reserve(tree.size());
  if (tree.size() == 0) return order;
  std::vector<std::size_t> stack{0};
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    order.push_back(i);
    const auto& children = tree.nodes[i].children;
    for (auto it = children.rbegin(); it != children.rend(); ++it) {
      stack.push_back(*it);
    }
  }
  return order;
}

std::vector<NodeLabel> flatten(const AstTree& tree) {
  std::vector<NodeLabel> out;
  out.reserve(tree.size());
  for (std::size_t i : flatten_order(tree)) {
    const AstNode& node = tree.nodes[i];
    out.push_back({node.type, node.value.value_or(std::string(kEmptyValue))});
  }
  return out;
}

Path path_to_root(const AstTree& tree, std::size_t node_index, std::size_t m) {
  if (node_index >= tree.size()) {
    throw IndexError("node index " + std::to_string(node_index) + " out of range");
  }
  Path path;
  path.types.reserve(m);
  std::size_t cur = node_index;
  while (cur != 0 && path.types.size() < m) {
    cur = tree.parent[cur];
    path.types.push_back(tree.nodes[cur].type);
  }
  path.true_length = path.types.size();
  path.types.resize(m, std::string(kPadToken));
  return path;
}

std::vector<Query> make_queries(const AstTree& tree, std::size_t m) {
  const std::vector<std::size_t> order = flatten_order(tree);
  const std::vector<NodeLabel> flat = flatten(tree);
  std::vector<Query> queries;
  queries.reserve(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    Query q;
    q.context.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(i));
    q.target = flat[i];
    q.path = path_to_root(tree, order[i], m);
    q.position = i;
    queries.push_back(std::move(q));
  }
  return queries;
}

}  // namespace astlm
