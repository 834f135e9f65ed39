#include <random>

#include "astlm/ast.hpp"
#include "astlm/errors.hpp"
#include "doctest.h"

using namespace astlm;

namespace {

// Python snippet of the motivating example: a While loop whose body holds an
// If with a Break inside.
AstTree motivating_example() {
  return parse_ast_json(R"([
    {"type":"Module","children":[1]},
    {"type":"While","children":[2,3]},
    {"type":"CompareLtE","children":[]},
    {"type":"body","children":[4,5]},
    {"type":"Expr","children":[]},
    {"type":"If","children":[6]},
    {"type":"body","children":[7]},
    {"type":"Break"}
  ])");
}

// Function returning a + b; NameLoad[b] is the last leaf.
AstTree return_binop_example() {
  return parse_ast_json(R"([
    {"type":"Module","children":[1]},
    {"type":"FunctionDef","children":[2]},
    {"type":"body","children":[3]},
    {"type":"Return","children":[4]},
    {"type":"BinOp","children":[5,6]},
    {"type":"NameLoad","value":"a"},
    {"type":"NameLoad","value":"b"}
  ])");
}

AstTree random_tree(std::mt19937_64& rng, std::size_t max_nodes) {
  std::uniform_int_distribution<std::size_t> size_dist(1, max_nodes);
  const std::size_t n = size_dist(rng);
  AstTree tree;
  tree.nodes.resize(n);
  tree.parent.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    tree.nodes[i].type = "T" + std::to_string(rng() % 7);
    if (rng() % 3 == 0) tree.nodes[i].value = "v" + std::to_string(rng() % 5);
  }
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t parent = rng() % i;
    tree.nodes[parent].children.push_back(i);
    tree.parent[i] = parent;
  }
  return tree;
}

}  // namespace

TEST_CASE("parse: minimal tree") {
  AstTree tree = parse_ast_json(R"([{"type":"Module"}])");
  CHECK(tree.size() == 1);
  CHECK(tree.nodes[0].children.empty());
}

TEST_CASE("parse: two-node tree derives parent map") {
  AstTree tree = parse_ast_json(R"([{"type":"Module","children":[1]},{"type":"Break"}])");
  CHECK(tree.size() == 2);
  CHECK(tree.parent[1] == 0);
}

TEST_CASE("parse: dangling child index") {
  CHECK_THROWS_AS(parse_ast_json(R"([{"type":"A","children":[2]}])"), StructureError);
}

TEST_CASE("parse: malformed JSON") {
  CHECK_THROWS_AS(parse_ast_json("not json"), ParseError);
  CHECK_THROWS_AS(parse_ast_json("[]"), ParseError);
  CHECK_THROWS_AS(parse_ast_json(R"([{"value":"x"}])"), ParseError);
}

TEST_CASE("parse: duplicate child") {
  CHECK_THROWS_AS(
      parse_ast_json(R"([{"type":"A","children":[1,2]},{"type":"B","children":[2]},{"type":"C"}])"),
      StructureError);
}

TEST_CASE("parse: unreachable node") {
  CHECK_THROWS_AS(parse_ast_json(R"([{"type":"A"},{"type":"B"}])"), StructureError);
}

TEST_CASE("parse: backward child edge rejected") {
  CHECK_THROWS_AS(parse_ast_json(R"([{"type":"A","children":[1]},{"type":"B","children":[0]}])"),
                  StructureError);
}

TEST_CASE("flatten: single node gets EMPTY value") {
  AstTree tree = parse_ast_json(R"([{"type":"Module"}])");
  auto flat = flatten(tree);
  REQUIRE(flat.size() == 1);
  CHECK(flat[0] == NodeLabel{"Module", "EMPTY"});
}

TEST_CASE("flatten: node before its children, stored order") {
  AstTree tree = parse_ast_json(R"([{"type":"A","children":[1,2]},{"type":"B"},{"type":"C"}])");
  auto flat = flatten(tree);
  REQUIRE(flat.size() == 3);
  CHECK(flat[0].type == "A");
  CHECK(flat[1].type == "B");
  CHECK(flat[2].type == "C");
}

TEST_CASE("flatten: NameLoad[b] is the final node of the return example") {
  auto flat = flatten(return_binop_example());
  REQUIRE(flat.size() == 7);
  CHECK(flat.back() == NodeLabel{"NameLoad", "b"});
}

TEST_CASE("path_to_root: motivating example, Break at m=5") {
  AstTree tree = motivating_example();
  // Break is node 7.
  Path path = path_to_root(tree, 7, 5);
  CHECK(path.types == std::vector<std::string>{"body", "If", "body", "While", "Module"});
  CHECK(path.true_length == 5);
}

TEST_CASE("path_to_root: NameLoad[b] at m=5 pads at the root end") {
  AstTree tree = return_binop_example();
  Path path = path_to_root(tree, 6, 5);
  CHECK(path.types == std::vector<std::string>{"BinOp", "Return", "body", "FunctionDef", "PAD"});
  CHECK(path.true_length == 4);
}

TEST_CASE("path_to_root: root has all-PAD path") {
  AstTree tree = motivating_example();
  Path path = path_to_root(tree, 0, 5);
  CHECK(path.true_length == 0);
  for (const auto& t : path.types) CHECK(t == "PAD");
}

TEST_CASE("path_to_root: deep chain keeps the m nearest ancestors") {
  // Chain of depth 8: node i's parent is i-1.
  AstTree tree;
  tree.nodes.resize(9);
  tree.parent.assign(9, 0);
  for (std::size_t i = 0; i < 9; ++i) {
    tree.nodes[i].type = "N" + std::to_string(i);
    if (i > 0) {
      tree.nodes[i - 1].children.push_back(i);
      tree.parent[i] = i - 1;
    }
  }
  Path path = path_to_root(tree, 8, 5);
  // Independent re-walk of parent pointers: ancestors of 8 are 7,6,5,4,3,...
  CHECK(path.types == std::vector<std::string>{"N7", "N6", "N5", "N4", "N3"});
  CHECK(path.true_length == 5);
}

TEST_CASE("path_to_root: out-of-range index") {
  AstTree tree = motivating_example();
  CHECK_THROWS_AS(path_to_root(tree, 99, 5), IndexError);
}

TEST_CASE("make_queries: one query per node with growing context") {
  AstTree tree = motivating_example();
  auto queries = make_queries(tree, 5);
  auto flat = flatten(tree);
  REQUIRE(queries.size() == tree.size());
  CHECK(queries[0].context.empty());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    CHECK(queries[i].position == i);
    CHECK(queries[i].target == flat[i]);
    REQUIRE(queries[i].context.size() == i);
    for (std::size_t j = 0; j < i; ++j) CHECK(queries[i].context[j] == flat[j]);
  }
}

TEST_CASE("make_queries: Break query carries its full path") {
  AstTree tree = motivating_example();
  auto queries = make_queries(tree, 5);
  auto flat = flatten(tree);
  std::size_t break_pos = 0;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    if (flat[i].type == "Break") break_pos = i;
  }
  const Query& q = queries[break_pos];
  CHECK(q.path.types == std::vector<std::string>{"body", "If", "body", "While", "Module"});
  CHECK(q.context.size() == break_pos);
}

TEST_CASE("property: parent precedes child in flat order, paths match a naive walk") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    AstTree tree = random_tree(rng, 40);
    auto order = flatten_order(tree);
    REQUIRE(order.size() == tree.size());

    std::vector<std::size_t> position(tree.size());
    std::vector<bool> seen(tree.size(), false);
    for (std::size_t p = 0; p < order.size(); ++p) {
      CHECK_FALSE(seen[order[p]]);  // bijection
      seen[order[p]] = true;
      position[order[p]] = p;
    }
    for (std::size_t i = 1; i < tree.size(); ++i) {
      CHECK(position[tree.parent[i]] < position[i]);
    }

    const std::size_t m = 1 + trial % 8;
    for (std::size_t i = 0; i < tree.size(); ++i) {
      Path path = path_to_root(tree, i, m);
      // Naive oracle: walk parent pointers upward.
      std::vector<std::string> expected;
      std::size_t cur = i;
      while (cur != 0 && expected.size() < m) {
        cur = tree.parent[cur];
        expected.push_back(tree.nodes[cur].type);
      }
      CHECK(path.true_length == expected.size());
      expected.resize(m, "PAD");
      CHECK(path.types == expected);
    }
  }
}
