#include "astlm/data.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "astlm/errors.hpp"

namespace astlm {

std::size_t Shard::total_nodes() const {
  std::size_t n = 0;
  for (const auto& p : programs) n += p.size();
  return n;
}

EncodedProgram encode_program(const AstTree& tree, const Vocab& types, const Vocab& values,
                              std::size_t m) {
  EncodedProgram out;
  const auto order = flatten_order(tree);
  const auto flat = flatten(tree);
  out.type_ids.reserve(flat.size());
  out.value_ids.reserve(flat.size());
  out.paths.reserve(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    out.type_ids.push_back(types.encode(flat[i].type));
    out.value_ids.push_back(values.encode(flat[i].value));
    const Path path = path_to_root(tree, order[i], m);
    EncodedPath ep;
    ep.true_length = path.true_length;
    ep.ids.reserve(m);
    for (const auto& type : path.types) {
      ep.ids.push_back(types.encode(type));
    }
    out.paths.push_back(std::move(ep));
  }
  return out;
}

void write_shard(const Shard& shard, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open shard for writing: " + path);
  nlohmann::json header;
  header["type_vocab_fingerprint"] = shard.type_vocab_fingerprint;
  header["value_vocab_fingerprint"] = shard.value_vocab_fingerprint;
  header["path_length"] = shard.path_length;
  out << header.dump() << '\n';
  for (const auto& program : shard.programs) {
    nlohmann::json line;
    line["types"] = program.type_ids;
    line["values"] = program.value_ids;
    nlohmann::json paths = nlohmann::json::array();
    for (const auto& p : program.paths) {
      paths.push_back({{"ids", p.ids}, {"len", p.true_length}});
    }
    line["paths"] = std::move(paths);
    out << line.dump() << '\n';
  }
  if (!out) throw IoError("write failure on shard: " + path);
}

Shard read_shard(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open shard: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("shard is empty: " + path);
  Shard shard;
  try {
    nlohmann::json header = nlohmann::json::parse(line);
    shard.type_vocab_fingerprint = header.at("type_vocab_fingerprint").get<std::uint64_t>();
    shard.value_vocab_fingerprint = header.at("value_vocab_fingerprint").get<std::uint64_t>();
    shard.path_length = header.at("path_length").get<std::size_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json doc = nlohmann::json::parse(line);
      EncodedProgram program;
      program.type_ids = doc.at("types").get<std::vector<int>>();
      program.value_ids = doc.at("values").get<std::vector<int>>();
      for (const auto& p : doc.at("paths")) {
        EncodedPath ep;
        ep.ids = p.at("ids").get<std::vector<int>>();
        ep.true_length = p.at("len").get<std::size_t>();
        if (ep.ids.size() != shard.path_length) {
          throw ParseError("shard path length mismatch in " + path);
        }
        program.paths.push_back(std::move(ep));
      }
      if (program.value_ids.size() != program.size() || program.paths.size() != program.size()) {
        throw ParseError("shard program with inconsistent lengths in " + path);
      }
      shard.programs.push_back(std::move(program));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed shard " + path + ": " + e.what());
  }
  return shard;
}

}  // namespace astlm
