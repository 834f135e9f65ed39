#include "astlm/vocab.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "astlm/ast.hpp"
#include "astlm/errors.hpp"

namespace astlm {

namespace {

constexpr const char* kUnkToken = "UNK";

std::map<std::string, std::int64_t> merge_counts(
    const std::vector<std::map<std::string, std::int64_t>>& per_file_counts) {
  std::map<std::string, std::int64_t> merged;
  for (const auto& counts : per_file_counts) {
    for (const auto& [token, count] : counts) {
      merged[token] += count;
    }
  }
  return merged;
}

}  // namespace

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) {
    const std::string& t = v.tokens_[static_cast<std::size_t>(i)];
    if (v.ids_.contains(t)) {
      throw ConfigError("duplicate vocabulary token: " + t);
    }
    v.ids_.emplace(t, i);
    if (t == kUnkToken) v.unk_id_ = i;
    if (t == kEmptyValue) v.empty_id_ = i;
    if (t == kPadToken) v.pad_id_ = i;
  }
  if (v.unk_id_ < 0 || v.pad_id_ < 0) {
    throw ConfigError("vocabulary must contain UNK and PAD");
  }
  return v;
}

Vocab Vocab::build_types(const std::vector<std::map<std::string, std::int64_t>>& per_file_counts) {
  auto merged = merge_counts(per_file_counts);
  if (merged.empty()) {
    throw EmptyCorpusError("no types observed; corpus is empty");
  }
  std::vector<std::string> tokens{kUnkToken, std::string(kPadToken)};
  for (const auto& [token, count] : merged) {
    tokens.push_back(token);  // merged map is already sorted
  }
  return from_tokens(std::move(tokens));
}

Vocab Vocab::build_values(const std::vector<std::map<std::string, std::int64_t>>& per_file_counts,
                          std::int64_t k) {
  if (k < 1) {
    throw ConfigError("value vocabulary cutoff k must be >= 1");
  }
  auto merged = merge_counts(per_file_counts);
  std::vector<std::pair<std::string, std::int64_t>> by_freq(merged.begin(), merged.end());
  std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (std::cmp_greater(by_freq.size(), k)) {
    by_freq.resize(static_cast<std::size_t>(k));
  }
  std::vector<std::string> tokens{kUnkToken, std::string(kPadToken)};
  for (const auto& [token, count] : by_freq) {
    if (token != kUnkToken && token != kPadToken) {
      tokens.push_back(token);
    }
  }
  return from_tokens(std::move(tokens));
}

int Vocab::encode(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk_id_ : it->second;
}

const std::string& Vocab::decode(int id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("vocabulary id " + std::to_string(id) + " out of range [0, " +
                     std::to_string(size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(const std::string& token) const { return ids_.contains(token); }

std::uint64_t Vocab::fingerprint() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined += '\n';
  }
  return fnv1a(joined);
}

std::string Vocab::to_json(std::int64_t k, std::uint64_t corpus_fingerprint) const {
  nlohmann::json doc;
  doc["tokens"] = tokens_;
  doc["specials"] = {{"UNK", unk_id_}, {"EMPTY", empty_id_}, {"PAD", pad_id_}};
  doc["k"] = k;
  doc["corpus_fingerprint"] = corpus_fingerprint;
  return doc.dump();
}

Vocab Vocab::from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed vocabulary JSON: ") + e.what());
  }
  if (!doc.contains("tokens") || !doc["tokens"].is_array()) {
    throw ParseError("vocabulary JSON missing \"tokens\" array");
  }
  return from_tokens(doc["tokens"].get<std::vector<std::string>>());
}

}  // namespace astlm
