#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace astlm {

/// Immutable token<->id table with UNK/EMPTY/PAD sentinels.
class Vocab {
 public:
  static constexpr std::int64_t kDefaultValueCutoff = 50000;

  /// Every distinct type in the corpus plus {UNK, EMPTY, PAD}.
  /// UNK is reserved for types unseen at train time.
  static Vocab build_types(const std::vector<std::map<std::string, std::int64_t>>& per_file_counts);

  /// The k most frequent value strings plus {UNK, PAD}. EMPTY competes as an
  /// ordinary value. Ties at the cutoff break lexicographically.
  static Vocab build_values(const std::vector<std::map<std::string, std::int64_t>>& per_file_counts,
                            std::int64_t k = kDefaultValueCutoff);

  static Vocab from_tokens(std::vector<std::string> tokens);

  int encode(const std::string& token) const;
  const std::string& decode(int id) const;
  bool contains(const std::string& token) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  int unk_id() const { return unk_id_; }
  int empty_id() const { return empty_id_; }  // -1 when EMPTY not present
  int pad_id() const { return pad_id_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// FNV-1a over the ordered token list; identical corpora give identical
  /// fingerprints.
  std::uint64_t fingerprint() const;

  std::string to_json(std::int64_t k = -1, std::uint64_t corpus_fingerprint = 0) const;
  static Vocab from_json(const std::string& text);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int unk_id_ = -1;
  int empty_id_ = -1;
  int pad_id_ = -1;
};

std::uint64_t fnv1a(const std::string& data);

}  // namespace astlm
