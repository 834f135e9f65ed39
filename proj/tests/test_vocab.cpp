#include <map>

#include "astlm/errors.hpp"
#include "astlm/vocab.hpp"
#include "doctest.h"

using namespace astlm;

namespace {

std::vector<std::map<std::string, std::int64_t>> counts(
    std::map<std::string, std::int64_t> m) {
  return {std::move(m)};
}

}  // namespace

TEST_CASE("type vocab holds every distinct type plus specials") {
  Vocab v = Vocab::build_types(counts({{"A", 3}, {"B", 1}}));
  CHECK(v.contains("A"));
  CHECK(v.contains("B"));
  CHECK(v.unk_id() >= 0);
  CHECK(v.pad_id() >= 0);
  CHECK(v.unk_id() != v.pad_id());
  CHECK(v.size() == 4);
}

TEST_CASE("empty corpus rejected") {
  CHECK_THROWS_AS(Vocab::build_types({}), EmptyCorpusError);
}

TEST_CASE("value vocab keeps the k most frequent, ties lexicographic") {
  Vocab v = Vocab::build_values(counts({{"a", 3}, {"b", 2}, {"c", 1}}), 2);
  CHECK(v.contains("a"));
  CHECK(v.contains("b"));
  CHECK_FALSE(v.contains("c"));

  // Tie at the cutoff: "x" and "y" both have count 2; "x" wins.
  Vocab tied = Vocab::build_values(counts({{"y", 2}, {"x", 2}, {"a", 5}}), 2);
  CHECK(tied.contains("a"));
  CHECK(tied.contains("x"));
  CHECK_FALSE(tied.contains("y"));
}

TEST_CASE("k at least the distinct count keeps everything") {
  Vocab v = Vocab::build_values(counts({{"a", 1}, {"b", 1}}), 100);
  CHECK(v.contains("a"));
  CHECK(v.contains("b"));
}

TEST_CASE("default cutoff is 50000") {
  CHECK(Vocab::kDefaultValueCutoff == 50000);
}

TEST_CASE("EMPTY competes as an ordinary value") {
  Vocab v = Vocab::build_values(counts({{"EMPTY", 10}, {"a", 2}, {"b", 1}}), 2);
  CHECK(v.contains("EMPTY"));
  CHECK(v.empty_id() >= 0);
  CHECK(v.contains("a"));
  CHECK_FALSE(v.contains("b"));
}

TEST_CASE("encode/decode round trip and UNK fallback") {
  Vocab v = Vocab::build_values(counts({{"a", 1}}), 5);
  CHECK(v.decode(v.encode("a")) == "a");
  CHECK(v.encode("zzz") == v.unk_id());
  CHECK_THROWS_AS(v.decode(v.size() + 1), IndexError);
  CHECK_THROWS_AS(v.decode(-1), IndexError);
}

TEST_CASE("frequency dominance: every kept value at least as frequent as every dropped one") {
  std::map<std::string, std::int64_t> m;
  for (int i = 0; i < 40; ++i) m["tok" + std::to_string(i)] = 1 + (i * 7) % 13;
  Vocab v = Vocab::build_values(counts(m), 10);
  std::int64_t min_kept = 1 << 30, max_dropped = 0;
  for (const auto& [token, count] : m) {
    if (v.contains(token)) {
      min_kept = std::min(min_kept, count);
    } else {
      max_dropped = std::max(max_dropped, count);
    }
  }
  CHECK(min_kept >= max_dropped);
}

TEST_CASE("determinism: identical corpus and k give byte-identical files") {
  std::map<std::string, std::int64_t> m{{"a", 3}, {"b", 3}, {"c", 1}};
  Vocab v1 = Vocab::build_values(counts(m), 2);
  Vocab v2 = Vocab::build_values(counts(m), 2);
  CHECK(v1.to_json(2, 99) == v2.to_json(2, 99));
  CHECK(v1.fingerprint() == v2.fingerprint());
}

TEST_CASE("vocabulary JSON round trip") {
  Vocab v = Vocab::build_types(counts({{"A", 1}, {"B", 2}}));
  Vocab back = Vocab::from_json(v.to_json());
  CHECK(back.tokens() == v.tokens());
  CHECK(back.unk_id() == v.unk_id());
  CHECK(back.pad_id() == v.pad_id());
  CHECK(back.fingerprint() == v.fingerprint());
}

TEST_CASE("per-file counts merge before the cutoff") {
  std::vector<std::map<std::string, std::int64_t>> per_file = {
      {{"a", 1}, {"b", 2}},
      {{"a", 2}},
  };
  // a totals 3, b totals 2: k=1 keeps a.
  Vocab v = Vocab::build_values(per_file, 1);
  CHECK(v.contains("a"));
  CHECK_FALSE(v.contains("b"));
}
