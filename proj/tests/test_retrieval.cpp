#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "recurseq/model.hpp"
#include "recurseq/retrieval.hpp"

using namespace recurseq;

namespace {

GloveTable parse(const std::string& text) {
  std::istringstream in(text);
  return read_glove(in);
}

std::vector<float> random_vector(Rng& rng, std::size_t n) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return v;
}

// Embedder from a small word-vector table through the bag-of-words mean.
SentenceEmbedder bow_embedder(const GloveTable& glove) {
  return [&glove, vocab = glove.vocab()](const std::string& text) {
    const auto tokens = tokenize_words(text);
    if (tokens.empty()) return std::vector<float>(glove.dim, 0.0f);
    return bow_embed<float>(tokens, glove, vocab).storage();
  };
}

}  // namespace

TEST_CASE("word vector text format") {
  const auto g = parse("the 0.1 0.2\ncat -1 2.5e-1\n");
  CHECK(g.dim == 2);
  REQUIRE(g.size() == 2);
  CHECK(g.words[0] == "the");
  CHECK(g.row(0)[0] == doctest::Approx(0.1f));
  CHECK(g.row(1)[1] == doctest::Approx(0.25f));
  CHECK_THROWS_AS(parse("a 1 2\nb 1 2 3\n"), DataError);
  CHECK_THROWS_AS(parse(""), DataError);
  CHECK_THROWS_AS(parse("\n\n"), DataError);
}

TEST_CASE("word vector duplicates and malformed lines") {
  const auto g = parse("a 1 2\nb 3 4\na 5 6\nc x 1\nd\n");
  CHECK(g.size() == 2);
  CHECK(g.duplicates == 1);
  CHECK(g.row(0)[0] == 1.0f);
  CHECK(g.malformed == 2);
}

TEST_CASE("inconsistent width error names the line") {
  try {
    parse("a 1 2\nb 1 2\nc 1 2 3\n");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("cosine examples") {
  const std::vector<float> e1 = {1, 0}, e2 = {0, 1}, ones = {1, 1}, neg = {-1, -1};
  CHECK(cosine(e1, e1) == doctest::Approx(1.0));
  CHECK(cosine(e1, e2) == doctest::Approx(0.0));
  CHECK(cosine(ones, neg) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(cosine(e1, std::vector<float>{1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(cosine(e1, std::vector<float>{0, 0}), DataError);
}

TEST_CASE("cosine properties") {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    const auto a = random_vector(rng, n), b = random_vector(rng, n);
    CHECK(std::abs(cosine(a, a) - 1.0) < 1e-6);
    const double s = std::pow(10.0, rng.uniform(-3, 3));
    std::vector<float> scaled(a);
    for (auto& x : scaled) x = static_cast<float>(x * s);
    CHECK(std::abs(cosine(a, scaled) - 1.0) < 1e-6);
    CHECK(cosine(a, b) == cosine(b, a));
    CHECK(std::abs(cosine(a, b)) <= 1.0);
  }
}

TEST_CASE("knn ranking, ties and clamping") {
  const SentenceEmbedder table = [](const std::string& s) -> std::vector<float> {
    if (s == "x") return {1, 0};
    if (s == "y") return {0, 1};
    if (s == "xy") return {1, 1};
    if (s == "none") return {0, 0};
    return {2, 1};
  };
  const auto index = build_index({"x", "y", "none", "other"}, table);
  CHECK(index.size() == 3);
  CHECK(index.dropped() == 1);
  CHECK_FALSE(index.paired());

  const std::vector<float> q = {1, 0};
  auto top = knn(index, q, 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].index == 0);
  CHECK(top[0].similarity == doctest::Approx(1.0));

  const std::vector<float> diag = {1, 1};
  const auto tie = knn(index, diag, 2);
  // (1,0) and (0,1) tie at 0.7071 but (2,1) beats both
  CHECK(tie[0].index == 2);
  CHECK(tie[1].index == 0);
  const auto two = build_index({"x", "y"}, table);
  CHECK(knn(two, diag, 1)[0].index == 0);
  CHECK(knn(two, diag, 2)[1].similarity == doctest::Approx(std::sqrt(0.5)));

  CHECK(knn(index, q, 10).size() == 3);
  CHECK_THROWS_AS(knn(index, q, 0), std::invalid_argument);
  CHECK_THROWS_AS(knn(index, std::vector<float>{0, 0}, 1), DataError);
  CHECK_THROWS_AS(knn(index, q, 1, MatchStrategy::kMatchInput), std::invalid_argument);
  CHECK_THROWS_AS(build_index({"none"}, table), DataError);
}

TEST_CASE("knn returns a sorted permutation invariant to query scaling") {
  Rng rng(21);
  std::vector<std::vector<float>> vectors;
  std::vector<std::string> names;
  for (int i = 0; i < 40; ++i) {
    vectors.push_back(random_vector(rng, 8));
    names.push_back(std::to_string(i));
  }
  const SentenceEmbedder lookup = [&](const std::string& s) { return vectors[std::stoul(s)]; };
  const auto index = build_index(names, lookup);
  for (int trial = 0; trial < 50; ++trial) {
    const auto q = random_vector(rng, 8);
    const auto all = knn(index, q, index.size());
    std::vector<std::size_t> seen;
    for (std::size_t i = 0; i < all.size(); ++i) {
      seen.push_back(all[i].index);
      if (i) CHECK(all[i - 1].similarity >= all[i].similarity);
    }
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < seen.size(); ++i) CHECK(seen[i] == i);

    const double s = std::pow(10.0, rng.uniform(-4, 4));
    std::vector<float> scaled(q);
    for (auto& x : scaled) x = static_cast<float>(x * s);
    const auto rescaled = knn(index, scaled, index.size());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(rescaled[i].index == all[i].index);
  }
}

TEST_CASE("respond with both strategies") {
  const auto glove = parse("hi 1 0 0\nhello 0 1 0\nthere 0 0 1\nbye 1 1 0\nsee 1 0 0.1\n");
  const auto embed = bow_embedder(glove);
  const auto quotes = build_index({"hello there", "bye", "hi"}, embed);
  CHECK(respond("hi", quotes, embed, MatchStrategy::kMatchResponse) == "hi");
  CHECK(respond("hello there", quotes, embed, MatchStrategy::kMatchResponse) == "hello there");

  const auto single = build_index({"bye"}, embed);
  CHECK(respond("hello", single, embed, MatchStrategy::kMatchResponse) == "bye");

  const auto paired = build_paired_index({{"hi", "hello there"}, {"bye", "see you"}}, embed);
  CHECK(paired.paired());
  CHECK(respond("hi", paired, embed, MatchStrategy::kMatchInput) == "hello there");
  CHECK(respond("hi", paired, embed, MatchStrategy::kMatchResponse) == "see you");
  CHECK_THROWS_AS(respond("unknown words", paired, embed, MatchStrategy::kMatchInput), DataError);
}

TEST_CASE("paired corpus and strategy names") {
  std::istringstream in("hi\thello there\n\nbye\tsee you\n");
  const auto pairs = read_paired_corpus(in);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[1].first == "bye");
  CHECK(pairs[1].second == "see you");
  std::istringstream bad("hi\thello\nno tab here\n");
  try {
    read_paired_corpus(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  for (auto s : {MatchStrategy::kMatchResponse, MatchStrategy::kMatchInput})
    CHECK(parse_match_strategy(match_strategy_name(s)) == s);
  CHECK_THROWS(parse_match_strategy("closest"));
}

TEST_CASE("index building is deterministic") {
  const auto glove = parse("a 0.3 -0.1\nb 0.7 0.2\nc -0.5 0.9\n");
  const auto embed = bow_embedder(glove);
  const std::vector<std::string> quotes = {"a b", "c", "b c a", "zzz"};
  const auto x = build_index(quotes, embed), y = build_index(quotes, embed);
  REQUIRE(x.size() == 3);
  CHECK(x.dropped() == 1);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(x.entries()[i].response_embedding == y.entries()[i].response_embedding);
    CHECK(x.entries()[i].response_norm == y.entries()[i].response_norm);
    CHECK(x.entries()[i].response_norm > 0.0);
  }
}
