#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "recurseq/word_vectors.hpp"

namespace recurseq {

/// a.b / (|a||b|). Throws std::invalid_argument on mismatched sizes and
/// DataError on a zero vector.
double cosine(std::span<const float> a, std::span<const float> b);

using SentenceEmbedder = std::function<std::vector<float>(const std::string&)>;

struct IndexEntry {
  std::optional<std::string> input;
  std::string response;
  std::vector<float> response_embedding;
  double response_norm = 0.0;
  std::vector<float> input_embedding;  // empty without an input
  double input_norm = 0.0;
};

/// Immutable after construction; safe to query from several threads.
class QuoteIndex {
 public:
  QuoteIndex() = default;
  QuoteIndex(std::vector<IndexEntry> entries, std::size_t dropped);

  const std::vector<IndexEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t dropped() const { return dropped_; }
  bool paired() const;

 private:
  std::vector<IndexEntry> entries_;
  std::size_t dropped_ = 0;
};

/// One entry per quote; lines whose embedding is all zeros are dropped.
QuoteIndex build_index(const std::vector<std::string>& quotes, const SentenceEmbedder& embed);

/// Paired (input, response) entries. An entry is dropped if either side
/// embeds to zero.
QuoteIndex build_paired_index(const std::vector<std::pair<std::string, std::string>>& pairs,
                              const SentenceEmbedder& embed);

/// Lines of "input<TAB>response". Throws DataError naming the first line
/// without a tab.
std::vector<std::pair<std::string, std::string>> read_paired_corpus(std::istream& in);
std::vector<std::string> read_lines(std::istream& in);

enum class MatchStrategy { kMatchResponse, kMatchInput };

std::string_view match_strategy_name(MatchStrategy s);
MatchStrategy parse_match_strategy(std::string_view name);

struct Neighbor {
  std::size_t index = 0;
  double similarity = 0.0;
};

/// Top-k by cosine, descending, ties to the lower index; k is clamped to the
/// index size.
std::vector<Neighbor> knn(const QuoteIndex& index, std::span<const float> query, std::size_t k,
                          MatchStrategy strategy = MatchStrategy::kMatchResponse);

std::string respond(const std::string& query, const QuoteIndex& index, const SentenceEmbedder& embed,
                    MatchStrategy strategy);

}  // namespace recurseq
