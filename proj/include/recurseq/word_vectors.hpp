#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <unordered_map>
#include <vector>

#include "recurseq/padding.hpp"

namespace recurseq {

/// Pre-trained word vectors in the whitespace-separated text format
/// ("word f1 f2 ... fd" per line).
struct GloveTable {
  std::vector<std::string> words;
  std::vector<float> vectors;  // words.size() x dim, row-major
  std::size_t dim = 0;
  std::size_t duplicates = 0;  // later duplicates are dropped, first wins
  std::size_t malformed = 0;   // lines that failed to parse and were skipped

  std::size_t size() const { return words.size(); }
  std::span<const float> row(std::size_t i) const { return {vectors.data() + i * dim, dim}; }
  WordVocab vocab() const { return WordVocab(words); }
};

/// Throws DataError on an empty table or a row whose width differs from the
/// first row's.
GloveTable read_glove(std::istream& in);
GloveTable load_glove(const std::filesystem::path& path);

}  // namespace recurseq
