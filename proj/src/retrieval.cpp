#include "recurseq/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "recurseq/tensor.hpp"

namespace recurseq {

namespace {

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_float(std::string_view s, float& out) {
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

double norm_of(std::span<const float> v) {
  double ss = 0.0;
  for (float x : v) ss += static_cast<double>(x) * x;
  return std::sqrt(ss);
}

}  // namespace

GloveTable read_glove(std::istream& in) {
  GloveTable table;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t line_no = 0;
  std::vector<float> row;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_spaces(line);
    if (fields.empty()) continue;
    if (fields.size() < 2) {
      ++table.malformed;
      continue;
    }
    row.resize(fields.size() - 1);
    bool ok = true;
    for (std::size_t i = 1; i < fields.size() && ok; ++i) ok = parse_float(fields[i], row[i - 1]);
    if (!ok) {
      ++table.malformed;
      continue;
    }
    if (table.dim == 0) {
      table.dim = row.size();
    } else if (row.size() != table.dim) {
      throw DataError("word vectors: line " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                      " values, expected " + std::to_string(table.dim));
    }
    std::string word(fields[0]);
    if (seen.count(word)) {
      ++table.duplicates;
      continue;
    }
    seen.emplace(word, table.words.size());
    table.words.push_back(std::move(word));
    table.vectors.insert(table.vectors.end(), row.begin(), row.end());
  }
  if (table.words.empty()) throw DataError("word vectors: no vectors found");
  if (table.duplicates) std::cerr << "warning: " << table.duplicates << " duplicate word(s) ignored\n";
  if (table.malformed) std::cerr << "warning: " << table.malformed << " malformed line(s) skipped\n";
  return table;
}

GloveTable load_glove(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open word vectors " + path.string());
  return read_glove(in);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine: sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  const double na = norm_of(a), nb = norm_of(b);
  if (na == 0.0 || nb == 0.0) throw DataError("cosine: zero vector");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

QuoteIndex::QuoteIndex(std::vector<IndexEntry> entries, std::size_t dropped)
    : entries_(std::move(entries)), dropped_(dropped) {}

bool QuoteIndex::paired() const {
  return !entries_.empty() && std::all_of(entries_.begin(), entries_.end(),
                                          [](const IndexEntry& e) { return e.input.has_value(); });
}

QuoteIndex build_index(const std::vector<std::string>& quotes, const SentenceEmbedder& embed) {
  if (quotes.empty()) throw DataError("build_index: empty corpus");
  std::vector<IndexEntry> entries;
  std::size_t dropped = 0;
  for (const auto& q : quotes) {
    IndexEntry e;
    e.response = q;
    e.response_embedding = embed(q);
    e.response_norm = norm_of(e.response_embedding);
    if (e.response_norm == 0.0) {
      ++dropped;
      continue;
    }
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw DataError("build_index: every line embedded to a zero vector");
  if (dropped) std::cerr << "warning: " << dropped << " line(s) with zero embedding dropped\n";
  return QuoteIndex(std::move(entries), dropped);
}

QuoteIndex build_paired_index(const std::vector<std::pair<std::string, std::string>>& pairs,
                              const SentenceEmbedder& embed) {
  if (pairs.empty()) throw DataError("build_index: empty corpus");
  std::vector<IndexEntry> entries;
  std::size_t dropped = 0;
  for (const auto& [input, response] : pairs) {
    IndexEntry e;
    e.input = input;
    e.response = response;
    e.input_embedding = embed(input);
    e.input_norm = norm_of(e.input_embedding);
    e.response_embedding = embed(response);
    e.response_norm = norm_of(e.response_embedding);
    if (e.input_norm == 0.0 || e.response_norm == 0.0) {
      ++dropped;
      continue;
    }
    entries.push_back(std::move(e));
  }
  if (entries.empty()) throw DataError("build_index: every pair embedded to a zero vector");
  if (dropped) std::cerr << "warning: " << dropped << " pair(s) with zero embedding dropped\n";
  return QuoteIndex(std::move(entries), dropped);
}

std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::pair<std::string, std::string>> read_paired_corpus(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("paired corpus: line " + std::to_string(line_no) + " has no tab");
    pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return pairs;
}

std::string_view match_strategy_name(MatchStrategy s) {
  return s == MatchStrategy::kMatchInput ? "match_input" : "match_response";
}

MatchStrategy parse_match_strategy(std::string_view name) {
  if (name == "match_response") return MatchStrategy::kMatchResponse;
  if (name == "match_input") return MatchStrategy::kMatchInput;
  throw std::invalid_argument("unknown match strategy '" + std::string(name) + "'");
}

std::vector<Neighbor> knn(const QuoteIndex& index, std::span<const float> query, std::size_t k,
                          MatchStrategy strategy) {
  if (k == 0) throw std::invalid_argument("knn: k must be >= 1");
  if (strategy == MatchStrategy::kMatchInput && !index.paired()) {
    throw std::invalid_argument("knn: match_input needs an index with inputs");
  }
  const double qn = norm_of(query);
  if (qn == 0.0) throw DataError("knn: zero query vector");
  std::vector<Neighbor> all;
  all.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const IndexEntry& e = index.entries()[i];
    const auto& v = strategy == MatchStrategy::kMatchInput ? e.input_embedding : e.response_embedding;
    const double n = strategy == MatchStrategy::kMatchInput ? e.input_norm : e.response_norm;
    if (v.size() != query.size()) {
      throw std::invalid_argument("knn: query has " + std::to_string(query.size()) + " dims, index has " +
                                  std::to_string(v.size()));
    }
    double dot = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) dot += static_cast<double>(v[j]) * query[j];
    all.push_back({i, std::clamp(dot / (n * qn), -1.0, 1.0)});
  }
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.similarity > b.similarity || (a.similarity == b.similarity && a.index < b.index);
                    });
  all.resize(k);
  return all;
}

std::string respond(const std::string& query, const QuoteIndex& index, const SentenceEmbedder& embed,
                    MatchStrategy strategy) {
  const auto q = embed(query);
  const auto best = knn(index, q, 1, strategy);
  return index.entries()[best.front().index].response;
}

}  // namespace recurseq
