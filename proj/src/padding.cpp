#include "recurseq/padding.hpp"

#include <algorithm>
#include <stdexcept>

namespace recurseq {

std::string_view padding_mode_name(PaddingMode mode) {
  switch (mode) {
    case PaddingMode::kBalancedFixed:
      return "balanced_fixed";
    case PaddingMode::kRightFixed:
      return "right_fixed";
    case PaddingMode::kRightNearest:
      return "right_nearest";
  }
  return "?";
}

PaddingMode parse_padding_mode(std::string_view name) {
  if (name == "balanced_fixed") return PaddingMode::kBalancedFixed;
  if (name == "right_fixed") return PaddingMode::kRightFixed;
  if (name == "right_nearest") return PaddingMode::kRightNearest;
  throw std::invalid_argument("unknown padding mode '" + std::string(name) + "'");
}

std::vector<std::int32_t> tokenize_bytes(std::string_view text) {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size() + 1);
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  ids.push_back(kEosId);
  return ids;
}

namespace {

bool is_edge_punct(char c) {
  switch (c) {
    case '.': case ',': case '!': case '?': case ';': case ':':
    case '\'': case '"': case '(': case ')': case '-':
      return true;
    default:
      return false;
  }
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j == i) break;
    std::string chunk(text.substr(i, j - i));
    for (auto& c : chunk)
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    std::size_t lo = 0, hi = chunk.size();
    while (lo < hi && is_edge_punct(chunk[lo])) ++lo;
    while (hi > lo && is_edge_punct(chunk[hi - 1])) --hi;
    for (std::size_t p = 0; p < lo; ++p) tokens.emplace_back(1, chunk[p]);
    if (hi > lo) tokens.push_back(chunk.substr(lo, hi - lo));
    for (std::size_t p = hi; p < chunk.size(); ++p) tokens.emplace_back(1, chunk[p]);
    i = j;
  }
  return tokens;
}

int nearest_pow2(std::size_t length) {
  if (length == 0) throw std::invalid_argument("nearest_pow2: length must be >= 1");
  int k = 0;
  while ((std::size_t{1} << k) < length) ++k;
  return k;
}

namespace {

void check_fits(std::size_t length, int K) {
  if (length == 0) throw std::invalid_argument("padding: empty sequence");
  if (K < 0 || K > 30) throw std::invalid_argument("padding: K out of range");
  if (length > (std::size_t{1} << K)) {
    throw std::invalid_argument("padding: sequence of length " + std::to_string(length) + " exceeds 2^" +
                                std::to_string(K) + " slots");
  }
}

PaddedSequence place(std::span<const std::int32_t> ids, int K, std::size_t stride, std::int32_t pad_id) {
  PaddedSequence seq;
  seq.K = K;
  seq.k = nearest_pow2(ids.size());
  seq.original_length = ids.size();
  seq.pad_id = pad_id;
  seq.ids.assign(std::size_t{1} << K, pad_id);
  seq.positions.resize(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    seq.positions[i] = i * stride;
    seq.ids[i * stride] = ids[i];
  }
  return seq;
}

}  // namespace

PaddedSequence pad_balanced(std::span<const std::int32_t> ids, int K, std::int32_t pad_id) {
  check_fits(ids.size(), K);
  const int k = nearest_pow2(ids.size());
  return place(ids, K, std::size_t{1} << (K - k), pad_id);
}

PaddedSequence pad_right(std::span<const std::int32_t> ids, int K, bool nearest, std::int32_t pad_id) {
  if (nearest) {
    if (ids.empty()) throw std::invalid_argument("padding: empty sequence");
    return place(ids, nearest_pow2(ids.size()), 1, pad_id);
  }
  check_fits(ids.size(), K);
  return place(ids, K, 1, pad_id);
}

PaddedSequence pad_sequence(std::span<const std::int32_t> ids, int K, PaddingMode mode, std::int32_t pad_id) {
  switch (mode) {
    case PaddingMode::kBalancedFixed:
      return pad_balanced(ids, K, pad_id);
    case PaddingMode::kRightFixed:
      return pad_right(ids, K, false, pad_id);
    case PaddingMode::kRightNearest:
      return pad_right(ids, K, true, pad_id);
  }
  throw std::invalid_argument("pad_sequence: bad mode");
}

std::vector<std::int32_t> unpad(const PaddedSequence& seq) {
  if (seq.positions.empty() || seq.original_length != seq.positions.size()) {
    throw std::invalid_argument("unpad: sequence has no real tokens or inconsistent length");
  }
  std::vector<std::uint8_t> real(seq.ids.size(), 0);
  std::vector<std::int32_t> out;
  out.reserve(seq.positions.size());
  for (std::size_t i = 0; i < seq.positions.size(); ++i) {
    const std::size_t p = seq.positions[i];
    if (p >= seq.ids.size() || (i > 0 && p <= seq.positions[i - 1])) {
      throw std::invalid_argument("unpad: corrupted positions at index " + std::to_string(i));
    }
    if (seq.ids[p] == seq.pad_id) throw std::invalid_argument("unpad: PAD found at real-token slot " + std::to_string(p));
    real[p] = 1;
    out.push_back(seq.ids[p]);
  }
  for (std::size_t s = 0; s < seq.ids.size(); ++s) {
    if (!real[s] && seq.ids[s] != seq.pad_id) {
      throw std::invalid_argument("unpad: non-PAD token at unlisted slot " + std::to_string(s));
    }
  }
  return out;
}

std::string sanitize_utf8(std::string_view bytes) {
  static constexpr std::string_view kReplacement = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  const auto byte = [&](std::size_t j) { return static_cast<unsigned char>(bytes[j]); };
  while (i < bytes.size()) {
    const unsigned char c = byte(i);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
      continue;
    } else if (c >= 0xC2 && c <= 0xDF) {
      len = 2, cp = c & 0x1F;
    } else if (c >= 0xE0 && c <= 0xEF) {
      len = 3, cp = c & 0x0F;
    } else if (c >= 0xF0 && c <= 0xF4) {
      len = 4, cp = c & 0x07;
    }
    bool ok = len != 0 && i + len <= bytes.size();
    for (std::size_t j = 1; ok && j < len; ++j) {
      if ((byte(i + j) & 0xC0) != 0x80) ok = false;
      else cp = (cp << 6) | (byte(i + j) & 0x3F);
    }
    if (ok) {
      // Reject overlong forms, surrogates and values past U+10FFFF.
      if ((len == 3 && cp < 0x800) || (len == 4 && (cp < 0x10000 || cp > 0x10FFFF)) ||
          (cp >= 0xD800 && cp <= 0xDFFF)) {
        ok = false;
      }
    }
    if (ok) {
      out.append(bytes.substr(i, len));
      i += len;
    } else {
      out.append(kReplacement);
      ++i;
    }
  }
  return out;
}

std::string decode_output(std::span<const std::int32_t> predicted, std::span<const std::size_t> positions,
                          DecodeMode mode) {
  std::string raw;
  raw.reserve(positions.size());
  for (std::size_t p : positions) {
    if (p >= predicted.size()) throw std::invalid_argument("decode_output: position beyond prediction length");
    const std::int32_t id = predicted[p];
    if (id >= 0 && id < 256) raw.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return mode == DecodeMode::kDisplay ? sanitize_utf8(raw) : raw;
}

WordVocab::WordVocab(const std::vector<std::string>& words) : words_(words.size()) {
  index_.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) index_.emplace(words[i], static_cast<std::int32_t>(i));
}

std::int32_t WordVocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? unk_id() : it->second;
}

std::vector<std::int32_t> WordVocab::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

}  // namespace recurseq
