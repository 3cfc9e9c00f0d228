#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace recurseq {

// Byte vocabulary: 0-255 raw bytes, then PAD and EOS.
inline constexpr std::int32_t kPadId = 256;
inline constexpr std::int32_t kEosId = 257;
inline constexpr std::size_t kByteVocabSize = 258;

enum class PaddingMode {
  kBalancedFixed,  // 2^K slots, tokens spread evenly
  kRightFixed,     // 2^K slots, tokens first
  kRightNearest,   // 2^k slots for the smallest k that fits (legacy)
};

std::string_view padding_mode_name(PaddingMode mode);
PaddingMode parse_padding_mode(std::string_view name);

/// A token sequence placed into power-of-two slots.
struct PaddedSequence {
  std::vector<std::int32_t> ids;      // 2^K slots
  std::vector<std::size_t> positions;  // slot of each real token, increasing
  std::size_t original_length = 0;
  int K = 0;  // log2(ids.size())
  int k = 0;  // nearest_pow2(original_length)
  std::int32_t pad_id = kPadId;
};

/// UTF-8 bytes followed by EOS.
std::vector<std::int32_t> tokenize_bytes(std::string_view text);

/// Lowercases, splits on whitespace, and peels the marks .,!?;:'"()- off
/// both ends of every chunk as separate tokens.
std::vector<std::string> tokenize_words(std::string_view text);

/// Smallest k with 2^k >= length. Throws on length 0.
int nearest_pow2(std::size_t length);

/// Token i goes to slot i * 2^(K-k); every other slot is PAD.
PaddedSequence pad_balanced(std::span<const std::int32_t> ids, int K, std::int32_t pad_id = kPadId);

/// Tokens at slots 0..L-1. With `nearest`, the sequence is 2^nearest_pow2(L)
/// long and K is ignored.
PaddedSequence pad_right(std::span<const std::int32_t> ids, int K, bool nearest, std::int32_t pad_id = kPadId);

PaddedSequence pad_sequence(std::span<const std::int32_t> ids, int K, PaddingMode mode,
                            std::int32_t pad_id = kPadId);

/// Recovers the real tokens. Throws std::invalid_argument if the positions
/// and PAD layout are inconsistent.
std::vector<std::int32_t> unpad(const PaddedSequence& seq);

enum class DecodeMode {
  kDisplay,  // invalid UTF-8 replaced with U+FFFD
  kMetric,   // raw bytes
};

/// Reads predictions at the real-token slots and drops EOS/PAD ids.
std::string decode_output(std::span<const std::int32_t> predicted, std::span<const std::size_t> positions,
                          DecodeMode mode = DecodeMode::kDisplay);

/// Replaces every invalid UTF-8 sequence with U+FFFD.
std::string sanitize_utf8(std::string_view bytes);

/// Word ids are rows of a word-vector table; PAD and UNK come after them
/// and both map to frozen zero vectors.
class WordVocab {
 public:
  WordVocab() = default;
  explicit WordVocab(const std::vector<std::string>& words);

  std::int32_t id(const std::string& word) const;
  std::vector<std::int32_t> encode(const std::vector<std::string>& tokens) const;
  bool contains(const std::string& word) const { return index_.count(word) != 0; }
  std::int32_t pad_id() const { return static_cast<std::int32_t>(words_); }
  std::int32_t unk_id() const { return static_cast<std::int32_t>(words_ + 1); }
  std::size_t size() const { return words_ + 2; }

 private:
  std::size_t words_ = 0;
  std::unordered_map<std::string, std::int32_t> index_;
};

}  // namespace recurseq
