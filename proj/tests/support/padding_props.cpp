#include "support/padding_props.hpp"

#include <sstream>

#include "recurseq/padding.hpp"
#include "recurseq/tensor.hpp"

namespace recurseq::testing {

std::vector<std::string> balanced_padding_failures(std::size_t cases, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> failures;
  for (std::size_t c = 0; c < cases; ++c) {
    const int K = static_cast<int>(rng.below(11));
    const std::size_t slots = std::size_t{1} << K;
    const auto L = 1 + static_cast<std::size_t>(rng.below(slots));
    std::vector<std::int32_t> ids(L);
    for (auto& id : ids) id = static_cast<std::int32_t>(rng.below(256));

    const PaddedSequence p = pad_balanced(ids, K);
    int k = 0;
    while ((std::size_t{1} << k) < L) ++k;
    const std::size_t gap = std::size_t{1} << (K - k);

    auto fail = [&](const std::string& what) {
      std::ostringstream os;
      os << "L=" << L << " K=" << K << ": " << what;
      failures.push_back(os.str());
    };
    if (p.ids.size() != slots) { fail("slot count"); continue; }
    if (p.k != k) fail("nearest power");
    if (unpad(p) != ids) fail("round trip");
    if (p.positions.size() != L || p.positions[0] != 0) { fail("first token not at slot 0"); continue; }
    for (std::size_t i = 1; i < L; ++i)
      if (p.positions[i] != p.positions[i - 1] + gap) { fail("gap"); break; }
    std::size_t pads = 0;
    for (auto id : p.ids) pads += id == kPadId;
    if (pads != slots - L) fail("pad count");
  }
  return failures;
}

}  // namespace recurseq::testing
