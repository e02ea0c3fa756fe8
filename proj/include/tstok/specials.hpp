#pragma once

namespace tstok {

// Special-token ID layout ahead of the TS block: BOS, SEP, ASK, PAD, four
// task tokens, four option tokens. TS tokens start at kNumSpecials.
namespace special {
inline constexpr int kBos = 0;
inline constexpr int kSep = 1;
inline constexpr int kAsk = 2;
inline constexpr int kPad = 3;
inline constexpr int kTask0 = 4;
inline constexpr int kOpt0 = 8;
}  // namespace special

inline constexpr int kNumSpecials = 12;
inline constexpr int kNumOptions = 4;

}  // namespace tstok
