#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nmt {

using TokenId = std::int32_t;
using TokenIds = std::vector<TokenId>;

// Reserved ids shared by every vocabulary.
inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kBosId = 2;
inline constexpr TokenId kEosId = 3;
inline constexpr TokenId kNumSpecials = 4;

inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kBosToken = "<s>";
inline constexpr const char* kEosToken = "</s>";

}  // namespace nmt
