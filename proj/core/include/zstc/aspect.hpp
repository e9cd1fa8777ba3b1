#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace zstc {

/// Task family a dataset belongs to. New aspects are appended; the tokenizer
/// reserves kMaxAspects special ids so adding one keeps checkpoints loadable.
enum class Aspect : std::uint8_t { sentiment, intent, topic };

inline constexpr std::size_t kAspectCount = 3;
inline constexpr std::size_t kMaxAspects = 8;
inline constexpr std::array<Aspect, kAspectCount> kAllAspects = {Aspect::sentiment, Aspect::intent, Aspect::topic};

std::string_view to_string(Aspect a);
/// Throws DataError on an unknown name.
Aspect parse_aspect(std::string_view name);
inline std::size_t index_of(Aspect a) { return static_cast<std::size_t>(a); }

enum class Split : std::uint8_t { in_domain, out_of_domain };
enum class Partition : std::uint8_t { train, test };

/// Wire names: "in" / "out".
std::string_view to_string(Split s);
Split parse_split(std::string_view name);
std::string_view to_string(Partition p);
Partition parse_partition(std::string_view name);

}  // namespace zstc
