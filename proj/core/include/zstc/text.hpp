#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace zstc::text {

std::string trim(std::string_view s);
std::string casefold(std::string_view s);

/// Case-fold, trim, and collapse internal whitespace runs to one space.
std::string canonical(std::string_view s);

bool has_alpha(std::string_view s);

/// Maximal runs of ASCII alphanumerics, case-folded.
std::vector<std::string> alnum_tokens(std::string_view s);

/// Union of alnum_tokens over a set of labels.
std::set<std::string> token_set(const std::vector<std::string>& labels);

std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace zstc::text
