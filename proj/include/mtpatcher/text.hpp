#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtpatcher::text {

/// Canonical text normalization used before every substring check:
/// Unicode canonical composition (NFC), whitespace runs collapsed to a
/// single ASCII space, ends trimmed. Total and idempotent; bytes that are
/// not valid UTF-8 are replaced with U+FFFD.
std::string normalize(std::string_view raw);

/// Unicode case folding (full folding, e.g. ß -> ss). Total; invalid
/// bytes replaced as in normalize().
std::string fold_case(std::string_view s);

/// True when `needle` occurs in `haystack` after normalizing both sides.
/// Case-sensitive; used for source-language containment.
bool contains_normalized(std::string_view haystack, std::string_view needle);

/// Case-insensitive variant: both sides normalized then case-folded.
/// Used for target-language containment.
bool contains_folded(std::string_view haystack, std::string_view needle);

/// Byte interval [begin, end) of the first occurrence of the normalized
/// needle inside the normalized haystack, or nullopt semantics via ok=false.
struct SpanInterval {
    bool found = false;
    std::size_t begin = 0;
    std::size_t end = 0;

    bool overlaps(const SpanInterval& other) const {
        return found && other.found && begin < other.end && other.begin < end;
    }
};
SpanInterval locate_normalized(std::string_view haystack, std::string_view needle);

/// Leading/trailing ASCII + Unicode whitespace stripped; interior untouched.
std::string trim(std::string_view s);

/// Splits on runs of Unicode whitespace; no empty tokens.
std::vector<std::string> split_whitespace(std::string_view s);

/// Splits on '\n'; a trailing '\r' is dropped from each line. The views
/// alias the input buffer.
std::vector<std::string_view> split_lines(std::string_view raw);

/// Matches "Label: value" lines from LLM completions. Leading whitespace
/// and a single "-"/"*" bullet are skipped; the label is compared
/// ASCII-case-insensitively. Returns the trimmed remainder after the colon,
/// or nullopt when the line does not carry this label.
std::optional<std::string> match_label(std::string_view line, std::string_view label);

/// SHA-256 of the input, lowercase hex.
std::string sha256_hex(std::string_view data);

}  // namespace mtpatcher::text
