#include "mtpatcher/text.hpp"

#include <unicode/uchar.h>
#include <unicode/unorm2.h>
#include <unicode/ustring.h>

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace mtpatcher::text {

namespace {

// UTF-8 <-> UTF-16 with U+FFFD substitution so every operation stays total.
std::u16string to_utf16_lossy(std::string_view s) {
    if (s.empty()) return {};
    std::u16string out;
    out.resize(s.size() + 1);
    UErrorCode ec = U_ZERO_ERROR;
    int32_t len = 0;
    u_strFromUTF8WithSub(reinterpret_cast<UChar*>(out.data()),
                         static_cast<int32_t>(out.size()), &len, s.data(),
                         static_cast<int32_t>(s.size()), 0xFFFD, nullptr, &ec);
    if (U_FAILURE(ec) && ec != U_BUFFER_OVERFLOW_ERROR) return {};
    out.resize(static_cast<std::size_t>(len));
    return out;
}

std::string to_utf8(const std::u16string& s) {
    if (s.empty()) return {};
    std::string out;
    out.resize(s.size() * 4 + 1);
    UErrorCode ec = U_ZERO_ERROR;
    int32_t len = 0;
    u_strToUTF8(out.data(), static_cast<int32_t>(out.size()), &len,
                reinterpret_cast<const UChar*>(s.data()),
                static_cast<int32_t>(s.size()), &ec);
    if (U_FAILURE(ec)) return {};
    out.resize(static_cast<std::size_t>(len));
    return out;
}

std::u16string nfc(const std::u16string& in) {
    UErrorCode ec = U_ZERO_ERROR;
    const UNormalizer2* norm = unorm2_getNFCInstance(&ec);
    if (U_FAILURE(ec) || norm == nullptr) return in;
    std::u16string out;
    out.resize(in.size() + 16);
    int32_t len = unorm2_normalize(norm, reinterpret_cast<const UChar*>(in.data()),
                                   static_cast<int32_t>(in.size()),
                                   reinterpret_cast<UChar*>(out.data()),
                                   static_cast<int32_t>(out.size()), &ec);
    if (ec == U_BUFFER_OVERFLOW_ERROR) {
        ec = U_ZERO_ERROR;
        out.resize(static_cast<std::size_t>(len));
        len = unorm2_normalize(norm, reinterpret_cast<const UChar*>(in.data()),
                               static_cast<int32_t>(in.size()),
                               reinterpret_cast<UChar*>(out.data()),
                               static_cast<int32_t>(out.size()), &ec);
    }
    if (U_FAILURE(ec)) return in;
    out.resize(static_cast<std::size_t>(len));
    return out;
}

bool is_space16(const std::u16string& s, std::size_t i, UChar32* cp, std::size_t* next) {
    UChar32 c;
    int32_t idx = static_cast<int32_t>(i);
    U16_NEXT(s.data(), idx, static_cast<int32_t>(s.size()), c);
    *cp = c;
    *next = static_cast<std::size_t>(idx);
    return u_isUWhiteSpace(c) != 0;
}

std::u16string collapse_and_trim(const std::u16string& in) {
    std::u16string out;
    out.reserve(in.size());
    bool pending_space = false;
    std::size_t i = 0;
    while (i < in.size()) {
        UChar32 cp;
        std::size_t next;
        if (is_space16(in, i, &cp, &next)) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(u' ');
            pending_space = false;
            out.append(in, i, next - i);
        }
        i = next;
    }
    return out;
}

}  // namespace

std::string normalize(std::string_view raw) {
    if (raw.empty()) return {};
    return to_utf8(collapse_and_trim(nfc(to_utf16_lossy(raw))));
}

std::string fold_case(std::string_view s) {
    std::u16string in = to_utf16_lossy(s);
    if (in.empty()) return {};
    std::u16string out;
    out.resize(in.size() * 2 + 8);
    UErrorCode ec = U_ZERO_ERROR;
    int32_t len = u_strFoldCase(reinterpret_cast<UChar*>(out.data()),
                                static_cast<int32_t>(out.size()),
                                reinterpret_cast<const UChar*>(in.data()),
                                static_cast<int32_t>(in.size()),
                                U_FOLD_CASE_DEFAULT, &ec);
    if (ec == U_BUFFER_OVERFLOW_ERROR) {
        ec = U_ZERO_ERROR;
        out.resize(static_cast<std::size_t>(len));
        len = u_strFoldCase(reinterpret_cast<UChar*>(out.data()),
                            static_cast<int32_t>(out.size()),
                            reinterpret_cast<const UChar*>(in.data()),
                            static_cast<int32_t>(in.size()),
                            U_FOLD_CASE_DEFAULT, &ec);
    }
    if (U_FAILURE(ec)) return std::string(s);
    out.resize(static_cast<std::size_t>(len));
    return to_utf8(out);
}

bool contains_normalized(std::string_view haystack, std::string_view needle) {
    std::string n = normalize(needle);
    if (n.empty()) return false;
    return normalize(haystack).find(n) != std::string::npos;
}

bool contains_folded(std::string_view haystack, std::string_view needle) {
    std::string n = fold_case(normalize(needle));
    if (n.empty()) return false;
    return fold_case(normalize(haystack)).find(n) != std::string::npos;
}

SpanInterval locate_normalized(std::string_view haystack, std::string_view needle) {
    SpanInterval interval;
    std::string h = normalize(haystack);
    std::string n = normalize(needle);
    if (n.empty()) return interval;
    std::size_t pos = h.find(n);
    if (pos == std::string::npos) return interval;
    interval.found = true;
    interval.begin = pos;
    interval.end = pos + n.size();
    return interval;
}

std::string trim(std::string_view s) {
    std::u16string in = to_utf16_lossy(s);
    std::size_t begin = 0;
    while (begin < in.size()) {
        UChar32 cp;
        std::size_t next;
        if (!is_space16(in, begin, &cp, &next)) break;
        begin = next;
    }
    std::size_t end = in.size();
    while (end > begin) {
        // scan back one code point
        std::size_t prev = end - 1;
        if (prev > begin && U16_IS_TRAIL(in[prev]) && U16_IS_LEAD(in[prev - 1])) --prev;
        UChar32 cp;
        std::size_t next;
        if (!is_space16(in, prev, &cp, &next)) break;
        end = prev;
    }
    return to_utf8(in.substr(begin, end - begin));
}

std::vector<std::string> split_whitespace(std::string_view s) {
    std::u16string in = to_utf16_lossy(s);
    std::vector<std::string> tokens;
    std::u16string current;
    std::size_t i = 0;
    while (i < in.size()) {
        UChar32 cp;
        std::size_t next;
        if (is_space16(in, i, &cp, &next)) {
            if (!current.empty()) {
                tokens.push_back(to_utf8(current));
                current.clear();
            }
        } else {
            current.append(in, i, next - i);
        }
        i = next;
    }
    if (!current.empty()) tokens.push_back(to_utf8(current));
    return tokens;
}

std::vector<std::string_view> split_lines(std::string_view raw) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= raw.size()) {
        std::size_t end = raw.find('\n', start);
        if (end == std::string_view::npos) end = raw.size();
        std::string_view line = raw.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        if (end == raw.size()) break;
        start = end + 1;
    }
    return lines;
}

std::optional<std::string> match_label(std::string_view line, std::string_view label) {
    std::size_t i = 0;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i < line.size() && (line[i] == '-' || line[i] == '*')) {
        ++i;
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    }
    if (line.size() - i < label.size() + 1) return std::nullopt;
    for (std::size_t k = 0; k < label.size(); ++k) {
        char a = line[i + k];
        char b = label[k];
        if (a >= 'A' && a <= 'Z') a = static_cast<char>(a - 'A' + 'a');
        if (b >= 'A' && b <= 'Z') b = static_cast<char>(b - 'A' + 'a');
        if (a != b) return std::nullopt;
    }
    if (line[i + label.size()] != ':') return std::nullopt;
    return trim(line.substr(i + label.size() + 1));
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int digest_len = 0;
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                                EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest.data(), &digest_len) != 1) {
        throw std::runtime_error("sha256 failure");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(digest_len * 2);
    for (unsigned int i = 0; i < digest_len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

}  // namespace mtpatcher::text
