// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cctype>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "stepwise/errors.hpp"

namespace stepwise {

/// Unicode compatibility normalization (NFKC). Folds full-width digits,
/// ligatures, and exotic spaces into their plain ASCII forms so that answer
/// comparison does not depend on the generating model's character habits.
inline std::string nfkc(const std::string& s) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* norm = icu::Normalizer2::getNFKCInstance(status);
    if (U_FAILURE(status) || norm == nullptr)
        throw DataError("unicode normalizer unavailable");
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(s);
    icu::UnicodeString folded = norm->normalize(u, status);
    if (U_FAILURE(status)) throw DataError("unicode normalization failed");
    std::string out;
    folded.toUTF8String(out);
    return out;
}

inline std::string ascii_lower(std::string s) {
    for (char& c : s)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return s;
}

inline bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
}

inline std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && is_space(s[b])) ++b;
    while (e > b && is_space(s[e - 1])) --e;
    return s.substr(b, e - b);
}

/// Collapses every whitespace run to a single space and trims the ends.
inline std::string collapse_whitespace(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool pending_gap = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_gap = true;
            continue;
        }
        if (pending_gap && !out.empty()) out.push_back(' ');
        pending_gap = false;
        out.push_back(c);
    }
    return out;
}

/// Exact (non-regex) split; the separator must be non-empty. Splitting "a::b"
/// on ":" yields {"a", "", "b"} — empty segments are preserved.
inline std::vector<std::string> split_on(const std::string& s,
                                         const std::string& sep) {
    if (sep.empty()) throw DomainError("split_on: empty separator");
    std::vector<std::string> parts;
    size_t pos = 0;
    while (true) {
        size_t hit = s.find(sep, pos);
        if (hit == std::string::npos) {
            parts.push_back(s.substr(pos));
            break;
        }
        parts.push_back(s.substr(pos, hit - pos));
        pos = hit + sep.size();
    }
    return parts;
}

inline std::string join(const std::vector<std::string>& parts,
                        const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

/// Byte offset of the last case-insensitive occurrence of `pattern`
/// (ASCII case only), or npos.
inline size_t rfind_ci(const std::string& text, const std::string& pattern) {
    if (pattern.empty() || pattern.size() > text.size())
        return std::string::npos;
    return ascii_lower(text).rfind(ascii_lower(pattern));
}

inline bool contains_ci(const std::string& text, const std::string& pattern) {
    return rfind_ci(text, pattern) != std::string::npos;
}

namespace detail {

/// Sign/magnitude decimal: value = (negative ? -1 : 1) * 0.digits * 10^point.
/// `digits` carries no leading or trailing zeros; empty digits means zero.
struct ParsedNumber {
    bool negative = false;
    std::string digits;
    long long point = 0;
};

/// Parses exactly one decimal literal: optional sign, integer digits with
/// optional strict 3-digit comma grouping, optional fraction, optional
/// exponent. Returns nullopt when `s` is anything else ("1,23" has a bad
/// grouping and is treated as a plain string, not a number).
inline std::optional<ParsedNumber> parse_number(const std::string& s) {
    size_t i = 0;
    const size_t n = s.size();
    bool neg = false;
    if (i < n && (s[i] == '+' || s[i] == '-')) {
        neg = s[i] == '-';
        ++i;
    }
    std::string int_digits, frac_digits;
    {
        std::vector<std::string> groups(1);
        bool saw_comma = false;
        while (i < n && (std::isdigit(static_cast<unsigned char>(s[i])) ||
                         s[i] == ',')) {
            if (s[i] == ',') {
                saw_comma = true;
                groups.emplace_back();
            } else {
                groups.back().push_back(s[i]);
            }
            ++i;
        }
        if (saw_comma) {
            if (groups.front().empty() || groups.front().size() > 3)
                return std::nullopt;
            for (size_t g = 1; g < groups.size(); ++g)
                if (groups[g].size() != 3) return std::nullopt;
        }
        for (const auto& g : groups) int_digits += g;
    }
    if (i < n && s[i] == '.') {
        ++i;
        while (i < n && std::isdigit(static_cast<unsigned char>(s[i])))
            frac_digits.push_back(s[i++]);
    }
    if (int_digits.empty() && frac_digits.empty()) return std::nullopt;
    long long exp = 0;
    if (i < n && (s[i] == 'e' || s[i] == 'E')) {
        size_t j = i + 1;
        bool exp_neg = false;
        if (j < n && (s[j] == '+' || s[j] == '-')) {
            exp_neg = s[j] == '-';
            ++j;
        }
        const size_t first_exp_digit = j;
        long long v = 0;
        while (j < n && std::isdigit(static_cast<unsigned char>(s[j]))) {
            v = v * 10 + (s[j] - '0');
            if (v > 1000000) v = 1000000;  // already far past double range
            ++j;
        }
        if (j == first_exp_digit) return std::nullopt;
        exp = exp_neg ? -v : v;
        i = j;
    }
    if (i != n) return std::nullopt;

    ParsedNumber out;
    std::string digits = int_digits + frac_digits;
    long long point = static_cast<long long>(int_digits.size()) + exp;
    size_t lead = 0;
    while (lead < digits.size() && digits[lead] == '0') {
        ++lead;
        --point;
    }
    digits.erase(0, lead);
    while (!digits.empty() && digits.back() == '0') digits.pop_back();
    if (!digits.empty()) {
        out.negative = neg;
        out.digits = digits;
        out.point = point;
    }
    return out;
}

/// Unique rendering per value: shortest plain decimal for magnitudes within
/// 1e±12, scientific mantissa.e±exp beyond. Zero renders as "0", unsigned.
inline std::string render_number(const ParsedNumber& p) {
    if (p.digits.empty()) return "0";
    const long long n = static_cast<long long>(p.digits.size());
    const long long lead_exp = p.point - 1;
    std::string body;
    if (lead_exp > 12 || lead_exp < -12) {
        body = p.digits.substr(0, 1);
        if (n > 1) body += "." + p.digits.substr(1);
        body += "e" + std::to_string(lead_exp);
    } else if (p.point >= n) {
        body = p.digits + std::string(static_cast<size_t>(p.point - n), '0');
    } else if (p.point > 0) {
        body = p.digits.substr(0, static_cast<size_t>(p.point)) + "." +
               p.digits.substr(static_cast<size_t>(p.point));
    } else {
        body = "0." + std::string(static_cast<size_t>(-p.point), '0') +
               p.digits;
    }
    return (p.negative ? "-" : "") + body;
}

inline double parsed_to_double(const ParsedNumber& p) {
    if (p.digits.empty()) return 0.0;
    // Round-trip through strtod on the exact digit string: correctly rounded.
    std::string lit = "0." + p.digits + "e" + std::to_string(p.point);
    double v = std::strtod(lit.c_str(), nullptr);
    return p.negative ? -v : v;
}

}  // namespace detail

/// Canonicalizes a decimal literal: "3.50" -> "3.5", "007" -> "7",
/// ".5" -> "0.5", "-0" -> "0", "2,463" -> "2463", "1.5e3" -> "1500".
/// Returns nullopt when `s` is not exactly one such literal.
inline std::optional<std::string> canonical_number(const std::string& s) {
    auto p = detail::parse_number(s);
    if (!p) return std::nullopt;
    return detail::render_number(*p);
}

/// Numeric value of a literal or a simple fraction "a/b"; nullopt otherwise.
inline std::optional<double> numeric_value(const std::string& s) {
    if (auto p = detail::parse_number(s)) return detail::parsed_to_double(*p);
    const size_t slash = s.find('/');
    if (slash == std::string::npos || slash + 1 >= s.size() ||
        s.find('/', slash + 1) != std::string::npos)
        return std::nullopt;
    auto num = detail::parse_number(trim(s.substr(0, slash)));
    auto den = detail::parse_number(trim(s.substr(slash + 1)));
    if (!num || !den || den->digits.empty()) return std::nullopt;
    return detail::parsed_to_double(*num) / detail::parsed_to_double(*den);
}

/// Peels matching surrounding quotes and sentence-final periods, to a fixed
/// point: "'3.50'." -> 3.50. A terminal period never carries answer content
/// ("3." and "3" canonicalize identically), so stripping is always safe.
inline std::string strip_decoration(std::string s) {
    while (true) {
        const std::string before = s;
        s = trim(s);
        if (s.size() >= 2) {
            const char a = s.front(), b = s.back();
            if ((a == '"' && b == '"') || (a == '\'' && b == '\'') ||
                (a == '`' && b == '`'))
                s = s.substr(1, s.size() - 2);
        }
        while (!s.empty() && s.back() == '.') s.pop_back();
        if (s == before) break;
    }
    return s;
}

/// Canonical answer form used by the grader: compatibility normalization,
/// ASCII lowercasing, whitespace collapsing, decoration stripping, then
/// numeric canonicalization when the remainder is a plain number. Idempotent.
/// Throws EmptyAfterNormalization when nothing survives.
inline std::string normalize_answer(const std::string& raw) {
    std::string s = collapse_whitespace(ascii_lower(nfkc(raw)));
    s = collapse_whitespace(strip_decoration(s));
    if (s.empty())
        throw EmptyAfterNormalization("answer empty after normalization: \"" +
                                      raw + "\"");
    if (auto num = canonical_number(s)) return *num;
    return s;
}

}  // namespace stepwise
