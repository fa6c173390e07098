#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "stepwise/errors.hpp"
#include "stepwise/rng.hpp"
#include "stepwise/text.hpp"

using namespace stepwise;

TEST_CASE("nfkc folds compatibility forms") {
    CHECK(nfkc("３.５０") == "3.50");  // full-width digits
    CHECK(nfkc("½") == "1⁄2");            // vulgar half -> 1⁄2
    CHECK(nfkc("a b") == "a b");               // no-break space
    CHECK(nfkc("plain") == "plain");
}

TEST_CASE("whitespace collapse trims and squeezes") {
    CHECK(collapse_whitespace("  a \t b\n\nc  ") == "a b c");
    CHECK(collapse_whitespace("") == "");
    CHECK(collapse_whitespace(" \n\t ") == "");
    CHECK(trim("  x  ") == "x");
}

TEST_CASE("split_on preserves empty segments and round-trips with join") {
    auto parts = split_on("a::b", ":");
    REQUIRE(parts == std::vector<std::string>{"a", "", "b"});
    CHECK(join(parts, ":") == "a::b");
    CHECK(split_on("", "|") == std::vector<std::string>{""});
    CHECK(split_on("abc", "|") == std::vector<std::string>{"abc"});
    CHECK_THROWS_AS(split_on("x", ""), DomainError);
}

TEST_CASE("rfind_ci finds the last occurrence, case-insensitively") {
    CHECK(rfind_ci("Answer: 1 answer: 2", "ANSWER:") == 10);
    CHECK(rfind_ci("nothing here", "answer:") == std::string::npos);
    CHECK(contains_ci("The Final ANSWER is 7", "the final answer is"));
}

TEST_CASE("canonical_number normalizes plain literals") {
    auto c = [](const std::string& s) { return canonical_number(s); };
    CHECK(c("3.50") == "3.5");
    CHECK(c("007") == "7");
    CHECK(c(".5") == "0.5");
    CHECK(c("5.") == "5");
    CHECK(c("-0") == "0");
    CHECK(c("-0.000") == "0");
    CHECK(c("+42") == "42");
    CHECK(c("0.50") == "0.5");
    CHECK(c("1.05") == "1.05");
    CHECK(c("120") == "120");
    CHECK(c("2,463") == "2463");
    CHECK(c("1,234,567.80") == "1234567.8");
}

TEST_CASE("canonical_number handles scientific notation by magnitude") {
    auto c = [](const std::string& s) { return canonical_number(s); };
    CHECK(c("1.5e3") == "1500");
    CHECK(c("2e-3") == "0.002");
    CHECK(c("1.23E1") == "12.3");
    CHECK(c("1e12") == "1000000000000");
    CHECK(c("1.5e13") == "1.5e13");                // beyond 1e12: stays scientific
    CHECK(c("15000000000000000000") == "1.5e19");  // same value, same form
    CHECK(c("1e-13") == "1e-13");
    CHECK(c("0.0000000000001") == "1e-13");
}

TEST_CASE("canonical_number rejects non-literals") {
    CHECK_FALSE(canonical_number("1,23"));  // bad comma grouping
    CHECK_FALSE(canonical_number("12,3456"));
    CHECK_FALSE(canonical_number(",5"));
    CHECK_FALSE(canonical_number("5,"));
    CHECK_FALSE(canonical_number("1e"));
    CHECK_FALSE(canonical_number("e5"));
    CHECK_FALSE(canonical_number("x=3"));
    CHECK_FALSE(canonical_number("1/2"));  // fractions are a grading concern
    CHECK_FALSE(canonical_number(""));
    CHECK_FALSE(canonical_number("-"));
    CHECK_FALSE(canonical_number("3 "));
}

TEST_CASE("canonical_number is idempotent on random literals") {
    Rng rng(20240817);
    for (int trial = 0; trial < 500; ++trial) {
        std::string s;
        if (rng.bernoulli(0.3)) s += rng.bernoulli(0.5) ? "-" : "+";
        const int int_len = static_cast<int>(rng.below(4));
        for (int i = 0; i < int_len; ++i)
            s += static_cast<char>('0' + rng.below(10));
        bool has_digit = int_len > 0;
        if (rng.bernoulli(0.6)) {
            s += ".";
            const int frac_len = static_cast<int>(rng.below(5));
            for (int i = 0; i < frac_len; ++i)
                s += static_cast<char>('0' + rng.below(10));
            has_digit = has_digit || frac_len > 0;
        }
        if (!has_digit) continue;
        if (rng.bernoulli(0.3)) {
            s += "e";
            if (rng.bernoulli(0.5)) s += "-";
            s += static_cast<char>('1' + rng.below(9));
            s += static_cast<char>('0' + rng.below(10));
        }
        auto once = canonical_number(s);
        REQUIRE(once);
        auto twice = canonical_number(*once);
        REQUIRE(twice);
        CHECK(*once == *twice);
    }
}

TEST_CASE("numeric_value parses literals and simple fractions") {
    REQUIRE(numeric_value("3.5"));
    CHECK(*numeric_value("3.5") == 3.5);
    CHECK(*numeric_value("-2") == -2.0);
    CHECK(*numeric_value("1/2") == 0.5);
    CHECK(*numeric_value("-1/4") == -0.25);
    CHECK(*numeric_value("3 / 4") == 0.75);
    CHECK_FALSE(numeric_value("1/2/3"));
    CHECK_FALSE(numeric_value("1/"));
    CHECK_FALSE(numeric_value("a/b"));
    CHECK_FALSE(numeric_value("two"));
}

TEST_CASE("strip_decoration peels quotes and terminal periods") {
    CHECK(strip_decoration("\"42\"") == "42");
    CHECK(strip_decoration("'3.50'.") == "3.50");
    CHECK(strip_decoration("\\(x=3\\).") == "\\(x=3\\)");
    CHECK(strip_decoration("so...") == "so");
    CHECK(strip_decoration("it's") == "it's");  // unmatched quote survives
    CHECK(strip_decoration("3.5") == "3.5");    // inner period untouched
}

TEST_CASE("normalize_answer composes the full pipeline") {
    CHECK(normalize_answer("  B ") == "b");
    CHECK(normalize_answer("3.50") == "3.5");
    CHECK(normalize_answer("３.５０") == "3.5");
    CHECK(normalize_answer("\"2,463\".") == "2463");
    CHECK(normalize_answer("The Cat  sat") == "the cat sat");
    CHECK(normalize_answer("\\(x = 3\\).") == "\\(x = 3\\)");
    CHECK_THROWS_AS(normalize_answer("   "), EmptyAfterNormalization);
    CHECK_THROWS_AS(normalize_answer("..."), EmptyAfterNormalization);
    CHECK_THROWS_AS(normalize_answer("\"\""), EmptyAfterNormalization);
}

TEST_CASE("normalize_answer is idempotent on mixed inputs") {
    const std::vector<std::string> samples = {
        "42", "3.50", "  spaced   out  ", "Mixed CASE", "'quoted'",
        "1,234.5", "x=3.", "-0.250", "1.5e13", "7/8",
    };
    for (const auto& s : samples) {
        const std::string once = normalize_answer(s);
        CHECK(normalize_answer(once) == once);
    }
}

TEST_CASE("deterministic rng draws are stable across runs") {
    Rng a(7), b(7);
    for (int i = 0; i < 100; ++i) CHECK(a.raw() == b.raw());
    Rng c(7);
    double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    Rng d(9);
    for (int i = 0; i < 1000; ++i) CHECK(d.below(13) < 13);
    CHECK(mix_seed(1, 2) != mix_seed(1, 3));
    CHECK(mix_seed(1, 2) != mix_seed(2, 2));
    CHECK(mix_seed(1, 2) == mix_seed(1, 2));
    CHECK(fnv1a("abc") == 0xe71fa2190541574bull);  // reference FNV-1a vector
}
