#include <gtest/gtest.h>

#include "auditor/money.hpp"
#include "auditor/rng.hpp"

namespace auditor {
namespace {

TEST(Money, RoundHalfEven) {
    EXPECT_EQ(div_round_half_even(5, 2), 2);
    EXPECT_EQ(div_round_half_even(7, 2), 4);
    EXPECT_EQ(div_round_half_even(-5, 2), -2);
    EXPECT_EQ(div_round_half_even(10, 4), 2);
    EXPECT_EQ(div_round_half_even(11, 4), 3);
}

TEST(Money, FiatToSatoshi) {
    // $24.99 at $2,500.00/BTC = 0.009996 BTC
    EXPECT_EQ(fiat_to_satoshi(2499, 250000), 999'600);
    // 1 cent at 3 cents/BTC: 33,333,333.33.. -> 33,333,333
    EXPECT_EQ(fiat_to_satoshi(1, 3), 33'333'333);
    // Exact half: 1 cent at 2e8+... choose rate 200,000,000 -> 0.5 sat -> 0
    EXPECT_EQ(fiat_to_satoshi(1, 200'000'000), 0);
    EXPECT_EQ(fiat_to_satoshi(3, 200'000'000), 2);
}

TEST(Money, ParseDecimalCents) {
    EXPECT_EQ(parse_decimal_cents("2500.00"), 250000);
    EXPECT_EQ(parse_decimal_cents("2500"), 250000);
    EXPECT_EQ(parse_decimal_cents("2500.5"), 250050);
    EXPECT_EQ(parse_decimal_cents("0.125"), 12);   // half to even
    EXPECT_EQ(parse_decimal_cents("0.135"), 14);
    EXPECT_EQ(parse_decimal_cents("-1.50"), -150);
    EXPECT_EQ(parse_decimal_cents(".5"), 50);
    EXPECT_FALSE(parse_decimal_cents("abc"));
    EXPECT_FALSE(parse_decimal_cents("1e5"));
    EXPECT_FALSE(parse_decimal_cents(""));
    EXPECT_FALSE(parse_decimal_cents("."));
    EXPECT_EQ(format_cents(250050), "2500.50");
    EXPECT_EQ(format_cents(7), "0.07");
}

TEST(Rng, SameSeedSameStream) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next(), b.next());
    // First output of mt19937_64 with the default seed is fixed by the standard.
    Rng d(5489);
    EXPECT_EQ(d.next(), 14514284786278117030ULL);
}

TEST(Rng, UniformBelowCoversRange) {
    Rng r(7);
    std::vector<int> counts(6, 0);
    for (int i = 0; i < 60000; ++i) ++counts[r.uniform_below(6)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Rng, DerivedSeedsDiffer) {
    EXPECT_NE(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
    EXPECT_NE(derive_seed(1, 1, 0), derive_seed(1, 0, 1));
    EXPECT_EQ(derive_seed(9, 3, 4), derive_seed(9, 3, 4));
}

}  // namespace
}  // namespace auditor
