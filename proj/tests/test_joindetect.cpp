#include <gtest/gtest.h>

#include "auditor/joindetect.hpp"
#include "auditor/rng.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "random_chain.hpp"

namespace auditor {
namespace {

using testing::bin_cover_oracle;
using testing::ChainSketch;
using testing::tx_of;

std::vector<Satoshi> random_values(Rng& rng, std::size_t lo, std::size_t hi, Satoshi max_value) {
    std::vector<Satoshi> out(lo + rng.uniform_below(hi - lo + 1));
    for (auto& v : out) v = 1 + static_cast<Satoshi>(rng.uniform_below(static_cast<std::uint64_t>(max_value)));
    return out;
}

TEST(MaxFee, Examples) {
    EXPECT_EQ(max_fee(0), 10'000);
    EXPECT_EQ(max_fee(1'000'000), 10'000);
    EXPECT_EQ(max_fee(5'000'000), 50'000);
    EXPECT_EQ(max_fee(5'000'099), 50'000);
    JoinDetectionParams p;
    p.fee_floor = 0;
    p.fee_rate_num = 3;
    p.fee_rate_den = 1000;
    EXPECT_EQ(max_fee(1'000, p), 3);
}

TEST(MaxFee, ParamValidation) {
    JoinDetectionParams p;
    p.fee_rate_num = 1;
    p.fee_rate_den = 1;
    EXPECT_THROW(p.validate(), ConfigError);
    p = {};
    p.max_inputs = 0;
    EXPECT_THROW(p.validate(), ConfigError);
}

TEST(BinCover, Examples) {
    const std::vector<Satoshi> ten{10}, five_four{5, 4}, sevens{7, 6, 3};
    EXPECT_TRUE(bin_cover(ten, std::vector<Satoshi>{10}));
    EXPECT_FALSE(bin_cover(five_four, std::vector<Satoshi>{10}));
    EXPECT_TRUE(bin_cover(sevens, std::vector<Satoshi>{9, 7}));
    EXPECT_FALSE(bin_cover(sevens, std::vector<Satoshi>{9, 8}));
    EXPECT_TRUE(bin_cover(sevens, std::vector<Satoshi>{0}));
    EXPECT_FALSE(bin_cover(std::vector<Satoshi>{}, std::vector<Satoshi>{1}));
}

TEST(BinCover, MatchesExhaustiveOracle) {
    Rng rng(20170101);
    int positives = 0;
    for (int trial = 0; trial < 3000; ++trial) {
        const auto items = random_values(rng, 0, 8, 20);
        const auto bins = random_values(rng, 1, 4, 30);
        const bool expect = bin_cover_oracle(items, bins);
        positives += expect;
        ASSERT_EQ(bin_cover(items, bins), expect) << "trial " << trial;
    }
    // Both outcomes must be well represented for the comparison to mean anything.
    EXPECT_GT(positives, 600);
    EXPECT_LT(positives, 2400);
}

TEST(BinCover, MonotoneInItemsAndBins) {
    Rng rng(77);
    for (int trial = 0; trial < 2000; ++trial) {
        auto items = random_values(rng, 1, 8, 20);
        auto bins = random_values(rng, 1, 4, 30);
        if (!bin_cover(items, bins)) continue;
        auto bigger = items;
        bigger[rng.uniform_below(bigger.size())] += 1 + static_cast<Satoshi>(rng.uniform_below(10));
        ASSERT_TRUE(bin_cover(bigger, bins));
        auto smaller = bins;
        auto& b = smaller[rng.uniform_below(smaller.size())];
        b = std::max<Satoshi>(0, b - 1 - static_cast<Satoshi>(rng.uniform_below(10)));
        ASSERT_TRUE(bin_cover(items, smaller));
    }
}

TEST(BinCover, SeventeenInputsStayFast) {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
        const auto items = random_values(rng, 17, 17, 1'000'000);
        const auto bins = random_values(rng, 8, 9, 2'000'000);
        (void)bin_cover(items, bins);
    }
    std::vector<Satoshi> many(59, 1);
    EXPECT_THROW((void)bin_cover(many, std::vector<Satoshi>{1}), ConfigError);
}

Transaction make_tx(std::vector<std::pair<std::uint32_t, Satoshi>> inputs, std::vector<Satoshi> outputs) {
    Transaction t;
    for (std::uint32_t i = 0; i < inputs.size(); ++i)
        t.inputs.push_back({CoinRef{TxIndex{0u}, i}, AddressId{inputs[i].first}, inputs[i].second});
    for (std::uint32_t o = 0; o < outputs.size(); ++o) t.outputs.push_back({AddressId{100 + o}, outputs[o]});
    return t;
}

TEST(IsJoinmarketTx, Examples) {
    const std::vector<Satoshi> outs{1'000'000, 1'000'000, 150'000, 90'000};
    // Two inputs from address 1 sum to 1,160,000.
    const auto yes = make_tx({{1, 1'000'000}, {1, 160'000}, {2, 1'080'000}}, outs);
    EXPECT_TRUE(is_joinmarket_tx(yes));
    const auto shape = classify_join(yes);
    ASSERT_TRUE(shape);
    EXPECT_EQ(shape->participants, 2u);
    EXPECT_EQ(shape->denomination, 1'000'000);

    EXPECT_FALSE(is_joinmarket_tx(make_tx({{1, 1'160'000}, {2, 1'000'000}}, outs)));
    EXPECT_FALSE(is_joinmarket_tx(make_tx({{1, 5'000'000}}, {1'000'000, 3'990'000})));

    auto with_op_return = yes;
    with_op_return.op_return = true;
    EXPECT_FALSE(is_joinmarket_tx(with_op_return));
}

TEST(IsJoinmarketTx, InputCutoff) {
    std::vector<std::pair<std::uint32_t, Satoshi>> ins;
    for (std::uint32_t i = 0; i < 18; ++i) ins.push_back({i, 100'000});
    const auto t = make_tx(ins, {800'000, 800'000, 100'000, 99'000});
    EXPECT_FALSE(is_joinmarket_tx(t));
    JoinDetectionParams p;
    p.max_inputs = 18;
    EXPECT_TRUE(is_joinmarket_tx(t, p));
}

TEST(IsJoinmarketTx, SweepAndTieBreak) {
    // 2n - 1 outputs: the sweeping participant has no change.
    EXPECT_TRUE(is_joinmarket_tx(make_tx({{1, 500'000}, {2, 700'000}}, {500'000, 500'000, 199'000})));
    // Two values appear twice; the larger is the denomination, and then the
    // smaller pair are change outputs for both participants.
    EXPECT_TRUE(is_joinmarket_tx(make_tx({{1, 400'000}, {2, 400'000}}, {300'000, 300'000, 90'000, 90'000})));
    const auto shape = classify_join(make_tx({{1, 400'000}, {2, 400'000}}, {300'000, 300'000, 90'000, 90'000}));
    ASSERT_TRUE(shape);
    EXPECT_EQ(shape->denomination, 300'000);
    // Three equal outputs but only two participants.
    EXPECT_FALSE(is_joinmarket_tx(make_tx({{1, 400'000}, {2, 400'000}}, {200'000, 200'000, 200'000, 100'000})));
}

// A run of joins where each one spends an equal output of the previous join
// plus a fresh coinbase coin.
void add_join_chain(ChainSketch& s, const std::string& name, int length, Height h0) {
    const Satoshi v = 1'000'000, c = 3'000'000;
    s.coinbase(name + "cb0", h0, {{name + "seed", v}});
    std::pair<std::string, std::uint32_t> carried{name + "cb0", 0};
    for (int k = 1; k <= length; ++k) {
        const auto id = name + "j" + std::to_string(k);
        const auto cb = name + "cb" + std::to_string(k);
        s.coinbase(cb, h0 + k, {{name + "m" + std::to_string(k), c}});
        s.tx(id, h0 + k, {carried, {cb, 0}},
             {{id + "o0", v}, {id + "o1", v}, {id + "ch", c - v - 5'000}});
        carried = {id, 0};
    }
}

TEST(DetectJoins, NoJoins) {
    const auto g = testing::random_chain(4, {.txs = 150, .join_like = 0.0});
    const auto joins = detect_joins(g);
    for (auto t : joins.superset()) EXPECT_EQ(g.tx(t).outputs.size() >= 3, true);
    ChainSketch s;
    s.coinbase("c", 0, {{"a", 5'000}}).tx("p", 1, {{"c", 0}}, {{"b", 3'000}, {"d", 1'900}});
    const auto plain = detect_joins(s.build());
    EXPECT_TRUE(plain.superset().empty());
    EXPECT_TRUE(plain.subset().empty());
}

TEST(DetectJoins, SubsetIsLargestComponent) {
    ChainSketch s;
    add_join_chain(s, "x", 3, 0);
    add_join_chain(s, "y", 5, 10);
    const auto g = s.build();
    const auto joins = detect_joins(g);
    ASSERT_EQ(joins.superset().size(), 8u);
    ASSERT_EQ(joins.subset().size(), 5u);
    for (int k = 1; k <= 5; ++k) EXPECT_TRUE(joins.in_subset(tx_of(g, "yj" + std::to_string(k))));
    for (int k = 1; k <= 3; ++k) {
        const auto t = tx_of(g, "xj" + std::to_string(k));
        EXPECT_TRUE(joins.in_superset(t));
        EXPECT_FALSE(joins.in_subset(t));
        EXPECT_EQ(joins.component_of(t), 1u);
    }
    const auto census = join_census(g, joins);
    ASSERT_EQ(census.size(), 8u);
    for (const auto& row : census) {
        EXPECT_EQ(row.participants, 2u);
        EXPECT_EQ(row.denomination, 1'000'000);
    }
}

TEST(DetectJoins, EqualComponentsPreferEarliest) {
    ChainSketch s;
    add_join_chain(s, "x", 2, 0);
    add_join_chain(s, "y", 2, 10);
    const auto g = s.build();
    const auto joins = detect_joins(g);
    ASSERT_EQ(joins.subset().size(), 2u);
    EXPECT_TRUE(joins.in_subset(tx_of(g, "xj1")));
}

TEST(DetectJoins, PureFunctionOfTransaction) {
    const auto g = testing::random_chain(8, {.txs = 300, .join_like = 0.3});
    const auto joins = detect_joins(g);
    for (const auto& t : g.transactions()) {
        auto copy = t;
        copy.txid = "renamed";
        copy.height += 1000;
        EXPECT_EQ(is_joinmarket_tx(copy), joins.in_superset(t.index));
    }
}

}  // namespace
}  // namespace auditor
