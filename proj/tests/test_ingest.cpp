#include <gtest/gtest.h>

#include <sstream>

#include "auditor/ingest.hpp"
#include "fixtures.hpp"
#include "random_chain.hpp"

namespace auditor {
namespace {

ChainGraph parse_chain(const std::string& text) {
    std::istringstream in(text);
    return read_chain(in);
}

std::string dump_chain(const ChainGraph& g) {
    std::ostringstream out;
    write_chain(g, out);
    return out.str();
}

std::string error_of(const std::string& text) {
    try {
        (void)parse_chain(text);
    } catch (const DataError& e) {
        return e.what();
    }
    return {};
}

const char* kCoinbaseA =
    R"({"txid":"A","height":0,"time":1500000000,"coinbase":true,"op_return":false,"inputs":[],"outputs":[{"addr":"a1","kind":"regular","value":5000}]})";
const char* kSpendB =
    R"({"txid":"B","height":1,"time":1500000600,"coinbase":false,"op_return":false,"inputs":[{"txid":"A","vout":0,"addr":"a1","kind":"regular","value":5000}],"outputs":[{"addr":"b1","kind":"regular","value":4000},{"addr":"b2","kind":"multisig","value":900}]})";

TEST(LoadChain, EmptyFile) {
    const auto g = parse_chain("");
    EXPECT_EQ(g.tx_count(), 0u);
    EXPECT_EQ(g.address_count(), 0u);
}

TEST(LoadChain, SingleCoinbase) {
    const auto g = parse_chain(std::string(kCoinbaseA) + "\n");
    ASSERT_EQ(g.tx_count(), 1u);
    EXPECT_TRUE(g.tx(TxIndex{0u}).coinbase);
    EXPECT_EQ(g.coin_count(), 1u);
    EXPECT_EQ(g.unspent_count(), 1u);
}

TEST(LoadChain, TwoTxCoinEdge) {
    const auto g = parse_chain(std::string(kCoinbaseA) + "\n" + kSpendB + "\n");
    ASSERT_EQ(g.tx_count(), 2u);
    const auto a = *g.find_tx("A");
    const auto b = *g.find_tx("B");
    EXPECT_EQ(g.spender(CoinRef{a, 0}), b);
    EXPECT_EQ(g.tx(b).inputs.at(0).prevout, (CoinRef{a, 0}));
    EXPECT_EQ(g.tx(b).fee(), 100);
    EXPECT_EQ(g.address(*g.find_address("b2")).kind, AddressKind::multisig);
    EXPECT_EQ(g.unspent_count(), 2u);
    EXPECT_EQ(txs_within_distance(g, a, 1), (std::vector<TxIndex>{a, b}));
}

TEST(LoadChain, MalformedLineReportsLineNumber) {
    const auto msg = error_of(std::string(kCoinbaseA) + "\n\n{not json\n");
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    const auto missing = error_of(R"({"txid":"X","height":0})");
    EXPECT_NE(missing.find("line 1"), std::string::npos) << missing;
}

TEST(LoadChain, DoubleSpendNamesBothTransactions) {
    std::string c = kSpendB;
    c.replace(c.find("\"B\""), 3, "\"C\"");
    const auto msg = error_of(std::string(kCoinbaseA) + "\n" + kSpendB + "\n" + c + "\n");
    EXPECT_NE(msg.find("double spend"), std::string::npos) << msg;
    EXPECT_NE(msg.find(" B "), std::string::npos) << msg;
    EXPECT_NE(msg.find(" C"), std::string::npos) << msg;
}

TEST(LoadChain, ForwardReferenceIsAnError) {
    const auto msg = error_of(std::string(kSpendB) + "\n" + kCoinbaseA + "\n");
    EXPECT_NE(msg.find("line 1"), std::string::npos) << msg;
}

TEST(LoadChain, InputMustMatchCreatedOutput) {
    std::string b = kSpendB;
    b.replace(b.find("\"value\":5000"), 12, "\"value\":6000");
    EXPECT_FALSE(error_of(std::string(kCoinbaseA) + "\n" + b + "\n").empty());
}

TEST(LoadChain, SerializeRoundTripIsIdentity) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto g = testing::random_chain(seed, {.txs = 120});
        const auto text = dump_chain(g);
        const auto again = parse_chain(text);
        ASSERT_EQ(again.tx_count(), g.tx_count());
        ASSERT_EQ(again.address_count(), g.address_count());
        ASSERT_EQ(dump_chain(again), text);
        for (std::uint32_t t = 0; t < g.tx_count(); ++t) {
            const auto& x = g.tx(TxIndex{t});
            const auto& y = again.tx(TxIndex{t});
            ASSERT_EQ(x.txid, y.txid);
            ASSERT_EQ(x.inputs.size(), y.inputs.size());
            ASSERT_EQ(x.outputs.size(), y.outputs.size());
            for (std::size_t i = 0; i < x.outputs.size(); ++i) {
                ASSERT_EQ(g.address(x.outputs[i].address).label, again.address(y.outputs[i].address).label);
                ASSERT_EQ(x.outputs[i].value, y.outputs[i].value);
            }
        }
    }
}

RateSeries parse_trades(const std::string& text) {
    std::istringstream in(text);
    return read_trades(in);
}

TEST(LoadTrades, Basics) {
    EXPECT_TRUE(parse_trades("").empty());
    const auto s = parse_trades("1500000000,2500.00,0.5\n");
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s.ticks()[0], (TradeTick{1500000000, 250000}));

    const auto sorted = parse_trades("30,3.00,1\n10,1.00,1\n20,2.00,1\n");
    ASSERT_EQ(sorted.size(), 3u);
    EXPECT_EQ(sorted.ticks()[0].timestamp, 10);
    EXPECT_EQ(sorted.ticks()[2].rate, 300);
}

TEST(LoadTrades, Errors) {
    try {
        (void)parse_trades("10,1.00,1\n20,abc,1\n");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
    }
    EXPECT_THROW((void)parse_trades("10,0,1\n"), DataError);
    EXPECT_THROW((void)parse_trades("10,-5.00,1\n"), DataError);
    EXPECT_THROW((void)parse_trades("10,5.00\n"), DataError);
}

TEST(RateWindow, Examples) {
    const RateSeries one({{100, 777}});
    EXPECT_EQ(rate_window(one, 150, 0), std::vector<Cents>{777});
    EXPECT_TRUE(rate_window(one, 50, 0).empty());
    EXPECT_EQ(rate_window(one, 50, 60), std::vector<Cents>{777});

    const RateSeries dup({{0, 100}, {10, 200}, {20, 200}, {30, 300}});
    EXPECT_EQ(rate_window(dup, 5, 30), (std::vector<Cents>{100, 200, 300}));
    EXPECT_THROW(rate_window(dup, 5, -1), ConfigError);
}

TEST(RateWindow, FiveMinutesOverOneTickPerMinute) {
    std::vector<TradeTick> ticks;
    for (int k = 0; k < 100; ++k) ticks.push_back({1000 + 60 * k, 200000 + k});
    const RateSeries s(ticks);
    for (UnixTime start = 1000 + 60 * 10 + 1; start < 1000 + 60 * 11; start += 7) {
        // Counting oracle: distinct rates strictly inside, plus the one in force at start.
        std::set<Cents> expect;
        for (const auto& t : ticks) {
            if (t.timestamp >= start && t.timestamp < start + 300) expect.insert(t.rate);
            if (t.timestamp <= start && (t.timestamp + 60 > start)) expect.insert(t.rate);
        }
        const auto got = rate_window(s, start, 300);
        EXPECT_EQ(got.size(), 6u);
        EXPECT_EQ(std::set<Cents>(got.begin(), got.end()), expect);
    }
}

TEST(RateWindow, GrowsWithDuration) {
    Rng rng(3);
    std::vector<TradeTick> ticks;
    for (int k = 0; k < 300; ++k) ticks.push_back({rng.uniform_int(0, 5000), rng.uniform_int(1, 50)});
    const RateSeries s(ticks);
    for (int trial = 0; trial < 200; ++trial) {
        const auto start = rng.uniform_int(-100, 5100);
        const auto d1 = rng.uniform_int(0, 400);
        const auto d2 = d1 + rng.uniform_int(0, 400);
        const auto a = rate_window(s, start, d1);
        const auto b = rate_window(s, start, d2);
        ASSERT_TRUE(std::includes(b.begin(), b.end(), a.begin(), a.end()));
    }
}

TEST(BroadcastLog, ParseAndKeepEarliest) {
    std::istringstream in("t1,100\nt2,200\n\nt1,90\n");
    const auto log = read_broadcast_log(in);
    EXPECT_EQ(log.at("t1"), 90);
    EXPECT_EQ(log.at("t2"), 200);
    std::istringstream bad("t1,abc\n");
    EXPECT_THROW(read_broadcast_log(bad), DataError);
}

}  // namespace
}  // namespace auditor
