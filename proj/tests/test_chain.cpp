#include <gtest/gtest.h>

#include <map>
#include <set>

#include "auditor/chain.hpp"
#include "fixtures.hpp"
#include "random_chain.hpp"

namespace auditor {
namespace {

using testing::addr_of;
using testing::ChainSketch;
using testing::tx_of;

// Linear scan over every transaction; independent of the address index.
std::vector<TxIndex> scan_spending(const ChainGraph& g, AddressId a) {
    std::vector<TxIndex> out;
    for (const auto& t : g.transactions())
        for (const auto& in : t.inputs)
            if (in.address == a) {
                out.push_back(t.index);
                break;
            }
    return out;
}

std::vector<TxIndex> scan_paying(const ChainGraph& g, AddressId a) {
    std::vector<TxIndex> out;
    for (const auto& t : g.transactions())
        for (const auto& o : t.outputs)
            if (o.address == a) {
                out.push_back(t.index);
                break;
            }
    return out;
}

TEST(ChainQueries, SpendingFromEdgeCases) {
    const auto g = ChainSketch()
                       .coinbase("c0", 0, {{"a", 100}})
                       .coinbase("c1", 1, {{"b", 100}})
                       .tx("t1", 2, {{"c0", 0}}, {{"x", 90}})
                       .build();
    EXPECT_TRUE(txs_spending_from(g, addr_of(g, "b")).empty());
    EXPECT_EQ(txs_spending_from(g, addr_of(g, "a")), std::vector<TxIndex>{tx_of(g, "t1")});
    EXPECT_TRUE(txs_spending_from(g, AddressId{999u}).empty());
}

TEST(ChainQueries, SpendingFromIsHeightOrdered) {
    // a funds T2 at height 3 and T1 at height 5.
    const auto g = ChainSketch()
                       .coinbase("c0", 0, {{"a", 100}, {"a", 50}})
                       .tx("T2", 3, {{"c0", 1}}, {{"y", 40}})
                       .tx("T1", 5, {{"c0", 0}}, {{"x", 90}})
                       .build();
    const auto a = addr_of(g, "a");
    const auto got = txs_spending_from(g, a);
    EXPECT_EQ(got, (std::vector<TxIndex>{tx_of(g, "T2"), tx_of(g, "T1")}));
    EXPECT_EQ(got, scan_spending(g, a));
}

TEST(ChainQueries, PayingTo) {
    const auto g = ChainSketch()
                       .coinbase("cb", 0, {{"m", 100}})
                       .tx("T3", 1, {{"cb", 0}}, {{"a", 40}, {"z", 50}})
                       .tx("T5", 2, {{"T3", 1}}, {{"w", 45}})
                       .tx("T7", 3, {{"T5", 0}}, {{"a", 40}})
                       .build();
    EXPECT_TRUE(txs_paying_to(g, addr_of(g, "z")).size() == 1);
    EXPECT_EQ(txs_paying_to(g, addr_of(g, "m")), std::vector<TxIndex>{tx_of(g, "cb")});
    const auto a = addr_of(g, "a");
    EXPECT_EQ(txs_paying_to(g, a), (std::vector<TxIndex>{tx_of(g, "T3"), tx_of(g, "T7")}));
    EXPECT_EQ(txs_paying_to(g, a), scan_paying(g, a));
}

TEST(ChainQueries, IndexMatchesLinearScanOnRandomChains) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto g = testing::random_chain(seed, {.txs = 150});
        for (std::uint32_t a = 0; a < g.address_count(); ++a) {
            ASSERT_EQ(txs_spending_from(g, AddressId{a}), scan_spending(g, AddressId{a}));
            ASSERT_EQ(txs_paying_to(g, AddressId{a}), scan_paying(g, AddressId{a}));
        }
    }
}

// BFS over an explicitly materialized undirected adjacency list.
std::set<TxIndex> bfs_oracle(const ChainGraph& g, TxIndex start, int d) {
    std::map<TxIndex, std::set<TxIndex>> adj;
    for (const auto& t : g.transactions())
        for (const auto& in : t.inputs) {
            adj[t.index].insert(in.prevout.tx);
            adj[in.prevout.tx].insert(t.index);
        }
    std::set<TxIndex> seen{start};
    std::vector<TxIndex> layer{start};
    for (int k = 0; k < d; ++k) {
        std::vector<TxIndex> next;
        for (auto t : layer)
            for (auto n : adj[t])
                if (seen.insert(n).second) next.push_back(n);
        layer = next;
    }
    return seen;
}

TEST(ChainQueries, WithinDistance) {
    const auto g = ChainSketch()
                       .coinbase("t0", 0, {{"a", 100}})
                       .tx("t1", 1, {{"t0", 0}}, {{"b", 90}})
                       .tx("t2", 2, {{"t1", 0}}, {{"c", 80}})
                       .coinbase("iso", 3, {{"d", 100}})
                       .build();
    const auto t1 = tx_of(g, "t1");
    EXPECT_EQ(txs_within_distance(g, t1, 0), std::vector<TxIndex>{t1});
    EXPECT_EQ(txs_within_distance(g, tx_of(g, "iso"), 10), std::vector<TxIndex>{tx_of(g, "iso")});
    EXPECT_EQ(txs_within_distance(g, t1, 1), (std::vector<TxIndex>{tx_of(g, "t0"), t1, tx_of(g, "t2")}));
    EXPECT_THROW(txs_within_distance(g, t1, -1), ConfigError);
}

TEST(ChainQueries, WithinDistanceMatchesBfsAndIsMonotone) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto g = testing::random_chain(seed, {.txs = 80});
        for (std::uint32_t t = 0; t < g.tx_count(); t += 7) {
            std::vector<TxIndex> prev;
            for (int d = 0; d <= 4; ++d) {
                const auto got = txs_within_distance(g, TxIndex{t}, d);
                const auto want = bfs_oracle(g, TxIndex{t}, d);
                ASSERT_EQ(std::set<TxIndex>(got.begin(), got.end()), want);
                ASSERT_TRUE(std::includes(got.begin(), got.end(), prev.begin(), prev.end()));
                prev = got;
            }
        }
    }
}

TEST(ChainQueries, ConnectedComponents) {
    const auto g = ChainSketch()
                       .coinbase("c0", 0, {{"a", 100}})
                       .coinbase("c2", 0, {{"b", 100}})
                       .tx("t0", 1, {{"c0", 0}}, {{"x", 90}})
                       .tx("t2", 1, {{"c2", 0}}, {{"z", 90}})
                       .tx("t1", 2, {{"t0", 0}}, {{"y", 80}})
                       .build();
    EXPECT_TRUE(connected_components(g, std::vector<TxIndex>{}).empty());

    const std::vector<TxIndex> lonely{tx_of(g, "t0"), tx_of(g, "t2")};
    EXPECT_EQ(connected_components(g, lonely).size(), 2u);

    const std::vector<TxIndex> all{tx_of(g, "t0"), tx_of(g, "t1"), tx_of(g, "t2"), tx_of(g, "c2")};
    const auto comps = connected_components(g, all);
    ASSERT_EQ(comps.size(), 2u);
    // Equal sizes: lowest minimum height first, then lowest index.
    EXPECT_EQ(comps[0], (std::vector<TxIndex>{tx_of(g, "c2"), tx_of(g, "t2")}));
    EXPECT_EQ(comps[1], (std::vector<TxIndex>{tx_of(g, "t0"), tx_of(g, "t1")}));
}

TEST(ChainQueries, ComponentsArePartitionAgreeingWithBfs) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto g = testing::random_chain(seed, {.txs = 120});
        Rng rng(seed);
        std::vector<TxIndex> subset;
        for (std::uint32_t t = 0; t < g.tx_count(); ++t)
            if (rng.bernoulli(0.4)) subset.emplace_back(t);
        const auto comps = connected_components(g, subset);
        std::set<TxIndex> in_subset(subset.begin(), subset.end()), seen;
        std::size_t total = 0;
        for (std::size_t c = 0; c < comps.size(); ++c) {
            if (c > 0) ASSERT_GE(comps[c - 1].size(), comps[c].size());
            for (auto t : comps[c]) ASSERT_TRUE(seen.insert(t).second);
            total += comps[c].size();
            // Flood fill restricted to the subset reaches exactly this component.
            std::set<TxIndex> reach{comps[c].front()};
            std::vector<TxIndex> stack{comps[c].front()};
            while (!stack.empty()) {
                const auto cur = stack.back();
                stack.pop_back();
                for_each_coin_neighbor(g, cur, [&](TxIndex n) {
                    if (in_subset.contains(n) && reach.insert(n).second) stack.push_back(n);
                });
            }
            ASSERT_EQ(reach, std::set<TxIndex>(comps[c].begin(), comps[c].end()));
        }
        ASSERT_EQ(total, in_subset.size());
        ASSERT_EQ(seen, in_subset);
    }
}

TEST(ChainInvariants, ConservationAndSpendRoundTrip) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto g = testing::random_chain(seed, {.txs = 150});
        for (const auto& t : g.transactions()) {
            if (!t.coinbase) ASSERT_GE(t.fee(), 0);
            for (const auto& in : t.inputs) {
                const auto s = g.spender(in.prevout);
                ASSERT_TRUE(s.has_value());
                ASSERT_EQ(*s, t.index);
                ASSERT_LT(in.prevout.tx, t.index);
            }
            for (std::uint32_t v = 0; v < t.outputs.size(); ++v)
                if (const auto s = g.spender(CoinRef{t.index, v})) {
                    const auto& ins = g.tx(*s).inputs;
                    ASSERT_TRUE(std::any_of(ins.begin(), ins.end(),
                                            [&](const TxInput& in) { return in.prevout == CoinRef{t.index, v}; }));
                }
        }
        for (std::uint32_t a = 0; a < g.address_count(); ++a) {
            const auto& info = g.address(AddressId{a});
            for (auto t : g.spending_txs(AddressId{a})) ASSERT_LE(info.first_seen, g.tx(t).height);
            for (auto t : g.receiving_txs(AddressId{a})) ASSERT_LE(info.first_seen, g.tx(t).height);
        }
    }
}

TEST(ChainBuilder, RejectsDoubleSpendNamingBothTxs) {
    ChainSketch s;
    s.coinbase("cb", 0, {{"a", 100}}).tx("A", 1, {{"cb", 0}}, {{"b", 90}}).tx("B", 1, {{"cb", 0}}, {{"c", 90}});
    try {
        (void)s.build();
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("A"), std::string::npos);
        EXPECT_NE(msg.find("B"), std::string::npos);
    }
}

TEST(ChainBuilder, RejectsValueCreationAndForwardSpends) {
    EXPECT_THROW(ChainSketch().coinbase("cb", 0, {{"a", 100}}).tx("A", 1, {{"cb", 0}}, {{"b", 101}}).build(),
                 DataError);
    EXPECT_THROW(ChainSketch().tx("A", 1, {{"later", 0}}, {{"b", 1}}).coinbase("later", 1, {{"a", 5}}).build(),
                 DataError);
    EXPECT_THROW(ChainSketch().coinbase("cb", 3, {{"a", 1}}).coinbase("cb2", 2, {{"b", 1}}).build(), DataError);
    EXPECT_THROW(ChainSketch().coinbase("cb", 0, {{"a", 1}}).tx("A", 1, {{"cb", 1}}, {{"b", 1}}).build(), DataError);
}

TEST(ChainBuilder, FreshnessCountsSameHeightReferences) {
    const auto g = ChainSketch()
                       .coinbase("cb", 0, {{"a", 100}, {"b", 100}})
                       .tx("t1", 1, {{"cb", 0}}, {{"fresh", 40}, {"shared", 50}})
                       .tx("t2", 1, {{"cb", 1}}, {{"shared", 10}})
                       .build();
    const auto& t1 = g.tx(tx_of(g, "t1"));
    EXPECT_TRUE(g.is_fresh_in(addr_of(g, "fresh"), t1));
    EXPECT_FALSE(g.is_fresh_in(addr_of(g, "shared"), t1));
}

}  // namespace
}  // namespace auditor
