#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "auditor/chain.hpp"
#include "auditor/clustering.hpp"
#include "auditor/ingest.hpp"
#include "auditor/joindetect.hpp"
#include "auditor/money.hpp"
#include "auditor/rng.hpp"

namespace auditor {

// --- transaction linkage ----------------------------------------------------

struct LinkageFilters {
    bool two_outputs = true;
    bool regular_addresses_only = true;
    bool fresh_outputs = true;
    bool bitpay_rounding = false;
};

struct LinkageQuery {
    std::vector<Cents> price_set;  // fiat cents, shipping variants included
    UnixTime checkout_time = 0;
    std::int64_t pay_window = 900;
    std::int64_t rate_window_len = 300;
    Satoshi match_tolerance = 100;
    LinkageFilters filters;

    void validate() const {
        if (price_set.empty()) throw ConfigError("price set must not be empty");
        if (pay_window < 0 || rate_window_len < 0) throw ConfigError("windows must be >= 0");
        if (match_tolerance < 0) throw ConfigError("match tolerance must be >= 0");
        for (auto p : price_set)
            if (p <= 0) throw ConfigError("prices must be positive");
    }
};

inline constexpr std::int64_t kDefaultBroadcastSkew = 7200;

/// Broadcast time of every transaction (from the log, falling back to the
/// block timestamp) with a time-sorted index for window scans.
class BroadcastIndex {
public:
    BroadcastIndex() = default;

    BroadcastIndex(const ChainGraph& g, const BroadcastLog& log, std::int64_t max_skew = kDefaultBroadcastSkew)
        : time_(g.tx_count()) {
        for (const auto& t : g.transactions()) {
            UnixTime when = t.time;
            if (const auto it = log.find(t.txid); it != log.end()) {
                if (it->second > t.time + max_skew)
                    throw DataError("broadcast time of " + t.txid + " is later than its block time plus skew");
                when = it->second;
            }
            time_[t.index.index()] = when;
        }
        order_.reserve(g.tx_count());
        for (std::uint32_t i = 0; i < g.tx_count(); ++i) order_.emplace_back(i);
        std::stable_sort(order_.begin(), order_.end(),
                         [this](TxIndex a, TxIndex b) { return time_[a.index()] < time_[b.index()]; });
    }

    UnixTime time_of(TxIndex t) const { return time_[t.index()]; }

    /// Transactions broadcast in [from, to), in time order.
    std::span<const TxIndex> between(UnixTime from, UnixTime to) const {
        auto cmp = [this](TxIndex t, UnixTime x) { return time_[t.index()] < x; };
        const auto lo = std::lower_bound(order_.begin(), order_.end(), from, cmp);
        const auto hi = std::lower_bound(lo, order_.end(), to, cmp);
        return {lo, hi};
    }

private:
    std::vector<UnixTime> time_;
    std::vector<TxIndex> order_;
};

/// Structural filters for e-commerce payments. Coinbase transactions never pass.
inline bool passes_filters(const ChainGraph& g, const Transaction& t, const LinkageFilters& f) {
    if (t.coinbase) return false;
    if (f.two_outputs && t.outputs.size() != 2) return false;
    for (const auto& o : t.outputs) {
        if (f.regular_addresses_only && g.address(o.address).kind != AddressKind::regular) return false;
        if (f.fresh_outputs && !g.is_fresh_in(o.address, t)) return false;
    }
    if (f.bitpay_rounding &&
        std::none_of(t.outputs.begin(), t.outputs.end(), [](const TxOutput& o) { return o.value % 100 == 0; }))
        return false;
    return true;
}

/// Every satoshi amount the payment could have had: each candidate price
/// converted at each rate in the quoting window. Sorted, distinct.
inline std::vector<Satoshi> payment_targets(const RateSeries& rates, const LinkageQuery& q) {
    std::vector<Satoshi> targets;
    for (auto rate : rate_window(rates, q.checkout_time, q.rate_window_len))
        for (auto price : q.price_set) targets.push_back(fiat_to_satoshi(price, rate));
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    return targets;
}

inline bool value_matches(Satoshi value, std::span<const Satoshi> targets, Satoshi tolerance) {
    const auto it = std::lower_bound(targets.begin(), targets.end(), value - tolerance);
    return it != targets.end() && *it <= value + tolerance;
}

inline bool amount_matches(const Transaction& t, std::span<const Satoshi> targets, Satoshi tolerance) {
    return std::any_of(t.outputs.begin(), t.outputs.end(),
                       [&](const TxOutput& o) { return value_matches(o.value, targets, tolerance); });
}

/// Transactions broadcast in [checkout, checkout + pay_window) that pass the
/// enabled filters and have an output within match_tolerance of some price
/// converted at some rate in the quoting window. Sorted by index.
inline std::vector<TxIndex> candidate_transactions(const ChainGraph& g, const BroadcastIndex& broadcasts,
                                                   const RateSeries& rates, const LinkageQuery& q) {
    q.validate();
    const auto targets = payment_targets(rates, q);
    std::vector<TxIndex> out;
    if (targets.empty()) return out;
    for (auto ti : broadcasts.between(q.checkout_time, q.checkout_time + q.pay_window)) {
        const auto& t = g.tx(ti);
        if (passes_filters(g, t, q.filters) && amount_matches(t, targets, q.match_tolerance)) out.push_back(ti);
    }
    std::sort(out.begin(), out.end());
    return out;
}

inline std::vector<TxIndex> candidate_transactions(const ChainGraph& g, const BroadcastLog& log,
                                                   const RateSeries& rates, const LinkageQuery& q) {
    return candidate_transactions(g, BroadcastIndex(g, log), rates, q);
}

struct Decision {
    std::optional<TxIndex> match;  // nullopt: "no such transaction"

    bool is_match() const { return match.has_value(); }
    bool operator==(const Decision&) const = default;
};

/// One candidate: that one. Several: a uniformly random one. None: no such
/// transaction.
inline Decision adversary_decide(std::span<const TxIndex> candidates, Rng& rng) {
    if (candidates.empty()) return {};
    if (candidates.size() == 1) return {candidates.front()};
    return {candidates[rng.uniform_below(candidates.size())]};
}

/// With a payment present: the other candidates plus the payment itself.
/// Without: the number of candidates.
inline std::size_t anonymity_set_size(std::span<const TxIndex> candidates, std::optional<TxIndex> truth) {
    if (!truth) return candidates.size();
    const auto others = static_cast<std::size_t>(
        std::count_if(candidates.begin(), candidates.end(), [&](TxIndex t) { return t != *truth; }));
    return others + 1;
}

// --- cluster intersection -------------------------------------------------

/// Coins that reach `c` through 1..r join hops, where the first hop is the
/// join that created `c`. r = 0 gives {c}. Sorted.
inline std::vector<CoinRef> mixed_ancestry(const ChainGraph& g, const JoinSet& joins, CoinRef c, int r) {
    if (r < 0) throw ConfigError("rounds must be >= 0");
    if (r == 0) return {c};
    std::unordered_set<CoinRef> seen;
    std::unordered_set<TxIndex> expanded;
    std::vector<CoinRef> frontier{c};
    for (int hop = 1; hop <= r && !frontier.empty(); ++hop) {
        std::vector<CoinRef> next;
        for (const auto& coin : frontier) {
            if (!joins.in_superset(coin.tx) || !expanded.insert(coin.tx).second) continue;
            for (const auto& in : g.tx(coin.tx).inputs)
                if (seen.insert(in.prevout).second) next.push_back(in.prevout);
        }
        frontier = std::move(next);
    }
    std::vector<CoinRef> out(seen.begin(), seen.end());
    std::sort(out.begin(), out.end());
    return out;
}

/// W_c: wallet clusters of every coin in the mixed ancestry of `c`. Sorted.
template <typename Assignment>
std::vector<ClusterId> wallet_clusters(const ChainGraph& g, const JoinSet& joins, const Assignment& assignment,
                                       CoinRef c, int r) {
    std::vector<ClusterId> out;
    for (const auto& x : mixed_ancestry(g, joins, c, r)) out.push_back(assignment.cluster_of(g.output(x).address));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

struct IntersectionResult {
    enum class Outcome { unique, incorrect_assumptions, ambiguous };
    Outcome outcome = Outcome::incorrect_assumptions;
    std::vector<ClusterId> clusters;  // the full intersection

    bool is_unique() const { return outcome == Outcome::unique; }
    std::optional<ClusterId> unique_cluster() const {
        if (!is_unique()) return std::nullopt;
        return clusters.front();
    }
};

inline std::string_view to_string(IntersectionResult::Outcome o) {
    switch (o) {
        case IntersectionResult::Outcome::unique: return "unique";
        case IntersectionResult::Outcome::incorrect_assumptions: return "incorrect_assumptions";
        case IntersectionResult::Outcome::ambiguous: return "ambiguous";
    }
    return "?";
}

/// Intersects sorted cluster sets. Size 1 is unique, 0 means the
/// assumptions were wrong, more is ambiguous.
inline IntersectionResult intersect_wallets(std::span<const std::vector<ClusterId>> sets) {
    IntersectionResult result;
    if (sets.empty()) return result;
    std::vector<ClusterId> acc = sets.front();
    for (std::size_t i = 1; i < sets.size() && !acc.empty(); ++i) {
        std::vector<ClusterId> next;
        std::set_intersection(acc.begin(), acc.end(), sets[i].begin(), sets[i].end(), std::back_inserter(next));
        acc = std::move(next);
    }
    result.clusters = std::move(acc);
    if (result.clusters.size() == 1)
        result.outcome = IntersectionResult::Outcome::unique;
    else if (result.clusters.empty())
        result.outcome = IntersectionResult::Outcome::incorrect_assumptions;
    else
        result.outcome = IntersectionResult::Outcome::ambiguous;
    return result;
}

/// Intersects the wallet-cluster sets of coins known to share an owner,
/// assuming at most r rounds of mixing.
template <typename Assignment>
IntersectionResult cluster_intersection(const ChainGraph& g, const JoinSet& joins, const Assignment& assignment,
                                        std::span<const CoinRef> coins, int r) {
    if (coins.empty()) throw ConfigError("cluster intersection needs at least one coin");
    std::vector<std::vector<ClusterId>> sets;
    sets.reserve(coins.size());
    for (const auto& c : coins) sets.push_back(wallet_clusters(g, joins, assignment, c, r));
    return intersect_wallets(sets);
}

}  // namespace auditor
