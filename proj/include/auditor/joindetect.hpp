#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "auditor/chain.hpp"
#include "auditor/types.hpp"

namespace auditor {

struct JoinDetectionParams {
    std::size_t max_inputs = 17;
    Satoshi fee_floor = 10'000;  // 0.0001 BTC
    std::int64_t fee_rate_num = 1;
    std::int64_t fee_rate_den = 100;

    void validate() const {
        if (max_inputs < 1) throw ConfigError("max_inputs must be >= 1");
        if (fee_floor < 0) throw ConfigError("fee_floor must be >= 0");
        if (fee_rate_den <= 0 || fee_rate_num < 0 || fee_rate_num >= fee_rate_den)
            throw ConfigError("fee_rate must be in [0, 1)");
    }
};

/// Largest fee liquidity providers may have taken from a join with
/// denomination v: max(fee_floor, floor(fee_rate * v)).
inline Satoshi max_fee(Satoshi v, const JoinDetectionParams& p = {}) {
    const auto proportional = static_cast<Satoshi>(static_cast<__int128>(v) * p.fee_rate_num / p.fee_rate_den);
    return std::max(p.fee_floor, proportional);
}

namespace detail {

class BinCoverSearch {
public:
    BinCoverSearch(std::vector<Satoshi> items, std::vector<Satoshi> bins)
        : items_(std::move(items)), bins_(std::move(bins)) {
        suffix_need_.assign(bins_.size() + 1, 0);
        for (std::size_t i = bins_.size(); i-- > 0;) suffix_need_[i] = suffix_need_[i + 1] + bins_[i];
    }

    bool run() { return cover_from(0, 0, total(0)); }

private:
    Satoshi total(std::uint64_t used) const {
        Satoshi s = 0;
        for (std::size_t k = 0; k < items_.size(); ++k)
            if (!(used >> k & 1)) s += items_[k];
        return s;
    }

    // Covers bins [bin, end) with items not in `used`; `free_sum` is their total.
    bool cover_from(std::size_t bin, std::uint64_t used, Satoshi free_sum) {
        if (bin == bins_.size()) return true;
        if (free_sum < suffix_need_[bin]) return false;
        const auto key = (used << 6) | bin;
        if (failed_.contains(key)) return false;
        if (fill(bin, used, free_sum, 0, 0)) return true;
        failed_.insert(key);
        return false;
    }

    // Grows the group for `bin` with items at index >= start; stops growing
    // as soon as the group covers the bin.
    bool fill(std::size_t bin, std::uint64_t used, Satoshi free_sum, std::size_t start, Satoshi group) {
        for (std::size_t j = start; j < items_.size(); ++j) {
            if (used >> j & 1) continue;
            // Equal values are interchangeable: only the first free one may start a branch.
            if (j > start && items_[j] == items_[j - 1] && !(used >> (j - 1) & 1)) continue;
            const auto next_used = used | (std::uint64_t{1} << j);
            const auto next_group = group + items_[j];
            if (next_group >= bins_[bin]) {
                if (cover_from(bin + 1, next_used, free_sum - next_group)) return true;
            } else if (fill(bin, next_used, free_sum, j + 1, next_group)) {
                return true;
            }
        }
        return false;
    }

    std::vector<Satoshi> items_;
    std::vector<Satoshi> bins_;
    std::vector<Satoshi> suffix_need_;
    std::unordered_set<std::uint64_t> failed_;
};

}  // namespace detail

/// True iff pairwise-disjoint groups of `items` can be found whose sums
/// reach every bin's requirement. Exponential in the worst case; branch and
/// bound over bins in descending order with memoized failures on the set of
/// consumed items.
inline bool bin_cover(std::span<const Satoshi> items, std::span<const Satoshi> bins) {
    std::vector<Satoshi> need;
    for (auto b : bins)
        if (b > 0) need.push_back(b);
    if (need.empty()) return true;
    std::vector<Satoshi> vals;
    for (auto v : items)
        if (v > 0) vals.push_back(v);
    if (vals.size() > 58) throw ConfigError("bin_cover supports at most 58 positive items");
    if (need.size() > vals.size()) return false;
    std::sort(need.begin(), need.end(), std::greater<>());
    std::sort(vals.begin(), vals.end(), std::greater<>());
    return detail::BinCoverSearch(std::move(vals), std::move(need)).run();
}

/// Shape of a transaction accepted as a JoinMarket join.
struct JoinShape {
    std::size_t participants = 0;
    Satoshi denomination = 0;
};

/// Applies the JoinMarket filter to a single transaction: no OP_RETURN, at
/// most max_inputs inputs, ceil(|outs|/2) >= 2 participants each holding one
/// output of the most common value, and per-address input sums that can
/// cover every participant's denomination-minus-fee plus change.
inline std::optional<JoinShape> classify_join(const Transaction& tx, const JoinDetectionParams& p = {}) {
    if (tx.coinbase || tx.op_return) return std::nullopt;
    if (tx.inputs.size() > p.max_inputs) return std::nullopt;
    const std::size_t participants = (tx.outputs.size() + 1) / 2;
    if (participants < 2) return std::nullopt;

    std::map<Satoshi, std::size_t> counts;
    for (const auto& o : tx.outputs) ++counts[o.value];
    // Most common value; ties go to the largest value.
    Satoshi v = 0;
    std::size_t best = 0;
    for (const auto& [value, n] : counts)
        if (n >= best) {
            best = n;
            v = value;
        }
    if (best != participants) return std::nullopt;

    std::vector<std::pair<AddressId, Satoshi>> by_address;
    for (const auto& in : tx.inputs) {
        auto it = std::find_if(by_address.begin(), by_address.end(),
                               [&](const auto& e) { return e.first == in.address; });
        if (it == by_address.end())
            by_address.emplace_back(in.address, in.value);
        else
            it->second += in.value;
    }
    std::vector<Satoshi> sums;
    for (const auto& [_, s] : by_address) sums.push_back(s);

    const Satoshi q = max_fee(v, p);
    std::vector<Satoshi> bins(participants, v - q);
    std::size_t i = 0;
    for (const auto& o : tx.outputs)
        if (o.value != v) bins[i++] += o.value;

    if (!bin_cover(sums, bins)) return std::nullopt;
    return JoinShape{participants, v};
}

inline bool is_joinmarket_tx(const Transaction& tx, const JoinDetectionParams& p = {}) {
    return classify_join(tx, p).has_value();
}

/// Detected joins: the near-superset (every transaction passing the filter)
/// and the near-subset (its largest spend-connected component).
class JoinSet {
public:
    JoinSet() = default;

    /// Builds both views from an explicit superset.
    JoinSet(const ChainGraph& g, std::vector<TxIndex> superset) : flags_(g.tx_count(), 0) {
        std::sort(superset.begin(), superset.end());
        superset.erase(std::unique(superset.begin(), superset.end()), superset.end());
        superset_ = std::move(superset);
        for (auto t : superset_) flags_[t.index()] |= kSuper;
        components_ = connected_components(g, superset_);
        component_of_.reserve(superset_.size());
        for (std::size_t c = 0; c < components_.size(); ++c)
            for (auto t : components_[c]) component_of_.emplace(t, c);
        if (!components_.empty()) {
            subset_ = components_.front();
            for (auto t : subset_) flags_[t.index()] |= kSub;
        }
    }

    static JoinSet none() { return JoinSet(); }

    bool in_superset(TxIndex t) const { return t.index() < flags_.size() && (flags_[t.index()] & kSuper); }
    bool in_subset(TxIndex t) const { return t.index() < flags_.size() && (flags_[t.index()] & kSub); }

    std::span<const TxIndex> superset() const { return superset_; }
    std::span<const TxIndex> subset() const { return subset_; }
    const std::vector<std::vector<TxIndex>>& components() const { return components_; }

    /// Index into components() (0 is the subset), if t is in the superset.
    std::optional<std::size_t> component_of(TxIndex t) const {
        const auto it = component_of_.find(t);
        if (it == component_of_.end()) return std::nullopt;
        return it->second;
    }

private:
    static constexpr std::uint8_t kSuper = 1, kSub = 2;
    std::vector<std::uint8_t> flags_;
    std::vector<TxIndex> superset_, subset_;
    std::vector<std::vector<TxIndex>> components_;
    std::unordered_map<TxIndex, std::size_t> component_of_;
};

inline JoinSet detect_joins(const ChainGraph& g, const JoinDetectionParams& p = {}) {
    p.validate();
    std::vector<TxIndex> found;
    for (const auto& t : g.transactions())
        if (is_joinmarket_tx(t, p)) found.push_back(t.index);
    return JoinSet(g, std::move(found));
}

struct JoinCensusRow {
    TxIndex tx;
    std::size_t participants = 0;
    Satoshi denomination = 0;
    std::size_t component = 0;
};

inline std::vector<JoinCensusRow> join_census(const ChainGraph& g, const JoinSet& joins,
                                              const JoinDetectionParams& p = {}) {
    std::vector<JoinCensusRow> rows;
    for (auto t : joins.superset()) {
        const auto shape = classify_join(g.tx(t), p);
        rows.push_back({t, shape ? shape->participants : 0, shape ? shape->denomination : 0,
                        joins.component_of(t).value_or(0)});
    }
    return rows;
}

}  // namespace auditor
