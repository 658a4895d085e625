#pragma once

#include <algorithm>
#include <deque>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "auditor/chain.hpp"
#include "auditor/joindetect.hpp"
#include "auditor/union_find.hpp"

namespace auditor {

/// Unique-freshness change heuristic: the one output address seen for the
/// first time in this transaction, provided every other output address was
/// seen before. Single-address outputs have no change.
inline std::optional<AddressId> change_address(const Transaction& t, const ChainGraph& g) {
    if (t.coinbase) return std::nullopt;
    std::optional<AddressId> fresh;
    bool has_seen = false;
    for (const auto& o : t.outputs) {
        if (fresh && o.address == *fresh) continue;
        if (g.is_fresh_in(o.address, t)) {
            if (fresh) return std::nullopt;
            fresh = o.address;
        } else {
            has_seen = true;
        }
    }
    return has_seen ? fresh : std::nullopt;
}

/// Addresses linked by a single non-mix transaction: all input addresses
/// plus the change address.
template <typename Visit>
void for_each_cluster_edge_set(const Transaction& t, const ChainGraph& g, Visit&& visit) {
    if (t.coinbase || t.inputs.empty()) return;
    std::vector<AddressId> linked;
    linked.reserve(t.inputs.size() + 1);
    for (const auto& in : t.inputs) linked.push_back(in.address);
    if (const auto change = change_address(t, g)) linked.push_back(*change);
    visit(linked);
}

/// Least fixpoint of the multi-input and change heuristics starting from
/// `a`, ignoring transactions in the mix set. Worklist form of the
/// recursive clustering step. Returns sorted addresses.
inline std::vector<AddressId> expand_cluster(AddressId a, const ChainGraph& g, const JoinSet& mix) {
    if (!g.has_address(a)) return {a};
    std::unordered_set<AddressId> members{a};
    std::deque<AddressId> work{a};
    auto add = [&](AddressId x) {
        if (members.insert(x).second) work.push_back(x);
    };
    while (!work.empty()) {
        const auto m = work.front();
        work.pop_front();
        for (auto ti : g.spending_txs(m)) {
            if (mix.in_superset(ti)) continue;
            const auto& t = g.tx(ti);
            for (const auto& in : t.inputs) add(in.address);
            if (const auto c = change_address(t, g)) add(*c);
        }
        for (auto ti : g.receiving_txs(m)) {
            if (mix.in_superset(ti)) continue;
            const auto& t = g.tx(ti);
            if (change_address(t, g) == m)
                for (const auto& in : t.inputs) add(in.address);
        }
    }
    std::vector<AddressId> out(members.begin(), members.end());
    std::sort(out.begin(), out.end());
    return out;
}

/// Address -> cluster over a whole chain. Cluster ids are dense and ordered
/// by each cluster's smallest address id.
class ClusterAssignment {
public:
    ClusterAssignment() = default;
    explicit ClusterAssignment(std::vector<ClusterId> of, std::size_t count)
        : of_(std::move(of)), count_(count) {}

    ClusterId cluster_of(AddressId a) const { return of_[a.index()]; }
    std::size_t cluster_count() const { return count_; }
    std::size_t address_count() const { return of_.size(); }

    std::vector<AddressId> members(ClusterId c) const {
        std::vector<AddressId> out;
        for (std::size_t a = 0; a < of_.size(); ++a)
            if (of_[a] == c) out.emplace_back(a);
        return out;
    }

    std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> s(count_, 0);
        for (auto c : of_) ++s[c.index()];
        return s;
    }

private:
    std::vector<ClusterId> of_;
    std::size_t count_ = 0;
};

/// Clusters every address of `g` with union-find over the same edges the
/// fixpoint follows.
inline ClusterAssignment cluster_all(const ChainGraph& g, const JoinSet& mix) {
    UnionFind uf(g.address_count());
    for (const auto& t : g.transactions()) {
        if (mix.in_superset(t.index)) continue;
        for_each_cluster_edge_set(t, g, [&](const std::vector<AddressId>& linked) {
            for (std::size_t i = 1; i < linked.size(); ++i) uf.unite(linked[0].value, linked[i].value);
        });
    }
    std::vector<ClusterId> of(g.address_count());
    std::unordered_map<std::uint32_t, ClusterId> ids;
    for (std::uint32_t a = 0; a < g.address_count(); ++a) {
        const auto root = uf.find(a);
        const auto [it, _] = ids.emplace(root, ClusterId{ids.size()});
        of[a] = it->second;
    }
    return ClusterAssignment(std::move(of), ids.size());
}

/// Assignment view with some addresses forced into other clusters. Used to
/// attribute coins to a simulated owner without rebuilding the chain.
class ClusterOverlay {
public:
    explicit ClusterOverlay(const ClusterAssignment& base) : base_(&base) {}

    void assign(AddressId a, ClusterId c) { overrides_[a] = c; }

    ClusterId cluster_of(AddressId a) const {
        if (const auto it = overrides_.find(a); it != overrides_.end()) return it->second;
        return base_->cluster_of(a);
    }

    /// A cluster id that no base cluster uses.
    ClusterId fresh_cluster() const { return ClusterId{base_->cluster_count()}; }

private:
    const ClusterAssignment* base_;
    std::unordered_map<AddressId, ClusterId> overrides_;
};

}  // namespace auditor
