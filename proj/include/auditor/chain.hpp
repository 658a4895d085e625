#pragma once

#include <algorithm>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "auditor/types.hpp"
#include "auditor/union_find.hpp"

namespace auditor {

struct TxInput {
    CoinRef prevout;
    AddressId address;
    Satoshi value = 0;
};

struct TxOutput {
    AddressId address;
    Satoshi value = 0;
};

struct Transaction {
    std::string txid;
    TxIndex index;
    Height height = 0;
    UnixTime time = 0;  // block timestamp
    bool coinbase = false;
    bool op_return = false;
    std::vector<TxInput> inputs;
    std::vector<TxOutput> outputs;

    Satoshi input_sum() const {
        Satoshi s = 0;
        for (const auto& in : inputs) s += in.value;
        return s;
    }
    Satoshi output_sum() const {
        Satoshi s = 0;
        for (const auto& out : outputs) s += out.value;
        return s;
    }
    Satoshi fee() const { return coinbase ? 0 : input_sum() - output_sum(); }
};

struct AddressInfo {
    std::string label;
    AddressKind kind = AddressKind::regular;
    Height first_seen = std::numeric_limits<Height>::max();
    // Distinct transactions at height `first_seen` that reference the address.
    std::uint32_t refs_at_first_height = 0;
};

/// Immutable in-memory transaction graph. Transactions are stored in height
/// order; TxIndex is the position in that order. Build with ChainGraph::Builder.
class ChainGraph {
public:
    class Builder;

    std::size_t tx_count() const { return txs_.size(); }
    std::size_t address_count() const { return addresses_.size(); }

    const Transaction& tx(TxIndex i) const { return txs_[i.index()]; }
    std::span<const Transaction> transactions() const { return txs_; }

    const AddressInfo& address(AddressId a) const { return addresses_[a.index()]; }
    bool has_address(AddressId a) const { return a.index() < addresses_.size(); }

    std::optional<TxIndex> find_tx(std::string_view txid) const {
        const auto it = txid_index_.find(std::string(txid));
        if (it == txid_index_.end()) return std::nullopt;
        return it->second;
    }

    std::optional<AddressId> find_address(std::string_view label) const {
        const auto it = address_index_.find(std::string(label));
        if (it == address_index_.end()) return std::nullopt;
        return it->second;
    }

    const TxOutput& output(CoinRef c) const { return txs_[c.tx.index()].outputs[c.vout]; }

    /// Spending transaction of a coin, or nullopt while unspent.
    std::optional<TxIndex> spender(CoinRef c) const {
        const auto s = spenders_[output_offset_[c.tx.index()] + c.vout];
        if (s == kUnspent) return std::nullopt;
        return TxIndex{s};
    }

    std::size_t coin_count() const { return spenders_.size(); }
    std::size_t unspent_count() const {
        return static_cast<std::size_t>(std::count(spenders_.begin(), spenders_.end(), kUnspent));
    }

    /// Transactions with >= 1 input from `a`, in height order.
    std::span<const TxIndex> spending_txs(AddressId a) const { return slice(spend_offsets_, spend_txs_, a); }
    /// Transactions with >= 1 output to `a`, in height order.
    std::span<const TxIndex> receiving_txs(AddressId a) const { return slice(recv_offsets_, recv_txs_, a); }

    /// First seen at this transaction's height and referenced by no other
    /// transaction at that height.
    bool is_fresh_in(AddressId a, const Transaction& t) const {
        const auto& info = address(a);
        return info.first_seen == t.height && info.refs_at_first_height == 1;
    }

private:
    static constexpr std::uint32_t kUnspent = std::numeric_limits<std::uint32_t>::max();

    std::span<const TxIndex> slice(const std::vector<std::uint32_t>& offsets, const std::vector<TxIndex>& data,
                                   AddressId a) const {
        if (a.index() + 1 >= offsets.size()) return {};
        return std::span<const TxIndex>(data).subspan(offsets[a.index()], offsets[a.index() + 1] - offsets[a.index()]);
    }

    std::vector<Transaction> txs_;
    std::vector<AddressInfo> addresses_;
    std::unordered_map<std::string, TxIndex> txid_index_;
    std::unordered_map<std::string, AddressId> address_index_;
    std::vector<std::uint32_t> output_offset_;
    std::vector<std::uint32_t> spenders_;
    std::vector<std::uint32_t> spend_offsets_, recv_offsets_;
    std::vector<TxIndex> spend_txs_, recv_txs_;
};

/// Incremental, validating constructor for ChainGraph. Transactions must be
/// added in non-decreasing height order with every spent coin created by an
/// earlier transaction.
class ChainGraph::Builder {
public:
    struct InputSpec {
        std::string_view txid;
        std::uint32_t vout = 0;
        std::string_view address;
        AddressKind kind = AddressKind::regular;
        Satoshi value = 0;
    };
    struct OutputSpec {
        std::string_view address;
        AddressKind kind = AddressKind::regular;
        Satoshi value = 0;
    };
    struct TxSpec {
        std::string_view txid;
        Height height = 0;
        UnixTime time = 0;
        bool coinbase = false;
        bool op_return = false;
        std::vector<InputSpec> inputs;
        std::vector<OutputSpec> outputs;
    };

    AddressId intern_address(std::string_view label, AddressKind kind) {
        std::string key(label);
        if (const auto it = g_.address_index_.find(key); it != g_.address_index_.end()) {
            if (g_.addresses_[it->second.index()].kind != kind)
                throw DataError("address " + key + " appears with conflicting kinds");
            return it->second;
        }
        const AddressId id{g_.addresses_.size()};
        g_.addresses_.push_back(AddressInfo{key, kind});
        g_.address_index_.emplace(std::move(key), id);
        return id;
    }

    TxIndex add(const TxSpec& spec) {
        const std::string txid(spec.txid);
        if (txid.empty()) throw DataError("empty txid");
        if (g_.txid_index_.contains(txid)) throw DataError("duplicate txid " + txid);
        if (!g_.txs_.empty() && spec.height < g_.txs_.back().height)
            throw DataError("tx " + txid + " at height " + std::to_string(spec.height) +
                            " follows height " + std::to_string(g_.txs_.back().height));
        if (spec.coinbase && !spec.inputs.empty()) throw DataError("coinbase tx " + txid + " has inputs");
        if (!spec.coinbase && spec.inputs.empty()) throw DataError("tx " + txid + " has no inputs");

        const TxIndex index{g_.txs_.size()};
        Transaction t;
        t.txid = txid;
        t.index = index;
        t.height = spec.height;
        t.time = spec.time;
        t.coinbase = spec.coinbase;
        t.op_return = spec.op_return;

        for (const auto& in : spec.inputs) {
            const auto creator = g_.find_tx(in.txid);
            if (!creator)
                throw DataError("tx " + txid + " spends unknown or later tx " + std::string(in.txid));
            const auto& src = g_.txs_[creator->index()];
            if (in.vout >= src.outputs.size())
                throw DataError("tx " + txid + " spends " + src.txid + ":" + std::to_string(in.vout) +
                                " which does not exist");
            const CoinRef coin{*creator, in.vout};
            auto& slot = g_.spenders_[g_.output_offset_[creator->index()] + in.vout];
            if (slot != kUnspent)
                throw DataError("double spend of " + src.txid + ":" + std::to_string(in.vout) + " by " +
                                g_.txs_[slot].txid + " and " + txid);
            for (const auto& prev : t.inputs)
                if (prev.prevout == coin)
                    throw DataError("tx " + txid + " spends " + src.txid + ":" + std::to_string(in.vout) + " twice");
            const auto addr = intern_address(in.address, in.kind);
            const auto& created = src.outputs[in.vout];
            if (created.address != addr || created.value != in.value)
                throw DataError("tx " + txid + " input " + src.txid + ":" + std::to_string(in.vout) +
                                " does not match the created output");
            if (in.value < 0) throw DataError("negative value in tx " + txid);
            t.inputs.push_back(TxInput{coin, addr, in.value});
        }
        for (const auto& out : spec.outputs) {
            if (out.value < 0) throw DataError("negative value in tx " + txid);
            t.outputs.push_back(TxOutput{intern_address(out.address, out.kind), out.value});
        }
        if (!t.coinbase && t.input_sum() < t.output_sum())
            throw DataError("tx " + txid + " creates value: inputs " + std::to_string(t.input_sum()) +
                            " < outputs " + std::to_string(t.output_sum()));

        // Only mark spends once the whole transaction validated.
        for (const auto& in : t.inputs)
            g_.spenders_[g_.output_offset_[in.prevout.tx.index()] + in.prevout.vout] = index.value;
        g_.output_offset_.push_back(static_cast<std::uint32_t>(g_.spenders_.size()));
        g_.spenders_.resize(g_.spenders_.size() + t.outputs.size(), kUnspent);
        g_.txid_index_.emplace(txid, index);
        g_.txs_.push_back(std::move(t));
        return index;
    }

    ChainGraph finish() && {
        auto& g = g_;
        const std::size_t n_addr = g.addresses_.size();
        std::vector<std::vector<TxIndex>> spend(n_addr), recv(n_addr);
        for (const auto& t : g.txs_) {
            for (const auto& in : t.inputs)
                if (spend[in.address.index()].empty() || spend[in.address.index()].back() != t.index)
                    spend[in.address.index()].push_back(t.index);
            for (const auto& out : t.outputs)
                if (recv[out.address.index()].empty() || recv[out.address.index()].back() != t.index)
                    recv[out.address.index()].push_back(t.index);
        }
        auto flatten = [n_addr](std::vector<std::vector<TxIndex>>& lists, std::vector<std::uint32_t>& offsets,
                                std::vector<TxIndex>& data) {
            offsets.assign(n_addr + 1, 0);
            for (std::size_t a = 0; a < n_addr; ++a)
                offsets[a + 1] = offsets[a] + static_cast<std::uint32_t>(lists[a].size());
            data.reserve(offsets[n_addr]);
            for (auto& l : lists) {
                data.insert(data.end(), l.begin(), l.end());
                std::vector<TxIndex>().swap(l);
            }
        };
        flatten(spend, g.spend_offsets_, g.spend_txs_);
        flatten(recv, g.recv_offsets_, g.recv_txs_);

        for (std::size_t a = 0; a < n_addr; ++a) {
            const auto s = g.spending_txs(AddressId{a});
            const auto r = g.receiving_txs(AddressId{a});
            // Both lists are sorted; merge to count distinct txs at the first height.
            Height first = std::numeric_limits<Height>::max();
            if (!s.empty()) first = std::min(first, g.txs_[s.front().index()].height);
            if (!r.empty()) first = std::min(first, g.txs_[r.front().index()].height);
            std::vector<TxIndex> at_first;
            for (auto i : s)
                if (g.txs_[i.index()].height == first) at_first.push_back(i);
            for (auto i : r)
                if (g.txs_[i.index()].height == first) at_first.push_back(i);
            std::sort(at_first.begin(), at_first.end());
            at_first.erase(std::unique(at_first.begin(), at_first.end()), at_first.end());
            g.addresses_[a].first_seen = first;
            g.addresses_[a].refs_at_first_height = static_cast<std::uint32_t>(at_first.size());
        }
        return std::move(g_);
    }

private:
    ChainGraph g_;
};

// --- graph queries ---------------------------------------------------------

/// Transactions with at least one input from `a`, in height order.
inline std::vector<TxIndex> txs_spending_from(const ChainGraph& g, AddressId a) {
    if (!g.has_address(a)) return {};
    const auto s = g.spending_txs(a);
    return {s.begin(), s.end()};
}

/// Transactions with at least one output to `a`, in height order.
inline std::vector<TxIndex> txs_paying_to(const ChainGraph& g, AddressId a) {
    if (!g.has_address(a)) return {};
    const auto r = g.receiving_txs(a);
    return {r.begin(), r.end()};
}

/// Visits every transaction adjacent to `t` through a coin edge, in either
/// direction (creators of its inputs, spenders of its outputs).
template <typename Visit>
void for_each_coin_neighbor(const ChainGraph& g, TxIndex t, Visit&& visit) {
    const auto& tx = g.tx(t);
    for (const auto& in : tx.inputs) visit(in.prevout.tx);
    for (std::uint32_t v = 0; v < tx.outputs.size(); ++v)
        if (const auto s = g.spender(CoinRef{t, v})) visit(*s);
}

/// All transactions within `d` undirected coin edges of `t`, including `t`.
/// Result is sorted by index.
inline std::vector<TxIndex> txs_within_distance(const ChainGraph& g, TxIndex t, int d) {
    if (d < 0) throw ConfigError("distance must be >= 0");
    std::unordered_map<TxIndex, int> dist{{t, 0}};
    std::deque<TxIndex> queue{t};
    while (!queue.empty()) {
        const auto cur = queue.front();
        queue.pop_front();
        const int next = dist[cur] + 1;
        if (next > d) continue;
        for_each_coin_neighbor(g, cur, [&](TxIndex n) {
            if (dist.emplace(n, next).second) queue.push_back(n);
        });
    }
    std::vector<TxIndex> out;
    out.reserve(dist.size());
    for (const auto& [tx, _] : dist) out.push_back(tx);
    std::sort(out.begin(), out.end());
    return out;
}

/// Partition of `txs` into components connected by spends within the set.
/// Each component is sorted; components are ordered by descending size, then
/// by lowest minimum height, then by lowest first index.
inline std::vector<std::vector<TxIndex>> connected_components(const ChainGraph& g, std::span<const TxIndex> txs) {
    std::vector<TxIndex> members(txs.begin(), txs.end());
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());

    std::unordered_map<TxIndex, std::uint32_t> position;
    position.reserve(members.size());
    for (std::uint32_t i = 0; i < members.size(); ++i) position.emplace(members[i], i);

    UnionFind uf(members.size());
    for (std::uint32_t i = 0; i < members.size(); ++i)
        for (const auto& in : g.tx(members[i]).inputs)
            if (const auto it = position.find(in.prevout.tx); it != position.end()) uf.unite(i, it->second);

    std::unordered_map<std::uint32_t, std::size_t> slot;
    std::vector<std::vector<TxIndex>> comps;
    for (std::uint32_t i = 0; i < members.size(); ++i) {
        const auto root = uf.find(i);
        auto [it, inserted] = slot.emplace(root, comps.size());
        if (inserted) comps.emplace_back();
        comps[it->second].push_back(members[i]);
    }
    auto min_height = [&](const std::vector<TxIndex>& c) {
        Height h = std::numeric_limits<Height>::max();
        for (auto t : c) h = std::min(h, g.tx(t).height);
        return h;
    };
    std::stable_sort(comps.begin(), comps.end(), [&](const auto& a, const auto& b) {
        if (a.size() != b.size()) return a.size() > b.size();
        const auto ha = min_height(a), hb = min_height(b);
        if (ha != hb) return ha < hb;
        return a.front() < b.front();
    });
    return comps;
}

}  // namespace auditor
