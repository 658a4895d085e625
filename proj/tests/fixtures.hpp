#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "auditor/chain.hpp"

namespace auditor::testing {

/// Hand-written chains for unit tests. Inputs are given as (txid, vout)
/// and their address/value are filled in from the creating output.
class ChainSketch {
public:
    struct Out {
        std::string addr;
        Satoshi value = 0;
        AddressKind kind = AddressKind::regular;
    };

    ChainSketch& coinbase(std::string txid, Height h, std::vector<Out> outs) {
        records_.push_back({std::move(txid), h, true, false, {}, std::move(outs)});
        return *this;
    }

    ChainSketch& tx(std::string txid, Height h, std::vector<std::pair<std::string, std::uint32_t>> spends,
                    std::vector<Out> outs, bool op_return = false) {
        records_.push_back({std::move(txid), h, false, op_return, std::move(spends), std::move(outs)});
        return *this;
    }

    ChainGraph build() const {
        ChainGraph::Builder b;
        std::map<std::pair<std::string, std::uint32_t>, const Out*> created;
        for (const auto& r : records_) {
            ChainGraph::Builder::TxSpec spec;
            spec.txid = r.txid;
            spec.height = r.height;
            spec.time = 1'500'000'000 + r.height * 600;
            spec.coinbase = r.coinbase;
            spec.op_return = r.op_return;
            for (const auto& [txid, vout] : r.spends) {
                const auto it = created.find({txid, vout});
                if (it == created.end()) {
                    spec.inputs.push_back({txid, vout, "?", AddressKind::regular, 0});
                } else {
                    spec.inputs.push_back({txid, vout, it->second->addr, it->second->kind, it->second->value});
                }
            }
            for (const auto& o : r.outs) spec.outputs.push_back({o.addr, o.kind, o.value});
            b.add(spec);
            for (std::uint32_t v = 0; v < r.outs.size(); ++v) created[{r.txid, v}] = &r.outs[v];
        }
        return std::move(b).finish();
    }

private:
    struct Record {
        std::string txid;
        Height height;
        bool coinbase;
        bool op_return;
        std::vector<std::pair<std::string, std::uint32_t>> spends;
        std::vector<Out> outs;
    };
    std::vector<Record> records_;
};

inline TxIndex tx_of(const ChainGraph& g, const std::string& txid) { return *g.find_tx(txid); }
inline AddressId addr_of(const ChainGraph& g, const std::string& label) { return *g.find_address(label); }

}  // namespace auditor::testing
