#pragma once

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "auditor/chain.hpp"
#include "auditor/money.hpp"
#include "auditor/types.hpp"

namespace auditor {

// --- exchange rates -------------------------------------------------------

struct TradeTick {
    UnixTime timestamp = 0;
    Cents rate = 0;  // fiat cents per whole BTC, > 0

    auto operator<=>(const TradeTick&) const = default;
};

/// Trades sorted by timestamp (stable for ties).
class RateSeries {
public:
    RateSeries() = default;
    explicit RateSeries(std::vector<TradeTick> ticks) : ticks_(std::move(ticks)) {
        std::stable_sort(ticks_.begin(), ticks_.end(),
                         [](const TradeTick& a, const TradeTick& b) { return a.timestamp < b.timestamp; });
    }

    std::span<const TradeTick> ticks() const { return ticks_; }
    bool empty() const { return ticks_.empty(); }
    std::size_t size() const { return ticks_.size(); }

    /// Rate of the last tick at or before `t`.
    std::optional<Cents> prevailing(UnixTime t) const {
        auto it = std::upper_bound(ticks_.begin(), ticks_.end(), t,
                                   [](UnixTime x, const TradeTick& k) { return x < k.timestamp; });
        if (it == ticks_.begin()) return std::nullopt;
        return std::prev(it)->rate;
    }

private:
    std::vector<TradeTick> ticks_;
};

/// Distinct rates (ascending) that could have been quoted in
/// [start, start + duration): every tick inside the window plus the
/// prevailing rate when it opens.
inline std::vector<Cents> rate_window(const RateSeries& s, UnixTime start, std::int64_t duration) {
    if (duration < 0) throw ConfigError("rate window duration must be >= 0");
    const auto ticks = s.ticks();
    auto by_time = [](const TradeTick& k, UnixTime x) { return k.timestamp < x; };
    std::vector<Cents> rates;
    if (const auto p = s.prevailing(start)) rates.push_back(*p);
    auto lo = std::lower_bound(ticks.begin(), ticks.end(), start, by_time);
    auto hi = std::lower_bound(lo, ticks.end(), start + duration, by_time);
    for (auto it = lo; it != hi; ++it) rates.push_back(it->rate);
    std::sort(rates.begin(), rates.end());
    rates.erase(std::unique(rates.begin(), rates.end()), rates.end());
    return rates;
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        fields.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    for (auto& f : fields) {
        while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
        while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    }
    return fields;
}

inline bool blank(std::string_view line) {
    return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return in;
}

}  // namespace detail

/// Headerless bitcoincharts CSV: unix_timestamp,price,volume. Volume is
/// ignored (but must be present).
inline RateSeries read_trades(std::istream& in) {
    std::vector<TradeTick> ticks;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 3) throw DataError("trades row " + std::to_string(row) + ": expected 3 columns");
        const auto ts = parse_int<UnixTime>(f[0]);
        const auto price = parse_decimal_cents(f[1]);
        if (!ts || !price || !parse_decimal_cents(f[2]))
            throw DataError("trades row " + std::to_string(row) + ": non-numeric field");
        if (*price <= 0) throw DataError("trades row " + std::to_string(row) + ": non-positive price");
        ticks.push_back(TradeTick{*ts, *price});
    }
    return RateSeries(std::move(ticks));
}

inline RateSeries load_trades(const std::string& path) {
    auto in = detail::open_input(path);
    return read_trades(in);
}

inline void write_trades(const RateSeries& s, std::ostream& out) {
    for (const auto& t : s.ticks()) out << t.timestamp << ',' << format_cents(t.rate) << ",1\n";
}

// --- broadcast log --------------------------------------------------------

/// txid -> first time the transaction was seen on the network.
using BroadcastLog = std::unordered_map<std::string, UnixTime>;

inline BroadcastLog read_broadcast_log(std::istream& in) {
    BroadcastLog log;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (detail::blank(line)) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 2 || f[0].empty())
            throw DataError("broadcast row " + std::to_string(row) + ": expected txid,unix_timestamp");
        const auto ts = parse_int<UnixTime>(f[1]);
        if (!ts) throw DataError("broadcast row " + std::to_string(row) + ": non-numeric timestamp");
        const auto [it, inserted] = log.emplace(std::string(f[0]), *ts);
        if (!inserted) it->second = std::min(it->second, *ts);
    }
    return log;
}

inline BroadcastLog load_broadcast_log(const std::string& path) {
    auto in = detail::open_input(path);
    return read_broadcast_log(in);
}

/// Writes entries for the given transactions in chain order.
inline void write_broadcast_log(const ChainGraph& g, const BroadcastLog& log, std::ostream& out) {
    for (const auto& t : g.transactions())
        if (const auto it = log.find(t.txid); it != log.end()) out << t.txid << ',' << it->second << '\n';
}

// --- chain file -----------------------------------------------------------

/// Reads the line-delimited JSON chain format into a validated ChainGraph.
/// Errors carry the 1-based line number.
inline ChainGraph read_chain(std::istream& in) {
    ChainGraph::Builder builder;
    std::string line;
    std::size_t line_no = 0;
    auto kind_of = [](const nlohmann::json& j) {
        if (!j.contains("kind")) return AddressKind::regular;
        const auto k = j.at("kind").get<std::string>();
        if (k == "regular") return AddressKind::regular;
        if (k == "multisig") return AddressKind::multisig;
        throw DataError("unknown address kind '" + k + "'");
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::blank(line)) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!j.is_object()) throw DataError("expected a JSON object");
            ChainGraph::Builder::TxSpec spec;
            const auto& txid = j.at("txid").get_ref<const std::string&>();
            spec.txid = txid;
            spec.height = j.at("height").get<Height>();
            spec.time = j.at("time").get<UnixTime>();
            spec.coinbase = j.value("coinbase", false);
            spec.op_return = j.value("op_return", false);
            for (const auto& i : j.at("inputs")) {
                spec.inputs.push_back({i.at("txid").get_ref<const std::string&>(), i.at("vout").get<std::uint32_t>(),
                                       i.at("addr").get_ref<const std::string&>(), kind_of(i),
                                       i.at("value").get<Satoshi>()});
            }
            for (const auto& o : j.at("outputs")) {
                spec.outputs.push_back(
                    {o.at("addr").get_ref<const std::string&>(), kind_of(o), o.at("value").get<Satoshi>()});
            }
            builder.add(spec);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("chain line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("chain line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return std::move(builder).finish();
}

inline ChainGraph load_chain(const std::string& path) {
    auto in = detail::open_input(path);
    return read_chain(in);
}

inline void write_chain(const ChainGraph& g, std::ostream& out) {
    for (const auto& t : g.transactions()) {
        nlohmann::ordered_json j;
        j["txid"] = t.txid;
        j["height"] = t.height;
        j["time"] = t.time;
        j["coinbase"] = t.coinbase;
        j["op_return"] = t.op_return;
        auto& ins = j["inputs"] = nlohmann::ordered_json::array();
        for (const auto& in : t.inputs) {
            const auto& a = g.address(in.address);
            ins.push_back({{"txid", g.tx(in.prevout.tx).txid},
                           {"vout", in.prevout.vout},
                           {"addr", a.label},
                           {"kind", to_string(a.kind)},
                           {"value", in.value}});
        }
        auto& outs = j["outputs"] = nlohmann::ordered_json::array();
        for (const auto& o : t.outputs) {
            const auto& a = g.address(o.address);
            outs.push_back({{"addr", a.label}, {"kind", to_string(a.kind)}, {"value", o.value}});
        }
        out << j.dump() << '\n';
    }
}

}  // namespace auditor
