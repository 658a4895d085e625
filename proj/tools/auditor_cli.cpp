// auditor: command-line front end for the chain-analysis toolkit.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
// 3 data error.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "auditor/attacks.hpp"
#include "auditor/clustering.hpp"
#include "auditor/harness.hpp"
#include "auditor/ingest.hpp"
#include "auditor/joindetect.hpp"
#include "auditor/synthgen.hpp"

namespace {

using namespace auditor;
using nlohmann::json;
namespace fs = std::filesystem;

struct Globals {
    std::optional<std::uint64_t> seed;
    std::string config_path;
    std::string out = "out";
};

struct MarketFiles {
    std::string chain, trades, broadcasts;

    void add_to(CLI::App* cmd, bool need_trades) {
        cmd->add_option("--chain", chain, "chain file (JSON lines)")->required();
        auto* t = cmd->add_option("--trades", trades, "trades CSV (timestamp,price,volume)");
        if (need_trades) t->required();
        cmd->add_option("--broadcasts", broadcasts, "broadcast log CSV (txid,timestamp)");
    }
};

json read_config(const Globals& g) {
    json j = json::object();
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw ConfigError("cannot open config " + g.config_path);
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config " + g.config_path + ": " + e.what());
        }
    }
    if (g.seed) j["seed"] = *g.seed;
    return j;
}

void emit(const json& result, const fs::path& file) {
    fs::create_directories(file.parent_path());
    auto out = open_output(file);
    out << result.dump(2) << '\n';
    std::cout << result.dump(2) << '\n';
}

std::vector<std::string> txids(const ChainGraph& g, std::span<const TxIndex> txs) {
    std::vector<std::string> out;
    for (auto t : txs) out.push_back(g.tx(t).txid);
    return out;
}

CoinRef parse_coin(const ChainGraph& g, const std::string& text) {
    const auto colon = text.rfind(':');
    if (colon == std::string::npos) throw ConfigError("coin must look like txid:vout, got " + text);
    const auto tx = g.find_tx(std::string_view(text).substr(0, colon));
    const auto vout = parse_int<std::uint32_t>(std::string_view(text).substr(colon + 1));
    if (!tx) throw DataError("unknown transaction " + text.substr(0, colon));
    if (!vout || *vout >= g.tx(*tx).outputs.size()) throw DataError("no output " + text);
    return {*tx, *vout};
}

// --- subcommands -------------------------------------------------------------

void run_gen(const Globals& globals, std::size_t victim_coins, int rounds, std::size_t purchases) {
    const auto raw = read_config(globals);
    const auto cfg = experiment_config_from_json(raw);
    if (!cfg.chain.synthetic()) throw ConfigError("gen needs a synthetic chain config");
    auto chain = generate_chain(*cfg.chain.synth);
    std::optional<VictimRecord> victim;
    if (victim_coins > 0 || purchases > 0) {
        const auto before = chain.build();
        const auto joins = detect_joins(before.graph);
        Rng rng(derive_seed(cfg.seed, 6));
        PlantRequest req;
        req.n_coins = victim_coins;
        req.rounds = rounds;
        const auto& s = *cfg.chain.synth;
        const auto lo = chain.block_time(std::max<Height>(2, s.duration * 7 / 10));
        const auto hi = chain.block_time(s.duration - 1) - s.block_interval;
        if (hi < lo) throw ConfigError("chain too short to plant purchases");
        for (std::size_t i = 0; i < purchases; ++i) req.purchase_times.push_back(rng.uniform_int(lo, hi));
        req.mix_to = std::max<Height>(2, s.duration / 2);
        victim = plant_victim(chain, before, joins, req, rng);
    }
    const auto market = market_from(chain);
    const fs::path out = globals.out;
    write_market(market, out);
    if (victim) {
        auto f = open_output(out / "victim.json");
        f << json(*victim).dump(2) << '\n';
    }
    const json summary{{"transactions", market.graph.tx_count()},
                       {"addresses", market.graph.address_count()},
                       {"rate_ticks", market.rates.size()},
                       {"victim", victim.has_value()}};
    write_manifest(out, "gen", raw, cfg.seed, summary);
    std::cout << summary.dump(2) << '\n';
}

void run_ingest(const Globals& globals, const MarketFiles& files) {
    const auto m = load_market(files.chain, files.trades, files.broadcasts);
    const BroadcastIndex index(m.graph, m.broadcasts);  // validates broadcast skew
    std::size_t logged = 0;
    for (const auto& t : m.graph.transactions()) logged += m.broadcasts.contains(t.txid);
    json summary{{"transactions", m.graph.tx_count()},
                 {"addresses", m.graph.address_count()},
                 {"coins", m.graph.coin_count()},
                 {"unspent", m.graph.unspent_count()},
                 {"rate_ticks", m.rates.size()},
                 {"broadcast_entries", m.broadcasts.size()},
                 {"transactions_with_broadcast", logged}};
    if (!m.rates.empty())
        summary["rate_span"] = {m.rates.ticks().front().timestamp, m.rates.ticks().back().timestamp};
    emit(summary, fs::path(globals.out) / "ingest_summary.json");
}

void run_cluster(const Globals& globals, const std::string& chain_path, bool ignore_joins) {
    const auto g = load_chain(chain_path);
    const auto joins = ignore_joins ? JoinSet::none() : detect_joins(g);
    const auto clusters = cluster_all(g, joins);
    const fs::path out = globals.out;
    fs::create_directories(out);
    auto csv = open_output(out / "clusters.csv");
    csv << "address,cluster\n";
    for (std::uint32_t a = 0; a < g.address_count(); ++a)
        csv << g.address(AddressId{a}).label << ',' << clusters.cluster_of(AddressId{a}).value << '\n';
    const auto sizes = clusters.sizes();
    std::size_t largest = 0, singletons = 0;
    for (auto s : sizes) {
        largest = std::max(largest, s);
        singletons += s == 1;
    }
    emit(json{{"addresses", g.address_count()},
              {"clusters", clusters.cluster_count()},
              {"largest_cluster", largest},
              {"singletons", singletons},
              {"joins_excluded", joins.superset().size()}},
         out / "cluster_summary.json");
}

void run_detect_joins(const Globals& globals, const std::string& chain_path, const JoinDetectionParams& params) {
    params.validate();
    const auto g = load_chain(chain_path);
    const auto joins = detect_joins(g, params);
    const fs::path out = globals.out;
    fs::create_directories(out);
    auto superset = open_output(out / "joins_superset.txt");
    for (auto t : joins.superset()) superset << g.tx(t).txid << '\n';
    auto subset = open_output(out / "joins_subset.txt");
    for (auto t : joins.subset()) subset << g.tx(t).txid << '\n';
    auto census = open_output(out / "joins_census.csv");
    census << "tx_id,n_participants,v,component_id\n";
    for (const auto& row : join_census(g, joins, params))
        census << g.tx(row.tx).txid << ',' << row.participants << ',' << row.denomination << ',' << row.component
               << '\n';
    emit(json{{"transactions", g.tx_count()},
              {"superset", joins.superset().size()},
              {"subset", joins.subset().size()},
              {"components", joins.components().size()}},
         out / "joins_summary.json");
}

struct LinkageArgs {
    std::vector<std::string> prices;
    UnixTime checkout = 0;
    LinkageQuery query;
    bool no_two_outputs = false, allow_multisig = false, allow_reused = false;
};

void run_linkage(const Globals& globals, const MarketFiles& files, LinkageArgs args) {
    for (const auto& p : args.prices) {
        const auto cents = parse_decimal_cents(p);
        if (!cents) throw ConfigError("bad price " + p + " (expected a decimal amount like 24.99)");
        args.query.price_set.push_back(*cents);
    }
    args.query.checkout_time = args.checkout;
    args.query.filters.two_outputs = !args.no_two_outputs;
    args.query.filters.regular_addresses_only = !args.allow_multisig;
    args.query.filters.fresh_outputs = !args.allow_reused;
    args.query.validate();
    const auto m = load_market(files.chain, files.trades, files.broadcasts);
    const auto found = candidate_transactions(m.graph, m.broadcasts, m.rates, args.query);
    Rng rng(derive_seed(globals.seed.value_or(1), 7));
    const auto decision = adversary_decide(found, rng);
    json result{{"candidates", txids(m.graph, found)},
                {"anonymity_set_size", found.size()},
                {"decision", decision.match ? json(m.graph.tx(*decision.match).txid) : json("no_transaction")},
                {"rates_in_window", rate_window(m.rates, args.checkout, args.query.rate_window_len)}};
    emit(result, fs::path(globals.out) / "linkage_result.json");
}

void run_intersect(const Globals& globals, const std::string& chain_path, const std::vector<std::string>& coin_args,
                   int rounds) {
    if (rounds < 0) throw ConfigError("rounds must be >= 0");
    const auto g = load_chain(chain_path);
    const auto joins = detect_joins(g);
    const auto clusters = cluster_all(g, joins);
    std::vector<CoinRef> coins;
    for (const auto& c : coin_args) coins.push_back(parse_coin(g, c));
    const auto result = cluster_intersection(g, joins, clusters, coins, rounds);
    json out{{"outcome", to_string(result.outcome)}, {"clusters", json::array()}};
    for (auto c : result.clusters) {
        json members = json::array();
        for (auto a : clusters.members(c)) members.push_back(g.address(a).label);
        out["clusters"].push_back({{"cluster", c.value}, {"members", members}});
    }
    emit(out, fs::path(globals.out) / "intersect_result.json");
}

void run_experiment(const Globals& globals, const std::string& which) {
    const auto raw = read_config(globals);
    const auto cfg = experiment_config_from_json(raw);
    const fs::path out = globals.out;
    json summary;
    if (which == "linkage") {
        const auto market = resolve_market(cfg.chain);
        const auto report = run_linkage_experiment(market, cfg.linkage, cfg.seed);
        write_linkage_report(report, out);
        for (const auto& c : report.cells)
            summary.push_back({{"pay_window", c.cell.pay_window},
                               {"rate_window_len", c.cell.rate_window_len},
                               {"price_set_size", c.cell.price_set_size},
                               {"tpr", c.tpr()},
                               {"tnr", c.tnr()},
                               {"mean_anonymity_set", c.mean_anonymity_set()},
                               {"excluded", c.excluded}});
    } else if (which == "intersection") {
        const auto market = resolve_market(cfg.chain);
        const auto joins = detect_joins(market.graph);
        const auto clusters = cluster_all(market.graph, joins);
        const auto report = run_intersection_experiment(market.graph, joins, clusters, cfg.intersection, cfg.seed);
        write_intersection_report(report, out);
        summary["joins"] = report.joins;
        for (const auto& c : report.cells)
            summary["cells"].push_back({{"rounds", c.rounds},
                                        {"observations", c.observations},
                                        {"success_rate", c.success_rate()},
                                        {"infeasible", c.infeasible}});
        summary["age_gap_spearman"] = report.age_gap_spearman;
    } else {
        if (!cfg.chain.synthetic()) throw ConfigError("end-to-end needs a synthetic chain config");
        const auto report = run_end_to_end(*cfg.chain.synth, cfg.end_to_end, cfg.seed);
        write_end_to_end_report(report, out);
        summary = {{"victims", report.victims.size()},
                   {"planted", report.count(&EndToEndVictim::planted)},
                   {"outputs", report.count(&EndToEndVictim::output)},
                   {"correct", report.count(&EndToEndVictim::correct)}};
    }
    write_manifest(out, which, raw, cfg.seed, summary);
    std::cout << summary.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"auditor: transaction linkage and cluster intersection on Bitcoin-style chains"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals globals;
    app.add_option("--seed", globals.seed, "random seed (overrides the config)");
    app.add_option("--config", globals.config_path, "JSON config file");
    app.add_option("--out", globals.out, "output directory")->capture_default_str();

    std::size_t victim_coins = 0, purchases = 0;
    int victim_rounds = 2;
    auto* gen = app.add_subcommand("gen", "generate a synthetic chain, trades and broadcast log");
    gen->add_option("--victim-coins", victim_coins, "plant a victim with this many mixed coins");
    gen->add_option("--victim-rounds", victim_rounds, "mixing rounds for the victim's coins")->capture_default_str();
    gen->add_option("--victim-purchases", purchases, "purchases made by the victim");

    MarketFiles ingest_files;
    auto* ingest = app.add_subcommand("ingest", "load and validate chain, trades and broadcast files");
    ingest_files.add_to(ingest, false);

    std::string chain_path;
    bool ignore_joins = false;
    auto* cluster = app.add_subcommand("cluster", "cluster addresses, skipping detected joins");
    cluster->add_option("--chain", chain_path, "chain file")->required();
    cluster->add_flag("--ignore-joins", ignore_joins, "treat joins like ordinary transactions");

    JoinDetectionParams join_params;
    auto* detect = app.add_subcommand("detect-joins", "find JoinMarket-shaped transactions");
    detect->add_option("--chain", chain_path, "chain file")->required();
    detect->add_option("--max-inputs", join_params.max_inputs)->capture_default_str();
    detect->add_option("--fee-floor", join_params.fee_floor, "minimum maker fee allowance (sat)")->capture_default_str();

    MarketFiles linkage_files;
    LinkageArgs link;
    auto* linkage = app.add_subcommand("linkage", "find transactions that could be a given purchase");
    linkage_files.add_to(linkage, true);
    linkage->add_option("--price", link.prices, "candidate price in fiat, e.g. 24.99 (repeatable)")->required();
    linkage->add_option("--checkout", link.checkout, "checkout time (unix seconds)")->required();
    linkage->add_option("--pay-window", link.query.pay_window)->capture_default_str();
    linkage->add_option("--rate-window", link.query.rate_window_len)->capture_default_str();
    linkage->add_option("--tolerance", link.query.match_tolerance, "satoshis")->capture_default_str();
    linkage->add_flag("--bitpay", link.query.filters.bitpay_rounding, "require an output that is a multiple of 100");
    linkage->add_flag("--any-output-count", link.no_two_outputs);
    linkage->add_flag("--allow-multisig", link.allow_multisig);
    linkage->add_flag("--allow-reused", link.allow_reused);

    std::vector<std::string> coins;
    int rounds = 1;
    auto* intersect = app.add_subcommand("intersect", "cluster intersection over coins of one owner");
    intersect->add_option("--chain", chain_path, "chain file")->required();
    intersect->add_option("--coin", coins, "txid:vout (repeatable)")->required();
    intersect->add_option("--rounds", rounds, "assumed mixing rounds")->capture_default_str();

    std::string which;
    auto* experiment = app.add_subcommand("experiment", "run a simulation study");
    experiment->add_option("kind", which, "linkage | intersection | end-to-end")
        ->required()
        ->check(CLI::IsMember({"linkage", "intersection", "end-to-end"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) run_gen(globals, victim_coins, victim_rounds, purchases);
        if (ingest->parsed()) run_ingest(globals, ingest_files);
        if (cluster->parsed()) run_cluster(globals, chain_path, ignore_joins);
        if (detect->parsed()) run_detect_joins(globals, chain_path, join_params);
        if (linkage->parsed()) run_linkage(globals, linkage_files, link);
        if (intersect->parsed()) run_intersect(globals, chain_path, coins, rounds);
        if (experiment->parsed()) run_experiment(globals, which);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
