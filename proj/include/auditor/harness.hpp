#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "auditor/attacks.hpp"
#include "auditor/clustering.hpp"
#include "auditor/ingest.hpp"
#include "auditor/joindetect.hpp"
#include "auditor/json_config.hpp"
#include "auditor/synthgen.hpp"

namespace auditor {

inline constexpr const char* kAuditorVersion = "0.1.0";

// --- markets --------------------------------------------------------------

/// A chain together with what an observer of the network and an exchange
/// would see: broadcast times and the trade-price series.
struct Market {
    ChainGraph graph;
    BroadcastLog broadcasts;
    RateSeries rates;
};

inline Market market_from(const SynthChain& chain) {
    auto built = chain.build();
    return {std::move(built.graph), std::move(built.broadcasts), chain.rates};
}

inline Market load_market(const std::string& chain, const std::string& trades, const std::string& broadcasts) {
    Market m{load_chain(chain), {}, {}};
    if (!trades.empty()) m.rates = load_trades(trades);
    if (!broadcasts.empty()) m.broadcasts = load_broadcast_log(broadcasts);
    return m;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

inline void write_market(const Market& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto chain = open_output(dir / "chain.jsonl");
    write_chain(m.graph, chain);
    auto trades = open_output(dir / "trades.csv");
    write_trades(m.rates, trades);
    auto log = open_output(dir / "broadcasts.csv");
    write_broadcast_log(m.graph, m.broadcasts, log);
}

/// Where an experiment's chain comes from: generated, or three files.
struct ChainSource {
    std::optional<SynthConfig> synth;
    std::string chain, trades, broadcasts;

    bool synthetic() const { return synth.has_value(); }
};

// --- report formatting ------------------------------------------------------

namespace detail {

inline std::string fixed6(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

inline double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// Extra transactions merged into an existing chain; owns its strings.
struct OwnedTx {
    struct In {
        std::string txid;
        std::uint32_t vout = 0;
        std::string address;
        Satoshi value = 0;
    };
    struct Out {
        std::string address;
        Satoshi value = 0;
    };
    std::string txid;
    Height height = 0;
    UnixTime time = 0;
    bool coinbase = false;
    std::vector<In> inputs;
    std::vector<Out> outputs;
};

inline ChainGraph::Builder::TxSpec spec_of(const OwnedTx& t) {
    ChainGraph::Builder::TxSpec s;
    s.txid = t.txid;
    s.height = t.height;
    s.time = t.time;
    s.coinbase = t.coinbase;
    for (const auto& in : t.inputs) s.inputs.push_back({in.txid, in.vout, in.address, AddressKind::regular, in.value});
    for (const auto& o : t.outputs) s.outputs.push_back({o.address, AddressKind::regular, o.value});
    return s;
}

inline ChainGraph::Builder::TxSpec spec_of(const ChainGraph& g, const Transaction& t) {
    ChainGraph::Builder::TxSpec s;
    s.txid = t.txid;
    s.height = t.height;
    s.time = t.time;
    s.coinbase = t.coinbase;
    s.op_return = t.op_return;
    for (const auto& in : t.inputs) {
        const auto& a = g.address(in.address);
        s.inputs.push_back({g.tx(in.prevout.tx).txid, in.prevout.vout, a.label, a.kind, in.value});
    }
    for (const auto& o : t.outputs) {
        const auto& a = g.address(o.address);
        s.outputs.push_back({a.label, a.kind, o.value});
    }
    return s;
}

/// `g` with `extra` inserted, each after the existing transactions of its
/// height. `extra` must already be valid in order.
inline ChainGraph merge_transactions(const ChainGraph& g, std::vector<OwnedTx> extra) {
    std::stable_sort(extra.begin(), extra.end(),
                     [](const OwnedTx& a, const OwnedTx& b) { return a.height < b.height; });
    ChainGraph::Builder builder;
    std::size_t next = 0;
    for (const auto& t : g.transactions()) {
        while (next < extra.size() && extra[next].height < t.height) builder.add(spec_of(extra[next++]));
        builder.add(spec_of(g, t));
    }
    while (next < extra.size()) builder.add(spec_of(extra[next++]));
    return std::move(builder).finish();
}

inline double average_rank_correlation(const std::vector<double>& xs, const std::vector<double>& ys) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> order(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < order.size();) {
            std::size_t j = i;
            while (j < order.size() && v[order[j]] == v[order[i]]) ++j;
            for (std::size_t k = i; k < j; ++k) r[order[k]] = (static_cast<double>(i + j) - 1.0) / 2.0;
            i = j;
        }
        return r;
    };
    const auto rx = ranks(xs), ry = ranks(ys);
    const double n = static_cast<double>(xs.size());
    if (n < 2) return 0.0;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace detail

/// Spearman rank correlation with average ranks for ties; 0 when either
/// side is constant.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size()) throw ConfigError("spearman needs equal-length samples");
    return detail::average_rank_correlation(xs, ys);
}

// --- linkage experiment -------------------------------------------------------

struct LinkageCell {
    std::int64_t pay_window = 900;
    std::int64_t rate_window_len = 300;
    std::size_t price_set_size = 5;

    auto operator<=>(const LinkageCell&) const = default;
};

struct LinkageExperimentConfig {
    std::size_t n_prices = 100;
    std::size_t n_times = 100;
    std::vector<std::int64_t> pay_windows{300, 600, 900, 1800, 3600};
    std::vector<std::int64_t> rate_windows{60, 300, 600, 1800, 3600};
    std::vector<std::size_t> price_set_sizes{1, 2, 3, 4, 5};
    bool full_grid = false;    // otherwise vary one factor at a time around the defaults
    LinkageCell defaults{};    // the fixed values in one-factor mode
    Satoshi match_tolerance = 100;
    LinkageFilters filters{};
    bool round_payments = false;  // planted payments rounded to 100 sat, as BitPay does
    std::vector<Cents> price_pool{kDefaultPricePool.begin(), kDefaultPricePool.end()};
    std::vector<Cents> shipping_pool{kDefaultShippingPool.begin(), kDefaultShippingPool.end()};
    bool trial_log = true;

    void validate() const {
        if (n_prices == 0 || n_times == 0) throw ConfigError("n_prices and n_times must be positive");
        if (n_prices > price_pool.size()) throw ConfigError("n_prices exceeds the price pool");
        if (pay_windows.empty() || rate_windows.empty() || price_set_sizes.empty())
            throw ConfigError("uncertainty grids must not be empty");
        for (auto w : pay_windows)
            if (w < 1) throw ConfigError("pay windows must be >= 1 second");
        for (auto w : rate_windows)
            if (w < 0) throw ConfigError("rate windows must be >= 0");
        for (auto k : price_set_sizes)
            if (k < 1 || k > shipping_pool.size()) throw ConfigError("price set sizes must lie in [1, |shipping_pool|]");
        if (!full_grid && (defaults.pay_window < 1 || defaults.rate_window_len < 0 || defaults.price_set_size < 1 ||
                           defaults.price_set_size > shipping_pool.size()))
            throw ConfigError("invalid default linkage cell");
        if (match_tolerance < 0) throw ConfigError("match tolerance must be >= 0");
        if (price_pool.empty()) throw ConfigError("price pool must not be empty");
        if (std::find(shipping_pool.begin(), shipping_pool.end(), 0) == shipping_pool.end())
            throw ConfigError("shipping pool must contain 0");
    }

    std::vector<LinkageCell> cells() const {
        std::set<LinkageCell> out;
        if (full_grid) {
            for (auto p : pay_windows)
                for (auto r : rate_windows)
                    for (auto k : price_set_sizes) out.insert({p, r, k});
        } else {
            for (auto p : pay_windows) out.insert({p, defaults.rate_window_len, defaults.price_set_size});
            for (auto r : rate_windows) out.insert({defaults.pay_window, r, defaults.price_set_size});
            for (auto k : price_set_sizes) out.insert({defaults.pay_window, defaults.rate_window_len, k});
        }
        return {out.begin(), out.end()};
    }
};

/// A planted probe payment: one per (price, checkout time) flow.
struct LinkageFlow {
    Cents base_price = 0;
    Cents shipping = 0;
    UnixTime checkout = 0;
    UnixTime broadcast = 0;
    Cents rate = 0;
    Satoshi amount = 0;
    std::string txid;
    enum class Status { planted, no_rate, no_block } status = Status::planted;
};

struct LinkageCellResult {
    LinkageCell cell;
    std::size_t flows = 0;
    std::size_t excluded = 0;
    std::size_t completed = 0, true_positives = 0;
    std::size_t not_completed = 0, true_negatives = 0;
    std::size_t soundness_failures = 0;  // truth missing from the candidates
    std::map<std::size_t, std::size_t> histogram;  // anonymity set size -> completed trials
    double anonymity_sum = 0.0;

    double tpr() const { return detail::ratio(true_positives, completed); }
    double tnr() const { return detail::ratio(true_negatives, not_completed); }
    double mean_anonymity_set() const { return completed == 0 ? 0.0 : anonymity_sum / completed; }
};

struct LinkageTrial {
    std::size_t cell = 0;
    std::size_t flow = 0;
    bool completed = false;
    std::size_t candidates = 0;
    std::size_t anonymity_set = 0;
    bool truth_found = false;
    bool correct = false;
};

struct LinkageReport {
    std::uint64_t seed = 0;
    std::vector<LinkageFlow> flows;
    std::vector<LinkageCellResult> cells;
    std::vector<LinkageTrial> trials;  // empty unless trial_log
    std::size_t chain_txs = 0;
};

namespace detail {

inline std::vector<std::pair<Height, UnixTime>> block_times(const ChainGraph& g) {
    std::vector<std::pair<Height, UnixTime>> blocks;
    for (const auto& t : g.transactions())
        if (blocks.empty() || blocks.back().first != t.height) blocks.emplace_back(t.height, t.time);
    return blocks;
}

}  // namespace detail

/// The §5.2-style payment-flow study. Every (price, checkout time) flow gets
/// a real probe payment merged into the chain, placed inside the narrowest
/// window of every grid axis so it is a valid truth in every cell. A flow is
/// then scored twice per cell: completed (the probe is the truth) and not
/// completed (the probe is invisible). Probes never count as background.
inline LinkageReport run_linkage_experiment(const Market& market, const LinkageExperimentConfig& cfg,
                                            std::uint64_t seed) {
    cfg.validate();
    LinkageReport report;
    report.seed = seed;
    const auto& g0 = market.graph;
    const auto blocks = detail::block_times(g0);

    // Prices and checkout times.
    Rng setup(derive_seed(seed, 1));
    std::vector<Cents> pool = cfg.price_pool;
    setup.shuffle(pool);
    pool.resize(cfg.n_prices);
    std::sort(pool.begin(), pool.end());
    const auto min_pay = *std::min_element(cfg.pay_windows.begin(), cfg.pay_windows.end());
    const auto min_rate = *std::min_element(cfg.rate_windows.begin(), cfg.rate_windows.end());
    const auto min_prices = *std::min_element(cfg.price_set_sizes.begin(), cfg.price_set_sizes.end());
    auto cells = cfg.cells();
    std::int64_t max_pay = 0;
    for (const auto& c : cells) max_pay = std::max(max_pay, c.pay_window);
    const std::int64_t shortest_pay = cfg.full_grid ? min_pay : std::min(min_pay, cfg.defaults.pay_window);
    const std::int64_t shortest_rate = cfg.full_grid ? min_rate : std::min(min_rate, cfg.defaults.rate_window_len);
    const std::size_t fewest_prices = cfg.full_grid ? min_prices : std::min(min_prices, cfg.defaults.price_set_size);
    std::vector<UnixTime> times(cfg.n_times, 0);
    if (!blocks.empty()) {
        const UnixTime lo = blocks.front().second;
        const UnixTime hi = std::max(lo, blocks.back().second - max_pay);
        for (auto& t : times) t = setup.uniform_int(lo, hi);
    }

    // Probes.
    std::vector<detail::OwnedTx> extra;
    detail::OwnedTx faucet;
    faucet.txid = "probe-faucet";
    faucet.coinbase = true;
    if (!blocks.empty()) {
        faucet.height = blocks.front().first;
        faucet.time = blocks.front().second;
    }
    for (std::size_t i = 0; i < pool.size(); ++i)
        for (std::size_t j = 0; j < times.size(); ++j) {
            const std::size_t f = i * times.size() + j;
            Rng rng(derive_seed(seed, 2, f));
            LinkageFlow flow;
            flow.base_price = pool[i];
            flow.shipping = cfg.shipping_pool[rng.uniform_below(fewest_prices)];
            flow.checkout = times[j];
            flow.broadcast = flow.checkout + static_cast<UnixTime>(rng.uniform_below(static_cast<std::uint64_t>(shortest_pay)));
            const auto rates = rate_window(market.rates, flow.checkout, shortest_rate);
            const auto block = std::lower_bound(blocks.begin(), blocks.end(), flow.broadcast,
                                                [](const auto& b, UnixTime t) { return b.second < t; });
            if (rates.empty()) {
                flow.status = LinkageFlow::Status::no_rate;
            } else if (block == blocks.end()) {
                flow.status = LinkageFlow::Status::no_block;
            } else {
                flow.rate = rates[rng.uniform_below(rates.size())];
                flow.amount = fiat_to_satoshi(flow.base_price + flow.shipping, flow.rate);
                if (cfg.round_payments) flow.amount = std::max<Satoshi>(100, round_to_multiple(flow.amount, 100));
                const Satoshi change = rng.uniform_int(100'000, 10'000'000), fee = 5'000;
                const auto id = std::to_string(f);
                flow.txid = "probe-" + id;
                faucet.outputs.push_back({"probe-fund-" + id, flow.amount + change + fee});
                detail::OwnedTx probe;
                probe.txid = flow.txid;
                probe.height = block->first;
                probe.time = block->second;
                probe.inputs.push_back({faucet.txid, static_cast<std::uint32_t>(faucet.outputs.size() - 1),
                                        faucet.outputs.back().address, faucet.outputs.back().value});
                probe.outputs.push_back({"probe-pay-" + id, flow.amount});
                probe.outputs.push_back({"probe-change-" + id, change});
                if (rng.bernoulli(0.5)) std::swap(probe.outputs[0], probe.outputs[1]);
                extra.push_back(std::move(probe));
            }
            report.flows.push_back(std::move(flow));
        }
    if (!faucet.outputs.empty()) extra.insert(extra.begin(), std::move(faucet));
    const ChainGraph g = detail::merge_transactions(g0, std::move(extra));
    report.chain_txs = g.tx_count();
    BroadcastLog log = market.broadcasts;
    for (const auto& f : report.flows)
        if (f.status == LinkageFlow::Status::planted) log[f.txid] = f.broadcast;
    const BroadcastIndex index(g, log);
    std::vector<bool> is_probe(g.tx_count(), false);
    std::vector<std::optional<TxIndex>> truth(report.flows.size());
    for (std::size_t f = 0; f < report.flows.size(); ++f)
        if (report.flows[f].status == LinkageFlow::Status::planted) {
            truth[f] = *g.find_tx(report.flows[f].txid);
            is_probe[truth[f]->index()] = true;
        }
    if (const auto faucet_tx = g.find_tx("probe-faucet")) is_probe[faucet_tx->index()] = true;

    // Scoring.
    for (std::size_t c = 0; c < cells.size(); ++c) {
        LinkageCellResult res;
        res.cell = cells[c];
        LinkageQuery q;
        q.pay_window = cells[c].pay_window;
        q.rate_window_len = cells[c].rate_window_len;
        q.match_tolerance = cfg.match_tolerance;
        q.filters = cfg.filters;
        for (std::size_t f = 0; f < report.flows.size(); ++f) {
            const auto& flow = report.flows[f];
            ++res.flows;
            if (flow.status != LinkageFlow::Status::planted) {
                ++res.excluded;
                continue;
            }
            q.checkout_time = flow.checkout;
            q.price_set.clear();
            for (std::size_t k = 0; k < cells[c].price_set_size; ++k)
                q.price_set.push_back(flow.base_price + cfg.shipping_pool[k]);
            const auto all = candidate_transactions(g, index, market.rates, q);
            std::vector<TxIndex> base;
            for (auto t : all)
                if (!is_probe[t.index()]) base.push_back(t);
            const bool found = std::binary_search(all.begin(), all.end(), *truth[f]);

            // Completed flow.
            auto with_truth = base;
            if (found) with_truth.insert(std::lower_bound(with_truth.begin(), with_truth.end(), *truth[f]), *truth[f]);
            else ++res.soundness_failures;
            Rng decide_completed(derive_seed(seed, 3, c, f, 1));
            const auto d1 = adversary_decide(with_truth, decide_completed);
            const bool tp = d1.match == truth[f];
            const auto size = anonymity_set_size(with_truth, truth[f]);
            ++res.completed;
            res.true_positives += tp;
            ++res.histogram[size];
            res.anonymity_sum += static_cast<double>(size);

            // Flow where the victim walked away.
            Rng decide_missing(derive_seed(seed, 3, c, f, 0));
            const auto d0 = adversary_decide(base, decide_missing);
            ++res.not_completed;
            res.true_negatives += !d0.is_match();

            if (cfg.trial_log) {
                report.trials.push_back({c, f, true, with_truth.size(), size, found, tp});
                report.trials.push_back({c, f, false, base.size(), base.size(), false, !d0.is_match()});
            }
        }
        report.cells.push_back(std::move(res));
    }
    return report;
}

inline void write_linkage_report(const LinkageReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto cells = open_output(dir / "linkage_cells.csv");
    cells << "cell,pay_window,rate_window_len,price_set_size,flows,excluded,completed,true_positives,tpr,"
             "not_completed,true_negatives,tnr,mean_anonymity_set,soundness_failures\n";
    for (std::size_t c = 0; c < r.cells.size(); ++c) {
        const auto& x = r.cells[c];
        cells << c << ',' << x.cell.pay_window << ',' << x.cell.rate_window_len << ',' << x.cell.price_set_size << ','
              << x.flows << ',' << x.excluded << ',' << x.completed << ',' << x.true_positives << ','
              << detail::fixed6(x.tpr()) << ',' << x.not_completed << ',' << x.true_negatives << ','
              << detail::fixed6(x.tnr()) << ',' << detail::fixed6(x.mean_anonymity_set()) << ','
              << x.soundness_failures << '\n';
    }
    auto hist = open_output(dir / "linkage_histogram.csv");
    hist << "cell,anonymity_set_size,count\n";
    for (std::size_t c = 0; c < r.cells.size(); ++c)
        for (const auto& [size, count] : r.cells[c].histogram) hist << c << ',' << size << ',' << count << '\n';
    auto flows = open_output(dir / "linkage_flows.csv");
    flows << "flow,txid,base_price,shipping,checkout,broadcast,rate,amount,status\n";
    for (std::size_t f = 0; f < r.flows.size(); ++f) {
        const auto& x = r.flows[f];
        const char* status = x.status == LinkageFlow::Status::planted ? "planted"
                             : x.status == LinkageFlow::Status::no_rate ? "excluded_no_rate"
                                                                        : "excluded_no_block";
        flows << f << ',' << x.txid << ',' << x.base_price << ',' << x.shipping << ',' << x.checkout << ','
              << x.broadcast << ',' << x.rate << ',' << x.amount << ',' << status << '\n';
    }
    if (!r.trials.empty()) {
        auto trials = open_output(dir / "linkage_trials.csv");
        trials << "cell,flow,completed,candidates,anonymity_set,truth_found,correct\n";
        for (const auto& t : r.trials)
            trials << t.cell << ',' << t.flow << ',' << t.completed << ',' << t.candidates << ',' << t.anonymity_set
                   << ',' << t.truth_found << ',' << t.correct << '\n';
    }
}

// --- intersection experiment ----------------------------------------------------

struct IntersectionExperimentConfig {
    std::vector<int> rounds{1, 2, 3, 4, 5};
    std::vector<std::size_t> observations{1, 2, 3, 4, 5};
    std::size_t trials = 1000;
    std::size_t coins_per_victim = 100;
    int assumed_rounds_offset = 0;  // the adversary assumes r + offset rounds
    Height mix_from = 1;
    Height mix_to = 0;  // 0: end of chain
    int age_gap_rounds = 5;
    std::size_t age_gap_observations = 2;
    std::size_t age_gap_buckets = 5;
    int max_attempts_per_coin = 1000;
    bool trial_log = true;

    void validate() const {
        if (rounds.empty() || observations.empty()) throw ConfigError("rounds and observations grids must not be empty");
        for (auto r : rounds)
            if (r < 0 || r > 20) throw ConfigError("rounds must lie in [0, 20]");
        for (auto t : observations)
            if (t < 1 || t > coins_per_victim) throw ConfigError("observations must lie in [1, coins_per_victim]");
        if (trials == 0) throw ConfigError("trials must be positive");
        if (age_gap_buckets == 0) throw ConfigError("age_gap_buckets must be positive");
        if (age_gap_observations < 2) throw ConfigError("age gaps need at least 2 observations");
        if (std::find(rounds.begin(), rounds.end(), age_gap_rounds) == rounds.end() ||
            std::find(observations.begin(), observations.end(), age_gap_observations) == observations.end())
            throw ConfigError("the age-gap cell must be part of the rounds x observations grid");
        if (mix_from < 0 || (mix_to != 0 && mix_to <= mix_from)) throw ConfigError("invalid mixing window");
        if (max_attempts_per_coin < 1) throw ConfigError("max_attempts_per_coin must be positive");
    }
};

struct IntersectionCellResult {
    int rounds = 0;
    std::size_t observations = 0;
    std::size_t trials = 0;
    std::size_t infeasible = 0;  // no victim could be placed
    std::size_t unique_correct = 0, unique_wrong = 0, incorrect_assumptions = 0, ambiguous = 0;

    std::size_t scored() const { return trials - infeasible; }
    double success_rate() const { return detail::ratio(unique_correct, scored()); }
};

struct AgeGapBucket {
    Height gap_min = 0, gap_max = 0;
    std::size_t trials = 0, successes = 0;

    double success_rate() const { return detail::ratio(successes, trials); }
};

struct IntersectionTrial {
    int rounds = 0;
    std::size_t trial = 0;
    std::size_t observations = 0;
    IntersectionResult::Outcome outcome = IntersectionResult::Outcome::incorrect_assumptions;
    bool success = false;
    Height age_gap = 0;  // completion-height spread of the observed coins
};

struct IntersectionReport {
    std::uint64_t seed = 0;
    std::vector<IntersectionCellResult> cells;
    std::vector<AgeGapBucket> age_gap;
    double age_gap_spearman = 0.0;  // bucket index vs success rate
    std::vector<IntersectionTrial> trials;
    std::size_t joins = 0;

    const IntersectionCellResult* cell(int r, std::size_t t) const {
        for (const auto& c : cells)
            if (c.rounds == r && c.observations == t) return &c;
        return nullptr;
    }
};

/// A victim simulated on top of a fixed chain: mixed coins are taken from
/// sampled join paths and the input that entered each first join is
/// reassigned to the victim's own cluster.
struct VirtualVictim {
    ClusterOverlay clusters;
    ClusterId cluster;
    std::vector<CoinRef> coins;
    std::vector<Height> completed;
};

inline std::optional<VirtualVictim> virtual_victim(const ChainGraph& g, const JoinSet& joins,
                                                   const ClusterAssignment& base, const JoinPathSampler* sampler,
                                                   int r, std::size_t n_coins, Height mix_from, Height mix_to,
                                                   int max_attempts, Rng& rng) {
    VirtualVictim v{ClusterOverlay(base), {}, {}, {}};
    v.cluster = v.clusters.fresh_cluster();
    std::unordered_set<CoinRef> used_coins, used_entries;
    for (std::size_t k = 0; k < n_coins; ++k) {
        bool placed = false;
        for (int attempt = 0; attempt < max_attempts && !placed; ++attempt) {
            if (r == 0) {
                const auto& t = g.tx(TxIndex{rng.uniform_below(g.tx_count())});
                const CoinRef c{t.index, static_cast<std::uint32_t>(rng.uniform_below(t.outputs.size()))};
                if (!used_coins.insert(c).second) continue;
                v.clusters.assign(t.outputs[c.vout].address, v.cluster);
                v.coins.push_back(c);
                v.completed.push_back(t.height);
                placed = true;
                continue;
            }
            const auto path = sampler->sample(rng.uniform_int(mix_from, mix_to - 1), r, rng);
            if (!path) continue;
            const auto& first = g.tx(path->front());
            const auto& last = g.tx(path->back());
            const auto shape = classify_join(last);
            if (!shape) continue;
            std::vector<std::uint32_t> outs;
            for (std::uint32_t o = 0; o < last.outputs.size(); ++o)
                if (last.outputs[o].value == shape->denomination && !used_coins.contains(CoinRef{last.index, o}))
                    outs.push_back(o);
            std::vector<std::size_t> entries;
            for (std::size_t i = 0; i < first.inputs.size(); ++i)
                if (!used_entries.contains(first.inputs[i].prevout)) entries.push_back(i);
            if (outs.empty() || entries.empty()) continue;
            const CoinRef c{last.index, outs[rng.uniform_below(outs.size())]};
            const auto& entry = first.inputs[entries[rng.uniform_below(entries.size())]];
            used_coins.insert(c);
            used_entries.insert(entry.prevout);
            v.clusters.assign(entry.address, v.cluster);
            v.coins.push_back(c);
            v.completed.push_back(last.height);
            placed = true;
        }
        if (!placed) return std::nullopt;
    }
    return v;
}

/// The §6.1-style mixing study over a fixed chain with its joins and base
/// clustering. For each r, each trial builds a victim with
/// coins_per_victim mixed coins, shuffles them, and attacks with the first
/// t coins for every t in the grid.
inline IntersectionReport run_intersection_experiment(const ChainGraph& g, const JoinSet& joins,
                                                      const ClusterAssignment& base,
                                                      const IntersectionExperimentConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    IntersectionReport report;
    report.seed = seed;
    report.joins = joins.superset().size();
    Height last_height = 0;
    for (const auto& t : g.transactions()) last_height = std::max(last_height, t.height);
    const Height mix_to = cfg.mix_to == 0 ? last_height + 1 : cfg.mix_to;
    if (g.tx_count() == 0 || cfg.mix_from >= mix_to) throw ConfigError("mixing window is outside the chain");
    const int max_r = *std::max_element(cfg.rounds.begin(), cfg.rounds.end());
    std::optional<JoinPathSampler> sampler;
    if (max_r >= 1) sampler.emplace(g, joins, max_r);
    auto observations = cfg.observations;
    std::sort(observations.begin(), observations.end());
    observations.erase(std::unique(observations.begin(), observations.end()), observations.end());

    std::vector<std::pair<Height, bool>> gaps;  // age-gap cell trials
    for (const int r : cfg.rounds) {
        std::vector<IntersectionCellResult> cells(observations.size());
        for (std::size_t i = 0; i < cells.size(); ++i) {
            cells[i].rounds = r;
            cells[i].observations = observations[i];
        }
        const int assumed = std::max(0, r + cfg.assumed_rounds_offset);
        for (std::size_t k = 0; k < cfg.trials; ++k) {
            Rng rng(derive_seed(seed, 4, static_cast<std::uint64_t>(r), k));
            auto victim = virtual_victim(g, joins, base, sampler ? &*sampler : nullptr, r, cfg.coins_per_victim,
                                         cfg.mix_from, mix_to, cfg.max_attempts_per_coin, rng);
            for (auto& c : cells) ++c.trials;
            if (!victim) {
                for (auto& c : cells) ++c.infeasible;
                continue;
            }
            std::vector<std::size_t> order(victim->coins.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            rng.shuffle(order);
            for (std::size_t i = 0; i < observations.size(); ++i) {
                const auto t = observations[i];
                std::vector<CoinRef> seen;
                Height lo = std::numeric_limits<Height>::max(), hi = 0;
                for (std::size_t j = 0; j < t; ++j) {
                    seen.push_back(victim->coins[order[j]]);
                    lo = std::min(lo, victim->completed[order[j]]);
                    hi = std::max(hi, victim->completed[order[j]]);
                }
                const auto result = cluster_intersection(g, joins, victim->clusters, seen, assumed);
                const bool success = result.unique_cluster() == victim->cluster;
                auto& c = cells[i];
                if (success)
                    ++c.unique_correct;
                else if (result.is_unique())
                    ++c.unique_wrong;
                else if (result.outcome == IntersectionResult::Outcome::incorrect_assumptions)
                    ++c.incorrect_assumptions;
                else
                    ++c.ambiguous;
                if (r == cfg.age_gap_rounds && t == cfg.age_gap_observations) gaps.emplace_back(hi - lo, success);
                if (cfg.trial_log) report.trials.push_back({r, k, t, result.outcome, success, hi - lo});
            }
        }
        for (auto& c : cells) report.cells.push_back(c);
    }

    // Equal-count buckets by gap; equal gaps always share a bucket.
    std::stable_sort(gaps.begin(), gaps.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    const auto n = gaps.size();
    std::size_t first_of_run = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i > 0 && gaps[i].first != gaps[i - 1].first) first_of_run = i;
        const auto b = first_of_run * cfg.age_gap_buckets / n;
        while (report.age_gap.size() <= b) report.age_gap.push_back({gaps[i].first, gaps[i].first, 0, 0});
        auto& bucket = report.age_gap[b];
        bucket.gap_max = gaps[i].first;
        ++bucket.trials;
        bucket.successes += gaps[i].second;
    }
    std::erase_if(report.age_gap, [](const AgeGapBucket& b) { return b.trials == 0; });
    std::vector<double> xs, ys;
    for (std::size_t b = 0; b < report.age_gap.size(); ++b) {
        xs.push_back(static_cast<double>(b));
        ys.push_back(report.age_gap[b].success_rate());
    }
    report.age_gap_spearman = spearman(xs, ys);
    return report;
}

inline void write_intersection_report(const IntersectionReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto cells = open_output(dir / "intersection_cells.csv");
    cells << "rounds,observations,trials,infeasible,unique_correct,unique_wrong,incorrect_assumptions,ambiguous,"
             "success_rate\n";
    for (const auto& c : r.cells)
        cells << c.rounds << ',' << c.observations << ',' << c.trials << ',' << c.infeasible << ','
              << c.unique_correct << ',' << c.unique_wrong << ',' << c.incorrect_assumptions << ',' << c.ambiguous
              << ',' << detail::fixed6(c.success_rate()) << '\n';
    auto ages = open_output(dir / "intersection_age_gap.csv");
    ages << "bucket,gap_min,gap_max,trials,successes,success_rate\n";
    for (std::size_t b = 0; b < r.age_gap.size(); ++b) {
        const auto& x = r.age_gap[b];
        ages << b << ',' << x.gap_min << ',' << x.gap_max << ',' << x.trials << ',' << x.successes << ','
             << detail::fixed6(x.success_rate()) << '\n';
    }
    if (!r.trials.empty()) {
        auto trials = open_output(dir / "intersection_trials.csv");
        trials << "rounds,trial,observations,outcome,success,age_gap\n";
        for (const auto& t : r.trials)
            trials << t.rounds << ',' << t.trial << ',' << t.observations << ',' << to_string(t.outcome) << ','
                   << t.success << ',' << t.age_gap << '\n';
    }
}

// --- end-to-end experiment ------------------------------------------------------

struct EndToEndConfig {
    std::size_t victims = 50;
    int rounds = 2;
    std::size_t coins_per_victim = 2;
    std::size_t purchases = 2;
    int assumed_rounds_offset = 0;
    double mix_end = 0.5;         // mixing starts in the first mix_end of the chain
    double purchase_start = 0.7;  // purchases happen in the last part of the chain
    LinkageCell linkage{};
    Satoshi match_tolerance = 100;
    LinkageFilters filters{};
    bool round_payments = false;
    std::size_t max_combinations = 10'000;

    void validate() const {
        if (victims == 0 || purchases == 0) throw ConfigError("victims and purchases must be positive");
        if (rounds < 0) throw ConfigError("rounds must be >= 0");
        if (!(mix_end > 0.0 && mix_end <= 1.0) || !(purchase_start >= 0.0 && purchase_start < 1.0))
            throw ConfigError("mix_end must lie in (0, 1] and purchase_start in [0, 1)");
        if (linkage.pay_window < 1 || linkage.rate_window_len < 0 || linkage.price_set_size < 1)
            throw ConfigError("invalid linkage parameters");
        if (max_combinations == 0) throw ConfigError("max_combinations must be positive");
    }
};

struct EndToEndVictim {
    std::size_t victim = 0;
    bool planted = false;
    std::size_t mixed_purchases = 0;  // purchases funded by a mixed coin
    std::vector<std::size_t> candidates;  // per purchase
    bool truth_in_candidates = true;
    std::size_t combinations = 0, unique_combinations = 0, empty_combinations = 0;
    bool output = false;
    bool correct = false;
};

struct EndToEndReport {
    std::uint64_t seed = 0;
    std::vector<EndToEndVictim> victims;
    std::vector<VictimRecord> records;

    std::size_t count(bool EndToEndVictim::*field) const {
        return static_cast<std::size_t>(
            std::count_if(victims.begin(), victims.end(), [&](const EndToEndVictim& v) { return v.*field; }));
    }
};

/// Decision rule over all candidate combinations: name a cluster only if
/// exactly one combination yields a unique cluster and all others come out
/// empty.
inline std::optional<ClusterId> combine_intersections(std::span<const IntersectionResult> results) {
    std::optional<ClusterId> found;
    for (const auto& r : results) {
        if (r.is_unique()) {
            if (found) return std::nullopt;
            found = r.unique_cluster();
        } else if (r.outcome != IntersectionResult::Outcome::incorrect_assumptions) {
            return std::nullopt;
        }
    }
    return found;
}

/// §7-style study on a synthetic chain: plant victims that mix and then buy,
/// link each purchase, and run cluster intersection over every combination
/// of candidate purchases.
inline EndToEndReport run_end_to_end(const SynthConfig& synth, const EndToEndConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    auto chain = generate_chain(synth);
    if (cfg.linkage.price_set_size > synth.shipping_pool.size())
        throw ConfigError("price_set_size exceeds the shipping pool");
    const auto before = chain.build();
    const auto joins_before = detect_joins(before.graph);
    EndToEndReport report;
    report.seed = seed;
    const Height mix_to = std::max<Height>(2, static_cast<Height>(cfg.mix_end * static_cast<double>(synth.duration)));
    const Height buy_from = static_cast<Height>(cfg.purchase_start * static_cast<double>(synth.duration));
    const UnixTime buy_lo = chain.block_time(std::max<Height>(2, buy_from));
    const UnixTime buy_hi = chain.block_time(synth.duration - 1) - synth.block_interval;
    if (buy_hi < buy_lo) throw ConfigError("chain too short for end-to-end purchases");
    for (std::size_t v = 0; v < cfg.victims; ++v) {
        Rng rng(derive_seed(seed, 5, v));
        PlantRequest req;
        req.n_coins = cfg.coins_per_victim;
        req.rounds = cfg.rounds;
        req.mix_from = 1;
        req.mix_to = std::min(mix_to, synth.duration);
        req.price_set_size = cfg.linkage.price_set_size;
        req.round_payments = cfg.round_payments;
        for (std::size_t p = 0; p < cfg.purchases; ++p) req.purchase_times.push_back(rng.uniform_int(buy_lo, buy_hi));
        EndToEndVictim row;
        row.victim = v;
        try {
            report.records.push_back(plant_victim(chain, before, joins_before, req, rng));
            row.planted = true;
        } catch (const DataError&) {
            report.records.emplace_back();
        }
        report.victims.push_back(row);
    }

    const auto market = market_from(chain);
    const auto& g = market.graph;
    const auto joins = detect_joins(g);
    const auto clusters = cluster_all(g, joins);
    const BroadcastIndex index(g, market.broadcasts);
    const int assumed = std::max(0, cfg.rounds + cfg.assumed_rounds_offset);
    for (std::size_t v = 0; v < cfg.victims; ++v) {
        auto& row = report.victims[v];
        if (!row.planted) continue;
        const auto& rec = report.records[v];
        const auto truth_cluster = clusters.cluster_of(*g.find_address(rec.wallet.front()));
        std::vector<std::vector<TxIndex>> sets;
        for (const auto& p : rec.purchases) {
            row.mixed_purchases += p.used_mixed_coin;
            LinkageQuery q;
            q.checkout_time = p.checkout;
            q.pay_window = cfg.linkage.pay_window;
            q.rate_window_len = cfg.linkage.rate_window_len;
            q.match_tolerance = cfg.match_tolerance;
            q.filters = cfg.filters;
            for (std::size_t k = 0; k < cfg.linkage.price_set_size; ++k)
                q.price_set.push_back(p.base_price + synth.shipping_pool[k]);
            auto found = candidate_transactions(g, index, market.rates, q);
            const auto truth = *g.find_tx(p.txid);
            row.truth_in_candidates =
                row.truth_in_candidates && std::binary_search(found.begin(), found.end(), truth);
            row.candidates.push_back(found.size());
            sets.push_back(std::move(found));
        }
        std::size_t combos = 1;
        for (const auto& s : sets) {
            if (combos <= cfg.max_combinations) combos *= s.size();  // stops growing once over the cap
        }
        if (combos == 0 || combos > cfg.max_combinations) continue;
        std::vector<IntersectionResult> results;
        std::vector<std::size_t> pick(sets.size(), 0);
        for (std::size_t n = 0; n < combos; ++n) {
            std::vector<CoinRef> coins;
            for (std::size_t i = 0; i < sets.size(); ++i)
                for (const auto& in : g.tx(sets[i][pick[i]]).inputs) coins.push_back(in.prevout);
            results.push_back(cluster_intersection(g, joins, clusters, coins, assumed));
            for (std::size_t i = 0; i < pick.size() && ++pick[i] == sets[i].size(); ++i) pick[i] = 0;
        }
        row.combinations = results.size();
        for (const auto& r : results) {
            row.unique_combinations += r.is_unique();
            row.empty_combinations += r.outcome == IntersectionResult::Outcome::incorrect_assumptions;
        }
        const auto named = combine_intersections(results);
        row.output = named.has_value();
        row.correct = named == truth_cluster;
    }
    return report;
}

inline void write_end_to_end_report(const EndToEndReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto rows = open_output(dir / "end_to_end_victims.csv");
    rows << "victim,planted,mixed_purchases,candidates,truth_in_candidates,combinations,unique_combinations,"
            "empty_combinations,output,correct\n";
    for (const auto& v : r.victims) {
        std::string sizes;
        for (std::size_t i = 0; i < v.candidates.size(); ++i) sizes += (i ? ";" : "") + std::to_string(v.candidates[i]);
        rows << v.victim << ',' << v.planted << ',' << v.mixed_purchases << ',' << sizes << ','
             << v.truth_in_candidates << ',' << v.combinations << ',' << v.unique_combinations << ','
             << v.empty_combinations << ',' << v.output << ',' << v.correct << '\n';
    }
    const auto planted = r.count(&EndToEndVictim::planted);
    const auto outputs = r.count(&EndToEndVictim::output);
    const auto correct = r.count(&EndToEndVictim::correct);
    auto summary = open_output(dir / "end_to_end_summary.csv");
    summary << "victims,planted,outputs,correct,success_rate,precision\n";
    summary << r.victims.size() << ',' << planted << ',' << outputs << ',' << correct << ','
            << detail::fixed6(detail::ratio(correct, planted)) << ',' << detail::fixed6(detail::ratio(correct, outputs))
            << '\n';
    auto records = open_output(dir / "victims.json");
    records << nlohmann::json(r.records).dump(1) << '\n';
}

// --- experiment configuration -----------------------------------------------------

struct ExperimentConfig {
    std::uint64_t seed = 1;
    ChainSource chain;
    LinkageExperimentConfig linkage;
    IntersectionExperimentConfig intersection;
    EndToEndConfig end_to_end;
};

namespace detail {

inline LinkageFilters filters_from_json(const nlohmann::json& j, std::string_view where) {
    config::check_object(j, where, {"two_outputs", "regular_addresses_only", "fresh_outputs", "bitpay_rounding"});
    LinkageFilters f;
    config::read(j, where, "two_outputs", f.two_outputs);
    config::read(j, where, "regular_addresses_only", f.regular_addresses_only);
    config::read(j, where, "fresh_outputs", f.fresh_outputs);
    config::read(j, where, "bitpay_rounding", f.bitpay_rounding);
    return f;
}

inline LinkageCell cell_from_json(const nlohmann::json& j, std::string_view where) {
    config::check_object(j, where, {"pay_window", "rate_window_len", "price_set_size"});
    LinkageCell c;
    config::read(j, where, "pay_window", c.pay_window);
    config::read(j, where, "rate_window_len", c.rate_window_len);
    config::read(j, where, "price_set_size", c.price_set_size);
    return c;
}

}  // namespace detail

/// Parses an experiment config. Top-level keys: seed, chain (either
/// {"synth": {...}} or {"chain", "trades", "broadcasts"} paths), linkage,
/// intersection, end_to_end. The synthetic chain inherits the top-level seed
/// unless it sets its own.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    using config::read;
    config::check_object(j, "config", {"seed", "chain", "linkage", "intersection", "end_to_end"});
    ExperimentConfig c;
    read(j, "config", "seed", c.seed);
    const auto chain = j.value("chain", nlohmann::json{{"synth", nlohmann::json::object()}});
    config::check_object(chain, "chain", {"synth", "chain", "trades", "broadcasts"});
    if (chain.contains("synth")) {
        if (chain.contains("chain") || chain.contains("trades"))
            throw ConfigError("chain: give either synth or file paths, not both");
        auto synth = chain.at("synth");
        if (synth.is_object() && !synth.contains("seed")) synth["seed"] = c.seed;
        c.chain.synth = synth_config_from_json(synth);
    } else {
        read(chain, "chain", "chain", c.chain.chain);
        read(chain, "chain", "trades", c.chain.trades);
        read(chain, "chain", "broadcasts", c.chain.broadcasts);
        if (c.chain.chain.empty() || c.chain.trades.empty())
            throw ConfigError("chain: file sources need at least chain and trades paths");
    }
    if (c.chain.synth) {
        c.linkage.price_pool = c.chain.synth->price_pool;
        c.linkage.shipping_pool = c.chain.synth->shipping_pool;
    }

    if (j.contains("linkage")) {
        const auto& l = j.at("linkage");
        config::check_object(l, "linkage",
                             {"n_prices", "n_times", "pay_windows", "rate_windows", "price_set_sizes", "full_grid",
                              "defaults", "match_tolerance", "filters", "round_payments", "price_pool",
                              "shipping_pool", "trial_log"});
        auto& x = c.linkage;
        read(l, "linkage", "n_prices", x.n_prices);
        read(l, "linkage", "n_times", x.n_times);
        read(l, "linkage", "pay_windows", x.pay_windows);
        read(l, "linkage", "rate_windows", x.rate_windows);
        read(l, "linkage", "price_set_sizes", x.price_set_sizes);
        read(l, "linkage", "full_grid", x.full_grid);
        if (l.contains("defaults")) x.defaults = detail::cell_from_json(l.at("defaults"), "linkage.defaults");
        read(l, "linkage", "match_tolerance", x.match_tolerance);
        if (l.contains("filters")) x.filters = detail::filters_from_json(l.at("filters"), "linkage.filters");
        read(l, "linkage", "round_payments", x.round_payments);
        read(l, "linkage", "price_pool", x.price_pool);
        read(l, "linkage", "shipping_pool", x.shipping_pool);
        read(l, "linkage", "trial_log", x.trial_log);
    }
    c.linkage.validate();

    if (j.contains("intersection")) {
        const auto& s = j.at("intersection");
        config::check_object(s, "intersection",
                             {"rounds", "observations", "trials", "coins_per_victim", "assumed_rounds_offset",
                              "mix_from", "mix_to", "age_gap_rounds", "age_gap_observations", "age_gap_buckets",
                              "max_attempts_per_coin", "trial_log"});
        auto& x = c.intersection;
        read(s, "intersection", "rounds", x.rounds);
        read(s, "intersection", "observations", x.observations);
        read(s, "intersection", "trials", x.trials);
        read(s, "intersection", "coins_per_victim", x.coins_per_victim);
        read(s, "intersection", "assumed_rounds_offset", x.assumed_rounds_offset);
        read(s, "intersection", "mix_from", x.mix_from);
        read(s, "intersection", "mix_to", x.mix_to);
        read(s, "intersection", "age_gap_rounds", x.age_gap_rounds);
        read(s, "intersection", "age_gap_observations", x.age_gap_observations);
        read(s, "intersection", "age_gap_buckets", x.age_gap_buckets);
        read(s, "intersection", "max_attempts_per_coin", x.max_attempts_per_coin);
        read(s, "intersection", "trial_log", x.trial_log);
    }
    c.intersection.validate();

    if (j.contains("end_to_end")) {
        const auto& e = j.at("end_to_end");
        config::check_object(e, "end_to_end",
                             {"victims", "rounds", "coins_per_victim", "purchases", "assumed_rounds_offset",
                              "mix_end", "purchase_start", "linkage", "match_tolerance", "filters",
                              "round_payments", "max_combinations"});
        auto& x = c.end_to_end;
        read(e, "end_to_end", "victims", x.victims);
        read(e, "end_to_end", "rounds", x.rounds);
        read(e, "end_to_end", "coins_per_victim", x.coins_per_victim);
        read(e, "end_to_end", "purchases", x.purchases);
        read(e, "end_to_end", "assumed_rounds_offset", x.assumed_rounds_offset);
        read(e, "end_to_end", "mix_end", x.mix_end);
        read(e, "end_to_end", "purchase_start", x.purchase_start);
        if (e.contains("linkage")) x.linkage = detail::cell_from_json(e.at("linkage"), "end_to_end.linkage");
        read(e, "end_to_end", "match_tolerance", x.match_tolerance);
        if (e.contains("filters")) x.filters = detail::filters_from_json(e.at("filters"), "end_to_end.filters");
        read(e, "end_to_end", "round_payments", x.round_payments);
        read(e, "end_to_end", "max_combinations", x.max_combinations);
    }
    c.end_to_end.validate();
    return c;
}

/// Loads or generates the experiment's chain.
inline Market resolve_market(const ChainSource& source) {
    if (source.synth) return market_from(generate_chain(*source.synth));
    return load_market(source.chain, source.trades, source.broadcasts);
}

/// Run manifest: everything needed to rerun, and nothing that changes
/// between identical runs.
inline void write_manifest(const std::filesystem::path& dir, std::string_view experiment, const nlohmann::json& config,
                           std::uint64_t seed, const nlohmann::json& summary) {
    std::filesystem::create_directories(dir);
    nlohmann::json m{{"experiment", experiment},
                     {"seed", seed},
                     {"version", kAuditorVersion},
                     {"config", config},
                     {"summary", summary}};
    auto out = open_output(dir / "manifest.json");
    out << m.dump(2) << '\n';
}

}  // namespace auditor
