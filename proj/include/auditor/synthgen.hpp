#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "auditor/chain.hpp"
#include "auditor/ingest.hpp"
#include "auditor/joindetect.hpp"
#include "auditor/json_config.hpp"
#include "auditor/money.hpp"
#include "auditor/price_pool.hpp"
#include "auditor/rng.hpp"

namespace auditor {

struct SynthConfig {
    Height duration = 1000;  // blocks
    std::int64_t block_interval = 600;
    double background_tx_rate = 100.0;  // mean non-coinbase txs per block
    double join_fraction = 0.0005;
    double join_participants_mean = 3.98;
    double join_participants_sd = 1.72;
    int join_participants_min = 2;
    int join_participants_max = 12;
    double sweep_fraction = 0.1;
    std::vector<Cents> price_pool{kDefaultPricePool.begin(), kDefaultPricePool.end()};
    std::vector<Cents> shipping_pool{kDefaultShippingPool.begin(), kDefaultShippingPool.end()};
    double priced_fraction = 1.0;  // payments whose amount is a fiat price
    double address_reuse = 0.2;     // payments to an address the payee used before
    double multisig_fraction = 0.05;
    double batch_fraction = 0.0;  // payments with a second payee
    std::size_t n_users = 2000;
    std::size_t maker_genesis_coins = 300;
    double maker_coinbase_share = 0.5;
    double maker_recycle = 0.7;  // maker inputs taken from earlier join outputs
    UnixTime start_time = 1'500'000'000;
    Cents start_rate = 250'000;
    double rate_volatility = 0.0005;  // sd of the per-minute log-rate step
    std::uint64_t seed = 1;

    void validate() const {
        auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
        if (duration < 0) throw ConfigError("duration must be >= 0");
        if (block_interval < 2) throw ConfigError("block_interval must be >= 2");
        if (background_tx_rate < 0.0) throw ConfigError("background_tx_rate must be >= 0");
        if (!unit(join_fraction) || !unit(sweep_fraction) || !unit(priced_fraction) || !unit(address_reuse) ||
            !unit(multisig_fraction) || !unit(batch_fraction) || !unit(maker_coinbase_share) ||
            !unit(maker_recycle))
            throw ConfigError("fractions must lie in [0, 1]");
        if (join_participants_min < 2 || join_participants_max < join_participants_min ||
            join_participants_max > 17)
            throw ConfigError("join participants must satisfy 2 <= min <= max <= 17");
        const double excess = join_participants_mean - join_participants_min;
        if (excess <= 0.0 || join_participants_sd * join_participants_sd <= excess)
            throw ConfigError("join participant distribution needs mean > min and variance > mean - min");
        if (price_pool.empty()) throw ConfigError("price_pool must not be empty");
        for (auto p : price_pool)
            if (p <= 0) throw ConfigError("prices must be positive");
        if (std::find(shipping_pool.begin(), shipping_pool.end(), 0) == shipping_pool.end())
            throw ConfigError("shipping_pool must contain 0");
        for (auto s : shipping_pool)
            if (s < 0) throw ConfigError("shipping deltas must be >= 0");
        if (n_users < 2) throw ConfigError("n_users must be >= 2");
        if (start_rate <= 0) throw ConfigError("start_rate must be positive");
        if (rate_volatility < 0.0) throw ConfigError("rate_volatility must be >= 0");
    }
};

#define AUDITOR_SYNTH_FIELDS(X)                                                                       \
    X(duration) X(block_interval) X(background_tx_rate) X(join_fraction) X(join_participants_mean)    \
    X(join_participants_sd) X(join_participants_min) X(join_participants_max) X(sweep_fraction)       \
    X(price_pool) X(shipping_pool) X(priced_fraction) X(address_reuse) X(multisig_fraction)           \
    X(batch_fraction) X(n_users) X(maker_genesis_coins) X(maker_coinbase_share) X(maker_recycle)      \
    X(start_time) X(start_rate) X(rate_volatility) X(seed)

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json::object();
#define AUDITOR_PUT(f) j[#f] = c.f;
    AUDITOR_SYNTH_FIELDS(AUDITOR_PUT)
#undef AUDITOR_PUT
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
    config::check_object(j, "synth",
                         {
#define AUDITOR_NAME(f) #f,
                             AUDITOR_SYNTH_FIELDS(AUDITOR_NAME)
#undef AUDITOR_NAME
                         });
    SynthConfig c;
#define AUDITOR_GET(f) config::read(j, "synth", #f, c.f);
    AUDITOR_SYNTH_FIELDS(AUDITOR_GET)
#undef AUDITOR_GET
    c.validate();
    return c;
}

#undef AUDITOR_SYNTH_FIELDS

// --- draft chain ----------------------------------------------------------

struct DraftInput {
    std::uint32_t tx = 0;  // draft id of the creating transaction
    std::uint32_t vout = 0;
};

struct DraftOutput {
    std::uint32_t address = 0;
    Satoshi value = 0;
};

enum class DraftKind : std::uint8_t { coinbase, payment, join, victim };

struct DraftTx {
    Height height = 0;
    UnixTime broadcast = 0;  // ignored for coinbases
    DraftKind kind = DraftKind::payment;
    std::vector<DraftInput> inputs;
    std::vector<DraftOutput> outputs;
};

/// Mutable chain under construction. Transactions and addresses are keyed
/// by creation order; build() sorts by height into an immutable ChainGraph.
class SynthChain {
public:
    SynthConfig config;
    std::vector<DraftTx> txs;
    std::vector<AddressKind> address_kinds;
    RateSeries rates;
    // Coins already used by planted victims (entry or mixed coins).
    std::unordered_set<std::uint64_t> claimed;

    static std::uint64_t coin_key(DraftInput c) { return (std::uint64_t{c.tx} << 32) | c.vout; }

    UnixTime block_time(Height h) const { return config.start_time + h * config.block_interval; }

    std::uint32_t new_address(AddressKind kind = AddressKind::regular) {
        address_kinds.push_back(kind);
        return static_cast<std::uint32_t>(address_kinds.size() - 1);
    }

    std::uint32_t add(DraftTx tx) {
        txs.push_back(std::move(tx));
        return static_cast<std::uint32_t>(txs.size() - 1);
    }

    const DraftOutput& output(DraftInput coin) const { return txs[coin.tx].outputs[coin.vout]; }

    static std::string txid(std::uint32_t id) { return "t" + std::to_string(id); }
    static std::string address_label(std::uint32_t id) { return "a" + std::to_string(id); }

    static std::uint32_t draft_id(std::string_view txid) {
        const auto id = parse_int<std::uint32_t>(txid.substr(1));
        if (txid.empty() || txid.front() != 't' || !id) throw DataError("not a generated txid: " + std::string(txid));
        return *id;
    }

    struct Built {
        ChainGraph graph;
        BroadcastLog broadcasts;
    };

    Built build() const {
        std::vector<std::uint32_t> order(txs.size());
        for (std::uint32_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(),
                         [this](std::uint32_t a, std::uint32_t b) { return txs[a].height < txs[b].height; });
        ChainGraph::Builder builder;
        Built out;
        std::vector<std::string> labels;
        for (auto id : order) {
            const auto& d = txs[id];
            labels.clear();
            labels.reserve(1 + 2 * d.inputs.size() + d.outputs.size());
            labels.push_back(txid(id));
            ChainGraph::Builder::TxSpec spec;
            spec.txid = labels.back();
            spec.height = d.height;
            spec.time = block_time(d.height);
            spec.coinbase = d.kind == DraftKind::coinbase;
            for (const auto& in : d.inputs) {
                labels.push_back(txid(in.tx));
                const auto& created = output(in);
                labels.push_back(address_label(created.address));
            }
            for (const auto& o : d.outputs) labels.push_back(address_label(o.address));
            std::size_t k = 1;
            for (const auto& in : d.inputs) {
                const auto& created = output(in);
                spec.inputs.push_back(
                    {labels[k], in.vout, labels[k + 1], address_kinds[created.address], created.value});
                k += 2;
            }
            for (const auto& o : d.outputs) spec.outputs.push_back({labels[k++], address_kinds[o.address], o.value});
            builder.add(spec);
            if (!spec.coinbase) out.broadcasts.emplace(labels.front(), d.broadcast);
        }
        out.graph = std::move(builder).finish();
        return out;
    }
};

// --- path sampling over the join graph ---------------------------------------

/// Directed graph of joins (j -> k when k spends an output of j) with path
/// counts, for sampling mixing paths uniformly.
class JoinPathSampler {
public:
    JoinPathSampler(const ChainGraph& g, const JoinSet& joins, int max_rounds) : g_(&g) {
        if (max_rounds < 1) throw ConfigError("rounds must be >= 1");
        const auto nodes = joins.superset();
        nodes_.assign(nodes.begin(), nodes.end());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            position_.emplace(nodes_[i], i);
            by_height_[g.tx(nodes_[i]).height].push_back(nodes_[i]);
        }
        children_.resize(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const auto& t = g.tx(nodes_[i]);
            for (std::uint32_t v = 0; v < t.outputs.size(); ++v)
                if (const auto s = g.spender(CoinRef{nodes_[i], v}); s && joins.in_superset(*s))
                    children_[i].push_back(position_.at(*s));
            std::sort(children_[i].begin(), children_[i].end());
            children_[i].erase(std::unique(children_[i].begin(), children_[i].end()), children_[i].end());
        }
        counts_.assign(static_cast<std::size_t>(max_rounds) + 1, std::vector<double>(nodes_.size(), 0.0));
        std::fill(counts_[1].begin(), counts_[1].end(), 1.0);
        for (int r = 2; r <= max_rounds; ++r)
            for (std::size_t i = 0; i < nodes_.size(); ++i)
                for (auto c : children_[i]) counts_[r][i] += counts_[r - 1][c];
    }

    int max_rounds() const { return static_cast<int>(counts_.size()) - 1; }

    /// Number of join paths of exactly r transactions starting at `j`.
    double path_count(TxIndex j, int r) const {
        const auto it = position_.find(j);
        if (it == position_.end() || r < 1 || r > max_rounds()) return 0.0;
        return counts_[r][it->second];
    }

    std::span<const TxIndex> joins_at(Height h) const {
        const auto it = by_height_.find(h);
        if (it == by_height_.end()) return {};
        return it->second;
    }

    /// A uniformly chosen start among joins at `start_height` that have a
    /// path of r joins, then a path chosen uniformly among that start's
    /// paths. nullopt when no join at that height has one.
    std::optional<std::vector<TxIndex>> sample(Height start_height, int r, Rng& rng) const {
        if (r < 1 || r > max_rounds()) throw ConfigError("rounds out of range for this sampler");
        std::vector<std::size_t> starts;
        for (auto j : joins_at(start_height))
            if (const auto i = position_.at(j); counts_[r][i] > 0.0) starts.push_back(i);
        if (starts.empty()) return std::nullopt;
        std::size_t cur = starts[rng.uniform_below(starts.size())];
        std::vector<TxIndex> path{nodes_[cur]};
        std::vector<double> weights;
        for (int left = r - 1; left >= 1; --left) {
            weights.clear();
            for (auto c : children_[cur]) weights.push_back(counts_[left][c]);
            cur = children_[cur][rng.weighted_index(weights)];
            path.push_back(nodes_[cur]);
        }
        return path;
    }

private:
    const ChainGraph* g_;
    std::vector<TxIndex> nodes_;
    std::unordered_map<TxIndex, std::size_t> position_;
    std::unordered_map<Height, std::vector<TxIndex>> by_height_;
    std::vector<std::vector<std::size_t>> children_;
    std::vector<std::vector<double>> counts_;  // counts_[r][i]
};

inline std::optional<std::vector<TxIndex>> simulate_mix_path(const ChainGraph& g, const JoinSet& joins,
                                                             Height start_height, int r, Rng& rng) {
    return JoinPathSampler(g, joins, r).sample(start_height, r, rng);
}

// --- background generation ---------------------------------------------------

namespace detail {

/// Participants minus the minimum follow a negative binomial matched to the
/// configured mean and sd; sampled by inverse CDF so every platform agrees.
class ParticipantDistribution {
public:
    explicit ParticipantDistribution(const SynthConfig& cfg) : min_(cfg.join_participants_min) {
        const double mean = cfg.join_participants_mean - cfg.join_participants_min;
        const double var = cfg.join_participants_sd * cfg.join_participants_sd;
        const double p = mean / var;
        const double r = mean * p / (1.0 - p);
        double pmf = std::pow(p, r), cdf = 0.0;
        for (int k = 0; k <= cfg.join_participants_max - min_; ++k) {
            cdf += pmf;
            cdf_.push_back(cdf);
            pmf *= (k + r) / (k + 1) * (1.0 - p);
        }
        cdf_.back() = 1.0;  // the tail above the cap collapses onto the cap
    }

    int sample(Rng& rng) const {
        const double u = rng.uniform01();
        const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return min_ + static_cast<int>(std::min<std::size_t>(it - cdf_.begin(), cdf_.size() - 1));
    }

private:
    int min_;
    std::vector<double> cdf_;
};

class Generator {
public:
    explicit Generator(const SynthConfig& cfg) : rng_(cfg.seed), participants_(cfg) {
        chain_.config = cfg;
    }

    SynthChain run() {
        const auto& cfg = chain_.config;
        if (cfg.duration == 0) return std::move(chain_);
        make_rates();
        genesis();
        for (Height h = 1; h < cfg.duration; ++h) {
            release_pending();
            coinbase(h);
            const auto slots = rng_.poisson(cfg.background_tx_rate);
            for (std::int64_t s = 0; s < slots; ++s) {
                if (rng_.bernoulli(cfg.join_fraction))
                    join(h);
                else
                    payment(h);
            }
        }
        if (join_failures_ > 0 && join_failures_ * 10 > join_attempts_)
            throw ConfigError("infeasible config: " + std::to_string(join_failures_) + " of " +
                              std::to_string(join_attempts_) + " joins could not find enough coins");
        return std::move(chain_);
    }

private:
    struct Coin {
        std::uint32_t tx = 0;
        std::uint32_t vout = 0;
        Satoshi value = 0;
    };
    struct User {
        std::vector<Coin> coins;
        std::vector<std::uint32_t> addresses;
    };
    // Owner of a pending coin: a user index, or one of the maker pools.
    static constexpr std::int64_t kMakerFresh = -1, kMakerRecycled = -2;

    void make_rates() {
        const auto& cfg = chain_.config;
        std::vector<TradeTick> ticks;
        const UnixTime from = cfg.start_time - 3600, to = chain_.block_time(cfg.duration) + 3600;
        double log_ratio = 0.0;
        for (UnixTime t = from; t <= to; t += 60) {
            ticks.push_back({t, std::max<Cents>(1, std::llround(static_cast<double>(cfg.start_rate) *
                                                                std::exp(log_ratio)))});
            log_ratio = std::clamp(log_ratio + rng_.normal(0.0, cfg.rate_volatility), -std::log(2.0), std::log(2.0));
        }
        chain_.rates = RateSeries(std::move(ticks));
    }

    void genesis() {
        const auto& cfg = chain_.config;
        users_.resize(cfg.n_users);
        DraftTx users_cb{0, 0, DraftKind::coinbase, {}, {}};
        std::vector<std::int64_t> owners;
        for (std::size_t u = 0; u < cfg.n_users; ++u)
            for (int k = 0; k < 3; ++k) {
                const auto value = static_cast<Satoshi>(rng_.uniform_int(1, 30)) * kSatoshisPerCoin +
                                   static_cast<Satoshi>(rng_.uniform_below(kSatoshisPerCoin));
                users_cb.outputs.push_back({fresh_user_address(u, AddressKind::regular), value});
                owners.push_back(static_cast<std::int64_t>(u));
            }
        emit(std::move(users_cb), owners);
        if (cfg.maker_genesis_coins > 0) {
            DraftTx makers_cb{0, 0, DraftKind::coinbase, {}, {}};
            for (std::size_t k = 0; k < cfg.maker_genesis_coins; ++k)
                makers_cb.outputs.push_back({chain_.new_address(), 10 * kSatoshisPerCoin});
            emit(std::move(makers_cb), std::vector<std::int64_t>(cfg.maker_genesis_coins, kMakerFresh));
        }
    }

    void coinbase(Height h) {
        DraftTx cb{h, 0, DraftKind::coinbase, {}, {}};
        const Satoshi reward = 125 * kSatoshisPerCoin / 10;
        if (rng_.bernoulli(chain_.config.maker_coinbase_share)) {
            cb.outputs.push_back({chain_.new_address(), reward});
            emit(std::move(cb), {kMakerFresh});
        } else {
            const auto u = rng_.uniform_below(users_.size());
            cb.outputs.push_back({fresh_user_address(u, AddressKind::regular), reward});
            emit(std::move(cb), {static_cast<std::int64_t>(u)});
        }
    }

    UnixTime broadcast_time(Height h) {
        return chain_.block_time(h) -
               static_cast<UnixTime>(rng_.uniform_below(static_cast<std::uint64_t>(chain_.config.block_interval)));
    }

    Satoshi arbitrary_amount() {
        // Log-uniform between 0.0005 and 2 BTC.
        const double lo = std::log(5e4), hi = std::log(2e8);
        return static_cast<Satoshi>(std::exp(lo + (hi - lo) * rng_.uniform01()));
    }

    std::uint32_t payee_address(std::size_t payee) {
        const auto& cfg = chain_.config;
        auto& known = users_[payee].addresses;
        if (!known.empty() && rng_.bernoulli(cfg.address_reuse)) return known[rng_.uniform_below(known.size())];
        const auto kind = rng_.bernoulli(cfg.multisig_fraction) ? AddressKind::multisig : AddressKind::regular;
        return fresh_user_address(payee, kind);
    }

    void payment(Height h) {
        const auto& cfg = chain_.config;
        const auto when = broadcast_time(h);
        Satoshi amount = arbitrary_amount();
        if (rng_.bernoulli(cfg.priced_fraction)) {
            const auto price = cfg.price_pool[rng_.uniform_below(cfg.price_pool.size())] +
                               cfg.shipping_pool[rng_.uniform_below(cfg.shipping_pool.size())];
            amount = fiat_to_satoshi(price, *chain_.rates.prevailing(when));
        }
        const bool batch = rng_.bernoulli(cfg.batch_fraction);
        const Satoshi second = batch ? arbitrary_amount() : 0;
        const Satoshi fee = rng_.uniform_int(1'000, 20'000);

        for (int attempt = 0; attempt < 20; ++attempt) {
            const auto payer = rng_.uniform_below(users_.size());
            auto inputs = gather(users_[payer].coins, amount + second + fee, 8);
            if (inputs.empty()) continue;
            Satoshi total = 0;
            DraftTx tx{h, when, DraftKind::payment, {}, {}};
            for (const auto& c : inputs) {
                total += c.value;
                tx.inputs.push_back({c.tx, c.vout});
            }
            std::vector<std::int64_t> owners;
            auto payee = rng_.uniform_below(users_.size() - 1);
            if (payee >= payer) ++payee;
            tx.outputs.push_back({payee_address(payee), amount});
            owners.push_back(static_cast<std::int64_t>(payee));
            if (batch) {
                auto other = rng_.uniform_below(users_.size());
                tx.outputs.push_back({payee_address(other), second});
                owners.push_back(static_cast<std::int64_t>(other));
            }
            const Satoshi change = total - amount - second - fee;
            if (change >= 546) {
                tx.outputs.push_back({fresh_user_address(payer, AddressKind::regular), change});
                owners.push_back(static_cast<std::int64_t>(payer));
            }
            shuffle_outputs(tx, owners);
            emit(std::move(tx), owners);
            return;
        }
    }

    // Removes random coins from `pool` until they cover `need`; restores the
    // pool and returns nothing if `max_coins` are not enough.
    std::vector<Coin> gather(std::vector<Coin>& pool, Satoshi need, std::size_t max_coins) {
        std::vector<Coin> taken;
        Satoshi sum = 0;
        while (sum < need && taken.size() < max_coins && !pool.empty()) {
            taken.push_back(take(pool, rng_.uniform_below(pool.size())));
            sum += taken.back().value;
        }
        if (sum >= need) return taken;
        for (const auto& c : taken) pool.push_back(c);
        return {};
    }

    static Coin take(std::vector<Coin>& pool, std::size_t i) {
        const Coin c = pool[i];
        pool[i] = pool.back();
        pool.pop_back();
        return c;
    }

    // A maker coin worth at least `need`, from the recycled pool with the
    // configured probability and otherwise from the fresh pool.
    std::optional<Coin> maker_coin(Satoshi need) {
        auto try_pool = [&](std::vector<Coin>& pool) -> std::optional<Coin> {
            for (int k = 0; k < 8 && !pool.empty(); ++k) {
                const auto i = rng_.uniform_below(pool.size());
                if (pool[i].value >= need) return take(pool, i);
            }
            return std::nullopt;
        };
        if (rng_.bernoulli(chain_.config.maker_recycle))
            if (auto c = try_pool(recycled_)) return c;
        return try_pool(fresh_);
    }

    void join(Height h) {
        ++join_attempts_;
        const auto& cfg = chain_.config;
        const auto when = broadcast_time(h);
        const int wanted = participants_.sample(rng_);
        const Satoshi min_taker = 25'000'000;
        const Satoshi max_denomination = 5 * kSatoshisPerCoin;

        std::size_t taker = 0;
        std::vector<Coin> taker_coins;
        for (int attempt = 0; attempt < 50 && taker_coins.empty(); ++attempt) {
            taker = rng_.uniform_below(users_.size());
            taker_coins = gather(users_[taker].coins, min_taker, 3);
        }
        if (taker_coins.empty()) {
            ++join_failures_;
            return;
        }
        Satoshi taker_sum = 0;
        for (const auto& c : taker_coins) taker_sum += c.value;

        const bool sweep = rng_.bernoulli(cfg.sweep_fraction) && taker_sum <= max_denomination;
        const Satoshi miner_fee = rng_.uniform_int(5'000, 20'000);
        std::vector<Satoshi> maker_fees;
        for (int i = 1; i < wanted; ++i) maker_fees.push_back(rng_.uniform_int(1, taker_sum / 5'000 + 10));
        Satoshi fee_total = 0;
        for (auto f : maker_fees) fee_total += f;

        Satoshi v = 0;
        if (sweep) {
            v = taker_sum - fee_total - miner_fee;
        } else {
            const double lo = std::log(2e7);
            const double hi = std::log(static_cast<double>(std::min(max_denomination, taker_sum * 9 / 10)));
            v = static_cast<Satoshi>(std::exp(lo + (hi - lo) * rng_.uniform01()));
        }
        const Satoshi q = max_fee(v);

        std::vector<std::pair<Coin, std::int64_t>> makers;  // coin, source pool
        for (int i = 1; i < wanted; ++i) {
            // Pool membership is tracked so a failed join can hand coins back.
            const auto before = recycled_.size();
            if (auto c = maker_coin(v)) makers.emplace_back(*c, recycled_.size() < before ? kMakerRecycled : kMakerFresh);
        }
        auto give_back = [&] {
            for (const auto& c : taker_coins) users_[taker].coins.push_back(c);
            for (const auto& [c, pool] : makers) (pool == kMakerRecycled ? recycled_ : fresh_).push_back(c);
            ++join_failures_;
        };
        if (makers.empty()) return give_back();
        maker_fees.resize(makers.size());
        fee_total = 0;
        for (auto& f : maker_fees) {
            f = std::min(f, q);
            fee_total += f;
        }
        if (sweep) v = taker_sum - fee_total - miner_fee;

        DraftTx tx{h, when, DraftKind::join, {}, {}};
        std::vector<std::int64_t> owners;
        std::unordered_set<Satoshi> used{v};
        // Change values must be distinct from each other and from v; nudging
        // a change down only raises the miner fee.
        auto distinct = [&used](Satoshi c) {
            while (used.contains(c)) --c;
            used.insert(c);
            return c;
        };
        for (const auto& c : taker_coins) tx.inputs.push_back({c.tx, c.vout});
        tx.outputs.push_back({fresh_user_address(taker, AddressKind::regular), v});
        owners.push_back(static_cast<std::int64_t>(taker));
        if (!sweep) {
            const auto change = distinct(taker_sum - v - fee_total - miner_fee);
            if (change <= 0) return give_back();
            tx.outputs.push_back({fresh_user_address(taker, AddressKind::regular), change});
            owners.push_back(static_cast<std::int64_t>(taker));
        }
        for (std::size_t i = 0; i < makers.size(); ++i) {
            const auto& coin = makers[i].first;
            tx.inputs.push_back({coin.tx, coin.vout});
            tx.outputs.push_back({chain_.new_address(), v});
            owners.push_back(kMakerRecycled);
            const auto change = distinct(coin.value - v + maker_fees[i]);
            if (change <= 0) {
                tx.inputs.clear();
                return give_back();
            }
            tx.outputs.push_back({chain_.new_address(), change});
            owners.push_back(kMakerRecycled);
        }
        shuffle_outputs(tx, owners);
        emit(std::move(tx), owners);
    }

    void shuffle_outputs(DraftTx& tx, std::vector<std::int64_t>& owners) {
        std::vector<std::size_t> perm(tx.outputs.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng_.shuffle(perm);
        std::vector<DraftOutput> outs;
        std::vector<std::int64_t> own;
        for (auto i : perm) {
            outs.push_back(tx.outputs[i]);
            own.push_back(owners[i]);
        }
        tx.outputs = std::move(outs);
        owners = std::move(own);
    }

    std::uint32_t fresh_user_address(std::size_t user, AddressKind kind) {
        const auto a = chain_.new_address(kind);
        users_[user].addresses.push_back(a);
        return a;
    }

    // New coins become spendable in the next block.
    void emit(DraftTx tx, const std::vector<std::int64_t>& owners) {
        const auto id = static_cast<std::uint32_t>(chain_.txs.size());
        for (std::uint32_t v = 0; v < tx.outputs.size(); ++v)
            pending_.push_back({owners[v], Coin{id, v, tx.outputs[v].value}});
        chain_.add(std::move(tx));
    }

    void release_pending() {
        for (const auto& [owner, coin] : pending_) {
            if (owner == kMakerFresh)
                fresh_.push_back(coin);
            else if (owner == kMakerRecycled)
                recycled_.push_back(coin);
            else
                users_[static_cast<std::size_t>(owner)].coins.push_back(coin);
        }
        pending_.clear();
    }

    SynthChain chain_;
    Rng rng_;
    ParticipantDistribution participants_;
    std::vector<User> users_;
    std::vector<Coin> fresh_, recycled_;
    std::vector<std::pair<std::int64_t, Coin>> pending_;
    std::size_t join_attempts_ = 0, join_failures_ = 0;
};

}  // namespace detail

/// Synthetic chain: genesis funding for users and liquidity makers, then per
/// block a coinbase and Poisson(background_tx_rate) transactions, each a
/// JoinMarket-shaped join with probability join_fraction and otherwise a
/// payment. Deterministic in cfg.seed.
inline SynthChain generate_chain(const SynthConfig& cfg) {
    cfg.validate();
    return detail::Generator(cfg).run();
}

// --- planted victim ---------------------------------------------------------

struct MixedCoinRecord {
    std::string txid;  // coin created by the last join of the path
    std::uint32_t vout = 0;
    int rounds = 0;
    Height completed = 0;  // height of the last join (wallet coin height for r = 0)
    std::vector<std::string> path;
    std::string entry_txid;  // the wallet coin that entered the first join
    std::uint32_t entry_vout = 0;
};

struct PurchaseRecord {
    std::string txid;
    Cents base_price = 0;
    Cents shipping = 0;
    Cents price = 0;  // base_price + shipping
    Cents rate = 0;
    UnixTime checkout = 0;
    UnixTime broadcast = 0;
    Satoshi amount = 0;
    bool used_mixed_coin = false;
    int mixed_coin = -1;  // index into mixed_coins
};

struct VictimRecord {
    std::vector<std::string> wallet;  // address labels
    std::vector<MixedCoinRecord> mixed_coins;
    std::vector<PurchaseRecord> purchases;
};

inline void to_json(nlohmann::json& j, const MixedCoinRecord& m) {
    j = {{"txid", m.txid},           {"vout", m.vout},   {"rounds", m.rounds},
         {"completed", m.completed}, {"path", m.path},   {"entry_txid", m.entry_txid},
         {"entry_vout", m.entry_vout}};
}
inline void from_json(const nlohmann::json& j, MixedCoinRecord& m) {
    j.at("txid").get_to(m.txid);
    j.at("vout").get_to(m.vout);
    j.at("rounds").get_to(m.rounds);
    j.at("completed").get_to(m.completed);
    j.at("path").get_to(m.path);
    j.at("entry_txid").get_to(m.entry_txid);
    j.at("entry_vout").get_to(m.entry_vout);
}
inline void to_json(nlohmann::json& j, const PurchaseRecord& p) {
    j = {{"txid", p.txid},         {"base_price", p.base_price}, {"shipping", p.shipping},
         {"price", p.price},       {"rate", p.rate},             {"checkout", p.checkout},
         {"broadcast", p.broadcast}, {"amount", p.amount},       {"used_mixed_coin", p.used_mixed_coin},
         {"mixed_coin", p.mixed_coin}};
}
inline void from_json(const nlohmann::json& j, PurchaseRecord& p) {
    j.at("txid").get_to(p.txid);
    j.at("base_price").get_to(p.base_price);
    j.at("shipping").get_to(p.shipping);
    j.at("price").get_to(p.price);
    j.at("rate").get_to(p.rate);
    j.at("checkout").get_to(p.checkout);
    j.at("broadcast").get_to(p.broadcast);
    j.at("amount").get_to(p.amount);
    j.at("used_mixed_coin").get_to(p.used_mixed_coin);
    j.at("mixed_coin").get_to(p.mixed_coin);
}
inline void to_json(nlohmann::json& j, const VictimRecord& v) {
    j = {{"wallet", v.wallet}, {"mixed_coins", v.mixed_coins}, {"purchases", v.purchases}};
}
inline void from_json(const nlohmann::json& j, VictimRecord& v) {
    j.at("wallet").get_to(v.wallet);
    j.at("mixed_coins").get_to(v.mixed_coins);
    j.at("purchases").get_to(v.purchases);
}

struct PlantRequest {
    std::size_t n_coins = 0;
    int rounds = 0;
    std::vector<UnixTime> purchase_times;  // checkout times
    Height mix_from = 1;                   // start heights are drawn from [mix_from, mix_to)
    Height mix_to = 0;                     // 0: chain duration
    std::size_t price_set_size = 5;        // shipping drawn from this prefix of the pool
    bool round_payments = false;           // purchase amounts rounded to 100 sat
    int max_attempts_per_coin = 10'000;
};

inline constexpr std::size_t kVictimWalletSize = 6;

/// Plants a victim into `chain`: six wallet addresses funded at genesis and
/// tied into one cluster by a shared-input spend at height 1; n_coins coins
/// mixed along sampled paths of `rounds` existing joins (a maker input of the
/// first join is handed to a wallet address); purchases spending mixed coins
/// (or wallet coins when none is ready) at the requested checkout times.
/// `built` must be chain.build() before this call and `joins` its detected joins.
inline VictimRecord plant_victim(SynthChain& chain, const SynthChain::Built& built, const JoinSet& joins,
                                 const PlantRequest& req, Rng& rng) {
    const auto& cfg = chain.config;
    const auto& g = built.graph;
    if (req.rounds < 0) throw ConfigError("rounds must be >= 0");
    if (cfg.duration < 2) throw ConfigError("victim planting needs a chain of at least 2 blocks");
    const Height mix_to = req.mix_to == 0 ? cfg.duration : req.mix_to;
    if (req.n_coins > 0 && (req.mix_from < 0 || mix_to > cfg.duration || req.mix_from >= mix_to))
        throw ConfigError("mixing window is outside the chain");
    const auto draft_of = [&](TxIndex t) { return SynthChain::draft_id(g.tx(t).txid); };

    VictimRecord record;
    std::vector<std::uint32_t> wallet;
    for (std::size_t k = 0; k < kVictimWalletSize; ++k) {
        wallet.push_back(chain.new_address());
        record.wallet.push_back(SynthChain::address_label(wallet.back()));
    }
    std::unordered_set<std::uint32_t> wallet_set(wallet.begin(), wallet.end());

    DraftTx funding{0, 0, DraftKind::coinbase, {}, {}};
    for (auto a : wallet) funding.outputs.push_back({a, 10 * kSatoshisPerCoin});
    const auto funding_id = chain.add(std::move(funding));

    const std::size_t spare = req.purchase_times.size() + (req.rounds == 0 ? req.n_coins : 0);
    const std::size_t n_wallet_coins = kVictimWalletSize + spare;
    DraftTx cospend{1, chain.block_time(1) - static_cast<UnixTime>(rng.uniform_below(
                                                 static_cast<std::uint64_t>(cfg.block_interval))),
                    DraftKind::victim, {}, {}};
    for (std::uint32_t k = 0; k < kVictimWalletSize; ++k) cospend.inputs.push_back({funding_id, k});
    const Satoshi share = (static_cast<Satoshi>(kVictimWalletSize) * 10 * kSatoshisPerCoin - 20'000) /
                          static_cast<Satoshi>(n_wallet_coins);
    for (std::size_t i = 0; i < n_wallet_coins; ++i)
        cospend.outputs.push_back({wallet[i % kVictimWalletSize], share - static_cast<Satoshi>(i)});
    const auto cospend_id = chain.add(std::move(cospend));
    std::vector<std::uint32_t> wallet_coins;  // unused co-spend outputs
    for (std::uint32_t i = static_cast<std::uint32_t>(n_wallet_coins); i-- > 0;) wallet_coins.push_back(i);

    // --- mixing
    std::optional<JoinPathSampler> sampler;
    if (req.rounds >= 1 && req.n_coins > 0) sampler.emplace(g, joins, req.rounds);
    struct Mixed {
        DraftInput coin;
        Height created;
    };
    std::vector<Mixed> mixed;
    for (std::size_t k = 0; k < req.n_coins; ++k) {
        const auto w = wallet[k % kVictimWalletSize];
        if (req.rounds == 0) {
            const auto vout = wallet_coins.back();
            wallet_coins.pop_back();
            record.mixed_coins.push_back({SynthChain::txid(cospend_id), vout, 0, 1, {}, SynthChain::txid(cospend_id), vout});
            mixed.push_back({{cospend_id, vout}, 1});
            continue;
        }
        bool placed = false;
        for (int attempt = 0; attempt < req.max_attempts_per_coin && !placed; ++attempt) {
            const auto h = rng.uniform_int(req.mix_from, mix_to - 1);
            const auto path = sampler->sample(h, req.rounds, rng);
            if (!path) continue;
            const auto& first = g.tx(path->front());
            const auto& last = g.tx(path->back());
            // Entry: a maker-side input (created by a join or coinbase) of the first join.
            std::vector<std::size_t> entries;
            bool wallet_present = false;
            for (std::size_t i = 0; i < first.inputs.size(); ++i) {
                const auto& in = first.inputs[i];
                const DraftInput coin{draft_of(in.prevout.tx), in.prevout.vout};
                if (chain.output(coin).address == w) wallet_present = true;
                const bool maker_side = g.tx(in.prevout.tx).coinbase || joins.in_superset(in.prevout.tx);
                if (maker_side && !chain.claimed.contains(SynthChain::coin_key(coin))) entries.push_back(i);
            }
            if (entries.empty() || wallet_present) continue;
            const auto shape = classify_join(last);
            if (!shape) continue;
            const auto last_draft = draft_of(last.index);
            std::vector<std::uint32_t> outs;
            for (std::uint32_t v = 0; v < last.outputs.size(); ++v)
                if (last.outputs[v].value == shape->denomination && !g.spender(CoinRef{last.index, v}) &&
                    !chain.claimed.contains(SynthChain::coin_key({last_draft, v})))
                    outs.push_back(v);
            if (outs.empty()) continue;
            const auto& entry = first.inputs[entries[rng.uniform_below(entries.size())]];
            const auto vout = outs[rng.uniform_below(outs.size())];
            const auto creator_draft = draft_of(entry.prevout.tx);
            chain.claimed.insert(SynthChain::coin_key({creator_draft, entry.prevout.vout}));
            chain.claimed.insert(SynthChain::coin_key({last_draft, vout}));
            chain.txs[creator_draft].outputs[entry.prevout.vout].address = w;

            MixedCoinRecord m;
            m.txid = last.txid;
            m.vout = vout;
            m.rounds = req.rounds;
            m.completed = last.height;
            for (auto t : *path) m.path.push_back(g.tx(t).txid);
            m.entry_txid = g.tx(entry.prevout.tx).txid;
            m.entry_vout = entry.prevout.vout;
            record.mixed_coins.push_back(std::move(m));
            mixed.push_back({{last_draft, vout}, last.height});
            placed = true;
        }
        if (!placed)
            throw DataError("no join path of " + std::to_string(req.rounds) + " rounds found for mixed coin " +
                            std::to_string(k));
    }

    // --- purchases
    std::vector<std::size_t> order(req.purchase_times.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return req.purchase_times[a] < req.purchase_times[b]; });
    record.purchases.resize(order.size());
    std::vector<bool> mixed_used(mixed.size(), false);
    const auto shipping_prefix = std::max<std::size_t>(1, std::min(req.price_set_size, cfg.shipping_pool.size()));
    for (auto i : order) {
        const auto checkout = req.purchase_times[i];
        const auto broadcast =
            checkout + 1 + static_cast<UnixTime>(rng.uniform_below(static_cast<std::uint64_t>(cfg.block_interval - 1)));
        const Height h = (broadcast - cfg.start_time + cfg.block_interval - 1) / cfg.block_interval;
        if (checkout < cfg.start_time || h >= cfg.duration)
            throw ConfigError("purchase time " + std::to_string(checkout) + " is outside the chain");
        const auto rate = chain.rates.prevailing(checkout);
        if (!rate) throw DataError("no exchange rate before purchase time " + std::to_string(checkout));

        PurchaseRecord p;
        DraftInput source{};
        std::vector<std::size_t> ready;
        for (std::size_t m = 0; m < mixed.size(); ++m)
            if (!mixed_used[m] && mixed[m].created < h) ready.push_back(m);
        if (!ready.empty()) {
            const auto m = ready[rng.uniform_below(ready.size())];
            mixed_used[m] = true;
            source = mixed[m].coin;
            p.used_mixed_coin = true;
            p.mixed_coin = static_cast<int>(m);
        } else {
            if (h < 2) throw ConfigError("purchase at height " + std::to_string(h) + " precedes the wallet");
            source = {cospend_id, wallet_coins.back()};
            wallet_coins.pop_back();
        }
        const Satoshi available = chain.output(source).value;
        const Satoshi fee = rng.uniform_int(1'000, 20'000);
        bool priced = false;
        for (int attempt = 0; attempt < 100 && !priced; ++attempt) {
            p.base_price = cfg.price_pool[rng.uniform_below(cfg.price_pool.size())];
            p.shipping = cfg.shipping_pool[rng.uniform_below(shipping_prefix)];
            p.price = p.base_price + p.shipping;
            p.amount = fiat_to_satoshi(p.price, *rate);
            if (req.round_payments) p.amount = round_to_multiple(p.amount, 100);
            priced = available - p.amount - fee >= 546;
        }
        if (!priced) throw ConfigError("victim coin too small for any price in the pool");
        p.rate = *rate;
        p.checkout = checkout;
        p.broadcast = broadcast;

        DraftTx tx{h, broadcast, DraftKind::victim, {source}, {}};
        tx.outputs.push_back({chain.new_address(), p.amount});
        tx.outputs.push_back({chain.new_address(), available - p.amount - fee});
        if (rng.bernoulli(0.5)) std::swap(tx.outputs[0], tx.outputs[1]);
        p.txid = SynthChain::txid(chain.add(std::move(tx)));
        record.purchases[i] = p;
    }
    return record;
}

}  // namespace auditor
