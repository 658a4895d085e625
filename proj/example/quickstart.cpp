// Plants a victim on a synthetic chain, then plays the adversary: link each
// purchase to a transaction and intersect the mixed coins' ancestries.

#include <cstdio>

#include "auditor/harness.hpp"

using namespace auditor;

int main() {
    SynthConfig cfg;
    cfg.duration = 400;
    cfg.background_tx_rate = 50;
    cfg.join_fraction = 0.01;
    auto chain = generate_chain(cfg);

    const auto before = chain.build();
    PlantRequest req;
    req.n_coins = 2;
    req.rounds = 2;
    req.mix_to = 200;
    const UnixTime t0 = cfg.start_time + 300 * cfg.block_interval;
    req.purchase_times = {t0, t0 + 6000};
    Rng rng(7);
    const auto victim = plant_victim(chain, before, detect_joins(before.graph), req, rng);

    const auto built = chain.build();
    const auto& g = built.graph;
    const auto joins = detect_joins(g);
    const auto clusters = cluster_all(g, joins);
    std::printf("%zu txs, %zu joins, %zu clusters\n", g.tx_count(), joins.superset().size(), clusters.cluster_count());

    // The tracker saw the cart total (shipping unknown) and the checkout time.
    const BroadcastIndex broadcasts(g, built.broadcasts);
    std::vector<CoinRef> paid_with;
    for (const auto& p : victim.purchases) {
        LinkageQuery q;
        for (auto s : kDefaultShippingPool) q.price_set.push_back(p.base_price + s);
        q.checkout_time = p.checkout;
        const auto candidates = candidate_transactions(g, broadcasts, chain.rates, q);
        std::printf("purchase %s: %zu candidate(s)\n", p.txid.c_str(), candidates.size());
        if (candidates.size() == 1 && p.used_mixed_coin) {
            const auto& in = g.tx(candidates.front()).inputs.front();
            paid_with.push_back(in.prevout);
        }
    }
    if (paid_with.size() < 2) {
        std::printf("not enough uniquely linked mixed payments to intersect\n");
        return 0;
    }

    const auto result = cluster_intersection(g, joins, clusters, paid_with, req.rounds);
    const auto truth = clusters.cluster_of(*g.find_address(victim.wallet.front()));
    std::printf("intersection: %s", std::string(to_string(result.outcome)).c_str());
    if (result.is_unique())
        std::printf(" -> cluster %u (%s)", result.unique_cluster()->value,
                    *result.unique_cluster() == truth ? "the victim's wallet" : "someone else");
    std::printf("\n");
}
