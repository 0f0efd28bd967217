#include "dard/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "dard/collab.hpp"
#include "dard/error.hpp"
#include "dard/rng.hpp"

namespace dard {

std::optional<RankTask> build_rank_task(const Corpus& corpus, const SplitCorpus& split,
                                        int user, const RegionMap& regions,
                                        std::uint64_t seed, int num_negatives) {
    const UserSplit& us = split.users[user];
    if (!us.evaluable) return std::nullopt;

    RankTask task;
    task.user = user;
    for (const CheckIn& ev : us.train) task.context.push_back(ev.poi);
    task.context.push_back(us.val.poi);
    task.truth = us.test.poi;

    std::set<int> visited;
    for (const CheckIn& ev : corpus.users[user].events) visited.insert(ev.poi);

    const int region = regions.region_of(task.truth);
    std::vector<int> unvisited;
    for (int p = 0; p < corpus.num_pois(); ++p)
        if (regions.assignment[p] == region && !visited.count(p)) unvisited.push_back(p);
    if (unvisited.empty()) return std::nullopt;

    auto rng = make_rng(derive_seed(seed, 0x6e6567U, user));
    std::shuffle(unvisited.begin(), unvisited.end(), rng);
    task.effective_negatives =
        std::min<int>(num_negatives, static_cast<int>(unvisited.size()));
    unvisited.resize(task.effective_negatives);

    task.candidates = std::move(unvisited);
    task.candidates.push_back(task.truth);
    std::shuffle(task.candidates.begin(), task.candidates.end(), rng);
    task.truth_pos = static_cast<int>(
        std::find(task.candidates.begin(), task.candidates.end(), task.truth) -
        task.candidates.begin());
    return task;
}

double hr_at_k(int rank, int k) {
    if (rank < 1) throw ContractError("hr_at_k: rank must be >= 1");
    return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(int rank, int k) {
    if (rank < 1) throw ContractError("ndcg_at_k: rank must be >= 1");
    return rank <= k ? 1.0 / std::log2(rank + 1.0) : 0.0;
}

int rank_of_truth(const std::vector<double>& scores, int truth_pos) {
    const double s = scores.at(truth_pos);
    int rank = 1;
    for (std::size_t c = 0; c < scores.size(); ++c) {
        if (static_cast<int>(c) == truth_pos) continue;
        if (scores[c] > s || (scores[c] == s && static_cast<int>(c) < truth_pos)) ++rank;
    }
    return rank;
}

FleetMetrics evaluate_fleet(const std::vector<const LocalModel*>& models,
                            const Corpus& corpus, const SplitCorpus& split,
                            const RegionMap& regions, const RegionVocabs& vocabs,
                            std::uint64_t seed, int repeats, int workers,
                            int num_negatives) {
    const int n = corpus.num_users();
    if (static_cast<int>(models.size()) != n)
        throw ContractError("evaluate_fleet: one model per user required");

    FleetMetrics fleet;
    fleet.per_user.resize(n);
    parallel_for(n, workers, [&](int u) {
        UserMetrics& um = fleet.per_user[u];
        um.user = u;
        if (!split.users[u].evaluable || models[u] == nullptr) return;
        int done = 0;
        for (int rep = 0; rep < repeats; ++rep) {
            const auto task = build_rank_task(corpus, split, u, regions,
                                              derive_seed(seed, 0x726570U, rep),
                                              num_negatives);
            if (!task) continue;
            const int region = regions.region_of(task->truth);
            const Eigen::VectorXd p =
                models[u]->forward_vocab(task->context, VocabRef::region_pois(region));
            std::vector<double> scores;
            scores.reserve(task->candidates.size());
            for (int cand : task->candidates) scores.push_back(p[vocabs.local[cand].second]);
            const int rank = rank_of_truth(scores, task->truth_pos);
            um.hr5 += hr_at_k(rank, 5);
            um.hr10 += hr_at_k(rank, 10);
            um.ndcg5 += ndcg_at_k(rank, 5);
            um.ndcg10 += ndcg_at_k(rank, 10);
            ++done;
        }
        if (done > 0) {
            um.evaluated = true;
            um.hr5 /= done;
            um.hr10 /= done;
            um.ndcg5 /= done;
            um.ndcg10 /= done;
        }
    });

    for (const UserMetrics& um : fleet.per_user) {
        if (!um.evaluated) continue;
        ++fleet.evaluated;
        fleet.hr5 += um.hr5;
        fleet.hr10 += um.hr10;
        fleet.ndcg5 += um.ndcg5;
        fleet.ndcg10 += um.ndcg10;
    }
    if (fleet.evaluated > 0) {
        fleet.hr5 /= fleet.evaluated;
        fleet.hr10 /= fleet.evaluated;
        fleet.ndcg5 /= fleet.evaluated;
        fleet.ndcg10 /= fleet.evaluated;
    }
    return fleet;
}

}  // namespace dard
