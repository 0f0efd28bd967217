#ifndef DARD_EVAL_HPP
#define DARD_EVAL_HPP

#include <cstdint>
#include <optional>
#include <vector>

#include "dard/corpus.hpp"
#include "dard/model.hpp"

namespace dard {

struct RankTask {
    int user = 0;
    std::vector<int> context;     // check-in prefix (train + val)
    int truth = 0;                // ground-truth test POI
    std::vector<int> candidates;  // truth + up to 200 unvisited same-region POIs
    int truth_pos = 0;            // index of truth within candidates
    int effective_negatives = 0;  // < 200 when the region runs short
};

// Seeded in-region negative sampling; nullopt when the user is not
// evaluable or the region has no unvisited POIs.
std::optional<RankTask> build_rank_task(const Corpus& corpus, const SplitCorpus& split,
                                        int user, const RegionMap& regions,
                                        std::uint64_t seed, int num_negatives = 200);

double hr_at_k(int rank, int k);
double ndcg_at_k(int rank, int k);

// 1-based rank of the truth candidate; ties broken by candidate index.
int rank_of_truth(const std::vector<double>& scores, int truth_pos);

struct UserMetrics {
    int user = 0;
    bool evaluated = false;
    double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
};

struct FleetMetrics {
    std::vector<UserMetrics> per_user;
    int evaluated = 0;
    double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;  // unweighted user means
};

// Score every evaluable user's tasks with their model, averaged over
// `repeats` independent negative draws.
FleetMetrics evaluate_fleet(const std::vector<const LocalModel*>& models,
                            const Corpus& corpus, const SplitCorpus& split,
                            const RegionMap& regions, const RegionVocabs& vocabs,
                            std::uint64_t seed, int repeats = 1, int workers = 1,
                            int num_negatives = 200);

}  // namespace dard

#endif  // DARD_EVAL_HPP
