#ifndef DARD_TOPOLOGY_HPP
#define DARD_TOPOLOGY_HPP

#include <string>
#include <vector>

#include "dard/corpus.hpp"

namespace dard {

struct NeighborSets {
    std::vector<std::vector<int>> geo;  // user -> up to k_n user indices
    std::vector<std::vector<int>> sem;
};

struct UserRegionProfile {
    std::vector<double> visits;  // region -> visit count
    int primary = 0;             // argmax count, ties to lowest index
};

std::vector<UserRegionProfile> assign_user_regions(const Corpus& corpus,
                                                   const RegionMap& regions);

std::vector<std::vector<double>> category_histograms(const Corpus& corpus);

// k_n most cosine-similar users per user over the given profile vectors;
// ties broken by user index, self excluded.
std::vector<std::vector<int>> nearest_by_cosine(
    const std::vector<std::vector<double>>& profiles, int k_n);

NeighborSets build_neighbor_sets(const Corpus& corpus, const RegionMap& regions,
                                 int k_n = 50);

void save_neighbors(const NeighborSets& sets, const Corpus& corpus,
                    const std::string& path);

}  // namespace dard

#endif  // DARD_TOPOLOGY_HPP
