#include "dard/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dard/error.hpp"

namespace dard {

using nlohmann::json;

std::vector<UserRegionProfile> assign_user_regions(const Corpus& corpus,
                                                   const RegionMap& regions) {
    std::vector<UserRegionProfile> profiles(corpus.users.size());
    for (std::size_t u = 0; u < corpus.users.size(); ++u) {
        auto& prof = profiles[u];
        prof.visits.assign(regions.k, 0.0);
        for (const CheckIn& ev : corpus.users[u].events)
            prof.visits[regions.assignment[ev.poi]] += 1.0;
        prof.primary = static_cast<int>(
            std::max_element(prof.visits.begin(), prof.visits.end()) - prof.visits.begin());
    }
    return profiles;
}

std::vector<std::vector<double>> category_histograms(const Corpus& corpus) {
    std::vector<std::vector<double>> hist(corpus.users.size(),
                                          std::vector<double>(corpus.num_categories, 0.0));
    for (std::size_t u = 0; u < corpus.users.size(); ++u)
        for (const CheckIn& ev : corpus.users[u].events)
            hist[u][corpus.pois[ev.poi].category] += 1.0;
    return hist;
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

}  // namespace

std::vector<std::vector<int>> nearest_by_cosine(
    const std::vector<std::vector<double>>& profiles, int k_n) {
    const int n = static_cast<int>(profiles.size());
    if (n < 2) throw ContractError("neighbor selection requires at least 2 users");
    std::vector<std::vector<int>> out(n);
    std::vector<std::pair<double, int>> scored;
    for (int u = 0; u < n; ++u) {
        scored.clear();
        for (int v = 0; v < n; ++v) {
            if (v == u) continue;
            scored.emplace_back(cosine(profiles[u], profiles[v]), v);
        }
        const int take = std::min<int>(k_n, static_cast<int>(scored.size()));
        std::partial_sort(scored.begin(), scored.begin() + take, scored.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        for (int i = 0; i < take; ++i) out[u].push_back(scored[i].second);
    }
    return out;
}

NeighborSets build_neighbor_sets(const Corpus& corpus, const RegionMap& regions, int k_n) {
    NeighborSets sets;
    const auto region_profiles = assign_user_regions(corpus, regions);
    std::vector<std::vector<double>> geo_vecs;
    geo_vecs.reserve(region_profiles.size());
    for (const auto& p : region_profiles) geo_vecs.push_back(p.visits);
    sets.geo = nearest_by_cosine(geo_vecs, k_n);
    sets.sem = nearest_by_cosine(category_histograms(corpus), k_n);
    return sets;
}

void save_neighbors(const NeighborSets& sets, const Corpus& corpus,
                    const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write neighbor file: " + path);
    for (std::size_t u = 0; u < sets.geo.size(); ++u) {
        json geo = json::array(), sem = json::array();
        for (int v : sets.geo[u]) geo.push_back(corpus.users[v].user);
        for (int v : sets.sem[u]) sem.push_back(corpus.users[v].user);
        json rec{{"user", corpus.users[u].user}, {"geo", std::move(geo)},
                 {"sem", std::move(sem)}};
        out << rec.dump() << "\n";
    }
}

}  // namespace dard
