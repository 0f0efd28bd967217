#ifndef DARD_CORPUS_HPP
#define DARD_CORPUS_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace dard {

struct Poi {
    std::string id;
    double lat = 0.0;
    double lon = 0.0;
    int category = 0;
};

struct CheckIn {
    int poi = 0;  // dense index into Corpus::pois
    std::int64_t ts = 0;
};

struct UserSeq {
    std::string user;
    std::vector<CheckIn> events;  // sorted by ts
};

struct Corpus {
    std::vector<Poi> pois;  // dense catalog; index is the internal poi id
    std::unordered_map<std::string, int> poi_index;
    std::vector<UserSeq> users;
    int num_categories = 0;

    int num_pois() const { return static_cast<int>(pois.size()); }
    int num_users() const { return static_cast<int>(users.size()); }
    std::size_t num_checkins() const;
};

struct RegionMap {
    int k = 0;
    std::vector<std::pair<double, double>> centroids;  // (lat, lon)
    std::vector<int> assignment;                       // poi index -> region

    int region_of(int poi) const { return assignment[poi]; }
};

struct UserSplit {
    std::vector<CheckIn> train;
    CheckIn val{};
    CheckIn test{};
    bool evaluable = false;
};

struct SplitCorpus {
    std::vector<UserSplit> users;  // parallel to Corpus::users
};

struct SynthConfig {
    int users = 50;
    int pois = 400;
    int categories = 20;
    int geo_clusters = 4;
    int seq_len_min = 30;
    int seq_len_max = 60;
    double pref_concentration = 0.5;  // Dirichlet concentration per category
};

Corpus load_corpus(const std::string& path);
void save_corpus(const Corpus& corpus, const std::string& path);

Corpus filter_min_interactions(const Corpus& corpus, int min_interactions = 10);
Corpus truncate_sequences(const Corpus& corpus, int max_len = 200);
RegionMap cluster_regions(const std::vector<Poi>& catalog, int k,
                          std::uint64_t seed, int max_iter = 100);
SplitCorpus split_leave_last_out(const Corpus& corpus);
Corpus synth_corpus(const SynthConfig& cfg, std::uint64_t seed);

// Per-user category sequence derived from the check-in sequence.
std::vector<int> category_sequence(const Corpus& corpus, const UserSeq& seq);

}  // namespace dard

#endif  // DARD_CORPUS_HPP
