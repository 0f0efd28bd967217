#ifndef DARD_REFGEN_HPP
#define DARD_REFGEN_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dard/corpus.hpp"

namespace dard {

struct TransitionMatrix {
    int num_categories = 0;
    std::vector<std::vector<double>> counts;  // counts[a][b]: a followed by b
    std::vector<std::vector<double>> probs;   // row-normalized counts
    std::vector<bool> absorbing;              // row with no outgoing transitions

    std::vector<int> populated_rows() const;
};

struct GeoSeq {
    int region = 0;
    std::vector<int> pois;  // all mapped to `region` under the region map
};

struct SemSeq {
    std::vector<int> cats;
    std::map<int, std::vector<int>> realizations;  // region -> POI sequence
};

struct ReferencePool {
    std::vector<GeoSeq> geo;
    std::vector<SemSeq> sem;
    std::vector<std::vector<int>> geo_by_region;  // region -> indices into geo

    std::size_t size() const { return geo.size() + sem.size(); }
};

// region -> category -> POI indices, for realization lookups
struct RegionCatalogIndex {
    std::vector<std::vector<std::vector<int>>> pois;

    static RegionCatalogIndex build(const std::vector<Poi>& catalog,
                                    const RegionMap& regions, int num_categories);
};

struct RefGenConfig {
    int geo_sequences = 200;       // V
    int sem_sequences = 200;       // Z
    int gen_length = 20;           // generated category sequence length
    double max_hop_km = 5.0;       // consecutive-POI distance constraint
    bool transform_enabled = true;   // off: random item replacement (ablation)
    bool prob_enabled = true;        // off: uniform category walks (ablation)
};

std::vector<GeoSeq> transform_generate(const std::vector<std::vector<int>>& donor_seqs,
                                       const RegionMap& regions, std::uint64_t seed);

TransitionMatrix build_transition_matrix(const std::vector<std::vector<int>>& cat_seqs,
                                         int num_categories);

std::vector<std::vector<int>> prob_generate(const TransitionMatrix& tm, int length,
                                            int n, std::uint64_t seed);

std::optional<std::vector<int>> realize_poi_sequence(const std::vector<int>& cats,
                                                     int region,
                                                     const std::vector<Poi>& catalog,
                                                     const RegionCatalogIndex& index,
                                                     std::uint64_t seed,
                                                     double max_hop_km = 5.0);

ReferencePool assemble_pool(std::vector<GeoSeq> geo_seqs, std::vector<SemSeq> sem_seqs,
                            int num_regions);

// End-to-end pool construction from donor users' private sequences.
ReferencePool build_reference_pool(const Corpus& corpus, const RegionMap& regions,
                                   const std::vector<int>& donor_users,
                                   const RefGenConfig& cfg, std::uint64_t seed);

void save_pool(const ReferencePool& pool, const Corpus& corpus, const std::string& path);
ReferencePool load_pool(const Corpus& corpus, int num_regions, const std::string& path);

}  // namespace dard

#endif  // DARD_REFGEN_HPP
