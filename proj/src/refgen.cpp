#include "dard/refgen.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dard/error.hpp"
#include "dard/geo.hpp"
#include "dard/rng.hpp"

namespace dard {

using nlohmann::json;

std::vector<int> TransitionMatrix::populated_rows() const {
    std::vector<int> rows;
    for (int c = 0; c < num_categories; ++c)
        if (!absorbing[c]) rows.push_back(c);
    return rows;
}

RegionCatalogIndex RegionCatalogIndex::build(const std::vector<Poi>& catalog,
                                             const RegionMap& regions,
                                             int num_categories) {
    RegionCatalogIndex idx;
    idx.pois.assign(regions.k, std::vector<std::vector<int>>(num_categories));
    for (std::size_t p = 0; p < catalog.size(); ++p)
        idx.pois[regions.assignment[p]][catalog[p].category].push_back(static_cast<int>(p));
    return idx;
}

namespace {

// Label a sequence with the region of its most frequently visited POIs
// (ties to the lowest region index) and drop out-of-region POIs.
std::optional<GeoSeq> label_and_purify(const std::vector<int>& pois,
                                       const RegionMap& regions) {
    if (pois.empty()) return std::nullopt;
    std::vector<int> votes(regions.k, 0);
    for (int p : pois) ++votes[regions.assignment[p]];
    const int region = static_cast<int>(
        std::max_element(votes.begin(), votes.end()) - votes.begin());
    GeoSeq out;
    out.region = region;
    for (int p : pois)
        if (regions.assignment[p] == region) out.pois.push_back(p);
    if (out.pois.size() < 3) return std::nullopt;
    return out;
}

}  // namespace

std::vector<GeoSeq> transform_generate(const std::vector<std::vector<int>>& donor_seqs,
                                       const RegionMap& regions, std::uint64_t seed) {
    if (donor_seqs.size() < 2)
        throw DataError("transform generation requires at least 2 donor sequences");

    auto rng = make_rng(derive_seed(seed, 0x7472U));
    std::vector<std::size_t> perm(donor_seqs.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    std::vector<GeoSeq> out;
    for (std::size_t i = 0; i + 1 < perm.size(); i += 2) {
        const auto& a = donor_seqs[perm[i]];
        const auto& b = donor_seqs[perm[i + 1]];

        // first position in a whose POI also occurs in b
        std::size_t ai = a.size(), bi = 0;
        for (std::size_t x = 0; x < a.size() && ai == a.size(); ++x) {
            auto it = std::find(b.begin(), b.end(), a[x]);
            if (it != b.end()) {
                ai = x;
                bi = static_cast<std::size_t>(it - b.begin());
            }
        }
        if (ai == a.size()) continue;  // disjoint POI sets, skip pair

        std::vector<int> swapped_a(a.begin(), a.begin() + ai + 1);
        swapped_a.insert(swapped_a.end(), b.begin() + bi + 1, b.end());
        std::vector<int> swapped_b(b.begin(), b.begin() + bi + 1);
        swapped_b.insert(swapped_b.end(), a.begin() + ai + 1, a.end());

        for (const auto& seq : {swapped_a, swapped_b})
            if (auto g = label_and_purify(seq, regions)) out.push_back(std::move(*g));
    }
    return out;
}

TransitionMatrix build_transition_matrix(const std::vector<std::vector<int>>& cat_seqs,
                                         int num_categories) {
    bool any = false;
    for (const auto& s : cat_seqs)
        if (s.size() >= 2) any = true;
    if (!any)
        throw DataError("transition matrix requires a sequence of length >= 2");

    TransitionMatrix tm;
    tm.num_categories = num_categories;
    tm.counts.assign(num_categories, std::vector<double>(num_categories, 0.0));
    for (const auto& s : cat_seqs)
        for (std::size_t i = 0; i + 1 < s.size(); ++i)
            tm.counts[s[i]][s[i + 1]] += 1.0;

    tm.probs = tm.counts;
    tm.absorbing.assign(num_categories, true);
    for (int a = 0; a < num_categories; ++a) {
        const double total =
            std::accumulate(tm.probs[a].begin(), tm.probs[a].end(), 0.0);
        if (total > 0.0) {
            tm.absorbing[a] = false;
            for (double& v : tm.probs[a]) v /= total;
        }
    }
    return tm;
}

std::vector<std::vector<int>> prob_generate(const TransitionMatrix& tm, int length,
                                            int n, std::uint64_t seed) {
    const std::vector<int> starts = tm.populated_rows();
    if (starts.empty())
        throw DataError("transition matrix has no populated rows");

    auto rng = make_rng(derive_seed(seed, 0x7067U));
    std::uniform_int_distribution<std::size_t> start_pick(0, starts.size() - 1);

    std::vector<std::vector<int>> out;
    out.reserve(n);
    for (int s = 0; s < n; ++s) {
        std::vector<int> seq;
        int restarts = 0;
        while (static_cast<int>(seq.size()) < length) {
            if (seq.empty()) seq.push_back(starts[start_pick(rng)]);
            const int cur = seq.back();
            if (static_cast<int>(seq.size()) == length) break;
            if (tm.absorbing[cur]) {
                // dead end: restart this walk from a fresh initiator
                seq.clear();
                if (++restarts > 10000)
                    throw NumericalError("probability generation stuck on absorbing rows");
                continue;
            }
            std::discrete_distribution<int> next(tm.probs[cur].begin(), tm.probs[cur].end());
            seq.push_back(next(rng));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

std::optional<std::vector<int>> realize_poi_sequence(const std::vector<int>& cats,
                                                     int region,
                                                     const std::vector<Poi>& catalog,
                                                     const RegionCatalogIndex& index,
                                                     std::uint64_t seed,
                                                     double max_hop_km) {
    if (region < 0 || region >= static_cast<int>(index.pois.size()))
        throw ContractError("realize: region out of range");
    auto rng = make_rng(derive_seed(seed, 0x7270U, region));

    std::vector<int> out;
    out.reserve(cats.size());
    for (int c : cats) {
        const auto& cands = index.pois[region][c];
        std::vector<int> feasible;
        if (out.empty()) {
            feasible = cands;
        } else {
            const Poi& prev = catalog[out.back()];
            for (int p : cands)
                if (geo::haversine_km(prev.lat, prev.lon, catalog[p].lat, catalog[p].lon) <=
                    max_hop_km)
                    feasible.push_back(p);
        }
        if (feasible.empty()) return std::nullopt;
        std::uniform_int_distribution<std::size_t> pick(0, feasible.size() - 1);
        out.push_back(feasible[pick(rng)]);
    }
    return out;
}

ReferencePool assemble_pool(std::vector<GeoSeq> geo_seqs, std::vector<SemSeq> sem_seqs,
                            int num_regions) {
    ReferencePool pool;
    std::set<std::pair<int, std::vector<int>>> geo_seen;
    for (auto& g : geo_seqs)
        if (geo_seen.emplace(g.region, g.pois).second) pool.geo.push_back(std::move(g));
    std::set<std::vector<int>> sem_seen;
    for (auto& s : sem_seqs)
        if (sem_seen.insert(s.cats).second) pool.sem.push_back(std::move(s));

    pool.geo_by_region.assign(num_regions, {});
    for (std::size_t i = 0; i < pool.geo.size(); ++i)
        pool.geo_by_region[pool.geo[i].region].push_back(static_cast<int>(i));
    return pool;
}

ReferencePool build_reference_pool(const Corpus& corpus, const RegionMap& regions,
                                   const std::vector<int>& donor_users,
                                   const RefGenConfig& cfg, std::uint64_t seed) {
    if (donor_users.empty()) throw DataError("empty donor set");

    std::vector<std::vector<int>> donor_seqs;
    std::vector<std::vector<int>> donor_cats;
    for (int u : donor_users) {
        std::vector<int> pois;
        for (const CheckIn& ev : corpus.users[u].events) pois.push_back(ev.poi);
        donor_cats.push_back(category_sequence(corpus, corpus.users[u]));
        donor_seqs.push_back(std::move(pois));
    }

    auto rng = make_rng(derive_seed(seed, 0x706cU));

    std::vector<GeoSeq> geo;
    if (cfg.transform_enabled) {
        for (int round = 0; static_cast<int>(geo.size()) < cfg.geo_sequences && round < 64;
             ++round) {
            auto batch = transform_generate(donor_seqs, regions, derive_seed(seed, 0x7478U, round));
            geo.insert(geo.end(), batch.begin(), batch.end());
        }
    } else {
        // w/o Trans ablation: desensitize by random in-region item replacement
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::uniform_int_distribution<int> any_poi(0, corpus.num_pois() - 1);
        for (int round = 0; static_cast<int>(geo.size()) < cfg.geo_sequences && round < 64;
             ++round) {
            for (const auto& src : donor_seqs) {
                std::vector<int> mutated = src;
                for (int& p : mutated)
                    if (unit(rng) < 0.3) p = any_poi(rng);
                if (auto g = label_and_purify(mutated, regions)) geo.push_back(std::move(*g));
                if (static_cast<int>(geo.size()) >= cfg.geo_sequences) break;
            }
        }
    }
    if (static_cast<int>(geo.size()) > cfg.geo_sequences) geo.resize(cfg.geo_sequences);

    std::vector<std::vector<int>> cat_walks;
    if (cfg.prob_enabled) {
        const TransitionMatrix tm = build_transition_matrix(donor_cats, corpus.num_categories);
        cat_walks = prob_generate(tm, cfg.gen_length, cfg.sem_sequences,
                                  derive_seed(seed, 0x7067U));
    } else {
        // w/o Prob ablation: uniform random category walks
        std::uniform_int_distribution<int> cat(0, corpus.num_categories - 1);
        cat_walks.resize(cfg.sem_sequences);
        for (auto& w : cat_walks) {
            w.resize(cfg.gen_length);
            for (int& c : w) c = cat(rng);
        }
    }

    const RegionCatalogIndex index =
        RegionCatalogIndex::build(corpus.pois, regions, corpus.num_categories);
    std::vector<SemSeq> sem;
    sem.reserve(cat_walks.size());
    for (std::size_t z = 0; z < cat_walks.size(); ++z) {
        SemSeq s;
        s.cats = std::move(cat_walks[z]);
        for (int r = 0; r < regions.k; ++r) {
            auto realized = realize_poi_sequence(s.cats, r, corpus.pois, index,
                                                 derive_seed(seed, 0x726cU, z, r),
                                                 cfg.max_hop_km);
            if (realized) s.realizations.emplace(r, std::move(*realized));
        }
        sem.push_back(std::move(s));
    }

    return assemble_pool(std::move(geo), std::move(sem), regions.k);
}

void save_pool(const ReferencePool& pool, const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write pool file: " + path);
    for (const auto& g : pool.geo) {
        json rec{{"kind", "geo"}, {"region", g.region}};
        json pois = json::array();
        for (int p : g.pois) pois.push_back(corpus.pois[p].id);
        rec["pois"] = std::move(pois);
        out << rec.dump() << "\n";
    }
    for (const auto& s : pool.sem) {
        json rec{{"kind", "sem"}, {"cats", s.cats}};
        json realizations = json::object();
        for (const auto& [r, pois] : s.realizations) {
            json arr = json::array();
            for (int p : pois) arr.push_back(corpus.pois[p].id);
            realizations[std::to_string(r)] = std::move(arr);
        }
        rec["realizations"] = std::move(realizations);
        out << rec.dump() << "\n";
    }
}

ReferencePool load_pool(const Corpus& corpus, int num_regions, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open pool file: " + path);
    auto poi_of = [&](const std::string& id) {
        auto it = corpus.poi_index.find(id);
        if (it == corpus.poi_index.end())
            throw DataError("pool references unknown poi '" + id + "'");
        return it->second;
    };

    std::vector<GeoSeq> geo;
    std::vector<SemSeq> sem;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("pool parse error at line " + std::to_string(lineno) + ": " +
                            e.what());
        }
        const std::string kind = rec.at("kind").get<std::string>();
        if (kind == "geo") {
            GeoSeq g;
            g.region = rec.at("region").get<int>();
            for (const auto& id : rec.at("pois")) g.pois.push_back(poi_of(id.get<std::string>()));
            geo.push_back(std::move(g));
        } else if (kind == "sem") {
            SemSeq s;
            s.cats = rec.at("cats").get<std::vector<int>>();
            for (const auto& [key, arr] : rec.at("realizations").items()) {
                std::vector<int> pois;
                for (const auto& id : arr) pois.push_back(poi_of(id.get<std::string>()));
                s.realizations.emplace(std::stoi(key), std::move(pois));
            }
            sem.push_back(std::move(s));
        } else {
            throw DataError("unknown pool record kind '" + kind + "' at line " +
                            std::to_string(lineno));
        }
    }
    return assemble_pool(std::move(geo), std::move(sem), num_regions);
}

}  // namespace dard
