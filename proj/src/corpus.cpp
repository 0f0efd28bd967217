#include "dard/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dard/error.hpp"
#include "dard/geo.hpp"
#include "dard/rng.hpp"

namespace dard {

using nlohmann::json;

std::size_t Corpus::num_checkins() const {
    std::size_t n = 0;
    for (const auto& u : users) n += u.events.size();
    return n;
}

Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file: " + path);

    Corpus corpus;
    std::unordered_map<std::string, int> user_index;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("parse error at line " + std::to_string(lineno) + ": " + e.what());
        }
        const auto ctx = " at line " + std::to_string(lineno);
        for (const char* key : {"user_id", "poi_id", "lat", "lon", "category_id", "ts"}) {
            if (!rec.contains(key))
                throw DataError(std::string("missing field '") + key + "'" + ctx);
        }
        const double lat = rec["lat"].get<double>();
        const double lon = rec["lon"].get<double>();
        const int cat = rec["category_id"].get<int>();
        if (lat < -90.0 || lat > 90.0)
            throw DataError("lat out of range [-90,90]" + ctx);
        if (lon < -180.0 || lon > 180.0)
            throw DataError("lon out of range [-180,180]" + ctx);
        if (cat < 0) throw DataError("category_id must be non-negative" + ctx);

        const std::string poi_id = rec["poi_id"].get<std::string>();
        auto [pit, inserted] = corpus.poi_index.try_emplace(poi_id, corpus.num_pois());
        if (inserted) {
            corpus.pois.push_back(Poi{poi_id, lat, lon, cat});
        } else {
            const Poi& seen = corpus.pois[pit->second];
            if (seen.lat != lat || seen.lon != lon || seen.category != cat)
                throw DataError("inconsistent attributes for poi '" + poi_id + "'" + ctx);
        }
        corpus.num_categories = std::max(corpus.num_categories, cat + 1);

        const std::string user_id = rec["user_id"].get<std::string>();
        auto [uit, user_new] = user_index.try_emplace(user_id, corpus.num_users());
        if (user_new) corpus.users.push_back(UserSeq{user_id, {}});
        corpus.users[uit->second].events.push_back(
            CheckIn{pit->second, rec["ts"].get<std::int64_t>()});
    }
    for (auto& u : corpus.users)
        std::stable_sort(u.events.begin(), u.events.end(),
                         [](const CheckIn& a, const CheckIn& b) { return a.ts < b.ts; });
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write dataset file: " + path);
    for (const auto& u : corpus.users) {
        for (const auto& ev : u.events) {
            const Poi& p = corpus.pois[ev.poi];
            json rec = {{"user_id", u.user}, {"poi_id", p.id},   {"lat", p.lat},
                        {"lon", p.lon},     {"category_id", p.category}, {"ts", ev.ts}};
            out << rec.dump() << "\n";
        }
    }
}

namespace {

// Rebuild a dense corpus keeping only the given events per user; drops
// empty users and unreferenced POIs.
Corpus compact(const Corpus& src, const std::vector<std::vector<CheckIn>>& kept_events) {
    Corpus out;
    out.num_categories = src.num_categories;
    std::vector<int> poi_remap(src.pois.size(), -1);
    for (std::size_t ui = 0; ui < src.users.size(); ++ui) {
        if (kept_events[ui].empty()) continue;
        UserSeq u;
        u.user = src.users[ui].user;
        for (const CheckIn& ev : kept_events[ui]) {
            int& np = poi_remap[ev.poi];
            if (np < 0) {
                np = out.num_pois();
                out.pois.push_back(src.pois[ev.poi]);
                out.poi_index.emplace(src.pois[ev.poi].id, np);
            }
            u.events.push_back(CheckIn{np, ev.ts});
        }
        out.users.push_back(std::move(u));
    }
    return out;
}

}  // namespace

Corpus filter_min_interactions(const Corpus& corpus, int min_interactions) {
    if (min_interactions < 1)
        throw ContractError("min_interactions must be >= 1");

    std::vector<std::vector<CheckIn>> events;
    events.reserve(corpus.users.size());
    for (const auto& u : corpus.users) events.push_back(u.events);

    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<std::size_t> poi_count(corpus.pois.size(), 0);
        for (const auto& evs : events)
            for (const CheckIn& ev : evs) ++poi_count[ev.poi];
        for (auto& evs : events) {
            if (evs.empty()) continue;
            std::vector<CheckIn> next;
            next.reserve(evs.size());
            for (const CheckIn& ev : evs)
                if (poi_count[ev.poi] >= static_cast<std::size_t>(min_interactions))
                    next.push_back(ev);
            if (next.size() != evs.size()) changed = true;
            if (next.size() < static_cast<std::size_t>(min_interactions)) {
                if (!next.empty()) changed = true;
                next.clear();
            }
            evs = std::move(next);
        }
    }
    return compact(corpus, events);
}

Corpus truncate_sequences(const Corpus& corpus, int max_len) {
    if (max_len < 3) throw ContractError("max_len must be >= 3");
    std::vector<std::vector<CheckIn>> events;
    events.reserve(corpus.users.size());
    for (const auto& u : corpus.users) {
        if (u.events.size() <= static_cast<std::size_t>(max_len)) {
            events.push_back(u.events);
        } else {
            events.emplace_back(u.events.end() - max_len, u.events.end());
        }
    }
    return compact(corpus, events);
}

RegionMap cluster_regions(const std::vector<Poi>& catalog, int k,
                          std::uint64_t seed, int max_iter) {
    if (k < 1) throw ContractError("region count k must be >= 1");
    std::vector<std::pair<double, double>> distinct;
    for (const Poi& p : catalog) {
        auto c = std::make_pair(p.lat, p.lon);
        if (std::find(distinct.begin(), distinct.end(), c) == distinct.end())
            distinct.push_back(c);
    }
    if (static_cast<std::size_t>(k) > distinct.size())
        throw ContractError("k exceeds number of distinct POI coordinates");

    const int n = static_cast<int>(catalog.size());
    auto rng = make_rng(derive_seed(seed, 0x6b6dU));

    // k-means++ seeding on the distinct coordinates
    std::vector<std::pair<double, double>> centroids;
    {
        std::uniform_int_distribution<std::size_t> pick(0, distinct.size() - 1);
        centroids.push_back(distinct[pick(rng)]);
        std::vector<double> d2(distinct.size());
        while (static_cast<int>(centroids.size()) < k) {
            double total = 0.0;
            for (std::size_t i = 0; i < distinct.size(); ++i) {
                double best = std::numeric_limits<double>::max();
                for (const auto& c : centroids)
                    best = std::min(best, geo::equirect_sq(distinct[i].first, distinct[i].second,
                                                           c.first, c.second));
                d2[i] = best;
                total += best;
            }
            std::uniform_real_distribution<double> u(0.0, total);
            double r = u(rng);
            std::size_t chosen = distinct.size() - 1;
            for (std::size_t i = 0; i < distinct.size(); ++i) {
                r -= d2[i];
                if (r <= 0.0) { chosen = i; break; }
            }
            centroids.push_back(distinct[chosen]);
        }
    }

    std::vector<int> assign(n, -1);
    auto nearest = [&](const Poi& p) {
        int best = 0;
        double bd = std::numeric_limits<double>::max();
        for (int c = 0; c < k; ++c) {
            double d = geo::equirect_sq(p.lat, p.lon, centroids[c].first, centroids[c].second);
            if (d < bd) { bd = d; best = c; }
        }
        return best;
    };

    for (int it = 0; it < max_iter; ++it) {
        bool moved = false;
        for (int i = 0; i < n; ++i) {
            int a = nearest(catalog[i]);
            if (a != assign[i]) { assign[i] = a; moved = true; }
        }
        // re-seed empty clusters from the point farthest from its centroid
        for (int c = 0; c < k; ++c) {
            if (std::find(assign.begin(), assign.end(), c) != assign.end()) continue;
            int far = 0;
            double fd = -1.0;
            for (int i = 0; i < n; ++i) {
                double d = geo::equirect_sq(catalog[i].lat, catalog[i].lon,
                                            centroids[assign[i]].first,
                                            centroids[assign[i]].second);
                if (d > fd) { fd = d; far = i; }
            }
            centroids[c] = {catalog[far].lat, catalog[far].lon};
            assign[far] = c;
            moved = true;
        }
        if (!moved && it > 0) break;
        std::vector<double> slat(k, 0.0), slon(k, 0.0), cnt(k, 0.0);
        for (int i = 0; i < n; ++i) {
            slat[assign[i]] += catalog[i].lat;
            slon[assign[i]] += catalog[i].lon;
            cnt[assign[i]] += 1.0;
        }
        for (int c = 0; c < k; ++c)
            if (cnt[c] > 0) centroids[c] = {slat[c] / cnt[c], slon[c] / cnt[c]};
    }

    RegionMap map;
    map.k = k;
    map.centroids = std::move(centroids);
    map.assignment = std::move(assign);
    return map;
}

SplitCorpus split_leave_last_out(const Corpus& corpus) {
    SplitCorpus split;
    split.users.resize(corpus.users.size());
    for (std::size_t ui = 0; ui < corpus.users.size(); ++ui) {
        const auto& evs = corpus.users[ui].events;
        UserSplit& s = split.users[ui];
        if (evs.size() < 3) {
            s.train = evs;
            s.evaluable = false;
            continue;
        }
        s.train.assign(evs.begin(), evs.end() - 2);
        s.val = evs[evs.size() - 2];
        s.test = evs.back();
        s.evaluable = true;
    }
    return split;
}

std::vector<int> category_sequence(const Corpus& corpus, const UserSeq& seq) {
    std::vector<int> cats;
    cats.reserve(seq.events.size());
    for (const CheckIn& ev : seq.events) cats.push_back(corpus.pois[ev.poi].category);
    return cats;
}

Corpus synth_corpus(const SynthConfig& cfg, std::uint64_t seed) {
    if (cfg.users < 1 || cfg.pois < 1 || cfg.categories < 1)
        throw ConfigError("synth: users, pois and categories must be positive");
    if (cfg.geo_clusters < 1 || cfg.geo_clusters > cfg.pois)
        throw ConfigError("synth: geo_clusters must be in [1, pois]");
    if (cfg.seq_len_min < 1 || cfg.seq_len_max < cfg.seq_len_min)
        throw ConfigError("synth: invalid sequence length range");
    if (cfg.pref_concentration <= 0.0)
        throw ConfigError("synth: pref_concentration must be positive");

    auto rng = make_rng(derive_seed(seed, 0x5953U));
    std::normal_distribution<double> scatter(0.0, 0.012);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // cluster centers around a city-scale bounding box
    const double lat0 = 31.2, lon0 = 121.4;
    std::vector<std::pair<double, double>> centers(cfg.geo_clusters);
    for (auto& c : centers)
        c = {lat0 + (unit(rng) - 0.5) * 0.6, lon0 + (unit(rng) - 0.5) * 0.6};

    // per-cluster category mixtures so geography and semantics correlate
    std::gamma_distribution<double> gamma_mix(0.7, 1.0);
    std::vector<std::vector<double>> cluster_cat(cfg.geo_clusters,
                                                 std::vector<double>(cfg.categories));
    for (auto& mix : cluster_cat) {
        double sum = 0.0;
        for (double& w : mix) { w = gamma_mix(rng) + 1e-3; sum += w; }
        for (double& w : mix) w /= sum;
    }

    Corpus corpus;
    corpus.num_categories = cfg.categories;
    std::vector<int> poi_cluster(cfg.pois);
    std::vector<double> poi_weight(cfg.pois);  // zipf-like base popularity
    std::vector<std::vector<int>> cluster_pois(cfg.geo_clusters);
    for (int p = 0; p < cfg.pois; ++p) {
        const int cl = p % cfg.geo_clusters;
        poi_cluster[p] = cl;
        std::discrete_distribution<int> catd(cluster_cat[cl].begin(), cluster_cat[cl].end());
        Poi poi;
        poi.id = "p" + std::to_string(p);
        poi.lat = centers[cl].first + scatter(rng);
        poi.lon = centers[cl].second + scatter(rng);
        poi.category = catd(rng);
        corpus.poi_index.emplace(poi.id, p);
        corpus.pois.push_back(std::move(poi));
        poi_weight[p] = 1.0 / (1.0 + static_cast<double>(cluster_pois[cl].size()));
        cluster_pois[cl].push_back(p);
    }

    std::uniform_int_distribution<int> lend(cfg.seq_len_min, cfg.seq_len_max);
    std::uniform_int_distribution<int> homed(0, cfg.geo_clusters - 1);
    for (int u = 0; u < cfg.users; ++u) {
        const int home = homed(rng);
        // preference biased toward the home cluster's category mixture
        std::vector<double> pref(cfg.categories);
        double psum = 0.0;
        for (int c = 0; c < cfg.categories; ++c) {
            std::gamma_distribution<double> g(cfg.pref_concentration +
                                                  8.0 * cluster_cat[home][c],
                                              1.0);
            pref[c] = g(rng) + 1e-6;
            psum += pref[c];
        }
        for (double& w : pref) w /= psum;

        UserSeq seq;
        seq.user = "u" + std::to_string(u);
        const int len = lend(rng);
        std::int64_t ts = 1'600'000'000 + u;
        int cur_cluster = home;
        for (int t = 0; t < len; ++t) {
            // first-order walk over clusters, biased toward home
            if (unit(rng) < 0.08) cur_cluster = homed(rng);
            else if (cur_cluster != home && unit(rng) < 0.5) cur_cluster = home;
            const auto& cands = cluster_pois[cur_cluster];
            std::vector<double> w(cands.size());
            for (std::size_t i = 0; i < cands.size(); ++i)
                w[i] = poi_weight[cands[i]] * (pref[corpus.pois[cands[i]].category] + 1e-4);
            std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
            ts += 1000 + static_cast<std::int64_t>(unit(rng) * 80000);
            seq.events.push_back(CheckIn{cands[pick(rng)], ts});
        }
        corpus.users.push_back(std::move(seq));
    }
    return corpus;
}

}  // namespace dard
