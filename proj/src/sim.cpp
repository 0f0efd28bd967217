#include "dard/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>

#include "dard/error.hpp"
#include "dard/rng.hpp"

namespace dard {

Strategy strategy_from_string(const std::string& name) {
    if (name == "original") return Strategy::Original;
    if (name == "random") return Strategy::Random;
    if (name == "popular") return Strategy::Popular;
    if (name == "adaptive") return Strategy::Adaptive;
    throw ConfigError("unknown strategy '" + name + "'");
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Original: return "original";
        case Strategy::Random: return "random";
        case Strategy::Popular: return "popular";
        case Strategy::Adaptive: return "adaptive";
    }
    throw ContractError("bad strategy value");
}

ServerState server_init(const Corpus& corpus, const RegionMap& regions,
                        const RunConfig& cfg) {
    if (cfg.donor_fraction <= 0.0 || cfg.donor_fraction > 1.0 ||
        cfg.pool_fraction <= 0.0 || cfg.pool_fraction > 1.0)
        throw ConfigError("donor/pool fractions must be in (0,1]");

    const int n = corpus.num_users();
    const int donors = static_cast<int>(std::llround(cfg.donor_fraction * n));
    if (donors < 1) throw ContractError("server_init: empty donor set");

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(derive_seed(cfg.master_seed, 0x646f6eU));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(donors);
    std::sort(order.begin(), order.end());

    ReferencePool pool = build_reference_pool(corpus, regions, order, cfg.refgen,
                                              derive_seed(cfg.master_seed, 0x706f6fU));
    NeighborSets neighbors = build_neighbor_sets(corpus, regions, cfg.k_n);
    return ServerState(std::move(pool), std::move(neighbors));
}

Fleet deploy_fleet(const ServerState& server, const Corpus& corpus,
                   const RegionMap& regions, const SplitCorpus& split,
                   const RunConfig& cfg) {
    Fleet fleet;
    fleet.ctx.corpus = &corpus;
    fleet.ctx.regions = &regions;
    fleet.ctx.split = &split;
    fleet.ctx.vocabs = std::make_shared<RegionVocabs>(
        RegionVocabs::build(regions, corpus.num_pois()));
    fleet.ctx.instances = flatten_pool(server.pool());
    fleet.ctx.noise_seed = derive_seed(cfg.master_seed, 0x6e7a65U);

    fleet.ctx.corrupted.assign(fleet.ctx.instances.size(), false);
    if (cfg.corrupt_fraction > 0.0) {
        auto rng = make_rng(derive_seed(cfg.master_seed, 0x636f72U));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (std::size_t x = 0; x < fleet.ctx.instances.size(); ++x)
            fleet.ctx.corrupted[x] = u(rng) < cfg.corrupt_fraction;
    }

    const NeighborSets& nbs = server.neighbors();
    fleet.devices.resize(corpus.num_users());
    for (int u = 0; u < corpus.num_users(); ++u) {
        DeviceState& dev = fleet.devices[u];
        dev.user = u;
        dev.seed = derive_seed(cfg.master_seed, 0x646576U, u);

        std::set<int> region_set;
        for (const CheckIn& ev : corpus.users[u].events)
            region_set.insert(regions.region_of(ev.poi));
        std::vector<int> user_regions(region_set.begin(), region_set.end());
        dev.model = std::make_unique<EmbedMeanModel>(
            fleet.ctx.vocabs, user_regions, corpus.num_categories, cfg.dim,
            cfg.window, dev.seed);

        std::vector<int> slice;
        for (std::size_t x = 0; x < fleet.ctx.instances.size(); ++x) {
            const Instance& inst = fleet.ctx.instances[x];
            if (!inst.is_geo_kind() || region_set.count(inst.over.region))
                slice.push_back(static_cast<int>(x));
        }
        const int take = std::max<int>(
            1, static_cast<int>(std::ceil(cfg.pool_fraction * slice.size() - 1e-12)));
        auto rng = make_rng(derive_seed(cfg.master_seed, 0x64706cU, u));
        std::shuffle(slice.begin(), slice.end(), rng);
        slice.resize(std::min<int>(take, static_cast<int>(slice.size())));
        std::sort(slice.begin(), slice.end());
        dev.deployed = slice;
        dev.working = std::move(slice);

        dev.geo_neighbors = nbs.geo[u];
        dev.sem_neighbors = nbs.sem[u];
    }
    return fleet;
}

namespace {

Eigen::VectorXd fleet_noise(int dim, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd q(dim);
    for (int i = 0; i < dim; ++i) q[i] = u(rng) + 1e-6;
    return q / q.sum();
}

// Output-head (bias) parameter scope of one device's model: scoped
// positions laid out block by block, regions in sorted order then the
// category block; mirrors output_head_indices().
struct HeadScope {
    std::vector<int> full_idx;             // scoped pos -> full theta index
    std::vector<std::pair<int, int>> blk;  // VocabRef-block -> (offset, size)
    std::vector<VocabRef> overs;           // parallel to blk

    int block_of(const VocabRef& over) const {
        for (std::size_t b = 0; b < overs.size(); ++b)
            if (overs[b] == over) return static_cast<int>(b);
        throw ContractError("scope has no block for vocab");
    }
};

HeadScope make_head_scope(const EmbedMeanModel& model, const RegionVocabs& vocabs,
                          int num_categories) {
    HeadScope scope;
    scope.full_idx = model.output_head_indices();
    int off = 0;
    for (int r : model.regions()) {
        scope.blk.emplace_back(off, vocabs.size(r));
        scope.overs.push_back(VocabRef::region_pois(r));
        off += vocabs.size(r);
    }
    scope.blk.emplace_back(off, num_categories);
    scope.overs.push_back(VocabRef::categories());
    off += num_categories;
    if (off != static_cast<int>(scope.full_idx.size()))
        throw ContractError("head scope layout mismatch");
    return scope;
}

Eigen::VectorXd gather(const Eigen::VectorXd& full, const std::vector<int>& idx) {
    Eigen::VectorXd out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = full[idx[i]];
    return out;
}

// d ||p - q||^2 / d b  within a softmax head block, p = softmax(z + b)
Eigen::VectorXd distill_bias_grad(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    const Eigen::VectorXd v = p - q;
    return 2.0 * (p.cwiseProduct(v) - p * p.dot(v));
}

// closed-form block Hessian of ||p - q||^2 w.r.t. the bias vector
Eigen::MatrixXd distill_bias_hessian(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    const Eigen::VectorXd v = p - q;
    const Eigen::VectorXd u = 2.0 * p - q;
    const Eigen::MatrixXd J =
        Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
    const double pv = p.dot(v);
    return 2.0 * (u.asDiagonal() * J - pv * J - p * (J * u).transpose());
}

}  // namespace

InfluenceProblem build_device_influence(const FleetContext& ctx,
                                        const std::vector<DeviceState>& devices,
                                        int device, int epoch_tag,
                                        const CollabConfig& collab) {
    (void)collab;
    const DeviceState& dev = devices[device];
    const auto scope = make_head_scope(*dev.model, *ctx.vocabs, ctx.corpus->num_categories);
    const Eigen::VectorXd theta_full = dev.model->get_params();

    // frozen neighbor-mean decisions per working instance
    struct Frozen {
        int id = 0;
        Eigen::VectorXd p;       // own decision at theta_hat
        Eigen::VectorXd q_mean;  // empty when no neighbor participates
    };
    std::vector<Frozen> frozen;
    for (int id : dev.working) {
        const Instance& inst = ctx.instances[id];
        Frozen f;
        f.id = id;
        f.p = dev.model->forward_vocab(inst.seq, inst.over);
        const auto& nbs = inst.is_geo_kind() ? dev.geo_neighbors : dev.sem_neighbors;
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(f.p.size());
        int cnt = 0;
        for (int j : nbs) {
            const DeviceState& other = devices[j];
            if (inst.is_geo_kind() && !other.model->has_region(inst.over.region)) continue;
            if (!ctx.corrupted.empty() && ctx.corrupted[id]) {
                sum += fleet_noise(static_cast<int>(f.p.size()),
                                   derive_seed(ctx.noise_seed, epoch_tag, j, id));
            } else {
                sum += other.model->forward_vocab(inst.seq, inst.over);
            }
            ++cnt;
        }
        if (cnt > 0) f.q_mean = sum / cnt;
        frozen.push_back(std::move(f));
    }

    // evaluating a loss at arbitrary scoped theta: inject into a clone
    auto probe = std::make_shared<std::unique_ptr<LocalModel>>(dev.model->clone());
    auto at_theta = [probe, theta_full, scope](const Eigen::VectorXd& ts) -> LocalModel& {
        Eigen::VectorXd full = theta_full;
        for (std::size_t i = 0; i < scope.full_idx.size(); ++i)
            full[scope.full_idx[i]] = ts[i];
        (*probe)->set_params(full);
        return **probe;
    };

    InfluenceProblem problem;
    problem.theta_hat = gather(theta_full, scope.full_idx);

    for (const Frozen& f : frozen) {
        const Instance inst = ctx.instances[f.id];
        if (f.q_mean.size() == 0) {
            problem.ref_losses.push_back(
                LossTerm{[](const Eigen::VectorXd&) { return 0.0; },
                         [n = problem.theta_hat.size()](const Eigen::VectorXd&) {
                             return Eigen::VectorXd::Zero(n).eval();
                         }});
            continue;
        }
        const Eigen::VectorXd q = f.q_mean;
        const int b = scope.block_of(inst.over);
        const auto [boff, bsize] = scope.blk[b];
        problem.ref_losses.push_back(LossTerm{
            [at_theta, inst, q](const Eigen::VectorXd& ts) {
                return (at_theta(ts).forward_vocab(inst.seq, inst.over) - q).squaredNorm();
            },
            [at_theta, inst, q, boff = boff, bsize = bsize,
             n = problem.theta_hat.size()](const Eigen::VectorXd& ts) {
                Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
                const Eigen::VectorXd p = at_theta(ts).forward_vocab(inst.seq, inst.over);
                g.segment(boff, bsize) = distill_bias_grad(p, q);
                return g;
            }});
    }

    // validation loss at the held-out check-in: POI CE plus category CE
    const UserSplit& us = ctx.split->users[dev.user];
    if (us.evaluable || !us.train.empty()) {
        std::vector<int> train_pois, train_cats;
        for (const CheckIn& ev : us.train) {
            train_pois.push_back(ev.poi);
            train_cats.push_back(ctx.corpus->pois[ev.poi].category);
        }
        const auto [vr, vlocal] = ctx.vocabs->local[us.val.poi];
        const int vcat = ctx.corpus->pois[us.val.poi].category;
        auto push_ce = [&](const VocabRef& over, std::vector<int> prefix, int target) {
            const int b = scope.block_of(over);
            const auto [boff, bsize] = scope.blk[b];
            problem.val_losses.push_back(LossTerm{
                [at_theta, over, prefix, target](const Eigen::VectorXd& ts) {
                    const Eigen::VectorXd p = at_theta(ts).forward_vocab(prefix, over);
                    return -std::log(std::max(p[target], 1e-300));
                },
                [at_theta, over, prefix, target, boff = boff, bsize = bsize,
                 n = problem.theta_hat.size()](const Eigen::VectorXd& ts) {
                    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
                    Eigen::VectorXd p = at_theta(ts).forward_vocab(prefix, over);
                    p[target] -= 1.0;
                    g.segment(boff, bsize) = p;
                    return g;
                }});
        };
        push_ce(VocabRef::region_pois(vr), train_pois, vlocal);
        push_ce(VocabRef::categories(), train_cats, vcat);
        // tail of the training sequence stabilizes the risk estimate
        const int T = static_cast<int>(train_pois.size());
        for (int t = std::max(1, T - 4); t < T; ++t) {
            const auto [tr, tlocal] = ctx.vocabs->local[train_pois[t]];
            push_ce(VocabRef::region_pois(tr),
                    std::vector<int>(train_pois.begin(), train_pois.begin() + t),
                    tlocal);
        }
    }

    // block-diagonal closed-form mean Hessian over the reference losses
    auto instances = &ctx.instances;
    problem.hessian = [at_theta, frozen, scope, instances,
                       m = std::max<std::size_t>(1, frozen.size())](
                          const Eigen::VectorXd& ts) {
        const int n = static_cast<int>(ts.size());
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
        for (const Frozen& f : frozen) {
            if (f.q_mean.size() == 0) continue;
            const Instance& inst = (*instances)[f.id];
            const int b = scope.block_of(inst.over);
            const auto [boff, bsize] = scope.blk[b];
            const Eigen::VectorXd p = at_theta(ts).forward_vocab(inst.seq, inst.over);
            H.block(boff, boff, bsize, bsize) +=
                distill_bias_hessian(p, f.q_mean) / static_cast<double>(m);
        }
        return H;
    };
    return problem;
}

namespace {

std::vector<int> budget_select(const FleetContext& ctx, const DeviceState& dev,
                               Strategy strategy, int budget, std::uint64_t seed) {
    std::vector<int> pool = dev.working;
    budget = std::min<int>(budget, static_cast<int>(pool.size()));
    auto rng = make_rng(seed);
    if (strategy == Strategy::Random) {
        std::shuffle(pool.begin(), pool.end(), rng);
        pool.resize(budget);
    } else {  // Popular: weight by total visit frequency of the instance's items
        std::vector<std::size_t> poi_freq(ctx.corpus->num_pois(), 0);
        std::vector<std::size_t> cat_freq(ctx.corpus->num_categories, 0);
        for (const UserSeq& u : ctx.corpus->users)
            for (const CheckIn& ev : u.events) {
                ++poi_freq[ev.poi];
                ++cat_freq[ctx.corpus->pois[ev.poi].category];
            }
        // normalize per vocabulary so geo and sem instances compete fairly
        double poi_mean = 0.0, cat_mean = 0.0;
        for (std::size_t f : poi_freq) poi_mean += static_cast<double>(f) / poi_freq.size();
        for (std::size_t f : cat_freq) cat_mean += static_cast<double>(f) / cat_freq.size();
        std::vector<double> w;
        for (int id : pool) {
            const Instance& inst = ctx.instances[id];
            double total = 0.0;
            for (int item : inst.seq)
                total += inst.is_geo_kind() ? poi_freq[item] : cat_freq[item];
            const double mean = inst.is_geo_kind() ? poi_mean : cat_mean;
            w.push_back(total / (inst.seq.size() * std::max(mean, 1e-12)) + 1e-9);
        }
        std::vector<int> chosen;
        std::vector<bool> used(pool.size(), false);
        for (int t = 0; t < budget; ++t) {
            std::discrete_distribution<int> pick(w.begin(), w.end());
            int x = pick(rng);
            while (used[x]) x = pick(rng);
            used[x] = true;
            w[x] = 0.0;
            chosen.push_back(pool[x]);
        }
        pool = std::move(chosen);
    }
    std::sort(pool.begin(), pool.end());
    return pool;
}

RunResult run_dard_impl(const Corpus& corpus, const RegionMap& regions,
                        const SplitCorpus& split, const RunConfig& cfg, int workers,
                        const std::vector<int>* budgets) {
    ServerState server = server_init(corpus, regions, cfg);
    Fleet fleet = deploy_fleet(server, corpus, regions, split, cfg);
    server.reset_counter();

    const int n = corpus.num_users();
    std::vector<std::array<int, 3>> sizes(n);
    for (int u = 0; u < n; ++u)
        sizes[u][0] = static_cast<int>(fleet.devices[u].deployed.size());

    // stage (a): CL training, with loss tracking only under adaptive
    const bool track = cfg.tracking && cfg.strategy == Strategy::Adaptive;
    TrainOutcome stage_a =
        train_epochs(fleet.ctx, fleet.devices, cfg.collab, track,
                     derive_seed(cfg.master_seed, 0x737461U), workers);
    for (int u = 0; u < n; ++u)
        sizes[u][1] = static_cast<int>(fleet.devices[u].working.size());

    // stage (b): reference selection
    switch (cfg.strategy) {
        case Strategy::Original:
            break;
        case Strategy::Random:
        case Strategy::Popular:
            for (int u = 0; u < n; ++u) {
                DeviceState& dev = fleet.devices[u];
                const int budget =
                    budgets ? (*budgets)[u]
                            : static_cast<int>(std::ceil(
                                  cfg.collab.rho * dev.working.size() - 1e-12));
                dev.working = budget_select(
                    fleet.ctx, dev, cfg.strategy, budget,
                    derive_seed(cfg.master_seed, 0x73656cU, u));
            }
            break;
        case Strategy::Adaptive:
            if (cfg.influence_selection) {
                std::vector<std::string> failure(n);
                parallel_for(n, workers, [&](int u) {
                    DeviceState& dev = fleet.devices[u];
                    if (dev.working.empty()) return;
                    try {
                        const InfluenceProblem problem = build_device_influence(
                            fleet.ctx, fleet.devices, u, cfg.collab.epochs,
                            cfg.collab);
                        if (problem.val_losses.empty()) return;
                        const InfluenceReport report =
                            influence_report(problem, cfg.influence);
                        std::vector<int> kept;
                        for (int j : select_adaptive(report)) kept.push_back(dev.working[j]);
                        dev.working = std::move(kept);
                    } catch (const std::exception& e) {
                        failure[u] = e.what();
                    }
                });
                for (int u = 0; u < n; ++u)
                    if (!failure[u].empty())
                        throw NumericalError("influence selection failed for user " +
                                             corpus.users[u].user + ": " + failure[u]);
            }
            break;
    }
    for (int u = 0; u < n; ++u)
        sizes[u][2] = static_cast<int>(fleet.devices[u].working.size());

    // stage (c): retrain on D_hat from a fresh seed-matched initialization
    if (!cfg.resume_retrain)
        for (DeviceState& dev : fleet.devices) {
            std::set<int> region_set(dev.model->regions().begin(),
                                     dev.model->regions().end());
            dev.model = std::make_unique<EmbedMeanModel>(
                fleet.ctx.vocabs,
                std::vector<int>(region_set.begin(), region_set.end()),
                corpus.num_categories, cfg.dim, cfg.window, dev.seed);
        }
    TrainOutcome stage_c =
        train_epochs(fleet.ctx, fleet.devices, cfg.collab, false,
                     derive_seed(cfg.master_seed, 0x737463U), workers);

    std::vector<const LocalModel*> models;
    for (const DeviceState& dev : fleet.devices) models.push_back(dev.model.get());
    const FleetMetrics metrics = evaluate_fleet(
        models, corpus, split, regions, *fleet.ctx.vocabs,
        derive_seed(cfg.master_seed, 0x65766cU), cfg.eval_repeats, workers,
        cfg.eval_negatives);

    RunResult result;
    result.strategy = strategy_name(cfg.strategy);
    result.messages = stage_a.messages + stage_c.messages;
    result.server_accesses_post_init = server.accesses();
    result.evaluated = metrics.evaluated;
    result.hr5 = metrics.hr5;
    result.hr10 = metrics.hr10;
    result.ndcg5 = metrics.ndcg5;
    result.ndcg10 = metrics.ndcg10;
    for (int u = 0; u < n; ++u) {
        RunResult::UserRow row;
        row.user = corpus.users[u].user;
        row.stage_sizes = sizes[u];
        row.evaluated = metrics.per_user[u].evaluated;
        row.hr5 = metrics.per_user[u].hr5;
        row.hr10 = metrics.per_user[u].hr10;
        row.ndcg5 = metrics.per_user[u].ndcg5;
        row.ndcg10 = metrics.per_user[u].ndcg10;
        result.rows.push_back(std::move(row));
    }
    return result;
}

}  // namespace

RunResult run_dard(const Corpus& corpus, const RegionMap& regions,
                   const SplitCorpus& split, const RunConfig& cfg, int workers) {
    return run_dard_impl(corpus, regions, split, cfg, workers, nullptr);
}

std::map<std::string, RunResult> run_strategy_baselines(const Corpus& corpus,
                                                        const RegionMap& regions,
                                                        const SplitCorpus& split,
                                                        const RunConfig& cfg,
                                                        int workers) {
    std::map<std::string, RunResult> out;

    RunConfig adaptive = cfg;
    adaptive.strategy = Strategy::Adaptive;
    out["adaptive"] = run_dard_impl(corpus, regions, split, adaptive, workers, nullptr);

    std::vector<int> budgets;
    for (const auto& row : out["adaptive"].rows) budgets.push_back(row.stage_sizes[2]);

    RunConfig original = cfg;
    original.strategy = Strategy::Original;
    out["original"] = run_dard_impl(corpus, regions, split, original, workers, nullptr);

    for (Strategy s : {Strategy::Random, Strategy::Popular}) {
        RunConfig c = cfg;
        c.strategy = s;
        out[strategy_name(s)] = run_dard_impl(corpus, regions, split, c, workers, &budgets);
    }
    return out;
}

std::string run_result_to_string(const RunResult& result) {
    std::ostringstream out;
    for (const auto& row : result.rows) {
        nlohmann::ordered_json j;
        j["user"] = row.user;
        j["stage_sizes"] = row.stage_sizes;
        if (row.evaluated) {
            j["hr5"] = row.hr5;
            j["hr10"] = row.hr10;
            j["ndcg5"] = row.ndcg5;
            j["ndcg10"] = row.ndcg10;
        } else {
            j["hr5"] = nullptr;
            j["hr10"] = nullptr;
            j["ndcg5"] = nullptr;
            j["ndcg10"] = nullptr;
        }
        out << j.dump() << '\n';
    }
    nlohmann::ordered_json agg;
    agg["user"] = "__aggregate__";
    agg["strategy"] = result.strategy;
    agg["evaluated"] = result.evaluated;
    agg["hr5"] = result.hr5;
    agg["hr10"] = result.hr10;
    agg["ndcg5"] = result.ndcg5;
    agg["ndcg10"] = result.ndcg10;
    agg["messages"] = result.messages;
    agg["server_accesses_post_init"] = result.server_accesses_post_init;
    out << agg.dump() << '\n';
    return out.str();
}

void save_run_result(const RunResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << run_result_to_string(result);
}

}  // namespace dard
