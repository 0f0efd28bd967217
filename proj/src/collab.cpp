#include "dard/collab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include "dard/error.hpp"
#include "dard/rng.hpp"

namespace dard {

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, std::min(workers, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : threads) t.join();
}

std::vector<Instance> flatten_pool(const ReferencePool& pool) {
    std::vector<Instance> out;
    for (std::size_t i = 0; i < pool.geo.size(); ++i) {
        out.push_back(Instance{InstanceRef{InstanceRef::Kind::Geo, static_cast<int>(i), -1},
                               VocabRef::region_pois(pool.geo[i].region), pool.geo[i].pois});
    }
    for (std::size_t z = 0; z < pool.sem.size(); ++z) {
        out.push_back(Instance{InstanceRef{InstanceRef::Kind::Sem, static_cast<int>(z), -1},
                               VocabRef::categories(), pool.sem[z].cats});
        for (const auto& [region, pois] : pool.sem[z].realizations)
            out.push_back(Instance{
                InstanceRef{InstanceRef::Kind::GeoRealized, static_cast<int>(z), region},
                VocabRef::region_pois(region), pois});
    }
    return out;
}

std::pair<std::vector<int>, std::vector<int>> select_clean_batch(
    const std::vector<int>& batch, const std::vector<double>& losses, double rho) {
    if (batch.empty()) throw ContractError("select_clean_batch: empty batch");
    if (losses.size() != batch.size())
        throw ContractError("select_clean_batch: losses do not match batch");
    if (rho <= 0.0 || rho > 1.0)
        throw ContractError("select_clean_batch: rho must be in (0,1]");

    const int keep = static_cast<int>(
        std::ceil(rho * static_cast<double>(batch.size()) - 1e-12));
    std::vector<int> order(batch.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (losses[a] != losses[b]) return losses[a] < losses[b];
        return batch[a] < batch[b];  // ties by pool index
    });
    std::vector<int> kept(order.begin(), order.begin() + keep);
    std::vector<int> removed(order.begin() + keep, order.end());
    std::sort(kept.begin(), kept.end());
    std::sort(removed.begin(), removed.end());
    return {kept, removed};
}

namespace {

bool scoreable(const DeviceState& d, const Instance& inst) {
    return !inst.is_geo_kind() || d.model->has_region(inst.over.region);
}

Eigen::VectorXd noise_decision(int dim, std::uint64_t seed) {
    auto rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd q(dim);
    for (int i = 0; i < dim; ++i) q[i] = u(rng) + 1e-6;
    return q / q.sum();
}

// per-instance neighbor aggregate for one epoch
struct Agg {
    int count = 0;
    Eigen::VectorXd sum_q;
    double sum_q2 = 0.0;
};

struct DeviceEpochView {
    std::map<int, Agg> agg;  // instance id -> neighbor aggregate (sorted)
};

}  // namespace

TrainOutcome train_epochs(const FleetContext& ctx, std::vector<DeviceState>& devices,
                          const CollabConfig& cfg, bool tracking,
                          std::uint64_t stage_seed, int workers) {
    const int n = static_cast<int>(devices.size());
    TrainOutcome outcome;
    outcome.tracked.resize(n);
    outcome.last_total_loss.assign(n, 0.0);

    // instance id -> removal record, per device; last_epoch policy resets
    // this each epoch so the final epoch's removals stand
    std::vector<std::map<int, RemovalRecord>> removed(n);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (tracking && cfg.accumulate_noisy == CollabConfig::AccumulateNoisy::LastEpoch)
            for (auto& r : removed) r.clear();

        // ---- which decisions each provider must publish this epoch
        std::vector<std::set<int>> requests(n);
        for (int i = 0; i < n; ++i) {
            auto request_from = [&](const std::vector<int>& nbs, bool geo_kind) {
                for (int j : nbs) {
                    for (int id : devices[i].working)
                        if (ctx.instances[id].is_geo_kind() == geo_kind)
                            requests[j].insert(id);
                    for (int id : devices[j].working)
                        if (ctx.instances[id].is_geo_kind() == geo_kind)
                            requests[j].insert(id);
                }
            };
            request_from(devices[i].geo_neighbors, true);
            request_from(devices[i].sem_neighbors, false);
        }

        // ---- snapshot phase (barrier-synchronized decision computation)
        std::vector<DecisionSnapshot> snapshots(n);
        parallel_for(n, workers, [&](int j) {
            for (int id : requests[j]) {
                const Instance& inst = ctx.instances[id];
                if (!scoreable(devices[j], inst)) continue;
                if (!ctx.corrupted.empty() && ctx.corrupted[id]) {
                    snapshots[j][id] = noise_decision(
                        devices[j].model->vocab_size(inst.over),
                        derive_seed(ctx.noise_seed, epoch, j, id));
                } else {
                    snapshots[j][id] = devices[j].model->forward_vocab(inst.seq, inst.over);
                }
            }
        });

        // ---- message exchange: one message per neighbor edge and kind
        std::vector<std::vector<SoftDecisionMessage>> inbox(n);
        for (int i = 0; i < n; ++i) {
            auto receive = [&](const std::vector<int>& nbs, bool geo_kind) {
                for (int j : nbs) {
                    SoftDecisionMessage msg;
                    msg.sender = j;
                    msg.round = epoch;
                    std::set<int> joint;
                    for (int id : devices[i].working)
                        if (ctx.instances[id].is_geo_kind() == geo_kind) joint.insert(id);
                    for (int id : devices[j].working)
                        if (ctx.instances[id].is_geo_kind() == geo_kind) joint.insert(id);
                    for (int id : joint) {
                        auto it = snapshots[j].find(id);
                        if (it == snapshots[j].end()) continue;  // outside j's vocab
                        msg.payload.emplace_back(
                            id, std::shared_ptr<const Eigen::VectorXd>(
                                    std::shared_ptr<void>(), &it->second));
                    }
                    inbox[i].push_back(std::move(msg));
                    ++outcome.messages;
                }
            };
            receive(devices[i].geo_neighbors, true);
            receive(devices[i].sem_neighbors, false);
        }

        // ---- device update phase
        parallel_for(n, workers, [&](int i) {
            DeviceState& dev = devices[i];
            DeviceEpochView view;
            for (int id : dev.working)
                if (scoreable(dev, ctx.instances[id])) view.agg.emplace(id, Agg{});
            for (const SoftDecisionMessage& msg : inbox[i]) {
                for (const auto& [id, q] : msg.payload) {
                    if (!scoreable(dev, ctx.instances[id])) continue;
                    Agg& a = view.agg[id];
                    if (a.count == 0) a.sum_q = Eigen::VectorXd::Zero(q->size());
                    a.sum_q += *q;
                    a.sum_q2 += q->squaredNorm();
                    ++a.count;
                }
            }

            std::vector<int> order;
            order.reserve(view.agg.size());
            for (const auto& [id, a] : view.agg) order.push_back(id);
            auto rng = make_rng(derive_seed(stage_seed, 0x7570U, dev.user, epoch));
            std::shuffle(order.begin(), order.end(), rng);

            const std::vector<CheckIn>& train = ctx.split->users[dev.user].train;
            std::vector<int> train_pois, train_cats;
            for (const CheckIn& ev : train) {
                train_pois.push_back(ev.poi);
                train_cats.push_back(ctx.corpus->pois[ev.poi].category);
            }
            const std::set<int> own(dev.working.begin(), dev.working.end());
            const double geo_nbs = static_cast<double>(dev.geo_neighbors.size());
            const double sem_nbs = static_cast<double>(dev.sem_neighbors.size());

            const int num_batches =
                (static_cast<int>(order.size()) + cfg.batch - 1) / std::max(1, cfg.batch);
            for (int b = 0; b < std::max(1, num_batches); ++b) {
                std::vector<int> batch(
                    order.begin() + std::min<std::size_t>(b * cfg.batch, order.size()),
                    order.begin() +
                        std::min<std::size_t>((b + 1) * cfg.batch, order.size()));

                Eigen::VectorXd grad = Eigen::VectorXd::Zero(dev.model->param_count());
                double batch_loss = 0.0;

                // local cross-entropy on sampled private positions
                if (train_pois.size() >= 2) {
                    const int avail = static_cast<int>(train_pois.size()) - 1;
                    const int npos = std::min(cfg.local_positions, avail);
                    std::vector<int> pos(avail);
                    std::iota(pos.begin(), pos.end(), 1);
                    std::shuffle(pos.begin(), pos.end(), rng);
                    pos.resize(npos);
                    const double w = 1.0 / npos;
                    for (int t : pos) {
                        const std::vector<int> poi_prefix(train_pois.begin(),
                                                          train_pois.begin() + t);
                        const std::vector<int> cat_prefix(train_cats.begin(),
                                                          train_cats.begin() + t);
                        const auto [r, local] = ctx.vocabs->local[train_pois[t]];
                        const VocabRef over = VocabRef::region_pois(r);
                        const Eigen::VectorXd pp = dev.model->forward_vocab(poi_prefix, over);
                        batch_loss -= w * std::log(std::max(pp[local], 1e-300));
                        dev.model->ce_position_grad(poi_prefix, over, local, w, grad);
                        const Eigen::VectorXd pc = dev.model->forward_vocab(
                            cat_prefix, VocabRef::categories());
                        batch_loss -= w * std::log(std::max(pc[train_cats[t]], 1e-300));
                        dev.model->ce_position_grad(cat_prefix, VocabRef::categories(),
                                                    train_cats[t], w, grad);
                    }
                }

                if (!batch.empty()) {
                    // per-instance distillation losses, neighbor-averaged
                    std::vector<double> losses(batch.size(), 0.0);
                    std::vector<Eigen::VectorXd> own_p(batch.size());
                    for (std::size_t x = 0; x < batch.size(); ++x) {
                        const Instance& inst = ctx.instances[batch[x]];
                        const Agg& a = view.agg.at(batch[x]);
                        own_p[x] = dev.model->forward_vocab(inst.seq, inst.over);
                        if (a.count > 0) {
                            const Eigen::VectorXd& p = own_p[x];
                            losses[x] = (a.count * p.squaredNorm() -
                                         2.0 * p.dot(a.sum_q) + a.sum_q2) /
                                        a.count;
                        }
                    }

                    std::vector<int> kept_pos(batch.size());
                    std::iota(kept_pos.begin(), kept_pos.end(), 0);
                    if (tracking) {
                        auto [kp, rp] = select_clean_batch(batch, losses, cfg.rho);
                        kept_pos = std::move(kp);
                        for (int x : rp)
                            if (own.count(batch[x]))
                                removed[i][batch[x]] = RemovalRecord{batch[x], epoch, b};
                    }

                    for (int x : kept_pos) {
                        const Instance& inst = ctx.instances[batch[x]];
                        const Agg& a = view.agg.at(batch[x]);
                        if (a.count == 0) continue;
                        const double nbs = inst.is_geo_kind() ? geo_nbs : sem_nbs;
                        if (nbs == 0.0) continue;
                        const double coef = (inst.is_geo_kind() ? cfg.gamma : cfg.mu);
                        const double weight = coef * a.count / nbs;
                        const Eigen::VectorXd q_mean = a.sum_q / a.count;
                        dev.model->distill_grad(inst.seq, inst.over, q_mean, weight, grad);
                        batch_loss += coef / nbs *
                                      (a.count * own_p[x].squaredNorm() -
                                       2.0 * own_p[x].dot(a.sum_q) + a.sum_q2);
                    }
                }

                if (!grad.allFinite() || !std::isfinite(batch_loss))
                    throw TrainingError("non-finite loss for user " +
                                        ctx.corpus->users[dev.user].user + " at epoch " +
                                        std::to_string(epoch) + " batch " +
                                        std::to_string(b));
                dev.model->set_params(dev.model->get_params() - cfg.eta * grad);
                outcome.last_total_loss[i] = batch_loss;
            }
        });
    }

    for (int i = 0; i < n; ++i) {
        TrackedPool& pool = outcome.tracked[i];
        for (const auto& [id, rec] : removed[i]) pool.removed.push_back(rec);
        std::set<int> gone;
        for (const auto& rec : pool.removed) gone.insert(rec.instance);
        for (int id : devices[i].working)
            if (!gone.count(id)) pool.kept.push_back(id);
        if (tracking) devices[i].working = pool.kept;
    }
    return outcome;
}

double total_loss(const FleetContext& ctx, const std::vector<DeviceState>& devices,
                  int device, const std::vector<DecisionSnapshot>& snapshots,
                  const CollabConfig& cfg) {
    const DeviceState& dev = devices[device];
    const std::vector<CheckIn>& train = ctx.split->users[dev.user].train;
    std::vector<int> pois, cats;
    for (const CheckIn& ev : train) {
        pois.push_back(ev.poi);
        cats.push_back(ctx.corpus->pois[ev.poi].category);
    }
    double l_loc = 0.0;
    if (pois.size() >= 2)
        l_loc = local_loss(*dev.model, pois, VocabRef::Kind::RegionPois, ctx.vocabs.get()) +
                local_loss(*dev.model, cats, VocabRef::Kind::Categories, nullptr);

    auto collab_term = [&](const std::vector<int>& nbs, bool geo_kind) {
        if (nbs.empty()) return 0.0;
        double total = 0.0;
        for (int j : nbs) {
            std::set<int> joint;
            for (int id : dev.working)
                if (ctx.instances[id].is_geo_kind() == geo_kind) joint.insert(id);
            for (int id : devices[j].working)
                if (ctx.instances[id].is_geo_kind() == geo_kind) joint.insert(id);
            for (int id : joint) {
                const Instance& inst = ctx.instances[id];
                if (!scoreable(dev, inst) || !scoreable(devices[j], inst)) continue;
                auto it = snapshots[j].find(id);
                if (it == snapshots[j].end())
                    throw ContractError("missing neighbor decision for instance " +
                                        std::to_string(id));
                const Eigen::VectorXd p = dev.model->forward_vocab(inst.seq, inst.over);
                total += (p - it->second).squaredNorm();
            }
        }
        return total / static_cast<double>(nbs.size());
    };

    return l_loc + cfg.gamma * collab_term(dev.geo_neighbors, true) +
           cfg.mu * collab_term(dev.sem_neighbors, false);
}

}  // namespace dard
