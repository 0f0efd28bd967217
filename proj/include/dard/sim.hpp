#ifndef DARD_SIM_HPP
#define DARD_SIM_HPP

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dard/collab.hpp"
#include "dard/corpus.hpp"
#include "dard/eval.hpp"
#include "dard/influence.hpp"
#include "dard/refgen.hpp"
#include "dard/topology.hpp"

namespace dard {

enum class Strategy { Original, Random, Popular, Adaptive };

Strategy strategy_from_string(const std::string& name);
std::string strategy_name(Strategy s);

struct RunConfig {
    CollabConfig collab;
    InfluenceConfig influence;
    RefGenConfig refgen;
    Strategy strategy = Strategy::Adaptive;
    double pool_fraction = 1.0;   // deployed share of each device's pool slice
    double donor_fraction = 0.05;
    double corrupt_fraction = 0.0;  // instances whose decisions become noise
    bool tracking = true;           // off: w/o TL ablation
    bool influence_selection = true;  // off: w/o IF ablation
    bool resume_retrain = false;    // stage (c) from stage-(a) params
    int k_n = 50;
    int dim = 64;
    int window = 10;
    int eval_negatives = 200;
    int eval_repeats = 1;
    std::uint64_t master_seed = 1;
};

// Server-held state; every read after initialization bumps the counter.
class ServerState {
public:
    ServerState(ReferencePool pool, NeighborSets neighbors)
        : pool_(std::move(pool)), neighbors_(std::move(neighbors)) {}

    const ReferencePool& pool() const { ++accesses_; return pool_; }
    const NeighborSets& neighbors() const { ++accesses_; return neighbors_; }
    long accesses() const { return accesses_; }
    void reset_counter() const { accesses_ = 0; }

private:
    ReferencePool pool_;
    NeighborSets neighbors_;
    mutable long accesses_ = 0;
};

// Donor sampling + pool generation + neighbor computation.
ServerState server_init(const Corpus& corpus, const RegionMap& regions,
                        const RunConfig& cfg);

struct Fleet {
    FleetContext ctx;
    std::vector<DeviceState> devices;
};

// Hand each device its pool slice, neighbors, and a fresh model; the
// server is not consulted afterward.
Fleet deploy_fleet(const ServerState& server, const Corpus& corpus,
                   const RegionMap& regions, const SplitCorpus& split,
                   const RunConfig& cfg);

struct RunResult {
    struct UserRow {
        std::string user;
        std::array<int, 3> stage_sizes{0, 0, 0};  // |D|, |D'|, |D_hat|
        bool evaluated = false;
        double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
    };
    std::string strategy;
    std::vector<UserRow> rows;
    int evaluated = 0;
    double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
    std::size_t messages = 0;
    long server_accesses_post_init = 0;
};

std::string run_result_to_string(const RunResult& result);
void save_run_result(const RunResult& result, const std::string& path);

// Full Algorithm 1 pipeline: (a) CL training with loss tracking, (b)
// influence selection, (c) retraining on D_hat, then evaluation.
RunResult run_dard(const Corpus& corpus, const RegionMap& regions,
                   const SplitCorpus& split, const RunConfig& cfg, int workers = 1);

// Influence selection over a device's working set: output-head scope,
// per-instance distillation losses against frozen neighbor decisions,
// validation loss at the held-out check-in.
InfluenceProblem build_device_influence(const FleetContext& ctx,
                                        const std::vector<DeviceState>& devices,
                                        int device, int epoch_tag,
                                        const CollabConfig& collab);

// Original/random/popular/adaptive with budgets matched to adaptive.
std::map<std::string, RunResult> run_strategy_baselines(const Corpus& corpus,
                                                        const RegionMap& regions,
                                                        const SplitCorpus& split,
                                                        const RunConfig& cfg,
                                                        int workers = 1);

}  // namespace dard

#endif  // DARD_SIM_HPP
