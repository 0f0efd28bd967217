#ifndef DARD_COLLAB_HPP
#define DARD_COLLAB_HPP

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dard/corpus.hpp"
#include "dard/model.hpp"
#include "dard/refgen.hpp"

namespace dard {

struct CollabConfig {
    double gamma = 0.5;  // geo distillation weight
    double mu = 0.7;     // sem distillation weight
    double eta = 0.002;  // learning rate
    int batch = 16;      // mini-batch size M
    int epochs = 50;     // N
    double rho = 0.8;    // keep fraction for loss tracking
    enum class AccumulateNoisy { LastEpoch, AllEpochs };
    AccumulateNoisy accumulate_noisy = AccumulateNoisy::LastEpoch;
    int local_positions = 16;  // sampled private positions per update
};

// Identity of a reference instance in the deployed pool.
struct InstanceRef {
    enum class Kind { Geo, Sem, GeoRealized };
    Kind kind = Kind::Geo;
    int index = 0;    // geo/sem pool index
    int region = -1;  // realization region (GeoRealized only)

    auto operator<=>(const InstanceRef&) const = default;
};

struct Instance {
    InstanceRef ref;
    VocabRef over;
    std::vector<int> seq;  // POI ids or category ids per `over`

    bool is_geo_kind() const { return over.kind == VocabRef::Kind::RegionPois; }
};

// Flatten a pool: geo sequences, semantic category sequences, and the
// per-region POI realizations (which behave as geographical instances).
std::vector<Instance> flatten_pool(const ReferencePool& pool);

struct DeviceState {
    int user = 0;
    std::unique_ptr<EmbedMeanModel> model;
    std::vector<int> deployed;  // D(u): instance ids at deployment
    std::vector<int> working;   // shrinks: D -> D' -> D_hat
    std::vector<int> geo_neighbors;
    std::vector<int> sem_neighbors;
    std::uint64_t seed = 0;
};

struct FleetContext {
    const Corpus* corpus = nullptr;
    const RegionMap* regions = nullptr;
    const SplitCorpus* split = nullptr;
    std::shared_ptr<const RegionVocabs> vocabs;
    std::vector<Instance> instances;
    // instances whose neighbor decisions are replaced by seeded noise
    std::vector<bool> corrupted;
    std::uint64_t noise_seed = 0;
};

struct RemovalRecord {
    int instance = 0;
    int epoch = 0;
    int batch = 0;
};

struct TrackedPool {
    std::vector<int> kept;  // D'
    std::vector<RemovalRecord> removed;
};

// Keep the ceil(rho * |batch|) smallest-loss instances; ties by instance id.
// Returns (kept, removed) as positions into `batch`.
std::pair<std::vector<int>, std::vector<int>> select_clean_batch(
    const std::vector<int>& batch, const std::vector<double>& losses, double rho);

// One device's soft decisions for an epoch, keyed by instance id.
using DecisionSnapshot = std::map<int, Eigen::VectorXd>;

struct SoftDecisionMessage {
    int sender = 0;
    int round = 0;
    std::vector<std::pair<int, std::shared_ptr<const Eigen::VectorXd>>> payload;
};

struct TrainOutcome {
    std::vector<TrackedPool> tracked;  // per device
    std::size_t messages = 0;          // total SoftDecisionMessages exchanged
    std::vector<double> last_total_loss;
};

// Algorithm main loop: N epochs of CL training with per-epoch decision
// exchange; when `tracking` is set, mini-batch loss tracking shrinks each
// device's working set to D'.
TrainOutcome train_epochs(const FleetContext& ctx, std::vector<DeviceState>& devices,
                          const CollabConfig& cfg, bool tracking,
                          std::uint64_t stage_seed, int workers = 1);

// L_total = L_loc + gamma L_geo + mu L_sem over the joint reference sets,
// with neighbor decisions taken from the given snapshots.
double total_loss(const FleetContext& ctx, const std::vector<DeviceState>& devices,
                  int device, const std::vector<DecisionSnapshot>& snapshots,
                  const CollabConfig& cfg);

// Run a function over [0, n) on up to `workers` threads with a barrier at
// the end; results must be written to per-index slots.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace dard

#endif  // DARD_COLLAB_HPP
