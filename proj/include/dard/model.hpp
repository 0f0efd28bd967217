#ifndef DARD_MODEL_HPP
#define DARD_MODEL_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <vector>

#include "dard/corpus.hpp"

namespace dard {

struct VocabRef {
    enum class Kind { RegionPois, Categories };
    Kind kind = Kind::Categories;
    int region = -1;  // meaningful for RegionPois

    bool operator==(const VocabRef&) const = default;
    static VocabRef region_pois(int r) { return {Kind::RegionPois, r}; }
    static VocabRef categories() { return {Kind::Categories, -1}; }
};

struct SoftDecision {
    VocabRef over;
    Eigen::VectorXd probs;
};

// Shared per-region POI vocabularies. All users in a region index it the
// same way, so exchanged soft decisions line up component-wise.
struct RegionVocabs {
    std::vector<std::vector<int>> pois;      // region -> global poi ids
    std::vector<std::pair<int, int>> local;  // global poi -> (region, local index)

    int size(int region) const { return static_cast<int>(pois[region].size()); }
    static RegionVocabs build(const RegionMap& regions, int num_pois);
};

// A device's differentiable recommender over a flat parameter vector.
class LocalModel {
public:
    virtual ~LocalModel() = default;

    virtual int param_count() const = 0;
    virtual Eigen::VectorXd get_params() const = 0;
    virtual void set_params(const Eigen::VectorXd& theta) = 0;
    virtual std::unique_ptr<LocalModel> clone() const = 0;

    virtual int vocab_size(const VocabRef& over) const = 0;

    // next-item probability distribution after `seq` over the given vocab
    virtual Eigen::VectorXd forward_vocab(const std::vector<int>& seq,
                                          const VocabRef& over) const = 0;

    // accumulate weight * d(-log p[target_local]) / d(theta)
    virtual void ce_position_grad(const std::vector<int>& prefix, const VocabRef& over,
                                  int target_local, double weight,
                                  Eigen::VectorXd& grad) const = 0;

    // accumulate weight * d ||p - q||^2 / d(theta)
    virtual void distill_grad(const std::vector<int>& seq, const VocabRef& over,
                              const Eigen::VectorXd& q, double weight,
                              Eigen::VectorXd& grad) const = 0;
};

SoftDecision forward(const LocalModel& model, const std::vector<int>& seq,
                     const VocabRef& over);

// ||phi_i(X) - phi_j(X)||^2, neighbor decision treated as a constant
double distill_pair_loss(const SoftDecision& own, const SoftDecision& neighbor);

// Mean-embedding next-item model: context is the mean embedding of the
// last `window` items, scored against each candidate's embedding plus a
// bias, softmax-normalized.
class EmbedMeanModel final : public LocalModel {
public:
    EmbedMeanModel(std::shared_ptr<const RegionVocabs> vocabs, std::vector<int> regions,
                   int num_categories, int dim, int window, std::uint64_t seed,
                   double init_scale = 0.05);

    int param_count() const override { return static_cast<int>(theta_.size()); }
    Eigen::VectorXd get_params() const override { return theta_; }
    void set_params(const Eigen::VectorXd& theta) override;
    std::unique_ptr<LocalModel> clone() const override;

    int vocab_size(const VocabRef& over) const override;
    Eigen::VectorXd forward_vocab(const std::vector<int>& seq,
                                  const VocabRef& over) const override;
    void ce_position_grad(const std::vector<int>& prefix, const VocabRef& over,
                          int target_local, double weight,
                          Eigen::VectorXd& grad) const override;
    void distill_grad(const std::vector<int>& seq, const VocabRef& over,
                      const Eigen::VectorXd& q, double weight,
                      Eigen::VectorXd& grad) const override;

    const std::vector<int>& regions() const { return regions_; }
    bool has_region(int r) const;
    int dim() const { return dim_; }
    int window() const { return window_; }

    // flat-parameter indices of the output biases (all regions + categories)
    std::vector<int> output_head_indices() const;

private:
    struct Block {
        int emb = 0;   // offset of the embedding matrix (rows x dim)
        int bias = 0;  // offset of the bias vector
        int rows = 0;
    };
    const Block& block_for(const VocabRef& over) const;
    Eigen::VectorXd context(const std::vector<int>& seq, const VocabRef& over) const;
    void backprop_z(const std::vector<int>& seq, const VocabRef& over,
                    const Eigen::VectorXd& dz, double weight, Eigen::VectorXd& grad) const;

    std::shared_ptr<const RegionVocabs> vocabs_;
    std::vector<int> regions_;  // sorted, unique
    int num_categories_;
    int dim_;
    int window_;
    Eigen::VectorXd theta_;
    std::vector<Block> region_blocks_;  // parallel to regions_
    Block cat_block_;
};

// Convex softmax regression over a fixed bag-of-items feature vector;
// only the output weight matrix is trainable. Oracle-friendly: the
// cross-entropy Hessian is positive semidefinite and available in
// closed form.
class SoftmaxRegModel final : public LocalModel {
public:
    SoftmaxRegModel(int classes, int features, std::uint64_t seed,
                    double init_scale = 0.0);

    int param_count() const override { return classes_ * features_; }
    Eigen::VectorXd get_params() const override { return w_; }
    void set_params(const Eigen::VectorXd& theta) override;
    std::unique_ptr<LocalModel> clone() const override;

    int vocab_size(const VocabRef& over) const override;
    Eigen::VectorXd forward_vocab(const std::vector<int>& seq,
                                  const VocabRef& over) const override;
    void ce_position_grad(const std::vector<int>& prefix, const VocabRef& over,
                          int target_local, double weight,
                          Eigen::VectorXd& grad) const override;
    void distill_grad(const std::vector<int>& seq, const VocabRef& over,
                      const Eigen::VectorXd& q, double weight,
                      Eigen::VectorXd& grad) const override;

    int classes() const { return classes_; }
    int features() const { return features_; }

    static Eigen::VectorXd bag_features(const std::vector<int>& items, int features);

    Eigen::VectorXd forward_x(const Eigen::VectorXd& x) const;
    double ce(const Eigen::VectorXd& x, int label) const;
    double soft_ce(const Eigen::VectorXd& x, const Eigen::VectorXd& q) const;
    Eigen::VectorXd ce_grad_x(const Eigen::VectorXd& x, int label) const;
    Eigen::VectorXd soft_ce_grad_x(const Eigen::VectorXd& x, const Eigen::VectorXd& q) const;
    // per-point CE Hessian (same for hard and soft targets)
    Eigen::MatrixXd point_hessian_x(const Eigen::VectorXd& x) const;

private:
    int classes_;
    int features_;
    Eigen::VectorXd w_;  // row-major classes x features
};

// A loss built from cross-entropy and distillation terms; the unit the
// gradient/Hessian operations act on.
struct LocalTerm {
    VocabRef::Kind kind = VocabRef::Kind::RegionPois;
    std::vector<int> items;
    double weight = 1.0;
};
struct DistillTerm {
    VocabRef over;
    std::vector<int> seq;
    Eigen::VectorXd target;
    double weight = 1.0;
};
struct LossSpec {
    std::vector<LocalTerm> locals;
    std::vector<DistillTerm> distills;
};

// Mean next-item cross-entropy over all positions of `items`.
double local_loss(const LocalModel& model, const std::vector<int>& items,
                  VocabRef::Kind kind, const RegionVocabs* vocabs);
void local_loss_grad(const LocalModel& model, const std::vector<int>& items,
                     VocabRef::Kind kind, const RegionVocabs* vocabs, double weight,
                     Eigen::VectorXd& grad);

double loss_value(const LocalModel& model, const LossSpec& spec, const RegionVocabs* vocabs);
Eigen::VectorXd loss_grad(const LocalModel& model, const LossSpec& spec,
                          const RegionVocabs* vocabs);

// H*v by central differences of the analytic gradient
Eigen::VectorXd model_hvp(LocalModel& model, const LossSpec& spec,
                          const RegionVocabs* vocabs, const Eigen::VectorXd& v);

// dense Hessian, finite-difference columns, symmetrized
Eigen::MatrixXd model_hessian(LocalModel& model, const LossSpec& spec,
                              const RegionVocabs* vocabs, int param_cap = 2000);

}  // namespace dard

#endif  // DARD_MODEL_HPP
