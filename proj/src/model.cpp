#include "dard/model.hpp"

#include <algorithm>
#include <cmath>

#include "dard/error.hpp"
#include "dard/rng.hpp"

namespace dard {

namespace {

Eigen::VectorXd softmax(Eigen::VectorXd z) {
    const double m = z.maxCoeff();
    z = (z.array() - m).exp();
    return z / z.sum();
}

// d(loss)/d(logits) for a squared-L2 penalty on the softmax output
Eigen::VectorXd l2_output_to_logits(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    const Eigen::VectorXd v = p - q;
    return 2.0 * (p.cwiseProduct(v) - p * p.dot(v));
}

}  // namespace

RegionVocabs RegionVocabs::build(const RegionMap& regions, int num_pois) {
    RegionVocabs v;
    v.pois.assign(regions.k, {});
    v.local.assign(num_pois, {-1, -1});
    for (int p = 0; p < num_pois; ++p) {
        const int r = regions.assignment[p];
        v.local[p] = {r, static_cast<int>(v.pois[r].size())};
        v.pois[r].push_back(p);
    }
    return v;
}

SoftDecision forward(const LocalModel& model, const std::vector<int>& seq,
                     const VocabRef& over) {
    return SoftDecision{over, model.forward_vocab(seq, over)};
}

double distill_pair_loss(const SoftDecision& own, const SoftDecision& neighbor) {
    if (!(own.over == neighbor.over) || own.probs.size() != neighbor.probs.size())
        throw ContractError("distill_pair_loss: soft decisions over different vocabularies");
    return (own.probs - neighbor.probs).squaredNorm();
}

// ---------------------------------------------------------------------------
// EmbedMeanModel

EmbedMeanModel::EmbedMeanModel(std::shared_ptr<const RegionVocabs> vocabs,
                               std::vector<int> regions, int num_categories, int dim,
                               int window, std::uint64_t seed, double init_scale)
    : vocabs_(std::move(vocabs)),
      regions_(std::move(regions)),
      num_categories_(num_categories),
      dim_(dim),
      window_(window) {
    if (dim_ < 1 || window_ < 1) throw ContractError("dim and window must be positive");
    std::sort(regions_.begin(), regions_.end());
    regions_.erase(std::unique(regions_.begin(), regions_.end()), regions_.end());

    int offset = 0;
    for (int r : regions_) {
        Block b;
        b.rows = vocabs_->size(r);
        b.emb = offset;
        offset += b.rows * dim_;
        b.bias = offset;
        offset += b.rows;
        region_blocks_.push_back(b);
    }
    cat_block_.rows = num_categories_;
    cat_block_.emb = offset;
    offset += num_categories_ * dim_;
    cat_block_.bias = offset;
    offset += num_categories_;

    theta_ = Eigen::VectorXd::Zero(offset);
    if (init_scale > 0.0) {
        auto rng = make_rng(seed);
        std::uniform_real_distribution<double> u(-init_scale, init_scale);
        auto fill_emb = [&](const Block& b) {
            for (int i = 0; i < b.rows * dim_; ++i) theta_[b.emb + i] = u(rng);
        };
        for (const Block& b : region_blocks_) fill_emb(b);
        fill_emb(cat_block_);
    }
}

void EmbedMeanModel::set_params(const Eigen::VectorXd& theta) {
    if (theta.size() != theta_.size())
        throw ContractError("set_params: parameter dimension mismatch");
    theta_ = theta;
}

std::unique_ptr<LocalModel> EmbedMeanModel::clone() const {
    return std::make_unique<EmbedMeanModel>(*this);
}

bool EmbedMeanModel::has_region(int r) const {
    return std::binary_search(regions_.begin(), regions_.end(), r);
}

const EmbedMeanModel::Block& EmbedMeanModel::block_for(const VocabRef& over) const {
    if (over.kind == VocabRef::Kind::Categories) return cat_block_;
    auto it = std::lower_bound(regions_.begin(), regions_.end(), over.region);
    if (it == regions_.end() || *it != over.region)
        throw ContractError("model has no vocabulary for region " +
                            std::to_string(over.region));
    return region_blocks_[it - regions_.begin()];
}

int EmbedMeanModel::vocab_size(const VocabRef& over) const {
    return block_for(over).rows;
}

Eigen::VectorXd EmbedMeanModel::context(const std::vector<int>& seq,
                                        const VocabRef& over) const {
    Eigen::VectorXd h = Eigen::VectorXd::Zero(dim_);
    const std::size_t first = seq.size() > static_cast<std::size_t>(window_)
                                  ? seq.size() - window_
                                  : 0;
    int used = 0;
    for (std::size_t i = first; i < seq.size(); ++i) {
        int emb_off, row;
        if (over.kind == VocabRef::Kind::Categories) {
            if (seq[i] < 0 || seq[i] >= num_categories_)
                throw ContractError("unknown category " + std::to_string(seq[i]));
            emb_off = cat_block_.emb;
            row = seq[i];
        } else {
            const auto [r, local] = vocabs_->local[seq[i]];
            emb_off = block_for(VocabRef::region_pois(r)).emb;
            row = local;
        }
        h += theta_.segment(emb_off + row * dim_, dim_);
        ++used;
    }
    if (used > 0) h /= used;
    return h;
}

Eigen::VectorXd EmbedMeanModel::forward_vocab(const std::vector<int>& seq,
                                              const VocabRef& over) const {
    const Block& b = block_for(over);
    const Eigen::VectorXd h = context(seq, over);
    const auto E = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                  Eigen::RowMajor>>(
        theta_.data() + b.emb, b.rows, dim_);
    Eigen::VectorXd z = E * h + theta_.segment(b.bias, b.rows);
    return softmax(std::move(z));
}

void EmbedMeanModel::backprop_z(const std::vector<int>& seq, const VocabRef& over,
                                const Eigen::VectorXd& dz, double weight,
                                Eigen::VectorXd& grad) const {
    const Block& b = block_for(over);
    const Eigen::VectorXd h = context(seq, over);
    const auto E = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                  Eigen::RowMajor>>(
        theta_.data() + b.emb, b.rows, dim_);
    auto Eg = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                       Eigen::RowMajor>>(grad.data() + b.emb, b.rows, dim_);

    Eg.noalias() += weight * dz * h.transpose();
    grad.segment(b.bias, b.rows) += weight * dz;

    const std::size_t first = seq.size() > static_cast<std::size_t>(window_)
                                  ? seq.size() - window_
                                  : 0;
    const int used = static_cast<int>(seq.size() - first);
    if (used == 0) return;
    const Eigen::VectorXd gh = (weight / used) * (E.transpose() * dz);
    for (std::size_t i = first; i < seq.size(); ++i) {
        int emb_off, row;
        if (over.kind == VocabRef::Kind::Categories) {
            emb_off = cat_block_.emb;
            row = seq[i];
        } else {
            const auto [r, local] = vocabs_->local[seq[i]];
            emb_off = block_for(VocabRef::region_pois(r)).emb;
            row = local;
        }
        grad.segment(emb_off + row * dim_, dim_) += gh;
    }
}

void EmbedMeanModel::ce_position_grad(const std::vector<int>& prefix, const VocabRef& over,
                                      int target_local, double weight,
                                      Eigen::VectorXd& grad) const {
    Eigen::VectorXd dz = forward_vocab(prefix, over);
    dz[target_local] -= 1.0;
    backprop_z(prefix, over, dz, weight, grad);
}

void EmbedMeanModel::distill_grad(const std::vector<int>& seq, const VocabRef& over,
                                  const Eigen::VectorXd& q, double weight,
                                  Eigen::VectorXd& grad) const {
    const Eigen::VectorXd p = forward_vocab(seq, over);
    backprop_z(seq, over, l2_output_to_logits(p, q), weight, grad);
}

std::vector<int> EmbedMeanModel::output_head_indices() const {
    std::vector<int> idx;
    for (const Block& b : region_blocks_)
        for (int i = 0; i < b.rows; ++i) idx.push_back(b.bias + i);
    for (int i = 0; i < cat_block_.rows; ++i) idx.push_back(cat_block_.bias + i);
    return idx;
}

// ---------------------------------------------------------------------------
// SoftmaxRegModel

SoftmaxRegModel::SoftmaxRegModel(int classes, int features, std::uint64_t seed,
                                 double init_scale)
    : classes_(classes), features_(features) {
    if (classes_ < 1 || features_ < 1)
        throw ContractError("SoftmaxRegModel: classes and features must be positive");
    w_ = Eigen::VectorXd::Zero(classes_ * features_);
    if (init_scale > 0.0) {
        auto rng = make_rng(seed);
        std::uniform_real_distribution<double> u(-init_scale, init_scale);
        for (int i = 0; i < w_.size(); ++i) w_[i] = u(rng);
    }
}

void SoftmaxRegModel::set_params(const Eigen::VectorXd& theta) {
    if (theta.size() != w_.size())
        throw ContractError("set_params: parameter dimension mismatch");
    w_ = theta;
}

std::unique_ptr<LocalModel> SoftmaxRegModel::clone() const {
    return std::make_unique<SoftmaxRegModel>(*this);
}

int SoftmaxRegModel::vocab_size(const VocabRef& over) const {
    if (over.kind != VocabRef::Kind::Categories)
        throw ContractError("SoftmaxRegModel only emits category decisions");
    return classes_;
}

Eigen::VectorXd SoftmaxRegModel::bag_features(const std::vector<int>& items, int features) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(features);
    if (items.empty()) {
        x.setConstant(1.0 / features);
        return x;
    }
    for (int it : items) x[((it % features) + features) % features] += 1.0;
    return x / x.sum();
}

Eigen::VectorXd SoftmaxRegModel::forward_x(const Eigen::VectorXd& x) const {
    const auto W = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                                  Eigen::RowMajor>>(w_.data(), classes_,
                                                                    features_);
    return softmax(W * x);
}

Eigen::VectorXd SoftmaxRegModel::forward_vocab(const std::vector<int>& seq,
                                               const VocabRef& over) const {
    vocab_size(over);  // kind check
    return forward_x(bag_features(seq, features_));
}

double SoftmaxRegModel::ce(const Eigen::VectorXd& x, int label) const {
    return -std::log(std::max(forward_x(x)[label], 1e-300));
}

double SoftmaxRegModel::soft_ce(const Eigen::VectorXd& x, const Eigen::VectorXd& q) const {
    const Eigen::VectorXd p = forward_x(x);
    double loss = 0.0;
    for (int c = 0; c < classes_; ++c)
        loss -= q[c] * std::log(std::max(p[c], 1e-300));
    return loss;
}

Eigen::VectorXd SoftmaxRegModel::ce_grad_x(const Eigen::VectorXd& x, int label) const {
    Eigen::VectorXd dz = forward_x(x);
    dz[label] -= 1.0;
    Eigen::VectorXd g(classes_ * features_);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        g.data(), classes_, features_) = dz * x.transpose();
    return g;
}

Eigen::VectorXd SoftmaxRegModel::soft_ce_grad_x(const Eigen::VectorXd& x,
                                                const Eigen::VectorXd& q) const {
    const Eigen::VectorXd dz = forward_x(x) - q;
    Eigen::VectorXd g(classes_ * features_);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        g.data(), classes_, features_) = dz * x.transpose();
    return g;
}

Eigen::MatrixXd SoftmaxRegModel::point_hessian_x(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd p = forward_x(x);
    const Eigen::MatrixXd S = Eigen::MatrixXd(p.asDiagonal()) - p * p.transpose();
    const int n = classes_ * features_;
    Eigen::MatrixXd H(n, n);
    for (int c = 0; c < classes_; ++c)
        for (int d = 0; d < classes_; ++d)
            H.block(c * features_, d * features_, features_, features_) =
                S(c, d) * x * x.transpose();
    return H;
}

void SoftmaxRegModel::ce_position_grad(const std::vector<int>& prefix, const VocabRef& over,
                                       int target_local, double weight,
                                       Eigen::VectorXd& grad) const {
    vocab_size(over);
    grad += weight * ce_grad_x(bag_features(prefix, features_), target_local);
}

void SoftmaxRegModel::distill_grad(const std::vector<int>& seq, const VocabRef& over,
                                   const Eigen::VectorXd& q, double weight,
                                   Eigen::VectorXd& grad) const {
    vocab_size(over);
    const Eigen::VectorXd x = bag_features(seq, features_);
    const Eigen::VectorXd dz = l2_output_to_logits(forward_x(x), q);
    Eigen::VectorXd g(classes_ * features_);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        g.data(), classes_, features_) = dz * x.transpose();
    grad += weight * g;
}

// ---------------------------------------------------------------------------
// Loss composition and second-order operations

double local_loss(const LocalModel& model, const std::vector<int>& items,
                  VocabRef::Kind kind, const RegionVocabs* vocabs) {
    if (items.size() < 2)
        throw ContractError("local_loss requires a sequence of length >= 2");
    double loss = 0.0;
    std::vector<int> prefix;
    prefix.reserve(items.size());
    prefix.push_back(items[0]);
    for (std::size_t t = 1; t < items.size(); ++t) {
        VocabRef over = VocabRef::categories();
        int local = items[t];
        if (kind == VocabRef::Kind::RegionPois) {
            const auto [r, loc] = vocabs->local[items[t]];
            over = VocabRef::region_pois(r);
            local = loc;
        }
        const Eigen::VectorXd p = model.forward_vocab(prefix, over);
        loss -= std::log(std::max(p[local], 1e-300));
        prefix.push_back(items[t]);
    }
    return loss / static_cast<double>(items.size() - 1);
}

void local_loss_grad(const LocalModel& model, const std::vector<int>& items,
                     VocabRef::Kind kind, const RegionVocabs* vocabs, double weight,
                     Eigen::VectorXd& grad) {
    if (items.size() < 2)
        throw ContractError("local_loss requires a sequence of length >= 2");
    const double w = weight / static_cast<double>(items.size() - 1);
    std::vector<int> prefix;
    prefix.reserve(items.size());
    prefix.push_back(items[0]);
    for (std::size_t t = 1; t < items.size(); ++t) {
        VocabRef over = VocabRef::categories();
        int local = items[t];
        if (kind == VocabRef::Kind::RegionPois) {
            const auto [r, loc] = vocabs->local[items[t]];
            over = VocabRef::region_pois(r);
            local = loc;
        }
        model.ce_position_grad(prefix, over, local, w, grad);
        prefix.push_back(items[t]);
    }
}

double loss_value(const LocalModel& model, const LossSpec& spec, const RegionVocabs* vocabs) {
    double loss = 0.0;
    for (const LocalTerm& t : spec.locals)
        loss += t.weight * local_loss(model, t.items, t.kind, vocabs);
    for (const DistillTerm& t : spec.distills) {
        const Eigen::VectorXd p = model.forward_vocab(t.seq, t.over);
        loss += t.weight * (p - t.target).squaredNorm();
    }
    return loss;
}

Eigen::VectorXd loss_grad(const LocalModel& model, const LossSpec& spec,
                          const RegionVocabs* vocabs) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.param_count());
    for (const LocalTerm& t : spec.locals)
        local_loss_grad(model, t.items, t.kind, vocabs, t.weight, grad);
    for (const DistillTerm& t : spec.distills)
        model.distill_grad(t.seq, t.over, t.target, t.weight, grad);
    return grad;
}

Eigen::VectorXd model_hvp(LocalModel& model, const LossSpec& spec,
                          const RegionVocabs* vocabs, const Eigen::VectorXd& v) {
    if (v.size() != model.param_count())
        throw ContractError("hvp: vector dimension mismatch");
    const double vn = v.norm();
    if (vn == 0.0) return Eigen::VectorXd::Zero(v.size());

    const Eigen::VectorXd theta = model.get_params();
    const double h = 1e-5;
    const Eigen::VectorXd dir = v / vn;

    model.set_params(theta + h * dir);
    const Eigen::VectorXd gp = loss_grad(model, spec, vocabs);
    model.set_params(theta - h * dir);
    const Eigen::VectorXd gm = loss_grad(model, spec, vocabs);
    model.set_params(theta);
    return (gp - gm) * (vn / (2.0 * h));
}

Eigen::MatrixXd model_hessian(LocalModel& model, const LossSpec& spec,
                              const RegionVocabs* vocabs, int param_cap) {
    const int n = model.param_count();
    if (n > param_cap)
        throw ContractError("hessian_explicit: " + std::to_string(n) +
                            " params exceed cap; use the hvp path");
    const Eigen::VectorXd theta = model.get_params();
    const double h = 1e-5;
    Eigen::MatrixXd H(n, n);
    Eigen::VectorXd probe = theta;
    for (int j = 0; j < n; ++j) {
        probe[j] = theta[j] + h;
        model.set_params(probe);
        const Eigen::VectorXd gp = loss_grad(model, spec, vocabs);
        probe[j] = theta[j] - h;
        model.set_params(probe);
        const Eigen::VectorXd gm = loss_grad(model, spec, vocabs);
        probe[j] = theta[j];
        H.col(j) = (gp - gm) / (2.0 * h);
    }
    model.set_params(theta);
    return 0.5 * (H + H.transpose());
}

}  // namespace dard
