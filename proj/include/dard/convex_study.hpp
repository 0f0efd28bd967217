#ifndef DARD_CONVEX_STUDY_HPP
#define DARD_CONVEX_STUDY_HPP

#include <cstdint>
#include <vector>

#include "dard/influence.hpp"
#include "dard/model.hpp"

namespace dard {

// Self-contained convex influence calibration: a softmax regression is
// trained on soft-target reference instances (some corrupted), influence
// estimates are compared against leave-one-out retraining and against
// realized harmful-set removal.
struct ConvexStudyConfig {
    int classes = 4;
    int features = 16;  // classes * features = parameter count
    int num_ref = 100;
    int num_val = 50;
    double corrupt_fraction = 0.2;
    double reg = 0.01;  // L2 regularization; doubles as influence damping
    int newton_iters = 60;
    double grad_tol = 1e-11;
};

struct ConvexProblem {
    SoftmaxRegModel model;  // at the trained optimum
    std::vector<Eigen::VectorXd> ref_x;
    std::vector<Eigen::VectorXd> ref_q;  // soft targets
    std::vector<bool> corrupted;
    std::vector<Eigen::VectorXd> val_x;
    std::vector<int> val_y;
    InfluenceProblem influence;  // ready for the machinery above
};

// Generate instances, train to the optimum, wire up the influence problem.
ConvexProblem build_convex_problem(const ConvexStudyConfig& cfg, std::uint64_t seed);

struct ConvexStudyResult {
    std::vector<double> predicted_delta;  // -(1/m) * Psi_j
    std::vector<double> loo_delta;
    double spearman_corr = 0.0;
    double sign_agreement = 0.0;
    Lemma1Result lemma;
};

// Full calibration: influence vs LOO over every instance plus lemma check.
ConvexStudyResult run_convex_study(const ConvexStudyConfig& cfg, std::uint64_t seed);

}  // namespace dard

#endif  // DARD_CONVEX_STUDY_HPP
