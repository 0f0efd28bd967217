#ifndef DARD_INFLUENCE_HPP
#define DARD_INFLUENCE_HPP

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

namespace dard {

// A differentiable scalar loss term over a flat parameter vector.
struct LossTerm {
    std::function<double(const Eigen::VectorXd&)> value;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
};

struct InfluenceConfig {
    double alpha = 0.001;  // harmfulness threshold on Psi
    double damping = 0.01;
    enum class Solver { DenseInverse, ConjugateGradient };
    Solver solver = Solver::DenseInverse;
    enum class ParamScope { Full, OutputHead };
    ParamScope scope = ParamScope::Full;
    int dense_cap = 2000;
    int cg_max_iter = 500;
    double cg_tol = 1e-10;
};

// Influence computation inputs: converged parameters, per-instance
// reference losses over D', validation losses over Q, and optionally a
// closed-form mean Hessian and a retraining procedure for oracle runs.
struct InfluenceProblem {
    Eigen::VectorXd theta_hat;
    std::vector<LossTerm> ref_losses;  // l_j, j over D'
    std::vector<LossTerm> val_losses;  // l_k, k over Q
    // mean Hessian over D' at theta; when absent it is built by finite
    // differences of the mean reference gradient
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> hessian;
    // retrain on the given subset of reference indices with the same
    // initialization and schedule; returns the new optimum
    std::function<Eigen::VectorXd(const std::vector<int>&)> retrain;

    int num_ref() const { return static_cast<int>(ref_losses.size()); }
    double val_risk(const Eigen::VectorXd& theta) const;  // sum over Q
};

struct InfluenceReport {
    struct Row {
        double psi = 0.0;  // Psi_theta(X_j): influence on test risk
        bool harmful = false;
        std::optional<double> oracle_delta;
        double epsilon = 0.0;  // -1/|D'|
    };
    std::vector<Row> rows;
    double alpha = 0.0;
};

Eigen::MatrixXd mean_ref_hessian(const InfluenceProblem& problem);

// psi = -(H + damping I)^{-1} grad l_j(theta_hat)
Eigen::VectorXd param_shift(const InfluenceProblem& problem, const Eigen::MatrixXd& hessian,
                            int j, const InfluenceConfig& cfg);

// Psi(X_j, X^v_k) = -grad l_k^T (H + damping I)^{-1} grad l_j
double influence_on_val(const InfluenceProblem& problem, const Eigen::MatrixXd& hessian,
                        int j, int k, const InfluenceConfig& cfg);

// Psi(X_j) = sum_k Psi(X_j, X^v_k)
double influence_on_risk(const InfluenceProblem& problem, const Eigen::MatrixXd& hessian,
                         int j, const InfluenceConfig& cfg);

// Psi for every reference instance plus harmful flags.
InfluenceReport influence_report(const InfluenceProblem& problem, const InfluenceConfig& cfg);

// D_hat = D' minus the harmful instances; returns kept indices.
std::vector<int> select_adaptive(const InfluenceReport& report);

// Ground truth: retrain without instance j, return the validation risk delta.
double loo_oracle(const InfluenceProblem& problem, int j);

struct Lemma1Result {
    double predicted = 0.0;  // -(1/|D'|) sum of Psi over the harmful set
    double realized = 0.0;   // risk change after actually retraining
    int harmful_count = 0;
};

// alpha = 0 harmful-set removal: predicted vs realized test-risk change.
Lemma1Result lemma1_check(const InfluenceProblem& problem, InfluenceConfig cfg);

// Spearman rank correlation; NaN-free inputs assumed.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace dard

#endif  // DARD_INFLUENCE_HPP
