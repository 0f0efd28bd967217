#include "dard/influence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dard/error.hpp"

namespace dard {

double InfluenceProblem::val_risk(const Eigen::VectorXd& theta) const {
    double risk = 0.0;
    for (const LossTerm& t : val_losses) risk += t.value(theta);
    return risk;
}

Eigen::MatrixXd mean_ref_hessian(const InfluenceProblem& problem) {
    if (problem.hessian) return problem.hessian(problem.theta_hat);
    const int n = static_cast<int>(problem.theta_hat.size());
    const double m = std::max(1, problem.num_ref());
    auto mean_grad = [&](const Eigen::VectorXd& theta) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
        for (const LossTerm& t : problem.ref_losses) g += t.grad(theta);
        return Eigen::VectorXd(g / m);
    };
    const double h = 1e-5;
    Eigen::MatrixXd H(n, n);
    Eigen::VectorXd probe = problem.theta_hat;
    for (int j = 0; j < n; ++j) {
        probe[j] += h;
        const Eigen::VectorXd gp = mean_grad(probe);
        probe[j] -= 2.0 * h;
        const Eigen::VectorXd gm = mean_grad(probe);
        probe[j] = problem.theta_hat[j];
        H.col(j) = (gp - gm) / (2.0 * h);
    }
    return 0.5 * (H + H.transpose());
}

namespace {

// Solve (H + damping I) x = b; dense LDLT or plain conjugate gradient.
Eigen::VectorXd damped_solve(const Eigen::MatrixXd& hessian, const Eigen::VectorXd& b,
                             const InfluenceConfig& cfg) {
    const int n = static_cast<int>(b.size());
    Eigen::MatrixXd A = hessian;
    A.diagonal().array() += cfg.damping;

    Eigen::VectorXd x;
    if (cfg.solver == InfluenceConfig::Solver::DenseInverse) {
        if (n > cfg.dense_cap)
            throw ContractError("dense solve over cap; use conjugate_gradient");
        x = A.ldlt().solve(b);
    } else {
        x = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd r = b;
        Eigen::VectorXd p = r;
        double rs = r.squaredNorm();
        const double stop = cfg.cg_tol * cfg.cg_tol * b.squaredNorm();
        for (int it = 0; it < cfg.cg_max_iter && rs > stop; ++it) {
            const Eigen::VectorXd Ap = A * p;
            const double denom = p.dot(Ap);
            if (denom <= 0.0) break;  // lost positive-definiteness
            const double alpha = rs / denom;
            x += alpha * p;
            r -= alpha * Ap;
            const double rs_next = r.squaredNorm();
            p = r + (rs_next / rs) * p;
            rs = rs_next;
        }
    }

    const double bn = b.norm();
    if (bn > 0.0) {
        const double residual = (A * x - b).norm() / bn;
        if (!std::isfinite(residual) || residual > 1e-6) {
            if (cfg.damping == 0.0)
                throw NumericalError(
                    "influence solve is singular at damping 0; set damping > 0");
            throw NumericalError("influence solve residual " + std::to_string(residual) +
                                 " exceeds 1e-6");
        }
    }
    return x;
}

}  // namespace

Eigen::VectorXd param_shift(const InfluenceProblem& problem, const Eigen::MatrixXd& hessian,
                            int j, const InfluenceConfig& cfg) {
    const Eigen::VectorXd g = problem.ref_losses.at(j).grad(problem.theta_hat);
    if (g.norm() == 0.0) return Eigen::VectorXd::Zero(g.size());
    return -damped_solve(hessian, g, cfg);
}

double influence_on_val(const InfluenceProblem& problem, const Eigen::MatrixXd& hessian,
                        int j, int k, const InfluenceConfig& cfg) {
    const Eigen::VectorXd psi = param_shift(problem, hessian, j, cfg);
    return problem.val_losses.at(k).grad(problem.theta_hat).dot(psi);
}

double influence_on_risk(const InfluenceProblem& problem, const Eigen::MatrixXd& hessian,
                         int j, const InfluenceConfig& cfg) {
    if (problem.val_losses.empty())
        throw ContractError("influence_on_risk: empty validation set");
    Eigen::VectorXd gq = Eigen::VectorXd::Zero(problem.theta_hat.size());
    for (const LossTerm& t : problem.val_losses) gq += t.grad(problem.theta_hat);
    return gq.dot(param_shift(problem, hessian, j, cfg));
}

InfluenceReport influence_report(const InfluenceProblem& problem, const InfluenceConfig& cfg) {
    if (problem.val_losses.empty())
        throw ContractError("influence_report: empty validation set");
    const Eigen::MatrixXd H = mean_ref_hessian(problem);

    // Psi_j = -gq^T (H+dI)^{-1} g_j; one solve with gq covers all j
    Eigen::VectorXd gq = Eigen::VectorXd::Zero(problem.theta_hat.size());
    for (const LossTerm& t : problem.val_losses) gq += t.grad(problem.theta_hat);
    const Eigen::VectorXd w = damped_solve(H, gq, cfg);

    InfluenceReport report;
    report.alpha = cfg.alpha;
    const double epsilon = -1.0 / std::max(1, problem.num_ref());
    report.rows.reserve(problem.ref_losses.size());
    for (const LossTerm& t : problem.ref_losses) {
        InfluenceReport::Row row;
        row.psi = -w.dot(t.grad(problem.theta_hat));
        row.harmful = row.psi > cfg.alpha;
        row.epsilon = epsilon;
        report.rows.push_back(row);
    }
    return report;
}

std::vector<int> select_adaptive(const InfluenceReport& report) {
    std::vector<int> kept;
    for (std::size_t j = 0; j < report.rows.size(); ++j)
        if (!report.rows[j].harmful) kept.push_back(static_cast<int>(j));
    return kept;
}

double loo_oracle(const InfluenceProblem& problem, int j) {
    if (!problem.retrain)
        throw ContractError("loo_oracle: problem has no retrain procedure");
    std::vector<int> keep;
    keep.reserve(problem.ref_losses.size() - 1);
    for (int i = 0; i < problem.num_ref(); ++i)
        if (i != j) keep.push_back(i);
    const Eigen::VectorXd theta_minus = problem.retrain(keep);
    if (!theta_minus.allFinite())
        throw NumericalError("loo_oracle: retraining did not converge");
    return problem.val_risk(theta_minus) - problem.val_risk(problem.theta_hat);
}

Lemma1Result lemma1_check(const InfluenceProblem& problem, InfluenceConfig cfg) {
    if (!problem.retrain)
        throw ContractError("lemma1_check: problem has no retrain procedure");
    cfg.alpha = 0.0;
    const InfluenceReport report = influence_report(problem, cfg);

    Lemma1Result result;
    std::vector<int> keep;
    for (int j = 0; j < problem.num_ref(); ++j) {
        if (report.rows[j].harmful) {
            result.predicted -= report.rows[j].psi / problem.num_ref();
            ++result.harmful_count;
        } else {
            keep.push_back(j);
        }
    }
    const Eigen::VectorXd theta_eps = problem.retrain(keep);
    result.realized = problem.val_risk(theta_eps) - problem.val_risk(problem.theta_hat);
    return result;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw ContractError("spearman: need two equal-length series");
    auto ranks = [](const std::vector<double>& x) {
        const int n = static_cast<int>(x.size());
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(),
                  [&](int i, int j) { return x[i] < x[j]; });
        std::vector<double> r(n);
        int i = 0;
        while (i < n) {
            int j = i;
            while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
            const double avg = (i + j) / 2.0;  // average rank for ties
            for (int k = i; k <= j; ++k) r[order[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const std::vector<double> ra = ranks(a), rb = ranks(b);
    const int n = static_cast<int>(a.size());
    double ma = 0.0, mb = 0.0;
    for (int i = 0; i < n; ++i) { ma += ra[i]; mb += rb[i]; }
    ma /= n; mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (int i = 0; i < n; ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace dard
