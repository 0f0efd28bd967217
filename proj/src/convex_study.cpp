#include "dard/convex_study.hpp"

#include <cmath>

#include "dard/error.hpp"
#include "dard/rng.hpp"

namespace dard {

namespace {

Eigen::VectorXd random_feature(Rng& rng, int features) {
    std::gamma_distribution<double> g(0.5, 1.0);
    Eigen::VectorXd x(features);
    for (int f = 0; f < features; ++f) x[f] = g(rng) + 1e-4;
    return x / x.sum();
}

// Newton on (1/m) sum_j soft_ce(x_j, q_j) + (reg/2)||theta||^2 from zero init.
Eigen::VectorXd newton_fit(const ConvexStudyConfig& cfg,
                           const std::vector<Eigen::VectorXd>& xs,
                           const std::vector<Eigen::VectorXd>& qs,
                           const std::vector<int>& subset) {
    const int n = cfg.classes * cfg.features;
    const double m = cfg.num_ref;  // fixed 1/m scaling, also for subsets
    SoftmaxRegModel model(cfg.classes, cfg.features, 0, 0.0);
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(n);

    for (int it = 0; it < cfg.newton_iters; ++it) {
        model.set_params(theta);
        Eigen::VectorXd g = cfg.reg * theta;
        Eigen::MatrixXd H = cfg.reg * Eigen::MatrixXd::Identity(n, n);
        for (int j : subset) {
            g += model.soft_ce_grad_x(xs[j], qs[j]) / m;
            H += model.point_hessian_x(xs[j]) / m;
        }
        if (g.norm() < cfg.grad_tol) break;
        theta -= H.ldlt().solve(g);
    }
    if (!theta.allFinite()) throw NumericalError("convex fit diverged");
    return theta;
}

}  // namespace

ConvexProblem build_convex_problem(const ConvexStudyConfig& cfg, std::uint64_t seed) {
    auto rng = make_rng(derive_seed(seed, 0x6376U));

    // teacher weights define the clean soft targets
    SoftmaxRegModel teacher(cfg.classes, cfg.features, derive_seed(seed, 0x7463U), 1.5);

    ConvexProblem problem{SoftmaxRegModel(cfg.classes, cfg.features, 0, 0.0),
                          {}, {}, {}, {}, {}, {}};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::gamma_distribution<double> gq(0.3, 1.0);
    for (int j = 0; j < cfg.num_ref; ++j) {
        Eigen::VectorXd x = random_feature(rng, cfg.features);
        Eigen::VectorXd q;
        const bool corrupt = unit(rng) < cfg.corrupt_fraction;
        if (corrupt) {
            q.resize(cfg.classes);
            for (int c = 0; c < cfg.classes; ++c) q[c] = gq(rng) + 1e-4;
            q /= q.sum();
        } else {
            q = teacher.forward_x(3.0 * x);  // sharpened teacher decision
        }
        problem.ref_x.push_back(std::move(x));
        problem.ref_q.push_back(std::move(q));
        problem.corrupted.push_back(corrupt);
    }
    for (int k = 0; k < cfg.num_val; ++k) {
        Eigen::VectorXd x = random_feature(rng, cfg.features);
        const Eigen::VectorXd p = teacher.forward_x(3.0 * x);
        std::discrete_distribution<int> pick(p.data(), p.data() + p.size());
        problem.val_y.push_back(pick(rng));
        problem.val_x.push_back(std::move(x));
    }

    std::vector<int> all(cfg.num_ref);
    for (int j = 0; j < cfg.num_ref; ++j) all[j] = j;
    const Eigen::VectorXd theta_hat = newton_fit(cfg, problem.ref_x, problem.ref_q, all);
    problem.model.set_params(theta_hat);

    InfluenceProblem& inf = problem.influence;
    inf.theta_hat = theta_hat;
    SoftmaxRegModel probe(cfg.classes, cfg.features, 0, 0.0);
    for (int j = 0; j < cfg.num_ref; ++j) {
        const Eigen::VectorXd x = problem.ref_x[j];
        const Eigen::VectorXd q = problem.ref_q[j];
        inf.ref_losses.push_back(LossTerm{
            [probe, x, q](const Eigen::VectorXd& theta) mutable {
                probe.set_params(theta);
                return probe.soft_ce(x, q);
            },
            [probe, x, q](const Eigen::VectorXd& theta) mutable {
                probe.set_params(theta);
                return probe.soft_ce_grad_x(x, q);
            }});
    }
    for (int k = 0; k < cfg.num_val; ++k) {
        const Eigen::VectorXd x = problem.val_x[k];
        const int y = problem.val_y[k];
        inf.val_losses.push_back(LossTerm{
            [probe, x, y](const Eigen::VectorXd& theta) mutable {
                probe.set_params(theta);
                return probe.ce(x, y);
            },
            [probe, x, y](const Eigen::VectorXd& theta) mutable {
                probe.set_params(theta);
                return probe.ce_grad_x(x, y);
            }});
    }
    // Hessian of the training objective: mean point Hessians + reg I
    auto ref_x = problem.ref_x;
    inf.hessian = [probe, ref_x, cfg](const Eigen::VectorXd& theta) mutable {
        probe.set_params(theta);
        const int n = cfg.classes * cfg.features;
        Eigen::MatrixXd H = cfg.reg * Eigen::MatrixXd::Identity(n, n);
        for (const auto& x : ref_x) H += probe.point_hessian_x(x) / ref_x.size();
        return H;
    };
    auto ref_q = problem.ref_q;
    inf.retrain = [cfg, ref_x, ref_q](const std::vector<int>& keep) {
        return newton_fit(cfg, ref_x, ref_q, keep);
    };
    return problem;
}

ConvexStudyResult run_convex_study(const ConvexStudyConfig& cfg, std::uint64_t seed) {
    ConvexProblem problem = build_convex_problem(cfg, seed);

    InfluenceConfig icfg;
    icfg.alpha = 0.0;
    // the objective's own regularizer is the curvature floor; no extra damping
    icfg.damping = 0.0;
    const InfluenceReport report = influence_report(problem.influence, icfg);

    ConvexStudyResult result;
    for (int j = 0; j < cfg.num_ref; ++j) {
        result.predicted_delta.push_back(report.rows[j].epsilon * report.rows[j].psi);
        result.loo_delta.push_back(loo_oracle(problem.influence, j));
    }
    result.spearman_corr = spearman(result.predicted_delta, result.loo_delta);

    int agree = 0;
    for (int j = 0; j < cfg.num_ref; ++j) {
        const auto sgn = [](double v) { return v > 1e-12 ? 1 : (v < -1e-12 ? -1 : 0); };
        if (sgn(result.predicted_delta[j]) == sgn(result.loo_delta[j])) ++agree;
    }
    result.sign_agreement = static_cast<double>(agree) / cfg.num_ref;

    result.lemma = lemma1_check(problem.influence, icfg);
    return result;
}

}  // namespace dard
