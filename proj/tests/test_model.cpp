#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "dard/error.hpp"
#include "dard/model.hpp"
#include "dard/rng.hpp"

using namespace dard;

namespace {

struct Setup {
    std::shared_ptr<RegionVocabs> vocabs;
    RegionMap map;
    int num_pois = 18;
    int num_categories = 5;

    Setup() {
        map.k = 3;
        map.centroids.assign(3, {0.0, 0.0});
        for (int p = 0; p < num_pois; ++p) map.assignment.push_back(p % 3);
        vocabs = std::make_shared<RegionVocabs>(RegionVocabs::build(map, num_pois));
    }

    EmbedMeanModel model(std::uint64_t seed, double scale = 0.05) const {
        return EmbedMeanModel(vocabs, {0, 1, 2}, num_categories, 4, 3, seed, scale);
    }
};

// central finite differences of a scalar loss
Eigen::VectorXd fd_grad(LocalModel& model, const LossSpec& spec,
                        const RegionVocabs* vocabs, double h = 1e-6) {
    const Eigen::VectorXd theta = model.get_params();
    Eigen::VectorXd g(theta.size());
    Eigen::VectorXd probe = theta;
    for (int j = 0; j < theta.size(); ++j) {
        probe[j] = theta[j] + h;
        model.set_params(probe);
        const double lp = loss_value(model, spec, vocabs);
        probe[j] = theta[j] - h;
        model.set_params(probe);
        const double lm = loss_value(model, spec, vocabs);
        probe[j] = theta[j];
        g[j] = (lp - lm) / (2.0 * h);
    }
    model.set_params(theta);
    return g;
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double denom = std::max(1e-12, std::max(a.norm(), b.norm()));
    return (a - b).norm() / denom;
}

}  // namespace

TEST_CASE("RegionVocabs round-trips global and local indices") {
    const Setup s;
    for (int p = 0; p < s.num_pois; ++p) {
        const auto [r, local] = s.vocabs->local[p];
        CHECK(r == s.map.assignment[p]);
        CHECK(s.vocabs->pois[r][local] == p);
    }
    int total = 0;
    for (int r = 0; r < s.map.k; ++r) total += s.vocabs->size(r);
    CHECK(total == s.num_pois);
}

TEST_CASE("zero-initialized model emits uniform decisions") {
    const Setup s;
    const EmbedMeanModel m = s.model(1, 0.0);
    const Eigen::VectorXd p = m.forward_vocab({0, 3}, VocabRef::region_pois(0));
    for (int i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(1.0 / p.size()));
    const Eigen::VectorXd pc = m.forward_vocab({1, 2}, VocabRef::categories());
    CHECK(pc.size() == s.num_categories);
    for (int i = 0; i < pc.size(); ++i) CHECK(pc[i] == doctest::Approx(0.2));
}

TEST_CASE("forward_vocab is a probability distribution; unknown region throws") {
    const Setup s;
    const EmbedMeanModel m = s.model(2);
    const Eigen::VectorXd p = m.forward_vocab({0, 3, 6, 9}, VocabRef::region_pois(0));
    CHECK(p.sum() == doctest::Approx(1.0));
    CHECK(p.minCoeff() > 0.0);
    CHECK_THROWS_AS(m.forward_vocab({0}, VocabRef::region_pois(7)), ContractError);
    CHECK(m.has_region(1));
    CHECK_FALSE(m.has_region(5));
}

TEST_CASE("analytic gradients match finite differences (100 random cases)") {
    const Setup s;
    auto rng = make_rng(99);
    std::uniform_int_distribution<int> poi(0, s.num_pois - 1);
    std::uniform_int_distribution<int> cat(0, s.num_categories - 1);
    std::uniform_int_distribution<int> len(2, 7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    int cases = 0;
    for (int trial = 0; cases < 100; ++trial) {
        EmbedMeanModel m = s.model(1000 + trial, 0.3);
        LossSpec spec;
        const bool use_pois = trial % 2 == 0;
        if (use_pois) {
            std::vector<int> items(len(rng));
            for (int& it : items) it = poi(rng);
            spec.locals.push_back({VocabRef::Kind::RegionPois, items, 1.0});
        } else {
            std::vector<int> items(len(rng));
            for (int& it : items) it = cat(rng);
            spec.locals.push_back({VocabRef::Kind::Categories, items, 1.0});
        }
        if (trial % 3 == 0) {
            // add a distillation term over a random region
            const int r = trial % s.map.k;
            std::vector<int> seq;
            for (int t = 0; t < 4; ++t) seq.push_back(s.vocabs->pois[r][t % s.vocabs->size(r)]);
            Eigen::VectorXd q(s.vocabs->size(r));
            for (int i = 0; i < q.size(); ++i) q[i] = unit(rng) + 0.01;
            q /= q.sum();
            spec.distills.push_back({VocabRef::region_pois(r), seq, q, 0.7});
        }

        const Eigen::VectorXd g = loss_grad(m, spec, s.vocabs.get());
        const Eigen::VectorXd gfd = fd_grad(m, spec, s.vocabs.get());
        CHECK(rel_err(g, gfd) < 1e-4);
        ++cases;
    }
}

TEST_CASE("distill_grad drives own decision toward the target") {
    const Setup s;
    EmbedMeanModel m = s.model(7, 0.2);
    const VocabRef over = VocabRef::region_pois(1);
    const std::vector<int> seq = {1, 4, 7};
    Eigen::VectorXd q = Eigen::VectorXd::Zero(s.vocabs->size(1));
    q[0] = 1.0;

    double before = (m.forward_vocab(seq, over) - q).squaredNorm();
    for (int it = 0; it < 200; ++it) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(m.param_count());
        m.distill_grad(seq, over, q, 1.0, g);
        m.set_params(m.get_params() - 0.5 * g);
    }
    CHECK((m.forward_vocab(seq, over) - q).squaredNorm() < before);
}

TEST_CASE("distill_pair_loss checks vocab compatibility") {
    const Setup s;
    const EmbedMeanModel m = s.model(3);
    const auto a = forward(m, {0, 3}, VocabRef::region_pois(0));
    const auto b = forward(m, {1, 4}, VocabRef::region_pois(1));
    CHECK_THROWS_AS(distill_pair_loss(a, b), ContractError);
    CHECK(distill_pair_loss(a, a) == doctest::Approx(0.0));
}

TEST_CASE("local_loss equals a hand-computed next-item cross-entropy") {
    const Setup s;
    const EmbedMeanModel m = s.model(11, 0.2);
    const std::vector<int> items = {0, 3, 6, 1};

    double want = 0.0;
    std::vector<int> prefix = {items[0]};
    for (std::size_t t = 1; t < items.size(); ++t) {
        const auto [r, local] = s.vocabs->local[items[t]];
        want -= std::log(m.forward_vocab(prefix, VocabRef::region_pois(r))[local]);
        prefix.push_back(items[t]);
    }
    want /= 3.0;
    CHECK(local_loss(m, items, VocabRef::Kind::RegionPois, s.vocabs.get()) ==
          doctest::Approx(want));
    CHECK_THROWS_AS(local_loss(m, {0}, VocabRef::Kind::RegionPois, s.vocabs.get()),
                    ContractError);
}

TEST_CASE("hvp matches dense-Hessian products within relative 1e-3") {
    const Setup s;
    auto rng = make_rng(55);
    std::normal_distribution<double> n01(0.0, 1.0);

    for (int trial = 0; trial < 5; ++trial) {
        EmbedMeanModel m = s.model(40 + trial, 0.2);
        LossSpec spec;
        spec.locals.push_back({VocabRef::Kind::RegionPois, {0, 3, 6, 9, 12}, 1.0});
        spec.locals.push_back({VocabRef::Kind::Categories, {0, 1, 2, 3}, 0.5});

        const Eigen::MatrixXd H = model_hessian(m, spec, s.vocabs.get());
        CHECK((H - H.transpose()).norm() < 1e-9);
        for (int v = 0; v < 3; ++v) {
            Eigen::VectorXd dir(m.param_count());
            for (int i = 0; i < dir.size(); ++i) dir[i] = n01(rng);
            const Eigen::VectorXd hv = model_hvp(m, spec, s.vocabs.get(), dir);
            CHECK(rel_err(hv, H * dir) < 1e-3);
        }
    }
}

TEST_CASE("model_hessian refuses parameter counts above the cap") {
    const Setup s;
    EmbedMeanModel m = s.model(1);
    LossSpec spec;
    spec.locals.push_back({VocabRef::Kind::Categories, {0, 1}, 1.0});
    CHECK_THROWS_AS(model_hessian(m, spec, s.vocabs.get(), 10), ContractError);
    // zero direction short-circuits
    CHECK(model_hvp(m, spec, s.vocabs.get(),
                    Eigen::VectorXd::Zero(m.param_count()))
              .norm() == 0.0);
}

TEST_CASE("SoftmaxRegModel gradients and Hessian against finite differences") {
    auto rng = make_rng(321);
    std::normal_distribution<double> n01(0.0, 1.0);
    const int C = 4, F = 6;

    for (int trial = 0; trial < 20; ++trial) {
        SoftmaxRegModel m(C, F, 500 + trial, 0.8);
        Eigen::VectorXd x(F);
        for (int i = 0; i < F; ++i) x[i] = std::abs(n01(rng));
        x /= x.sum();
        Eigen::VectorXd q(C);
        for (int i = 0; i < C; ++i) q[i] = std::abs(n01(rng)) + 0.05;
        q /= q.sum();
        const int y = trial % C;

        // hard and soft CE gradient vs FD
        const double h = 1e-6;
        const Eigen::VectorXd theta = m.get_params();
        Eigen::VectorXd fd_hard(theta.size()), fd_soft(theta.size());
        Eigen::VectorXd probe = theta;
        for (int j = 0; j < theta.size(); ++j) {
            probe[j] = theta[j] + h;
            m.set_params(probe);
            const double hp = m.ce(x, y), sp = m.soft_ce(x, q);
            probe[j] = theta[j] - h;
            m.set_params(probe);
            fd_hard[j] = (hp - m.ce(x, y)) / (2 * h);
            fd_soft[j] = (sp - m.soft_ce(x, q)) / (2 * h);
            probe[j] = theta[j];
        }
        m.set_params(theta);
        CHECK(rel_err(m.ce_grad_x(x, y), fd_hard) < 1e-4);
        CHECK(rel_err(m.soft_ce_grad_x(x, q), fd_soft) < 1e-4);

        // closed-form point Hessian vs FD of the analytic gradient
        Eigen::MatrixXd fdH(theta.size(), theta.size());
        for (int j = 0; j < theta.size(); ++j) {
            probe[j] = theta[j] + h;
            m.set_params(probe);
            const Eigen::VectorXd gp = m.soft_ce_grad_x(x, q);
            probe[j] = theta[j] - h;
            m.set_params(probe);
            fdH.col(j) = (gp - m.soft_ce_grad_x(x, q)) / (2 * h);
            probe[j] = theta[j];
        }
        m.set_params(theta);
        const Eigen::MatrixXd H = m.point_hessian_x(x);
        CHECK((H - fdH).norm() / std::max(1.0, H.norm()) < 1e-3);

        // PSD: convexity of the CE objective
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
        CHECK(eig.eigenvalues().minCoeff() > -1e-9);
    }
}

TEST_CASE("SoftmaxRegModel soft-CE is convex along random segments") {
    auto rng = make_rng(77);
    std::normal_distribution<double> n01(0.0, 1.0);
    const int C = 3, F = 5;
    SoftmaxRegModel m(C, F, 0, 0.0);
    Eigen::VectorXd x(F);
    for (int i = 0; i < F; ++i) x[i] = std::abs(n01(rng)) + 0.1;
    Eigen::VectorXd q(C);
    q << 0.2, 0.5, 0.3;

    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd a(C * F), b(C * F);
        for (int i = 0; i < C * F; ++i) { a[i] = n01(rng); b[i] = n01(rng); }
        auto at = [&](const Eigen::VectorXd& t) {
            m.set_params(t);
            return m.soft_ce(x, q);
        };
        const double mid = at(0.5 * a + 0.5 * b);
        CHECK(mid <= 0.5 * at(a) + 0.5 * at(b) + 1e-10);
    }
}

TEST_CASE("bag_features normalizes and handles empty input") {
    const Eigen::VectorXd x = SoftmaxRegModel::bag_features({0, 5, 5, 12}, 5);
    CHECK(x.sum() == doctest::Approx(1.0));
    CHECK(x[0] == doctest::Approx(3.0 / 4.0));  // 0, 5, 5 all hit bucket 0
    CHECK(x[2] == doctest::Approx(1.0 / 4.0));  // 12 % 5
    const Eigen::VectorXd e = SoftmaxRegModel::bag_features({}, 4);
    for (int i = 0; i < 4; ++i) CHECK(e[i] == doctest::Approx(0.25));
}

TEST_CASE("clone and set_params isolate model instances") {
    const Setup s;
    EmbedMeanModel m = s.model(9, 0.1);
    auto copy = m.clone();
    Eigen::VectorXd theta = m.get_params();
    theta[0] += 1.0;
    m.set_params(theta);
    CHECK(copy->get_params()[0] != m.get_params()[0]);
    CHECK_THROWS_AS(m.set_params(Eigen::VectorXd::Zero(3)), ContractError);
}
