#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace gifkit;

namespace {

BackboneConfig cfg(BackboneKind kind, double l2 = 1e-4) {
    auto c = BackboneConfig::for_kind(kind);
    c.l2 = l2;
    return c;
}

/// One training node with feature [1] and two classes, no propagation.
GraphModel single_node(double l2) {
    RowMatrix x(1, 1);
    x << 1.0;
    auto c = cfg(BackboneKind::Sgc, l2);
    c.depth = 0;
    return GraphModel(Graph::build(1, {}, x, {0}, 2, {1}, {0}), c);
}

double rel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return (a - b).norm() / std::max(b.norm(), 1e-300);
}

Eigen::VectorXd fd_gradient(const GraphModel& m, const ModelParams& p, std::span<const NodeId> nodes) {
    const double h = 1e-5 * (1.0 + p.flat().cwiseAbs().maxCoeff());
    Eigen::VectorXd g(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        Eigen::VectorXd a = p.flat(), b = p.flat();
        a(i) += h;
        b(i) -= h;
        g(i) = (m.loss(p.with_flat(a), nodes) - m.loss(p.with_flat(b), nodes)) / (2.0 * h);
    }
    return g;
}

} // namespace

TEST(SubsetGrad, EmptySubsetIsZero) {
    const GraphModel m(fixtures::random_graph(0), cfg(BackboneKind::Sgc));
    const auto p = fixtures::random_params(m, 1);
    EXPECT_EQ(subset_grad(m, p, std::vector<NodeId>{}, false).norm(), 0.0);
    EXPECT_NEAR((subset_grad(m, p, std::vector<NodeId>{}, true) - 2e-4 * p.flat()).norm(), 0.0, 1e-18);
}

TEST(SubsetGrad, VanishesAtTrainedOptimum) {
    RowMatrix x(4, 2);
    x << 1, 0, 1, 0, 0, 1, 0, 1;
    const Graph g = Graph::build(4, {{0, 1}, {2, 3}}, x, {0, 0, 1, 1}, 2, {1, 1, 1, 1}, {0, 0, 0, 0});
    auto c = cfg(BackboneKind::Sgc, 1e-3);
    c.depth = 1;
    c.learning_rate = 2.0;
    c.epochs = 200000;
    const GraphModel m(g, c);
    const auto t = train(m);
    EXPECT_LT(subset_grad(m, t.params, g.train_nodes(), true).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(SubsetGrad, MatchesFiniteDifferences) {
    for (auto kind : {BackboneKind::Sgc, BackboneKind::Gcn1, BackboneKind::Gcn2}) {
        const double tol = kind == BackboneKind::Gcn2 ? 1e-4 : 1e-6;
        for (std::uint64_t trial = 0; trial < 20; ++trial) {
            const Graph g = fixtures::random_graph(trial, 20, 4, 3);
            const GraphModel m(g, cfg(kind));
            const auto p = fixtures::random_params(m, trial + 100);
            const auto train = g.train_nodes();
            const NodeId node[] = {train[trial % train.size()]};
            EXPECT_LT(rel(subset_grad(m, p, node, false), fd_gradient(m, p, node)), tol)
                << to_string(kind) << " trial " << trial;
        }
    }
}

TEST(Hvp, ZeroVector) {
    const GraphModel m(fixtures::random_graph(2), cfg(BackboneKind::Sgc));
    const auto h = training_hessian(m, fixtures::random_params(m, 2));
    EXPECT_EQ(hvp(h, Eigen::VectorXd::Zero(h.dim())).norm(), 0.0);
    const GraphModel m2(fixtures::random_graph(2), cfg(BackboneKind::Gcn2));
    const auto h2 = training_hessian(m2, fixtures::random_params(m2, 2));
    EXPECT_EQ(hvp(h2, Eigen::VectorXd::Zero(h2.dim())).norm(), 0.0);
}

TEST(Hvp, SymmetricLinearAndMatchesDenseHessian) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (auto kind : {BackboneKind::Sgc, BackboneKind::Gcn1}) {
            const GraphModel m(fixtures::random_graph(seed), cfg(kind));
            const auto p = fixtures::random_params(m, seed);
            const auto h = training_hessian(m, p);
            const Eigen::MatrixXd dense = exact_hessian(m, p);
            const auto u = fixtures::random_vector(h.dim(), seed + 1);
            const auto v = fixtures::random_vector(h.dim(), seed + 2);
            const double uhv = u.dot(hvp(h, v)), vhu = v.dot(hvp(h, u));
            EXPECT_LE(std::abs(uhv - vhu), 1e-8 * std::abs(uhv));
            EXPECT_LE((hvp(h, v) - dense * v).norm(), 1e-10 * (dense * v).norm());
            EXPECT_LE((hvp(h, 2.0 * u - 3.0 * v) - (2.0 * hvp(h, u) - 3.0 * hvp(h, v))).norm(),
                      1e-10 * hvp(h, u).norm());
        }
    }
}

TEST(Hvp, FiniteDifferenceOfGradientAgrees) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const GraphModel m(fixtures::random_graph(seed), cfg(BackboneKind::Sgc));
        const auto p = fixtures::random_params(m, seed);
        const auto v = fixtures::random_vector(p.size(), seed + 5);
        const auto nodes = m.graph().train_nodes();
        const double r = 1e-4 * (1.0 + p.flat().cwiseAbs().maxCoeff()) / v.cwiseAbs().maxCoeff();
        const Eigen::VectorXd fd =
            (subset_grad(m, p.with_flat(p.flat() + r * v), nodes, true) -
             subset_grad(m, p.with_flat(p.flat() - r * v), nodes, true)) / (2.0 * r);
        EXPECT_LT(rel(fd, hvp(training_hessian(m, p), v)), 1e-5);
    }
}

TEST(Hvp, Gcn2OperatorApproximatesSymmetricCurvature) {
    const GraphModel m(fixtures::random_graph(3), cfg(BackboneKind::Gcn2));
    const auto p = fixtures::random_params(m, 3);
    const auto h = training_hessian(m, p);
    const auto u = fixtures::random_vector(h.dim(), 4), v = fixtures::random_vector(h.dim(), 5);
    const double uhv = u.dot(hvp(h, v)), vhu = v.dot(hvp(h, u));
    EXPECT_LE(std::abs(uhv - vhu), 1e-4 * std::max(std::abs(uhv), 1.0));
    EXPECT_THROW(training_hessian(m, p, HessianForm::BlockDiagonal), UnsupportedError);
}

TEST(Hvp, RejectsBadInput) {
    const GraphModel m(fixtures::random_graph(1), cfg(BackboneKind::Sgc));
    const auto h = training_hessian(m, fixtures::random_params(m, 1));
    EXPECT_THROW(hvp(h, Eigen::VectorXd::Zero(3)), InputError);
    const HessianOperator bad(2, [](const Eigen::VectorXd& v) {
        return Eigen::VectorXd::Constant(v.size(), std::numeric_limits<double>::quiet_NaN()).eval();
    });
    EXPECT_THROW(hvp(bad, Eigen::VectorXd::Ones(2)), NumericError);
}

TEST(ExactHessian, SingleNodeExample) {
    const GraphModel m = single_node(0.0);
    const auto p = ModelParams::zeros(m.param_shape());
    const Eigen::MatrixXd h = exact_hessian(m, p);
    Eigen::MatrixXd want(2, 2);
    want << 0.25, -0.25, -0.25, 0.25;
    EXPECT_LT((h - want).cwiseAbs().maxCoeff(), 1e-15);
    // finite differences of the gradient, column by column
    const NodeId node[] = {0};
    for (Eigen::Index j = 0; j < 2; ++j) {
        Eigen::VectorXd a = p.flat(), b = p.flat();
        a(j) += 1e-5;
        b(j) -= 1e-5;
        const Eigen::VectorXd col =
            (subset_grad(m, p.with_flat(a), node, false) - subset_grad(m, p.with_flat(b), node, false)) / 2e-5;
        EXPECT_LT((col - want.col(j)).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(ExactHessian, EigenvalueBounds) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        for (double l2 : {0.0, 1e-4, 1e-2}) {
            const GraphModel m(fixtures::random_graph(seed), cfg(BackboneKind::Sgc, l2));
            const auto h = exact_hessian(m, fixtures::random_params(m, seed));
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h, Eigen::EigenvaluesOnly);
            EXPECT_GE(es.eigenvalues()(0), 2.0 * l2 - 1e-9);
        }
    }
}

TEST(ExactHessian, UnsupportedCases) {
    const GraphModel g2(fixtures::random_graph(0), cfg(BackboneKind::Gcn2));
    EXPECT_THROW(exact_hessian(g2, g2.initial_params()), UnsupportedError);
    EXPECT_THROW(blockdiag_hessian(g2, g2.initial_params()), UnsupportedError);
    const GraphModel m(fixtures::random_graph(0), cfg(BackboneKind::Sgc));
    EXPECT_THROW(exact_hessian(m, m.initial_params(), 10), UnsupportedError);
}

TEST(BlockDiagonal, SingleNodeExample) {
    const GraphModel m = single_node(0.0);
    const auto blocks = blockdiag_hessian(m, ModelParams::zeros(m.param_shape()));
    ASSERT_EQ(blocks.size(), 2u);
    EXPECT_DOUBLE_EQ(blocks[0](0, 0), 0.25);
    EXPECT_DOUBLE_EQ(blocks[1](0, 0), 0.25);
}

TEST(BlockDiagonal, MatchesExactDiagonalBlocksButNotOffDiagonal) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const GraphModel m(fixtures::random_graph(seed), cfg(BackboneKind::Gcn1));
        const auto p = fixtures::random_params(m, seed);
        const Eigen::MatrixXd h = exact_hessian(m, p);
        const auto blocks = blockdiag_hessian(m, p);
        const Eigen::Index f = m.feature_dim();
        Eigen::MatrixXd bd = Eigen::MatrixXd::Zero(h.rows(), h.cols());
        for (std::size_t j = 0; j < blocks.size(); ++j) {
            const auto o = static_cast<Eigen::Index>(j) * f;
            EXPECT_LE((blocks[j] - h.block(o, o, f, f)).cwiseAbs().maxCoeff(), 1e-12);
            bd.block(o, o, f, f) = blocks[j];
        }
        EXPECT_GT((h - bd).norm(), 1e-6);
        // the operator form agrees with the assembled blocks
        const auto v = fixtures::random_vector(h.rows(), seed);
        const auto op = training_hessian(m, p, HessianForm::BlockDiagonal);
        EXPECT_LE((hvp(op, v) - bd * v).norm(), 1e-10 * (bd * v).norm());
    }
}

TEST(BlockDiagonal, ConfidentNodeContributesAlmostNothing) {
    RowMatrix x(1, 2);
    x << 1.0, 0.5;
    auto c = cfg(BackboneKind::Sgc, 0.0);
    c.depth = 0;
    const GraphModel m(Graph::build(1, {}, x, {0}, 3, {1}, {0}), c);
    ModelParams p = ModelParams::zeros(m.param_shape());
    p.matrix(0).col(0).setConstant(30.0); // logit gap 45 => p(1 - p) ~ 1e-19
    const auto blocks = blockdiag_hessian(m, p);
    for (const auto& b : blocks) EXPECT_LT(b.norm(), 1e-7 * x.row(0).squaredNorm());
}

TEST(Lanczos, SmallestRitzValueExceedsRegularizer) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Graph g = fixtures::sbm(seed, 30);
        for (auto kind : {BackboneKind::Sgc, BackboneKind::Gcn1}) {
            const GraphModel m(g, cfg(kind));
            const auto t = train(m);
            const auto bounds = lanczos_bounds(training_hessian(m, t.params), 50, seed);
            EXPECT_GT(bounds.smallest, m.config().l2);
            EXPECT_GT(bounds.largest, bounds.smallest);
        }
    }
}

TEST(Lanczos, RecoversDiagonalSpectrum) {
    const Eigen::VectorXd d = Eigen::VectorXd::LinSpaced(12, 0.5, 6.0);
    const HessianOperator h(12, [d](const Eigen::VectorXd& v) { return d.cwiseProduct(v).eval(); });
    const auto b = lanczos_bounds(h, 12);
    EXPECT_NEAR(b.smallest, 0.5, 1e-9);
    EXPECT_NEAR(b.largest, 6.0, 1e-9);
    EXPECT_NEAR(power_iteration(h, 500), 6.0, 1e-3);
}
