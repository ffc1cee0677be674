// Small graphs shared by the test suites.
#pragma once

#include <random>
#include <vector>

#include "gifkit/gifkit.hpp"

namespace fixtures {

using namespace gifkit;

/// Path 0-1-2-...-(n-1) with identity-like features, alternating labels
/// and every node in training except the last.
inline Graph path_graph(std::size_t n = 5, std::size_t f = 3) {
    std::vector<Edge> edges;
    for (NodeId v = 0; v + 1 < n; ++v) edges.push_back({v, v + 1});
    RowMatrix x = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, i % x.cols()) = 1.0;
    std::vector<int> labels(n);
    std::vector<std::uint8_t> train(n, 1), test(n, 0);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
    train[n - 1] = 0;
    test[n - 1] = 1;
    return Graph::build(n, edges, x, labels, 2, train, test);
}

/// Erdos-Renyi style random graph with Gaussian features and random
/// labels; roughly 70% of nodes are training, the rest test.
inline Graph random_graph(std::uint64_t seed, std::size_t n = 30, std::size_t f = 5, int classes = 3,
                          double p = 0.12) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> gauss;
    std::vector<Edge> edges;
    for (NodeId a = 0; a < n; ++a)
        for (NodeId b = a + 1; b < n; ++b)
            if (u(rng) < p) edges.push_back({a, b});
    RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = gauss(rng);
    std::vector<int> labels(n);
    std::vector<std::uint8_t> train(n), test(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(rng() % static_cast<std::uint64_t>(classes));
        train[i] = u(rng) < 0.7;
        test[i] = !train[i];
    }
    return Graph::build(n, edges, x, labels, classes, train, test);
}

inline Graph sbm(std::uint64_t seed, std::size_t per_block = 100, std::size_t blocks = 3,
                 double p_intra = 0.05, double p_inter = 0.01, std::size_t f = 30,
                 double signal = 1.0) {
    SbmSpec s;
    s.blocks = blocks;
    s.nodes_per_block = per_block;
    s.p_intra = p_intra;
    s.p_inter = p_inter;
    s.feature_dim = f;
    s.seed = seed;
    s.signal = signal;
    return normalize_feature_rows(gen_sbm(s, 0.9, seed));
}

inline ModelParams random_params(const GraphModel& m, std::uint64_t seed, double scale = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    ModelParams p = m.initial_params();
    for (Eigen::Index i = 0; i < p.size(); ++i) p.flat()(i) = scale * gauss(rng);
    return p;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = gauss(rng);
    return v;
}

/// A random request of the given kind touching `count` elements.
inline UnlearnRequest random_request(const Graph& g, RequestKind kind, std::size_t count,
                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    if (kind == RequestKind::Edge) {
        std::vector<Edge> pool = g.edges();
        sample_prefix(pool, count, rng);
        return UnlearnRequest::remove_edges(pool);
    }
    std::vector<NodeId> pool(g.num_nodes());
    for (NodeId v = 0; v < g.num_nodes(); ++v) pool[v] = v;
    sample_prefix(pool, count, rng);
    return kind == RequestKind::Node ? UnlearnRequest::remove_nodes(pool)
                                     : UnlearnRequest::revoke_features(pool);
}

/// Full-difference oracle: gradient of the loss over all training nodes on
/// the original graph minus the same over the surviving training nodes on
/// the remaining graph, at the same parameters.
inline Eigen::VectorXd full_difference(const GraphModel& model, const ModelParams& p,
                                       const UnlearnRequest& request) {
    const RemainingGraph rest = apply_request(model.graph(), request);
    const GraphModel rm(rest.graph, model.config());
    return subset_grad(model, p, model.graph().train_nodes(), false) -
           subset_grad(rm, p, rest.graph.train_nodes(), false);
}

} // namespace fixtures
