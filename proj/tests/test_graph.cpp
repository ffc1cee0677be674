#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace gifkit;
using fixtures::path_graph;
using fixtures::random_graph;

namespace {

Graph bare(std::size_t n, std::vector<Edge> edges) {
    return Graph::build(n, std::move(edges), RowMatrix::Identity(static_cast<Eigen::Index>(n),
                                                                 static_cast<Eigen::Index>(n)),
                        std::vector<int>(n, 0), 1, std::vector<std::uint8_t>(n, 1),
                        std::vector<std::uint8_t>(n, 0));
}

std::vector<NodeId> ids(std::initializer_list<NodeId> l) { return l; }

} // namespace

TEST(GraphBuild, CanonicalizesAndDeduplicatesEdges) {
    Graph g = bare(3, {{1, 0}, {0, 1}, {2, 1}});
    ASSERT_EQ(g.num_edges(), 2u);
    EXPECT_EQ(g.edges()[0], (Edge{0, 1}));
    EXPECT_EQ(g.edges()[1], (Edge{1, 2}));
    EXPECT_TRUE(g.has_edge(2, 1));
    EXPECT_FALSE(g.has_edge(0, 2));
    EXPECT_EQ(g.degree(1), 2u);
}

TEST(GraphBuild, RejectsInvalidInput) {
    const RowMatrix x = RowMatrix::Zero(2, 1);
    const std::vector<std::uint8_t> on{1, 1}, off{0, 0};
    EXPECT_THROW(Graph::build(2, {{0, 2}}, x, {0, 0}, 1, on, off), InputError);
    EXPECT_THROW(Graph::build(2, {{1, 1}}, x, {0, 0}, 1, on, off), InputError);
    EXPECT_THROW(Graph::build(2, {}, x, {0, 1}, 1, on, off), InputError);
    EXPECT_THROW(Graph::build(2, {}, x, {0, 0}, 1, on, on), InputError);
    EXPECT_THROW(Graph::build(3, {}, x, {0, 0, 0}, 1, {1, 1, 1}, {0, 0, 0}), InputError);
    EXPECT_THROW(Graph::build(2, {}, x, {0}, 1, on, off), InputError);
}

TEST(NormalizedAdjacency, SingleEdge) {
    const auto a = normalized_adjacency(bare(2, {{0, 1}}), false).to_dense();
    Eigen::MatrixXd want(2, 2);
    want << 0, 1, 1, 0;
    EXPECT_EQ(a, want);
}

TEST(NormalizedAdjacency, Triangle) {
    const auto a = normalized_adjacency(bare(3, {{0, 1}, {1, 2}, {0, 2}}), false).to_dense();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(a(i, j), i == j ? 0.0 : 0.5, 1e-15);
}

TEST(NormalizedAdjacency, IsolatedNodeHasZeroRowAndColumn) {
    const auto a = normalized_adjacency(bare(3, {{0, 1}}), false).to_dense();
    EXPECT_EQ(a.row(2).norm(), 0.0);
    EXPECT_EQ(a.col(2).norm(), 0.0);
    // with self-loops an isolated node keeps itself
    const auto b = normalized_adjacency(bare(3, {{0, 1}}), true).to_dense();
    EXPECT_DOUBLE_EQ(b(2, 2), 1.0);
    EXPECT_DOUBLE_EQ(b(0, 1), 0.5);
}

TEST(NormalizedAdjacency, SymmetricWithSpectralRadiusAtMostOne) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Graph g = random_graph(seed, 25);
        for (bool loops : {false, true}) {
            const auto a = normalized_adjacency(g, loops).to_dense();
            EXPECT_TRUE(a == a.transpose());
            Eigen::VectorXd q = fixtures::random_vector(a.rows(), seed);
            double est = 0.0;
            // power iteration on A^2 avoids sign oscillation for bipartite parts
            for (int it = 0; it < 500; ++it) {
                Eigen::VectorXd w = a * (a * q);
                est = w.norm();
                if (est == 0.0) break;
                q = w / est;
            }
            EXPECT_LE(std::sqrt(est), 1.0 + 1e-6);
        }
    }
}

TEST(KHop, PathExamples) {
    const Graph g = path_graph();
    EXPECT_EQ(k_hop_neighbors(g, 2, 1), ids({1, 3}));
    EXPECT_TRUE(k_hop_neighbors(g, 2, 0).empty());
    EXPECT_EQ(k_hop_neighbors(g, 0, 3), ids({1, 2, 3}));
    EXPECT_THROW(k_hop_neighbors(g, 5, 1), InputError);
}

TEST(KHop, MonotoneAndCoversComponent) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Graph g = random_graph(seed, 30, 3, 2, 0.06);
        for (NodeId v = 0; v < g.num_nodes(); v += 7) {
            std::vector<NodeId> prev;
            for (std::size_t k = 0; k <= 6; ++k) {
                auto cur = k_hop_neighbors(g, v, k);
                EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
                prev = std::move(cur);
            }
            const NodeId seedv[] = {v};
            auto component = hop_ball(g, seedv, g.num_nodes());
            component.erase(std::find(component.begin(), component.end(), v));
            EXPECT_EQ(k_hop_neighbors(g, v, g.num_nodes()), component);
        }
    }
}

TEST(InfluencedRegion, PathExamples) {
    const Graph g = path_graph();
    auto e = influenced_region(g, UnlearnRequest::remove_edges({{1, 2}}), 2);
    EXPECT_TRUE(e.directly_removed.empty());
    EXPECT_EQ(e.influenced, ids({0, 1, 2, 3, 4}));

    auto n = influenced_region(g, UnlearnRequest::remove_nodes({2}), 2);
    EXPECT_EQ(n.directly_removed, ids({2}));
    EXPECT_EQ(n.influenced, ids({0, 1, 3, 4}));

    auto f = influenced_region(g, UnlearnRequest::revoke_features({0}), 1);
    EXPECT_TRUE(f.directly_removed.empty());
    EXPECT_EQ(f.influenced, ids({0, 1}));
}

TEST(InfluencedRegion, NodeRequestReachesOneHopFurtherThanDepth) {
    // On a longer path, k = 1: deleting node 3 changes the degree of nodes 2
    // and 4, which in turn changes the propagated rows of 1 and 5.
    const Graph g = path_graph(7);
    auto r = influenced_region(g, UnlearnRequest::remove_nodes({3}), 1);
    EXPECT_EQ(r.influenced, ids({1, 2, 4, 5}));
    auto k = influenced_region(g, UnlearnRequest::remove_nodes({3}), 1, RegionPolicy::KHop);
    EXPECT_EQ(k.influenced, ids({2, 4}));
}

TEST(InfluencedRegion, RegionsAreDisjointAndSurvive) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Graph g = random_graph(seed);
        const auto req = fixtures::random_request(g, RequestKind::Node, 3, seed);
        const auto r = influenced_region(g, req, 2);
        for (NodeId v : r.influenced) {
            EXPECT_FALSE(std::binary_search(r.directly_removed.begin(), r.directly_removed.end(), v));
            EXPECT_FALSE(std::binary_search(req.nodes.begin(), req.nodes.end(), v));
        }
    }
}

TEST(InfluencedRegion, EmptyRequestGivesEmptyRegion) {
    const Graph g = path_graph();
    for (auto req : {UnlearnRequest::remove_nodes({}), UnlearnRequest::remove_edges({}),
                     UnlearnRequest::revoke_features({})}) {
        const auto rest = apply_request(g, req);
        EXPECT_EQ(rest.graph, g);
        const auto r = influenced_region(rest.graph, req, 2);
        EXPECT_TRUE(r.directly_removed.empty());
        EXPECT_TRUE(r.influenced.empty());
    }
}

TEST(InfluencedRegion, Soundness) {
    // Every training node outside the region keeps its propagated row.
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Graph g = random_graph(seed, 20 + seed % 30);
        for (auto kind : {RequestKind::Node, RequestKind::Edge, RequestKind::Feature}) {
            if (kind == RequestKind::Edge && g.num_edges() < 2) continue;
            const auto req = fixtures::random_request(g, kind, 2, seed * 3 + 1);
            const auto rest = apply_request(g, req);
            for (std::size_t k : {1, 2, 3}) {
                for (bool loops : {true, false}) {
                    const RowMatrix h0 = propagate(g, k, loops);
                    const RowMatrix h1 = propagate(rest.graph, k, loops);
                    const auto r = influenced_region(g, req, k);
                    for (NodeId u : g.train_nodes()) {
                        if (std::binary_search(r.influenced.begin(), r.influenced.end(), u) ||
                            std::binary_search(req.nodes.begin(), req.nodes.end(), u) ||
                            std::binary_search(r.directly_removed.begin(), r.directly_removed.end(), u))
                            continue;
                        const auto nu = static_cast<Eigen::Index>(rest.map(u));
                        EXPECT_LE((h0.row(static_cast<Eigen::Index>(u)) - h1.row(nu)).cwiseAbs().maxCoeff(),
                                  1e-12);
                        ++checked;
                    }
                }
            }
        }
    }
    EXPECT_GT(checked, 1000u);
}

TEST(InfluencedRegion, KHopPolicyMissesDegreeChanges) {
    const Graph g = path_graph(7);
    const auto req = UnlearnRequest::remove_nodes({3});
    const auto rest = apply_request(g, req);
    const RowMatrix h0 = propagate(g, 1, true), h1 = propagate(rest.graph, 1, true);
    // node 1 is outside the k-hop region yet its row changes
    EXPECT_GT((h0.row(1) - h1.row(static_cast<Eigen::Index>(rest.map(1)))).norm(), 1e-3);
}

TEST(ApplyRequest, PathExamples) {
    const Graph g = path_graph();
    const auto n = apply_request(g, UnlearnRequest::remove_nodes({2}));
    EXPECT_EQ(n.graph.num_nodes(), 4u);
    EXPECT_EQ(n.graph.edges(), (std::vector<Edge>{{0, 1}, {2, 3}}));
    EXPECT_EQ(n.map(3), 2u);
    EXPECT_EQ(n.map(2), kNoNode);
    EXPECT_EQ(n.new_to_old, ids({0, 1, 3, 4}));
    EXPECT_EQ(n.graph.labels()[2], g.labels()[3]);
    EXPECT_EQ(n.graph.test_mask()[3], 1);

    const auto e = apply_request(g, UnlearnRequest::remove_edges({{2, 1}}));
    EXPECT_EQ(e.graph.edges(), (std::vector<Edge>{{0, 1}, {2, 3}, {3, 4}}));

    const auto f = apply_request(g, UnlearnRequest::revoke_features({0}));
    EXPECT_EQ(f.graph.features().row(0).norm(), 0.0);
    EXPECT_EQ(f.graph.edges(), g.edges());
    EXPECT_EQ(f.graph.features().row(1), g.features().row(1));
}

TEST(ApplyRequest, RejectsMissingElements) {
    const Graph g = path_graph();
    EXPECT_THROW(apply_request(g, UnlearnRequest::remove_nodes({9})), InputError);
    EXPECT_THROW(apply_request(g, UnlearnRequest::remove_edges({{0, 2}})), InputError);
    EXPECT_THROW(influenced_region(g, UnlearnRequest::revoke_features({5}), 1), InputError);
    UnlearnRequest mixed = UnlearnRequest::remove_nodes({1});
    mixed.edges.push_back({0, 1});
    EXPECT_THROW(mixed.validate(g), InputError);
}

TEST(RandomSplit, DeterministicAndDisjoint) {
    const Graph g = random_graph(3, 40);
    const Graph a = random_split(g, 0.9, 7), b = random_split(g, 0.9, 7), c = random_split(g, 0.9, 8);
    EXPECT_EQ(a, b);
    EXPECT_NE(a.train_mask(), c.train_mask());
    EXPECT_EQ(a.train_nodes().size(), 36u);
    EXPECT_EQ(a.test_nodes().size(), 4u);
    EXPECT_THROW(random_split(g, 1.0, 0), InputError);
}
