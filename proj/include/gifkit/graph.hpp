#ifndef GIFKIT_GRAPH_HPP
#define GIFKIT_GRAPH_HPP

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "sparse.hpp"

namespace gifkit {

using NodeId = std::size_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

/// Unordered node pair, stored with u < v.
struct Edge {
    NodeId u = 0;
    NodeId v = 0;

    static Edge of(NodeId a, NodeId b) { return a < b ? Edge{a, b} : Edge{b, a}; }

    friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Undirected node-classification graph. Immutable once built; every
/// transformation returns a new value.
class Graph {
public:
    Graph() = default;

    /// Validates and normalizes the inputs. Edges are canonicalized to u < v
    /// and deduplicated; self-loops and out-of-range endpoints are rejected.
    static Graph build(std::size_t num_nodes, std::vector<Edge> edges, RowMatrix features,
                       std::vector<int> labels, int num_classes,
                       std::vector<std::uint8_t> train_mask, std::vector<std::uint8_t> test_mask);

    std::size_t num_nodes() const noexcept { return num_nodes_; }
    std::size_t num_edges() const noexcept { return edges_.size(); }
    std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(features_.cols()); }
    int num_classes() const noexcept { return num_classes_; }

    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const RowMatrix& features() const noexcept { return features_; }
    const std::vector<int>& labels() const noexcept { return labels_; }
    const std::vector<std::uint8_t>& train_mask() const noexcept { return train_mask_; }
    const std::vector<std::uint8_t>& test_mask() const noexcept { return test_mask_; }

    std::span<const NodeId> neighbors(NodeId v) const {
        return {adj_.data() + adj_ptr_[v], adj_ptr_[v + 1] - adj_ptr_[v]};
    }
    std::size_t degree(NodeId v) const { return adj_ptr_[v + 1] - adj_ptr_[v]; }
    bool has_edge(NodeId a, NodeId b) const;
    bool contains(NodeId v) const noexcept { return v < num_nodes_; }

    bool is_train(NodeId v) const { return train_mask_[v] != 0; }
    bool is_test(NodeId v) const { return test_mask_[v] != 0; }
    std::vector<NodeId> train_nodes() const;
    std::vector<NodeId> test_nodes() const;

    Graph with_features(RowMatrix features) const;
    Graph with_added_edges(std::span<const Edge> extra) const;
    Graph with_masks(std::vector<std::uint8_t> train_mask, std::vector<std::uint8_t> test_mask) const;

    friend bool operator==(const Graph& a, const Graph& b) {
        return a.num_nodes_ == b.num_nodes_ && a.num_classes_ == b.num_classes_ &&
               a.edges_ == b.edges_ && a.labels_ == b.labels_ &&
               a.train_mask_ == b.train_mask_ && a.test_mask_ == b.test_mask_ &&
               a.features_.rows() == b.features_.rows() &&
               a.features_.cols() == b.features_.cols() && a.features_ == b.features_;
    }

private:
    void index_adjacency();

    std::size_t num_nodes_ = 0;
    int num_classes_ = 0;
    std::vector<Edge> edges_;
    RowMatrix features_;
    std::vector<int> labels_;
    std::vector<std::uint8_t> train_mask_;
    std::vector<std::uint8_t> test_mask_;
    std::vector<std::size_t> adj_ptr_{0};
    std::vector<NodeId> adj_;
};

inline Graph Graph::build(std::size_t num_nodes, std::vector<Edge> edges, RowMatrix features,
                          std::vector<int> labels, int num_classes,
                          std::vector<std::uint8_t> train_mask,
                          std::vector<std::uint8_t> test_mask) {
    if (static_cast<std::size_t>(features.rows()) != num_nodes)
        throw InputError("feature matrix has " + std::to_string(features.rows()) +
                         " rows, expected " + std::to_string(num_nodes));
    if (labels.size() != num_nodes)
        throw InputError("label vector length differs from node count");
    if (train_mask.size() != num_nodes || test_mask.size() != num_nodes)
        throw InputError("mask length differs from node count");
    if (num_classes < 1) throw InputError("graph needs at least one class");
    for (std::size_t i = 0; i < num_nodes; ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw InputError("label of node " + std::to_string(i) + " outside [0, C)");
        if (train_mask[i] && test_mask[i])
            throw InputError("node " + std::to_string(i) + " is in both train and test masks");
    }
    for (auto& e : edges) {
        if (e.u >= num_nodes || e.v >= num_nodes)
            throw InputError("edge endpoint outside [0, num_nodes)");
        if (e.u == e.v) throw InputError("self-loop on node " + std::to_string(e.u));
        e = Edge::of(e.u, e.v);
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    Graph g;
    g.num_nodes_ = num_nodes;
    g.num_classes_ = num_classes;
    g.edges_ = std::move(edges);
    g.features_ = std::move(features);
    g.labels_ = std::move(labels);
    g.train_mask_ = std::move(train_mask);
    g.test_mask_ = std::move(test_mask);
    g.index_adjacency();
    return g;
}

inline void Graph::index_adjacency() {
    std::vector<std::size_t> deg(num_nodes_, 0);
    for (const auto& e : edges_) {
        ++deg[e.u];
        ++deg[e.v];
    }
    adj_ptr_.assign(num_nodes_ + 1, 0);
    for (std::size_t i = 0; i < num_nodes_; ++i) adj_ptr_[i + 1] = adj_ptr_[i] + deg[i];
    adj_.assign(adj_ptr_.back(), 0);
    std::vector<std::size_t> fill(adj_ptr_.begin(), adj_ptr_.end() - 1);
    for (const auto& e : edges_) {
        adj_[fill[e.u]++] = e.v;
        adj_[fill[e.v]++] = e.u;
    }
    for (std::size_t i = 0; i < num_nodes_; ++i)
        std::sort(adj_.begin() + static_cast<std::ptrdiff_t>(adj_ptr_[i]),
                  adj_.begin() + static_cast<std::ptrdiff_t>(adj_ptr_[i + 1]));
}

inline bool Graph::has_edge(NodeId a, NodeId b) const {
    if (a >= num_nodes_ || b >= num_nodes_) return false;
    auto nb = neighbors(a);
    return std::binary_search(nb.begin(), nb.end(), b);
}

inline std::vector<NodeId> Graph::train_nodes() const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < num_nodes_; ++i)
        if (train_mask_[i]) out.push_back(i);
    return out;
}

inline std::vector<NodeId> Graph::test_nodes() const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < num_nodes_; ++i)
        if (test_mask_[i]) out.push_back(i);
    return out;
}

inline Graph Graph::with_features(RowMatrix features) const {
    return build(num_nodes_, edges_, std::move(features), labels_, num_classes_, train_mask_,
                 test_mask_);
}

inline Graph Graph::with_added_edges(std::span<const Edge> extra) const {
    std::vector<Edge> all = edges_;
    all.insert(all.end(), extra.begin(), extra.end());
    return build(num_nodes_, std::move(all), features_, labels_, num_classes_, train_mask_,
                 test_mask_);
}

inline Graph Graph::with_masks(std::vector<std::uint8_t> train_mask,
                               std::vector<std::uint8_t> test_mask) const {
    return build(num_nodes_, edges_, features_, labels_, num_classes_, std::move(train_mask),
                 std::move(test_mask));
}

/// Rescales every feature row to unit Euclidean norm; zero rows stay zero.
inline Graph normalize_feature_rows(const Graph& g) {
    RowMatrix x = g.features();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double n = x.row(i).norm();
        if (n > 0.0) x.row(i) /= n;
    }
    return g.with_features(std::move(x));
}

/// Symmetric degree normalization D^-1/2 A D^-1/2. With `add_self_loops`
/// the identity is added to A (and to the degrees) first. Isolated nodes
/// get an all-zero row and column.
inline CsrMatrix normalized_adjacency(const Graph& g, bool add_self_loops) {
    const std::size_t n = g.num_nodes();
    std::vector<double> inv_sqrt(n, 0.0);
    for (NodeId i = 0; i < n; ++i) {
        const std::size_t d = g.degree(i) + (add_self_loops ? 1 : 0);
        inv_sqrt[i] = d == 0 ? 0.0 : 1.0 / std::sqrt(static_cast<double>(d));
    }
    CsrMatrix a;
    a.rows = a.cols = n;
    a.row_ptr.assign(n + 1, 0);
    a.col_idx.reserve(2 * g.num_edges() + (add_self_loops ? n : 0));
    a.values.reserve(a.col_idx.capacity());
    for (NodeId i = 0; i < n; ++i) {
        bool self_done = !add_self_loops;
        for (NodeId j : g.neighbors(i)) {
            if (!self_done && i < j) {
                a.col_idx.push_back(i);
                a.values.push_back(inv_sqrt[i] * inv_sqrt[i]);
                self_done = true;
            }
            a.col_idx.push_back(j);
            a.values.push_back(inv_sqrt[i] * inv_sqrt[j]);
        }
        if (!self_done) {
            a.col_idx.push_back(i);
            a.values.push_back(inv_sqrt[i] * inv_sqrt[i]);
        }
        a.row_ptr[i + 1] = a.col_idx.size();
    }
    return a;
}

/// Breadth-first distances from a seed set, truncated at `radius`.
/// Unreached nodes (or those beyond the radius) report kNoNode.
inline std::vector<std::size_t> hop_distances(const Graph& g, std::span<const NodeId> seeds,
                                              std::size_t radius) {
    std::vector<std::size_t> dist(g.num_nodes(), kNoNode);
    std::deque<NodeId> queue;
    for (NodeId s : seeds) {
        if (!g.contains(s)) throw InputError("unknown node id " + std::to_string(s));
        if (dist[s] != 0) {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while (!queue.empty()) {
        const NodeId v = queue.front();
        queue.pop_front();
        if (dist[v] == radius) continue;
        for (NodeId w : g.neighbors(v)) {
            if (dist[w] == kNoNode) {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    return dist;
}

/// Nodes whose shortest-path distance to `node` lies in [1, k].
inline std::vector<NodeId> k_hop_neighbors(const Graph& g, NodeId node, std::size_t k) {
    if (!g.contains(node)) throw InputError("unknown node id " + std::to_string(node));
    const NodeId seed[] = {node};
    auto dist = hop_distances(g, seed, k);
    std::vector<NodeId> out;
    for (NodeId i = 0; i < g.num_nodes(); ++i)
        if (dist[i] != kNoNode && dist[i] >= 1) out.push_back(i);
    return out;
}

/// Nodes within `radius` hops of any seed, seeds included.
inline std::vector<NodeId> hop_ball(const Graph& g, std::span<const NodeId> seeds,
                                    std::size_t radius) {
    auto dist = hop_distances(g, seeds, radius);
    std::vector<NodeId> out;
    for (NodeId i = 0; i < g.num_nodes(); ++i)
        if (dist[i] != kNoNode) out.push_back(i);
    return out;
}

enum class RequestKind { Node, Edge, Feature };

inline const char* to_string(RequestKind k) {
    switch (k) {
    case RequestKind::Node: return "node";
    case RequestKind::Edge: return "edge";
    case RequestKind::Feature: return "feature";
    }
    return "?";
}

/// A deletion request: nodes, edges, or the feature rows of some nodes.
/// An empty payload is a valid no-op request.
struct UnlearnRequest {
    RequestKind kind = RequestKind::Node;
    std::vector<NodeId> nodes;
    std::vector<Edge> edges;

    static UnlearnRequest remove_nodes(std::vector<NodeId> ids) {
        return canonical({RequestKind::Node, std::move(ids), {}});
    }
    static UnlearnRequest remove_edges(std::vector<Edge> es) {
        return canonical({RequestKind::Edge, {}, std::move(es)});
    }
    static UnlearnRequest revoke_features(std::vector<NodeId> ids) {
        return canonical({RequestKind::Feature, std::move(ids), {}});
    }

    bool empty() const noexcept { return nodes.empty() && edges.empty(); }

    /// Throws InputError unless the payload matches the kind and every
    /// referenced node or edge exists in `g`.
    void validate(const Graph& g) const;

private:
    static UnlearnRequest canonical(UnlearnRequest r) {
        std::sort(r.nodes.begin(), r.nodes.end());
        r.nodes.erase(std::unique(r.nodes.begin(), r.nodes.end()), r.nodes.end());
        for (auto& e : r.edges) e = Edge::of(e.u, e.v);
        std::sort(r.edges.begin(), r.edges.end());
        r.edges.erase(std::unique(r.edges.begin(), r.edges.end()), r.edges.end());
        return r;
    }
};

inline void UnlearnRequest::validate(const Graph& g) const {
    if (kind == RequestKind::Edge && !nodes.empty())
        throw InputError("edge request carries a node payload");
    if (kind != RequestKind::Edge && !edges.empty())
        throw InputError(std::string(to_string(kind)) + " request carries an edge payload");
    for (NodeId v : nodes)
        if (!g.contains(v)) throw InputError("request references unknown node " + std::to_string(v));
    for (const auto& e : edges)
        if (!g.has_edge(e.u, e.v))
            throw InputError("request references missing edge (" + std::to_string(e.u) + ", " +
                             std::to_string(e.v) + ")");
}

/// Nodes whose training loss changes because of a request.
struct InfluencedRegion {
    /// Nodes whose loss term disappears (node requests only).
    std::vector<NodeId> directly_removed;
    /// Surviving nodes whose prediction may change.
    std::vector<NodeId> influenced;
};

/// How far the influenced region of a node request extends.
enum class RegionPolicy {
    /// Node requests reach k + 1 hops: deleting v changes the degree of its
    /// neighbours, and those degrees enter every k-hop receptive field that
    /// contains a neighbour. Edge and feature requests reach k hops.
    ReceptiveField,
    /// Node requests reach only k hops. Not sound under degree
    /// normalization; kept for comparison.
    KHop,
};

inline InfluencedRegion influenced_region(const Graph& g, const UnlearnRequest& request,
                                          std::size_t k,
                                          RegionPolicy policy = RegionPolicy::ReceptiveField) {
    request.validate(g);
    InfluencedRegion region;
    switch (request.kind) {
    case RequestKind::Node: {
        if (request.nodes.empty()) break;
        const std::size_t radius = policy == RegionPolicy::ReceptiveField ? k + 1 : k;
        for (NodeId v : hop_ball(g, request.nodes, radius))
            if (!std::binary_search(request.nodes.begin(), request.nodes.end(), v))
                region.influenced.push_back(v);
        for (NodeId v : request.nodes)
            if (g.is_train(v)) region.directly_removed.push_back(v);
        break;
    }
    case RequestKind::Edge: {
        std::vector<NodeId> ends;
        for (const auto& e : request.edges) {
            ends.push_back(e.u);
            ends.push_back(e.v);
        }
        region.influenced = hop_ball(g, ends, k);
        break;
    }
    case RequestKind::Feature:
        region.influenced = hop_ball(g, request.nodes, k);
        break;
    }
    return region;
}

/// The nodes a request touches directly: removed training nodes for node
/// requests, edge endpoints for edge requests, feature owners for feature
/// requests. This is the region a neighbour-blind influence estimate uses.
inline InfluencedRegion direct_region(const Graph& g, const UnlearnRequest& request) {
    request.validate(g);
    InfluencedRegion region;
    switch (request.kind) {
    case RequestKind::Node:
        for (NodeId v : request.nodes)
            if (g.is_train(v)) region.directly_removed.push_back(v);
        break;
    case RequestKind::Edge:
        for (const auto& e : request.edges) {
            region.influenced.push_back(e.u);
            region.influenced.push_back(e.v);
        }
        std::sort(region.influenced.begin(), region.influenced.end());
        region.influenced.erase(std::unique(region.influenced.begin(), region.influenced.end()),
                                region.influenced.end());
        break;
    case RequestKind::Feature:
        region.influenced = request.nodes;
        break;
    }
    return region;
}

/// The graph left after a request, with the node index map.
struct RemainingGraph {
    Graph graph;
    /// old id -> new id, kNoNode for deleted nodes.
    std::vector<NodeId> old_to_new;
    /// new id -> old id.
    std::vector<NodeId> new_to_old;

    NodeId map(NodeId old_id) const { return old_to_new[old_id]; }
};

inline RemainingGraph apply_request(const Graph& g, const UnlearnRequest& request) {
    request.validate(g);
    RemainingGraph out;
    const std::size_t n = g.num_nodes();
    switch (request.kind) {
    case RequestKind::Node: {
        out.old_to_new.assign(n, kNoNode);
        std::size_t next = 0;
        for (NodeId v = 0; v < n; ++v) {
            if (std::binary_search(request.nodes.begin(), request.nodes.end(), v)) continue;
            out.old_to_new[v] = next++;
            out.new_to_old.push_back(v);
        }
        std::vector<Edge> edges;
        for (const auto& e : g.edges()) {
            const NodeId a = out.old_to_new[e.u], b = out.old_to_new[e.v];
            if (a != kNoNode && b != kNoNode) edges.push_back({a, b});
        }
        RowMatrix x(static_cast<Eigen::Index>(next), g.features().cols());
        std::vector<int> labels(next);
        std::vector<std::uint8_t> train(next), test(next);
        for (NodeId i = 0; i < next; ++i) {
            const NodeId o = out.new_to_old[i];
            x.row(static_cast<Eigen::Index>(i)) = g.features().row(static_cast<Eigen::Index>(o));
            labels[i] = g.labels()[o];
            train[i] = g.train_mask()[o];
            test[i] = g.test_mask()[o];
        }
        out.graph = Graph::build(next, std::move(edges), std::move(x), std::move(labels),
                                 g.num_classes(), std::move(train), std::move(test));
        return out;
    }
    case RequestKind::Edge: {
        std::vector<Edge> edges;
        edges.reserve(g.num_edges());
        std::set_difference(g.edges().begin(), g.edges().end(), request.edges.begin(),
                            request.edges.end(), std::back_inserter(edges));
        out.graph = Graph::build(n, std::move(edges), g.features(), g.labels(), g.num_classes(),
                                 g.train_mask(), g.test_mask());
        break;
    }
    case RequestKind::Feature: {
        RowMatrix x = g.features();
        for (NodeId v : request.nodes) x.row(static_cast<Eigen::Index>(v)).setZero();
        out.graph = g.with_features(std::move(x));
        break;
    }
    }
    out.old_to_new.resize(n);
    out.new_to_old.resize(n);
    for (NodeId i = 0; i < n; ++i) out.old_to_new[i] = out.new_to_old[i] = i;
    return out;
}

/// Uniform integer in [0, n) by rejection, so the sequence depends only on
/// the engine and not on the standard library's distribution code.
inline std::size_t draw_index(std::mt19937_64& rng, std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do r = rng(); while (r >= limit);
    return static_cast<std::size_t>(r % bound);
}

/// Moves a uniform random sample of `count` elements to the front of
/// `items` (partial Fisher-Yates) and drops the rest.
template <class T>
void sample_prefix(std::vector<T>& items, std::size_t count, std::mt19937_64& rng) {
    count = std::min(count, items.size());
    for (std::size_t i = 0; i < count; ++i)
        std::swap(items[i], items[i + draw_index(rng, items.size() - i)]);
    items.resize(count);
}

/// Random train/test masks: a `train_fraction` share of the nodes (rounded
/// to nearest, at least one on each side) is training, the rest is test.
inline Graph random_split(const Graph& g, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw InputError("split fraction must lie in (0, 1)");
    const std::size_t n = g.num_nodes();
    if (n < 2) throw InputError("a split needs at least two nodes");
    std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    std::vector<NodeId> order(n);
    for (NodeId v = 0; v < n; ++v) order[v] = v;
    std::mt19937_64 rng(seed);
    sample_prefix(order, n, rng);
    std::vector<std::uint8_t> train(n, 0), test(n, 0);
    for (std::size_t i = 0; i < n; ++i) (i < n_train ? train : test)[order[i]] = 1;
    return g.with_masks(std::move(train), std::move(test));
}

} // namespace gifkit

#endif // GIFKIT_GRAPH_HPP
