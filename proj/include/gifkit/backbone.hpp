#ifndef GIFKIT_BACKBONE_HPP
#define GIFKIT_BACKBONE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "graph.hpp"
#include "sparse.hpp"

namespace gifkit {

enum class BackboneKind { Sgc, Gcn1, Gcn2 };

inline const char* to_string(BackboneKind k) {
    switch (k) {
    case BackboneKind::Sgc: return "sgc";
    case BackboneKind::Gcn1: return "gcn1";
    case BackboneKind::Gcn2: return "gcn2";
    }
    return "?";
}

/// SGC: softmax(A^K X W). GCN1: the same with K = 1. GCN2:
/// softmax(A relu(A X W1) W2). A is the normalized adjacency.
struct BackboneConfig {
    BackboneKind kind = BackboneKind::Sgc;
    std::size_t depth = 2;
    std::size_t hidden_dim = 16;
    bool self_loops = true;
    double l2 = 1e-4;
    std::size_t epochs = 100;
    double learning_rate = 0.5;
    std::uint64_t seed = 0;

    /// Defaults for a kind (learning rate and depth differ).
    static BackboneConfig for_kind(BackboneKind kind) {
        BackboneConfig c;
        c.kind = kind;
        if (kind == BackboneKind::Gcn1) c.depth = 1;
        if (kind == BackboneKind::Gcn2) c.learning_rate = 0.05;
        return c;
    }

    bool is_linear() const noexcept { return kind != BackboneKind::Gcn2; }

    /// Hops that feed one node's prediction.
    std::size_t receptive_depth() const noexcept {
        switch (kind) {
        case BackboneKind::Sgc: return depth;
        case BackboneKind::Gcn1: return 1;
        case BackboneKind::Gcn2: return 2;
        }
        return depth;
    }

    void validate() const {
        if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ConfigError("l2 strength must be >= 0");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
        if (kind == BackboneKind::Gcn1 && depth != 1)
            throw ConfigError("gcn1 has propagation depth 1");
        if (kind == BackboneKind::Gcn2 && hidden_dim < 1)
            throw ConfigError("gcn2 needs a hidden width >= 1");
    }
};

struct Segment {
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index offset = 0;
};

/// Flat parameter vector with a view of each weight matrix. Matrices are
/// stored column-major, so the F x C classifier of a linear backbone is
/// laid out class block after class block.
class ModelParams {
public:
    ModelParams() = default;

    static ModelParams zeros(std::vector<std::pair<Eigen::Index, Eigen::Index>> shapes) {
        ModelParams p;
        Eigen::Index off = 0;
        for (auto [r, c] : shapes) {
            p.segments_.push_back({r, c, off});
            off += r * c;
        }
        p.flat_ = Eigen::VectorXd::Zero(off);
        return p;
    }

    ModelParams with_flat(Eigen::VectorXd flat) const {
        if (flat.size() != flat_.size()) throw InputError("parameter vector length mismatch");
        ModelParams p = *this;
        p.flat_ = std::move(flat);
        return p;
    }

    Eigen::Index size() const noexcept { return flat_.size(); }
    const Eigen::VectorXd& flat() const noexcept { return flat_; }
    Eigen::VectorXd& flat() noexcept { return flat_; }
    const std::vector<Segment>& segments() const noexcept { return segments_; }

    Eigen::Map<const Eigen::MatrixXd> matrix(std::size_t i) const {
        const auto& s = segments_.at(i);
        return {flat_.data() + s.offset, s.rows, s.cols};
    }
    Eigen::Map<Eigen::MatrixXd> matrix(std::size_t i) {
        const auto& s = segments_.at(i);
        return {flat_.data() + s.offset, s.rows, s.cols};
    }

private:
    Eigen::VectorXd flat_;
    std::vector<Segment> segments_;
};

/// A^K X with A = normalized_adjacency(graph, self_loops).
inline RowMatrix propagate(const Graph& graph, std::size_t depth, bool self_loops) {
    RowMatrix h = graph.features();
    if (depth == 0) return h;
    const CsrMatrix a = normalized_adjacency(graph, self_loops);
    for (std::size_t k = 0; k < depth; ++k) h = csr_multiply(a, h);
    return h;
}

/// Rows `targets` of A^K X, touching only the K-hop neighbourhood of the
/// targets. Bitwise identical to the matching rows of propagate().
inline RowMatrix propagate_rows(const CsrMatrix& a, const RowMatrix& x, std::size_t depth,
                                std::span<const NodeId> targets) {
    const std::size_t n = a.rows;
    // levels[j] = nodes whose level-j rows are needed.
    std::vector<std::vector<NodeId>> levels(depth + 1);
    levels[depth].assign(targets.begin(), targets.end());
    std::vector<std::uint8_t> mark(n, 0);
    for (std::size_t j = depth; j > 0; --j) {
        std::fill(mark.begin(), mark.end(), 0);
        for (NodeId v : levels[j]) {
            mark[v] = 1;
            for (std::size_t c : a.row_cols(v)) mark[c] = 1;
        }
        for (NodeId v = 0; v < n; ++v)
            if (mark[v]) levels[j - 1].push_back(v);
    }
    // slot[v] = row of node v in the current level buffer.
    std::vector<std::size_t> slot(n, kNoNode);
    RowMatrix cur(static_cast<Eigen::Index>(levels[0].size()), x.cols());
    for (std::size_t i = 0; i < levels[0].size(); ++i) {
        cur.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(levels[0][i]));
        slot[levels[0][i]] = i;
    }
    for (std::size_t j = 1; j <= depth; ++j) {
        RowMatrix next = RowMatrix::Zero(static_cast<Eigen::Index>(levels[j].size()), x.cols());
        for (std::size_t i = 0; i < levels[j].size(); ++i) {
            const NodeId v = levels[j][i];
            auto cols = a.row_cols(v);
            auto vals = a.row_values(v);
            auto out = next.row(static_cast<Eigen::Index>(i));
            for (std::size_t k = 0; k < cols.size(); ++k)
                out.noalias() += vals[k] * cur.row(static_cast<Eigen::Index>(slot[cols[k]]));
        }
        for (NodeId v : levels[j - 1]) slot[v] = kNoNode;
        for (std::size_t i = 0; i < levels[j].size(); ++i) slot[levels[j][i]] = i;
        cur = std::move(next);
    }
    return cur;
}

/// Row-wise numerically stable softmax. The reductions are plain loops:
/// Eigen's vectorized ones pick their summation order from the row's
/// memory alignment, which shifts when rows are renumbered.
inline void softmax_rows_inplace(Eigen::Ref<RowMatrix> z) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double m = z(i, 0);
        for (Eigen::Index c = 1; c < z.cols(); ++c) m = std::max(m, z(i, c));
        double sum = 0.0;
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
            z(i, c) = std::exp(z(i, c) - m);
            sum += z(i, c);
        }
        for (Eigen::Index c = 0; c < z.cols(); ++c) z(i, c) /= sum;
    }
}

/// Logits h * W computed one row at a time with sequential dot products,
/// so a row's result depends only on that row's values.
inline RowMatrix rowwise_product(const RowMatrix& h, const Eigen::Ref<const Eigen::MatrixXd>& w) {
    RowMatrix out(h.rows(), w.cols());
    for (Eigen::Index i = 0; i < h.rows(); ++i)
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
            double s = 0.0;
            for (Eigen::Index k = 0; k < h.cols(); ++k) s += h(i, k) * w(k, c);
            out(i, c) = s;
        }
    return out;
}

/// Sum of -log softmax(z_i)[y_i] and the matching gradient (P - Y) of
/// the logits, over the rows of z.
inline double cross_entropy_rows(const RowMatrix& logits, std::span<const int> labels,
                                 RowMatrix* dlogits) {
    double loss = 0.0;
    if (dlogits) *dlogits = logits;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const auto r = logits.row(i);
        const double m = r.maxCoeff();
        const double lse = m + std::log((r.array() - m).exp().sum());
        const int y = labels[static_cast<std::size_t>(i)];
        loss += lse - r(y);
        if (dlogits) {
            auto d = dlogits->row(i);
            d = (r.array() - lse).exp().matrix();
            d(y) -= 1.0;
        }
    }
    return loss;
}

/// A backbone bound to one graph: caches the normalized adjacency and the
/// propagated features (A^K X for linear kinds, A X for gcn2).
class GraphModel {
public:
    GraphModel(Graph graph, BackboneConfig config)
        : graph_(std::move(graph)), config_(config),
          adjacency_(normalized_adjacency(graph_, config_.self_loops)) {
        config_.validate();
        const std::size_t steps = config_.is_linear() ? config_.receptive_depth() : 1;
        propagated_ = graph_.features();
        for (std::size_t k = 0; k < steps; ++k) propagated_ = csr_multiply(adjacency_, propagated_);
    }

    const Graph& graph() const noexcept { return graph_; }
    const BackboneConfig& config() const noexcept { return config_; }
    const CsrMatrix& adjacency() const noexcept { return adjacency_; }
    const RowMatrix& propagated() const noexcept { return propagated_; }
    Eigen::Index num_classes() const noexcept { return graph_.num_classes(); }
    Eigen::Index feature_dim() const noexcept { return propagated_.cols(); }

    std::vector<std::pair<Eigen::Index, Eigen::Index>> param_shape() const {
        const Eigen::Index f = feature_dim(), c = num_classes();
        if (config_.is_linear()) return {{f, c}};
        const auto h = static_cast<Eigen::Index>(config_.hidden_dim);
        return {{f, h}, {h, c}};
    }

    /// Zeros for linear kinds; seeded uniform +-1/sqrt(fan_in) for gcn2.
    ModelParams initial_params() const {
        ModelParams p = ModelParams::zeros(param_shape());
        if (config_.is_linear()) return p;
        std::mt19937_64 rng(config_.seed);
        for (std::size_t s = 0; s < p.segments().size(); ++s) {
            auto m = p.matrix(s);
            const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
        }
        return p;
    }

    void check_shape(const ModelParams& p) const {
        const auto shape = param_shape();
        if (p.segments().size() != shape.size()) throw InputError("parameter shape mismatch");
        for (std::size_t i = 0; i < shape.size(); ++i)
            if (p.segments()[i].rows != shape[i].first || p.segments()[i].cols != shape[i].second)
                throw InputError("parameter shape mismatch");
    }

    /// Class probabilities for every node. Each row is computed independently
    /// of the others.
    RowMatrix probabilities(const ModelParams& p) const {
        check_shape(p);
        RowMatrix z;
        if (config_.is_linear()) {
            z = rowwise_product(propagated_, p.matrix(0));
        } else {
            RowMatrix hidden = rowwise_product(propagated_, p.matrix(0));
            hidden = hidden.cwiseMax(0.0);
            z = rowwise_product(csr_multiply(adjacency_, hidden), p.matrix(1));
        }
        softmax_rows_inplace(z);
        return z;
    }

    /// Sum of per-node cross-entropy losses over `nodes` (no regularizer).
    double loss(const ModelParams& p, std::span<const NodeId> nodes) const {
        return evaluate(p, nodes, nullptr);
    }

    /// Gradient of loss(p, nodes) with respect to the flat parameters.
    Eigen::VectorXd gradient(const ModelParams& p, std::span<const NodeId> nodes) const {
        Eigen::VectorXd g;
        evaluate(p, nodes, &g);
        return g;
    }

    double loss_and_gradient(const ModelParams& p, std::span<const NodeId> nodes,
                             Eigen::VectorXd& grad) const {
        return evaluate(p, nodes, &grad);
    }

    /// Rows of the propagated feature matrix for `nodes`.
    RowMatrix gather_rows(std::span<const NodeId> nodes) const {
        RowMatrix out(static_cast<Eigen::Index>(nodes.size()), propagated_.cols());
        for (std::size_t i = 0; i < nodes.size(); ++i)
            out.row(static_cast<Eigen::Index>(i)) =
                propagated_.row(static_cast<Eigen::Index>(nodes[i]));
        return out;
    }

    std::vector<int> gather_labels(std::span<const NodeId> nodes) const {
        std::vector<int> out(nodes.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) out[i] = graph_.labels()[nodes[i]];
        return out;
    }

private:
    double evaluate(const ModelParams& p, std::span<const NodeId> nodes,
                    Eigen::VectorXd* grad) const;

    Graph graph_;
    BackboneConfig config_;
    CsrMatrix adjacency_;
    RowMatrix propagated_;
};

/// Loss and gradient of a linear classifier over explicit feature rows.
inline double linear_loss_gradient(const RowMatrix& rows, std::span<const int> labels,
                                   const Eigen::Ref<const Eigen::MatrixXd>& w,
                                   Eigen::MatrixXd* grad) {
    if (rows.rows() == 0) {
        if (grad) *grad = Eigen::MatrixXd::Zero(w.rows(), w.cols());
        return 0.0;
    }
    RowMatrix z = rows * w;
    RowMatrix dz;
    const double loss = cross_entropy_rows(z, labels, grad ? &dz : nullptr);
    if (grad) *grad = rows.transpose() * dz;
    return loss;
}

inline double GraphModel::evaluate(const ModelParams& p, std::span<const NodeId> nodes,
                                   Eigen::VectorXd* grad) const {
    check_shape(p);
    const auto labels = gather_labels(nodes);
    if (config_.is_linear()) {
        Eigen::MatrixXd g;
        const double loss =
            linear_loss_gradient(gather_rows(nodes), labels, p.matrix(0), grad ? &g : nullptr);
        if (grad) *grad = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
        return loss;
    }
    // gcn2: forward over the whole graph, back-propagate from `nodes` only.
    const auto w1 = p.matrix(0);
    const auto w2 = p.matrix(1);
    const RowMatrix pre = propagated_ * w1;
    const RowMatrix hidden = pre.cwiseMax(0.0);
    const RowMatrix mixed = csr_multiply(adjacency_, hidden);
    RowMatrix mixed_rows(static_cast<Eigen::Index>(nodes.size()), mixed.cols());
    for (std::size_t i = 0; i < nodes.size(); ++i)
        mixed_rows.row(static_cast<Eigen::Index>(i)) = mixed.row(static_cast<Eigen::Index>(nodes[i]));
    const RowMatrix logits = mixed_rows * w2;
    RowMatrix dlogits;
    const double loss = cross_entropy_rows(logits, labels, grad ? &dlogits : nullptr);
    if (!grad) return loss;

    grad->resize(p.size());
    Eigen::Map<Eigen::MatrixXd> g1(grad->data() + p.segments()[0].offset, w1.rows(), w1.cols());
    Eigen::Map<Eigen::MatrixXd> g2(grad->data() + p.segments()[1].offset, w2.rows(), w2.cols());
    g2.noalias() = mixed_rows.transpose() * dlogits;
    RowMatrix dmixed = RowMatrix::Zero(mixed.rows(), mixed.cols());
    const RowMatrix dm_rows = dlogits * w2.transpose();
    for (std::size_t i = 0; i < nodes.size(); ++i)
        dmixed.row(static_cast<Eigen::Index>(nodes[i])) += dm_rows.row(static_cast<Eigen::Index>(i));
    // A is symmetric, so A^T dmixed = A dmixed.
    RowMatrix dpre = csr_multiply(adjacency_, dmixed);
    dpre = dpre.cwiseProduct((pre.array() > 0.0).cast<double>().matrix());
    g1.noalias() = propagated_.transpose() * dpre;
    return loss;
}

/// Result of full-batch training.
struct TrainedModel {
    BackboneConfig config;
    ModelParams params;
    /// L0 + l2 * ||theta||^2 at the returned parameters.
    double objective = 0.0;
    /// Gradient of that objective at the returned parameters.
    Eigen::VectorXd objective_gradient;
    /// Objective before each update, one entry per epoch.
    std::vector<double> history;
};

/// Gradient of L0 + l2 * ||theta||^2 over the training nodes.
inline double training_objective(const GraphModel& model, const ModelParams& p,
                                 Eigen::VectorXd* grad) {
    const auto nodes = model.graph().train_nodes();
    const double l2 = model.config().l2;
    double obj;
    if (grad) {
        obj = model.loss_and_gradient(p, nodes, *grad);
        *grad += 2.0 * l2 * p.flat();
    } else {
        obj = model.loss(p, nodes);
    }
    return obj + l2 * p.flat().squaredNorm();
}

/// Full-batch gradient descent on L0 + l2 * ||theta||^2 from
/// `initial`. The step is learning_rate times the gradient divided by the
/// number of training nodes, i.e. the learning rate applies to the
/// per-node average objective, which has the same minimizer.
inline TrainedModel train_from(const GraphModel& model, ModelParams initial) {
    const auto& cfg = model.config();
    const auto nodes = model.graph().train_nodes();
    if (nodes.empty()) throw InputError("graph has no training nodes");
    const double step = cfg.learning_rate / static_cast<double>(nodes.size());

    TrainedModel out;
    out.config = cfg;
    out.params = std::move(initial);
    out.history.reserve(cfg.epochs);
    Eigen::VectorXd grad;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double obj = training_objective(model, out.params, &grad);
        if (!std::isfinite(obj) || !grad.allFinite())
            throw NumericError("non-finite training objective at epoch " + std::to_string(epoch));
        out.history.push_back(obj);
        out.params.flat() -= step * grad;
    }
    out.objective = training_objective(model, out.params, &out.objective_gradient);
    if (!std::isfinite(out.objective))
        throw NumericError("non-finite training objective at epoch " + std::to_string(cfg.epochs));
    return out;
}

inline TrainedModel train(const GraphModel& model) {
    return train_from(model, model.initial_params());
}

inline TrainedModel train(const Graph& graph, const BackboneConfig& config) {
    return train(GraphModel(graph, config));
}

inline std::vector<int> argmax_rows(const RowMatrix& probs) {
    std::vector<int> out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index best;
        probs.row(i).maxCoeff(&best);
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

/// Micro-averaged F1; for single-label multiclass data this is accuracy.
inline double micro_f1(std::span<const int> predicted, std::span<const int> actual) {
    if (predicted.size() != actual.size())
        throw InputError("prediction and label vectors differ in length");
    if (predicted.empty()) throw InputError("micro-F1 of an empty set");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == actual[i];
    return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

/// Micro-F1 of `params` on the test nodes of the model's graph.
inline double test_f1(const GraphModel& model, const ModelParams& params) {
    const auto probs = model.probabilities(params);
    const auto pred = argmax_rows(probs);
    std::vector<int> p, y;
    for (NodeId v : model.graph().test_nodes()) {
        p.push_back(pred[v]);
        y.push_back(model.graph().labels()[v]);
    }
    return micro_f1(p, y);
}

} // namespace gifkit

#endif // GIFKIT_BACKBONE_HPP
