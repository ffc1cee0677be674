#ifndef GIFKIT_GIF_HPP
#define GIFKIT_GIF_HPP

#include <chrono>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "backbone.hpp"
#include "calculus.hpp"
#include "errors.hpp"
#include "graph.hpp"

namespace gifkit {

enum class UnlearnMethod {
    /// Graph influence function: removed nodes plus the influenced region.
    Gif,
    /// Classic influence function: only the directly touched nodes.
    TraditionalIf,
};

enum class SolverKind { Neumann, Direct };

inline const char* to_string(UnlearnMethod m) {
    return m == UnlearnMethod::Gif ? "gif" : "if";
}
inline const char* to_string(SolverKind s) {
    return s == SolverKind::Neumann ? "neumann" : "direct";
}

struct GifConfig {
    UnlearnMethod method = UnlearnMethod::Gif;
    SolverKind solver = SolverKind::Neumann;
    /// Neumann scaling: the recursion iterates with H / lambda.
    double lambda = 1e3;
    std::size_t iterations = 100;
    /// Receptive depth used for the influenced region; defaults to the
    /// backbone's.
    std::optional<std::size_t> depth;
    /// Must equal the l2 strength used in training.
    double l2 = 1e-4;
    double residual_tol = 0.05;
    /// Iterate with lambda * H and scale the estimate by lambda instead.
    bool lambda_multiplies = false;
    HessianForm hessian_form = HessianForm::Exact;
    RegionPolicy region_policy = RegionPolicy::ReceptiveField;
    /// Subtract the stored gradient of the training objective at theta_0
    /// from the right-hand side. This turns the update into a full Newton
    /// step on the remaining objective, which overshoots when training
    /// stopped far from the optimum; off by default.
    bool subtract_base_gradient = false;

    /// Deletion weight in the perturbed objective L0 + eps * dL; fixed.
    static constexpr double epsilon = -1.0;

    void validate() const {
        if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be > 0");
        if (iterations < 1) throw ConfigError("iteration count must be >= 1");
        if (!(l2 >= 0.0)) throw ConfigError("l2 strength must be >= 0");
        if (!(residual_tol > 0.0)) throw ConfigError("residual tolerance must be > 0");
    }
};

struct NeumannResult {
    Eigen::VectorXd estimate;
    /// |H estimate - v| / max(|v|, 1e-12)
    double residual = 0.0;
};

/// Truncated Neumann series for H^-1 v:
///   X_0 = v,  X_j = v + X_{j-1} - (1/lambda) H X_{j-1},  estimate X_t / lambda.
/// It converges when every eigenvalue of H lies in (0, 2 lambda). With
/// `lambda_multiplies` the recursion uses lambda * H and returns
/// lambda * X_t. Costs one HVP per iteration plus one for the residual.
inline NeumannResult neumann_ihvp(const HessianOperator& h, const Eigen::VectorXd& v,
                                  double lambda, std::size_t iterations,
                                  bool lambda_multiplies = false) {
    if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
    if (iterations < 1) throw ConfigError("iteration count must be >= 1");
    const double vnorm = v.norm();
    NeumannResult out;
    if (vnorm == 0.0) {
        out.estimate = Eigen::VectorXd::Zero(v.size());
        return out;
    }
    const double op_scale = lambda_multiplies ? lambda : 1.0 / lambda;
    Eigen::VectorXd x = v;
    for (std::size_t j = 1; j <= iterations; ++j) {
        x = v + x - op_scale * h.apply(x);
        const double xn = x.norm();
        if (!std::isfinite(xn) || xn > 1e12 * vnorm)
            throw DivergenceError(
                "Neumann iterate blew up at step " + std::to_string(j) +
                "; the series needs spectral radius of (I - H/lambda) below 1, i.e. "
                "lambda > sigma_max(H) / 2");
    }
    out.estimate = lambda_multiplies ? (lambda * x).eval() : (x / lambda).eval();
    out.residual = (h.apply(out.estimate) - v).norm() / std::max(vnorm, 1e-12);
    return out;
}

/// Solves H x = v with a dense Cholesky factorization.
inline Eigen::VectorXd direct_ihvp(const Eigen::MatrixXd& h, const Eigen::VectorXd& v) {
    if (h.rows() != h.cols()) throw InputError("Hessian is not square");
    if (h.rows() != v.size()) throw InputError("vector length differs from Hessian size");
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success)
        throw SingularityError("Hessian is not positive definite; Cholesky factorization failed");
    Eigen::VectorXd x = llt.solve(v);
    const double vnorm = std::max(v.norm(), 1e-12);
    const double residual = (h * x - v).norm() / vnorm;
    if (!x.allFinite() || residual > 1e-6)
        throw SingularityError("direct solve residual " + std::to_string(residual) +
                               " above 1e-6; Hessian is numerically singular");
    return x;
}

namespace detail {

inline std::vector<NodeId> train_subset(const Graph& g, std::span<const NodeId> nodes) {
    std::vector<NodeId> out;
    for (NodeId v : nodes)
        if (g.is_train(v)) out.push_back(v);
    return out;
}

inline std::vector<NodeId> sorted_union(std::span<const NodeId> a, std::span<const NodeId> b) {
    std::vector<NodeId> out;
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

} // namespace detail

/// Gradient of the graph-aware perturbation loss at fixed parameters:
///   sum_{train in removed + region} grad l(f_G(z))
///   - sum_{train in region} grad l(f_G(z; G \ dG)),
/// where the second sum re-evaluates the same parameters on the remaining
/// graph. No regularizer term.
inline Eigen::VectorXd delta_grad(const GraphModel& model, const ModelParams& params,
                                  const UnlearnRequest& request, const InfluencedRegion& region) {
    const Graph& g = model.graph();
    const auto influenced = detail::train_subset(g, region.influenced);
    const auto removed = detail::train_subset(g, region.directly_removed);
    const auto first = detail::sorted_union(removed, influenced);
    Eigen::VectorXd v = model.gradient(params, first);
    if (influenced.empty()) return v;

    const RemainingGraph rest = apply_request(g, request);
    std::vector<NodeId> mapped;
    mapped.reserve(influenced.size());
    for (NodeId u : influenced) mapped.push_back(rest.map(u));

    if (model.config().is_linear()) {
        const CsrMatrix a = normalized_adjacency(rest.graph, model.config().self_loops);
        const RowMatrix rows = propagate_rows(a, rest.graph.features(),
                                              model.config().receptive_depth(), mapped);
        std::vector<int> labels(mapped.size());
        for (std::size_t i = 0; i < mapped.size(); ++i) labels[i] = rest.graph.labels()[mapped[i]];
        Eigen::MatrixXd g2;
        linear_loss_gradient(rows, labels, params.matrix(0), &g2);
        v -= Eigen::Map<const Eigen::VectorXd>(g2.data(), g2.size());
    } else {
        const GraphModel remaining(rest.graph, model.config());
        v -= remaining.gradient(params, mapped);
    }
    return v;
}

inline Eigen::VectorXd delta_grad(const GraphModel& model, const ModelParams& params,
                                  const UnlearnRequest& request, std::size_t depth,
                                  RegionPolicy policy = RegionPolicy::ReceptiveField) {
    return delta_grad(model, params, request, influenced_region(model.graph(), request, depth, policy));
}

struct UnlearnOutcome {
    Eigen::VectorXd delta_theta;
    ModelParams new_params;
    double solver_residual = 0.0;
    /// Wall-clock seconds of the unlearning computation.
    double seconds = 0.0;
    InfluencedRegion region;
    /// Set when the request deletes every training node; the first-order
    /// estimate is unreliable then.
    bool full_deletion = false;
};

/// Holds what is computed once after training (the bound model, the
/// trained parameters and objective gradient, the Hessian operator at
/// theta_0) and answers unlearning requests against it.
class Unlearner {
public:
    Unlearner(const GraphModel& model, const TrainedModel& trained)
        : model_(model), trained_(trained),
          exact_(training_hessian(model, trained.params, HessianForm::Exact)) {
        if (model.config().is_linear())
            block_.emplace(training_hessian(model, trained.params, HessianForm::BlockDiagonal));
    }

    const HessianOperator& hessian(HessianForm form) const {
        if (form == HessianForm::Exact) return exact_;
        if (!block_) throw UnsupportedError("block-diagonal Hessian requires a linear backbone");
        return *block_;
    }

    UnlearnOutcome run(const UnlearnRequest& request, const GifConfig& config) const;

private:
    Eigen::MatrixXd dense_hessian(HessianForm form) const;

    const GraphModel& model_;
    const TrainedModel& trained_;
    HessianOperator exact_;
    std::optional<HessianOperator> block_;
};

inline Eigen::MatrixXd Unlearner::dense_hessian(HessianForm form) const {
    if (!model_.config().is_linear()) {
        if (trained_.params.size() > kDenseHessianCap)
            throw UnsupportedError("parameter count exceeds dense Hessian cap");
        return exact_.assemble();
    }
    if (form == HessianForm::Exact) return exact_hessian(model_, trained_.params);
    const auto blocks = blockdiag_hessian(model_, trained_.params);
    const Eigen::Index f = model_.feature_dim();
    const auto k = static_cast<Eigen::Index>(blocks.size());
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(f * k, f * k);
    for (Eigen::Index j = 0; j < k; ++j) h.block(j * f, j * f, f, f) = blocks[static_cast<std::size_t>(j)];
    return h;
}

inline UnlearnOutcome Unlearner::run(const UnlearnRequest& request, const GifConfig& config) const {
    config.validate();
    if (config.l2 != trained_.config.l2)
        throw ConfigError("unlearning l2 (" + std::to_string(config.l2) +
                          ") differs from training l2 (" + std::to_string(trained_.config.l2) + ")");
    const std::size_t depth = config.depth.value_or(model_.config().receptive_depth());
    if (depth != model_.config().receptive_depth())
        throw ConfigError("region depth " + std::to_string(depth) +
                          " differs from the backbone's receptive depth " +
                          std::to_string(model_.config().receptive_depth()));
    const Graph& g = model_.graph();

    const auto start = std::chrono::steady_clock::now();
    UnlearnOutcome out;
    out.delta_theta = Eigen::VectorXd::Zero(trained_.params.size());
    if (!request.empty()) {
        out.region = config.method == UnlearnMethod::Gif
                         ? influenced_region(g, request, depth, config.region_policy)
                         : direct_region(g, request);
        if (request.kind == RequestKind::Node) {
            std::size_t kept = 0;
            for (NodeId v : g.train_nodes())
                kept += !std::binary_search(request.nodes.begin(), request.nodes.end(), v);
            out.full_deletion = kept == 0;
        }
        Eigen::VectorXd rhs = delta_grad(model_, trained_.params, request, out.region);
        if (config.subtract_base_gradient) rhs -= trained_.objective_gradient;

        const HessianOperator& h = hessian(config.hessian_form);
        if (config.solver == SolverKind::Neumann) {
            auto res = neumann_ihvp(h, rhs, config.lambda, config.iterations,
                                    config.lambda_multiplies);
            out.delta_theta = std::move(res.estimate);
            out.solver_residual = res.residual;
        } else {
            const Eigen::MatrixXd dense = dense_hessian(config.hessian_form);
            out.delta_theta = direct_ihvp(dense, rhs);
            out.solver_residual =
                (dense * out.delta_theta - rhs).norm() / std::max(rhs.norm(), 1e-12);
        }
    }
    out.new_params = trained_.params.with_flat(trained_.params.flat() + out.delta_theta);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

/// One-shot convenience: builds the cached state and answers one request.
inline UnlearnOutcome unlearn(const GraphModel& model, const TrainedModel& trained,
                              const UnlearnRequest& request, const GifConfig& config) {
    return Unlearner(model, trained).run(request, config);
}

/// Closed-form parameter change of a one-layer GCN under a node request,
/// one column per class: w_j = D_j^-1 (E_j^rm + E_j^nei) with
///   D_j     = sum_train p_ij (1 - p_ij) h_i^T h_i + 2 l2 I
///   E_j^rm  = sum_{removed train} q_ij h_i^T
///   E_j^nei = sum_{influenced train} (q_ij h_i^T - q'_ij h'_i^T)
/// where q_ij = p_ij - [j == y_i] is the signed prediction error and the
/// primed terms are evaluated on the remaining graph at the same weights.
inline std::vector<Eigen::VectorXd> closed_form_one_layer(const GraphModel& model,
                                                          const ModelParams& params,
                                                          const UnlearnRequest& request) {
    if (model.config().kind != BackboneKind::Gcn1)
        throw UnsupportedError("closed-form unlearning is defined for the one-layer GCN");
    if (request.kind != RequestKind::Node)
        throw UnsupportedError("closed-form unlearning handles node requests only");
    const auto blocks = blockdiag_hessian(model, params);
    const Eigen::Index f = model.feature_dim(), c = model.num_classes();
    std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(c), Eigen::VectorXd::Zero(f));
    if (request.empty()) return out;

    const auto region = influenced_region(model.graph(), request, 1);
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(f, c);
    const auto accumulate = [&](const RowMatrix& rows, std::span<const int> labels, double sign) {
        if (rows.rows() == 0) return;
        RowMatrix q = rows * params.matrix(0);
        softmax_rows_inplace(q);
        for (Eigen::Index i = 0; i < q.rows(); ++i) q(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
        e.noalias() += sign * (rows.transpose() * q);
    };

    const auto removed = detail::train_subset(model.graph(), region.directly_removed);
    const auto influenced = detail::train_subset(model.graph(), region.influenced);
    accumulate(model.gather_rows(removed), model.gather_labels(removed), 1.0);
    accumulate(model.gather_rows(influenced), model.gather_labels(influenced), 1.0);
    if (!influenced.empty()) {
        const RemainingGraph rest = apply_request(model.graph(), request);
        std::vector<NodeId> mapped;
        std::vector<int> labels;
        for (NodeId u : influenced) {
            mapped.push_back(rest.map(u));
            labels.push_back(rest.graph.labels()[mapped.back()]);
        }
        const CsrMatrix a = normalized_adjacency(rest.graph, model.config().self_loops);
        accumulate(propagate_rows(a, rest.graph.features(), 1, mapped), labels, -1.0);
    }
    for (Eigen::Index j = 0; j < c; ++j) {
        const auto& d = blocks[static_cast<std::size_t>(j)];
        Eigen::LLT<Eigen::MatrixXd> llt(d);
        if (llt.info() != Eigen::Success)
            throw SingularityError("class block " + std::to_string(j) + " is not positive definite");
        out[static_cast<std::size_t>(j)] = llt.solve(e.col(j));
    }
    return out;
}

/// Largest eigenvalue of the Hessian, for choosing lambda.
inline double hessian_sigma_max(const HessianOperator& h, int iters = 100) {
    return power_iteration(h, iters);
}

} // namespace gifkit

#endif // GIFKIT_GIF_HPP
