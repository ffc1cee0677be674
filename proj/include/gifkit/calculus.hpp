#ifndef GIFKIT_CALCULUS_HPP
#define GIFKIT_CALCULUS_HPP

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "backbone.hpp"
#include "errors.hpp"

namespace gifkit {

/// Sum of per-node loss gradients over `nodes`, plus 2*l2*theta when
/// `include_l2` is set. The regularizer belongs only to the full training
/// objective that defines the Hessian, never to a difference of loss sums.
inline Eigen::VectorXd subset_grad(const GraphModel& model, const ModelParams& params,
                                   std::span<const NodeId> nodes, bool include_l2) {
    Eigen::VectorXd g = model.gradient(params, nodes);
    if (include_l2) g += 2.0 * model.config().l2 * params.flat();
    return g;
}

enum class HessianForm {
    /// Full softmax curvature, including the cross-class blocks.
    Exact,
    /// Per-class diagonal blocks only, cross-class terms dropped.
    BlockDiagonal,
};

/// Linear operator v -> H v for H the Hessian of the regularized training
/// objective at fixed parameters. Copies are cheap and share state.
class HessianOperator {
public:
    using Matvec = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

    HessianOperator(Eigen::Index dim, Matvec matvec) : dim_(dim), matvec_(std::move(matvec)) {}

    Eigen::Index dim() const noexcept { return dim_; }

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        if (v.size() != dim_) throw InputError("vector length differs from parameter count");
        Eigen::VectorXd out = matvec_(v);
        if (!out.allFinite()) throw NumericError("non-finite Hessian-vector product");
        return out;
    }

    /// Dense matrix assembled column by column (dim HVPs).
    Eigen::MatrixXd assemble() const {
        Eigen::MatrixXd h(dim_, dim_);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(dim_);
        for (Eigen::Index j = 0; j < dim_; ++j) {
            e(j) = 1.0;
            h.col(j) = apply(e);
            e(j) = 0.0;
        }
        return h;
    }

private:
    Eigen::Index dim_;
    Matvec matvec_;
};

inline Eigen::VectorXd hvp(const HessianOperator& h, const Eigen::VectorXd& v) {
    return h.apply(v);
}

namespace detail {

/// Training rows and their predicted probabilities at fixed parameters.
struct LinearCurvature {
    RowMatrix rows;  // n x F propagated features
    RowMatrix probs; // n x C
    double l2 = 0.0;
};

inline std::shared_ptr<const LinearCurvature> linear_curvature(const GraphModel& model,
                                                               const ModelParams& params,
                                                               std::span<const NodeId> nodes) {
    auto c = std::make_shared<LinearCurvature>();
    c->rows = model.gather_rows(nodes);
    c->probs = c->rows * params.matrix(0);
    softmax_rows_inplace(c->probs);
    c->l2 = model.config().l2;
    return c;
}

} // namespace detail

/// Hessian operator of sum_{nodes} l + l2 ||theta||^2 at `params`.
///
/// Linear kinds use the analytic product: for node i with propagated row
/// h_i and probabilities p_i, H_i = (diag(p_i) - p_i p_i^T) (x) h_i^T h_i.
/// gcn2 uses a central difference of the analytic gradient with step
/// r = 1e-4 (1 + |theta|_inf) / |v|_inf.
inline HessianOperator make_hessian(const GraphModel& model, const ModelParams& params,
                                    std::span<const NodeId> nodes,
                                    HessianForm form = HessianForm::Exact) {
    const Eigen::Index dim = params.size();
    if (model.config().is_linear()) {
        auto c = detail::linear_curvature(model, params, nodes);
        const Eigen::Index f = model.feature_dim(), k = model.num_classes();
        return HessianOperator(dim, [c, f, k, form](const Eigen::VectorXd& v) {
            Eigen::Map<const Eigen::MatrixXd> vm(v.data(), f, k);
            Eigen::VectorXd out(v.size());
            Eigen::Map<Eigen::MatrixXd> om(out.data(), f, k);
            if (c->rows.rows() == 0) {
                out = 2.0 * c->l2 * v;
                return out;
            }
            RowMatrix s = c->rows * vm;
            RowMatrix t;
            if (form == HessianForm::Exact) {
                t = c->probs.cwiseProduct(s);
                const Eigen::VectorXd ps = t.rowwise().sum();
                t -= (c->probs.array().colwise() * ps.array()).matrix();
            } else {
                t = (c->probs.array() * (1.0 - c->probs.array()) * s.array()).matrix();
            }
            om.noalias() = c->rows.transpose() * t;
            out += 2.0 * c->l2 * v;
            return out;
        });
    }
    if (form != HessianForm::Exact)
        throw UnsupportedError("block-diagonal Hessian requires a linear backbone");
    auto m = std::make_shared<const GraphModel>(model);
    auto p = std::make_shared<const ModelParams>(params);
    auto ids = std::make_shared<const std::vector<NodeId>>(nodes.begin(), nodes.end());
    return HessianOperator(dim, [m, p, ids](const Eigen::VectorXd& v) {
        const double vmax = v.cwiseAbs().maxCoeff();
        if (vmax == 0.0) return Eigen::VectorXd::Zero(v.size()).eval();
        const double r = 1e-4 * (1.0 + p->flat().cwiseAbs().maxCoeff()) / std::max(vmax, 1e-12);
        const auto plus = p->with_flat(p->flat() + r * v);
        const auto minus = p->with_flat(p->flat() - r * v);
        Eigen::VectorXd out = (m->gradient(plus, *ids) - m->gradient(minus, *ids)) / (2.0 * r);
        out += 2.0 * m->config().l2 * v;
        return out;
    });
}

/// Hessian operator of the full regularized training objective.
inline HessianOperator training_hessian(const GraphModel& model, const ModelParams& params,
                                        HessianForm form = HessianForm::Exact) {
    const auto nodes = model.graph().train_nodes();
    return make_hessian(model, params, nodes, form);
}

inline constexpr Eigen::Index kDenseHessianCap = 40000;

/// Dense Hessian of the regularized training objective for a linear
/// backbone. Entry (f + F j, g + F k) = sum_i p_ij (d_jk - p_ik) h_if h_ig
/// + 2 l2 d_fg d_jk.
inline Eigen::MatrixXd exact_hessian(const GraphModel& model, const ModelParams& params,
                                     Eigen::Index cap = kDenseHessianCap) {
    if (!model.config().is_linear())
        throw UnsupportedError("dense Hessian assembly is limited to linear backbones");
    if (params.size() > cap)
        throw UnsupportedError("parameter count " + std::to_string(params.size()) +
                               " exceeds dense Hessian cap " + std::to_string(cap));
    const auto nodes = model.graph().train_nodes();
    auto c = detail::linear_curvature(model, params, nodes);
    const Eigen::Index f = model.feature_dim(), k = model.num_classes();
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(f * k, f * k);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index l = j; l < k; ++l) {
            const Eigen::VectorXd w =
                j == l ? (c->probs.col(j).array() * (1.0 - c->probs.col(j).array())).matrix().eval()
                       : (-c->probs.col(j).cwiseProduct(c->probs.col(l))).eval();
            const Eigen::MatrixXd block = c->rows.transpose() * w.asDiagonal() * c->rows;
            h.block(j * f, l * f, f, f) = block;
            if (l != j) h.block(l * f, j * f, f, f) = block.transpose();
        }
    }
    h.diagonal().array() += 2.0 * c->l2;
    return h;
}

/// Diagonal class blocks D_j = sum_i p_ij (1 - p_ij) h_i^T h_i + 2 l2 I
/// of the training Hessian of a linear backbone.
inline std::vector<Eigen::MatrixXd> blockdiag_hessian(const GraphModel& model,
                                                      const ModelParams& params) {
    if (!model.config().is_linear())
        throw UnsupportedError("block-diagonal Hessian requires a linear backbone");
    const auto nodes = model.graph().train_nodes();
    auto c = detail::linear_curvature(model, params, nodes);
    const Eigen::Index k = model.num_classes();
    std::vector<Eigen::MatrixXd> blocks;
    blocks.reserve(static_cast<std::size_t>(k));
    for (Eigen::Index j = 0; j < k; ++j) {
        const Eigen::VectorXd w =
            (c->probs.col(j).array() * (1.0 - c->probs.col(j).array())).matrix();
        Eigen::MatrixXd d = c->rows.transpose() * w.asDiagonal() * c->rows;
        d.diagonal().array() += 2.0 * c->l2;
        blocks.push_back(std::move(d));
    }
    return blocks;
}

/// Extreme Ritz values of a symmetric operator from a Lanczos run with
/// full reorthogonalization.
struct RitzBounds {
    double smallest = 0.0;
    double largest = 0.0;
};

inline RitzBounds lanczos_bounds(const HessianOperator& h, int steps, std::uint64_t seed = 0) {
    const Eigen::Index n = h.dim();
    steps = static_cast<int>(std::min<Eigen::Index>(steps, n));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    Eigen::VectorXd q(n);
    for (Eigen::Index i = 0; i < n; ++i) q(i) = gauss(rng);
    q.normalize();
    Eigen::MatrixXd basis(n, steps);
    std::vector<double> alpha, beta;
    int m = 0;
    for (; m < steps; ++m) {
        basis.col(m) = q;
        Eigen::VectorXd w = h.apply(q);
        const double a = q.dot(w);
        alpha.push_back(a);
        for (int r = 0; r < 2; ++r)
            w -= basis.leftCols(m + 1) * (basis.leftCols(m + 1).transpose() * w);
        const double b = w.norm();
        if (b < 1e-12 * std::max(1.0, std::abs(a)) || m + 1 == steps) {
            ++m;
            break;
        }
        beta.push_back(b);
        q = w / b;
    }
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
        t(i, i) = alpha[static_cast<std::size_t>(i)];
        if (i + 1 < m) t(i, i + 1) = t(i + 1, i) = beta[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t, Eigen::EigenvaluesOnly);
    return {es.eigenvalues()(0), es.eigenvalues()(m - 1)};
}

/// Largest eigenvalue magnitude by power iteration.
inline double power_iteration(const HessianOperator& h, int iters, std::uint64_t seed = 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    Eigen::VectorXd q(h.dim());
    for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = gauss(rng);
    q.normalize();
    double est = 0.0;
    for (int i = 0; i < iters; ++i) {
        Eigen::VectorXd w = h.apply(q);
        est = w.norm();
        if (est == 0.0) return 0.0;
        q = w / est;
    }
    return est;
}

} // namespace gifkit

#endif // GIFKIT_CALCULUS_HPP
