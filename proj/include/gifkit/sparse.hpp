#ifndef GIFKIT_SPARSE_HPP
#define GIFKIT_SPARSE_HPP

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace gifkit {

/// Row-major dense matrix; node-indexed data (features, propagated
/// features) is stored this way so a node's row is contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Compressed sparse row matrix with column indices sorted within each row.
struct CsrMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::size_t> row_ptr{0};
    std::vector<std::size_t> col_idx;
    std::vector<double> values;

    std::size_t nnz() const noexcept { return col_idx.size(); }

    std::span<const std::size_t> row_cols(std::size_t r) const {
        return {col_idx.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
    }
    std::span<const double> row_values(std::size_t r) const {
        return {values.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
    }

    /// Entry lookup by binary search; zero when absent.
    double coeff(std::size_t r, std::size_t c) const;

    Eigen::MatrixXd to_dense() const;
};

inline double CsrMatrix::coeff(std::size_t r, std::size_t c) const {
    auto cols_r = row_cols(r);
    auto it = std::lower_bound(cols_r.begin(), cols_r.end(), c);
    if (it == cols_r.end() || *it != c) return 0.0;
    return values[row_ptr[r] + static_cast<std::size_t>(it - cols_r.begin())];
}

inline Eigen::MatrixXd CsrMatrix::to_dense() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows),
                                                static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k)
            out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col_idx[k])) = values[k];
    }
    return out;
}

/// out.row(r) = sum_k A(r, c_k) * in.row(c_k), accumulated in ascending
/// column order. Every output row is produced by the same sequence of
/// floating point operations regardless of which other rows are computed,
/// so results are reproducible bit for bit across graphs that share the
/// row's neighborhood.
inline void csr_row_product(const CsrMatrix& a, std::size_t r, const RowMatrix& in,
                            Eigen::Ref<Eigen::RowVectorXd> out) {
    out.setZero();
    auto cols = a.row_cols(r);
    auto vals = a.row_values(r);
    for (std::size_t k = 0; k < cols.size(); ++k)
        out.noalias() += vals[k] * in.row(static_cast<Eigen::Index>(cols[k]));
}

/// Dense product A * in over all rows.
inline RowMatrix csr_multiply(const CsrMatrix& a, const RowMatrix& in) {
    RowMatrix out(static_cast<Eigen::Index>(a.rows), in.cols());
    for (std::size_t r = 0; r < a.rows; ++r)
        csr_row_product(a, r, in, out.row(static_cast<Eigen::Index>(r)));
    return out;
}

} // namespace gifkit

#endif // GIFKIT_SPARSE_HPP
