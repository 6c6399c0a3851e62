#include "graphfield/cholesky.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace graphfield {

SparseCholesky::SparseCholesky(const SparseMatrix& A, const std::string& label) : n_(A.rows()) {
    if (A.rows() != A.cols()) throw std::invalid_argument(label + ": Cholesky needs a square matrix");
    auto f = std::make_shared<Factor>();
    f->compute(A);
    if (f->info() != Eigen::Success) throw std::runtime_error(label + " not SPD: sparse Cholesky failed");
    L_ = f->matrixL();
    L_.makeCompressed();
    for (Eigen::Index j = 0; j < n_; ++j) {
        const auto begin = L_.outerIndexPtr()[j];
        const auto end = L_.outerIndexPtr()[j + 1];
        if (begin == end || L_.innerIndexPtr()[begin] != j || !(L_.valuePtr()[begin] > 0.0))
            throw std::runtime_error(label + " not SPD: factor lacks a positive diagonal");
        if (!std::is_sorted(L_.innerIndexPtr() + begin, L_.innerIndexPtr() + end))
            throw std::logic_error("Cholesky factor has unsorted row indices");
    }
    llt_ = std::move(f);
}

Eigen::VectorXd SparseCholesky::solve(const Eigen::VectorXd& b) const { return llt_->solve(b); }

Eigen::MatrixXd SparseCholesky::solve(const Eigen::MatrixXd& B) const { return llt_->solve(B); }

double SparseCholesky::log_determinant() const {
    double s = 0.0;
    for (Eigen::Index j = 0; j < n_; ++j) s += std::log(L_.valuePtr()[L_.outerIndexPtr()[j]]);
    return 2.0 * s;
}

Eigen::VectorXd SparseCholesky::factor_diagonal() const {
    Eigen::VectorXd d(n_);
    for (Eigen::Index j = 0; j < n_; ++j) d(j) = L_.valuePtr()[L_.outerIndexPtr()[j]];
    return d;
}

Eigen::VectorXd SparseCholesky::sample(const Eigen::VectorXd& z) const {
    const Eigen::VectorXd y = llt_->matrixU().solve(z);
    return llt_->permutationPinv() * y;
}

SparseMatrix SparseCholesky::takahashi() const {
    // Z = (L L^T)^{-1} restricted to the pattern of L. Column j only needs
    // entries Z(i, k) with i, k > j in the pattern of column j, which the
    // filled graph guarantees are themselves in the pattern.
    SparseMatrix Z = L_;
    const auto* Lp = L_.outerIndexPtr();
    const auto* Li = L_.innerIndexPtr();
    const double* Lx = L_.valuePtr();
    double* Zx = Z.valuePtr();
    auto lookup = [&](int r, int c) -> double {
        if (r < c) std::swap(r, c);
        const int* first = Li + Lp[c];
        const int* last = Li + Lp[c + 1];
        const int* it = std::lower_bound(first, last, r);
        if (it == last || *it != r) throw std::logic_error("selected inverse: entry outside factor pattern");
        return Zx[it - Li];
    };
    for (Eigen::Index jj = n_; jj-- > 0;) {
        const int j = static_cast<int>(jj);
        const int begin = Lp[j], end = Lp[j + 1];
        const double ljj = Lx[begin];
        for (int p = begin + 1; p < end; ++p) {
            const int i = Li[p];
            double s = 0.0;
            for (int q = begin + 1; q < end; ++q) s += lookup(i, Li[q]) * Lx[q];
            Zx[p] = -s / ljj;
        }
        double s = 0.0;
        for (int q = begin + 1; q < end; ++q) s += Lx[q] * Zx[q];
        Zx[begin] = 1.0 / (ljj * ljj) - s / ljj;
    }
    return Z;
}

Eigen::VectorXd SparseCholesky::inverse_diagonal() const {
    const SparseMatrix Z = takahashi();
    const auto& perm = llt_->permutationP().indices();
    Eigen::VectorXd d(n_);
    for (Eigen::Index i = 0; i < n_; ++i) {
        const int pi = perm(i);
        d(i) = Z.valuePtr()[Z.outerIndexPtr()[pi]];
    }
    return d;
}

SparseMatrix SparseCholesky::selected_inverse() const {
    const SparseMatrix Z = takahashi();
    const auto& perm = llt_->permutationP().indices();
    std::vector<int> inv(static_cast<std::size_t>(n_));
    for (Eigen::Index i = 0; i < n_; ++i) inv[static_cast<std::size_t>(perm(i))] = static_cast<int>(i);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(2 * Z.nonZeros()));
    for (int c = 0; c < Z.outerSize(); ++c) {
        for (SparseMatrix::InnerIterator it(Z, c); it; ++it) {
            const int r = inv[static_cast<std::size_t>(it.row())];
            const int cc = inv[static_cast<std::size_t>(c)];
            trips.emplace_back(r, cc, it.value());
            if (r != cc) trips.emplace_back(cc, r, it.value());
        }
    }
    SparseMatrix out(n_, n_);
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

}  // namespace graphfield
