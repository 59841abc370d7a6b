#pragma once

#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

namespace plume {

using Vector = Eigen::VectorXd;

class SingularMatrixError : public std::runtime_error {
public:
    explicit SingularMatrixError(const std::string& what) : std::runtime_error(what) {}
};

/// Immutable sparse matrix with a lazily computed, cached sparse LU
/// factorization. Copies share the cache; all mutating operations return a
/// new matrix, so shared instances are safe to solve against concurrently.
class SparseMatrix {
public:
    using Storage = Eigen::SparseMatrix<double>;
    using Triplet = Eigen::Triplet<double>;

    SparseMatrix() : SparseMatrix(Storage(0, 0)) {}

    explicit SparseMatrix(Storage m) : m_(std::move(m)), cache_(std::make_shared<Cache>()) {
        m_.makeCompressed();
    }

    static SparseMatrix from_triplets(int rows, int cols, const std::vector<Triplet>& ts) {
        Storage m(rows, cols);
        m.setFromTriplets(ts.begin(), ts.end());  // duplicates are summed
        return SparseMatrix(std::move(m));
    }

    static SparseMatrix identity(int n) {
        Storage m(n, n);
        m.setIdentity();
        return SparseMatrix(std::move(m));
    }

    int rows() const { return static_cast<int>(m_.rows()); }
    int cols() const { return static_cast<int>(m_.cols()); }
    long nnz() const { return static_cast<long>(m_.nonZeros()); }
    double coeff(int i, int j) const { return m_.coeff(i, j); }
    const Storage& eigen() const { return m_; }

    Vector apply(const Vector& x) const { return m_ * x; }
    Vector apply_transpose(const Vector& x) const { return m_.transpose() * x; }
    Vector operator*(const Vector& x) const { return m_ * x; }

    SparseMatrix transpose() const { return SparseMatrix(Storage(m_.transpose())); }

    SparseMatrix operator+(const SparseMatrix& o) const { return SparseMatrix(Storage(m_ + o.m_)); }
    SparseMatrix scaled(double c) const { return SparseMatrix(Storage(c * m_)); }

    double sum() const {
        double s = 0.0;
        for (int k = 0; k < m_.outerSize(); ++k)
            for (Storage::InnerIterator it(m_, k); it; ++it) s += it.value();
        return s;
    }

    /// max |A_ij| over stored entries.
    double max_abs() const {
        double s = 0.0;
        for (int k = 0; k < m_.outerSize(); ++k)
            for (Storage::InnerIterator it(m_, k); it; ++it)
                s = std::max(s, std::abs(it.value()));
        return s;
    }

    /// Solve A x = b with the cached factorization.
    Vector solve(const Vector& b) const {
        Vector x = factorization().solve(b);
        check_solve("solve");
        return x;
    }

    /// Solve A^T x = b reusing the same factorization.
    Vector solve_transpose(const Vector& b) const {
        // SparseLU::transpose() is a read-only view but not const-qualified
        auto& lu = const_cast<Solver&>(factorization());
        Vector x = lu.transpose().solve(b);
        check_solve("transpose solve");
        return x;
    }

    Eigen::MatrixXd to_dense() const { return Eigen::MatrixXd(m_); }

private:
    using Solver = Eigen::SparseLU<Storage, Eigen::COLAMDOrdering<int>>;

    struct Cache {
        std::mutex mutex;
        std::shared_ptr<const Solver> lu;
    };

    Storage m_;
    std::shared_ptr<Cache> cache_;

    const Solver& factorization() const {
        std::lock_guard<std::mutex> lock(cache_->mutex);
        if (!cache_->lu) {
            if (m_.rows() != m_.cols())
                throw SingularMatrixError("factorize: matrix is not square");
            auto lu = std::make_shared<Solver>();
            lu->compute(m_);
            if (lu->info() != Eigen::Success)
                throw SingularMatrixError("factorize: " + lu->lastErrorMessage());
            cache_->lu = std::move(lu);
        }
        return *cache_->lu;
    }

    void check_solve(const char* what) const {
        if (cache_->lu->info() != Eigen::Success)
            throw SingularMatrixError(std::string(what) + " failed: " +
                                      cache_->lu->lastErrorMessage());
    }
};

} // namespace plume
