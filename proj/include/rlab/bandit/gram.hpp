#pragma once

#include <cstddef>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "rlab/error.hpp"

namespace rlab::bandit {

/// Symmetric positive-definite matrix kept together with its inverse.
///
/// Rank-1 additions update the inverse in O(d^2) with Sherman-Morrison;
/// every `refactor_every` additions the inverse is recomputed from a fresh
/// Cholesky factorization to bound accumulated drift.
class SpdWithInverse {
public:
    static constexpr std::size_t kRefactorEvery = 1000;

    SpdWithInverse() = default;

    SpdWithInverse(Eigen::Index d, double diagonal)
        : matrix_(Eigen::MatrixXd::Identity(d, d) * diagonal),
          inverse_(Eigen::MatrixXd::Identity(d, d) / diagonal) {
        if (!(diagonal > 0.0)) throw NumericError("initial diagonal must be positive");
    }

    const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
    const Eigen::MatrixXd& inverse() const noexcept { return inverse_; }
    Eigen::Index dim() const noexcept { return matrix_.rows(); }
    std::size_t updates() const noexcept { return updates_; }

    /// matrix += scale * x x'.
    void add_outer(const Eigen::VectorXd& x, double scale = 1.0) {
        matrix_.noalias() += scale * x * x.transpose();
        const Eigen::VectorXd u = inverse_ * x;
        const double denom = 1.0 + scale * x.dot(u);
        inverse_.noalias() -= (scale / denom) * u * u.transpose();
        if (++updates_ % kRefactorEvery == 0) refactor();
    }

    void refactor() {
        Eigen::LLT<Eigen::MatrixXd> llt(matrix_);
        if (llt.info() != Eigen::Success) throw NumericError("matrix lost positive definiteness");
        inverse_ = llt.solve(Eigen::MatrixXd::Identity(dim(), dim()));
        inverse_ = 0.5 * (inverse_ + inverse_.transpose());
    }

private:
    Eigen::MatrixXd matrix_;
    Eigen::MatrixXd inverse_;
    std::size_t updates_ = 0;
};

/// Ridge sufficient statistics (lambda I + sum x x', sum r x).
struct RidgeStats {
    SpdWithInverse gram;
    Eigen::VectorXd moment;

    RidgeStats() = default;
    RidgeStats(Eigen::Index d, double lambda) : gram(d, lambda), moment(Eigen::VectorXd::Zero(d)) {}

    void add(const Eigen::VectorXd& x, double reward) {
        gram.add_outer(x);
        moment += reward * x;
    }

    Eigen::VectorXd estimate() const { return gram.inverse() * moment; }
};

} // namespace rlab::bandit
