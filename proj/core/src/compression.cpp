#include "resadapt/compression.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "resadapt/errors.hpp"

namespace resadapt {

namespace {

constexpr double kRotationFloor = 1e-15;

// Orthogonalizes the columns of `a` in place and accumulates the rotations in `v`.
// Requires rows >= cols.
int hestenes_jacobi(Matrix<double>& a, Matrix<double>& v, const SvdOptions& options) {
    const Eigen::Index n = a.cols();
    v = Matrix<double>::Identity(n, n);
    double worst = 0.0;
    for (int sweep = 1; sweep <= options.max_sweeps; ++sweep) {
        bool rotated = false;
        worst = 0.0;
        for (Eigen::Index p = 0; p + 1 < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                const double alpha = a.col(p).squaredNorm();
                const double beta = a.col(q).squaredNorm();
                const double gamma = a.col(p).dot(a.col(q));
                if (alpha == 0.0 || beta == 0.0) {
                    continue;
                }
                const double off = std::abs(gamma) / std::sqrt(alpha * beta);
                worst = std::max(worst, off);
                // Pairs already within tolerance are still rotated down to roundoff so the
                // returned columns are orthogonal well past the stopping threshold.
                if (off <= kRotationFloor) {
                    continue;
                }
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (Eigen::Index i = 0; i < a.rows(); ++i) {
                    const double ap = a(i, p), aq = a(i, q);
                    a(i, p) = c * ap - s * aq;
                    a(i, q) = s * ap + c * aq;
                }
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
        if (!rotated || worst <= options.tolerance) {
            return sweep;
        }
    }
    throw NumericError("svd: one-sided Jacobi did not converge in " + std::to_string(options.max_sweeps) +
                       " sweeps (largest normalized off-diagonal " + std::to_string(worst) + ")");
}

// Fills columns flagged in `missing` with unit vectors orthogonal to all others.
void complete_orthonormal(Matrix<double>& u, const std::vector<bool>& missing) {
    Eigen::Index candidate = 0;
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
        if (!missing[std::size_t(j)]) {
            continue;
        }
        for (;; ++candidate) {
            if (candidate >= u.rows()) {
                throw NumericError("svd: could not complete orthonormal basis");
            }
            Eigen::VectorXd e = Eigen::VectorXd::Unit(u.rows(), candidate);
            for (int pass = 0; pass < 2; ++pass) {
                for (Eigen::Index k = 0; k < u.cols(); ++k) {
                    if (k == j || (missing[std::size_t(k)] && k > j)) {
                        continue;
                    }
                    e -= u.col(k).dot(e) * u.col(k);
                }
            }
            const double norm = e.norm();
            if (norm > 0.5) {
                u.col(j) = e / norm;
                ++candidate;
                break;
            }
        }
    }
}

}  // namespace

SvdResult svd(const Matrix<double>& m, const SvdOptions& options) {
    if (m.size() == 0) {
        throw ConfigError("svd: empty matrix");
    }
    if (!m.allFinite()) {
        throw NumericError("svd: matrix has non-finite entries");
    }
    const bool wide = m.rows() < m.cols();
    Matrix<double> a = wide ? Matrix<double>(m.transpose()) : m;
    Matrix<double> right;
    SvdResult out;
    out.sweeps = hestenes_jacobi(a, right, options);

    const Eigen::Index r = a.cols();
    std::vector<double> sigma(static_cast<std::size_t>(r));
    for (Eigen::Index j = 0; j < r; ++j) {
        sigma[std::size_t(j)] = a.col(j).norm();
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(r));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index x, Eigen::Index y) { return sigma[std::size_t(x)] > sigma[std::size_t(y)]; });

    const double smax = sigma[std::size_t(order.front())];
    const double cutoff = smax * 1e-13;
    Matrix<double> left(a.rows(), r);
    Matrix<double> rv(right.rows(), r);
    std::vector<bool> missing(std::size_t(r), false);
    out.singular_values.resize(std::size_t(r));
    for (Eigen::Index k = 0; k < r; ++k) {
        const Eigen::Index j = order[std::size_t(k)];
        const double s = sigma[std::size_t(j)];
        out.singular_values[std::size_t(k)] = s;
        rv.col(k) = right.col(j);
        if (s > cutoff && s > 0.0) {
            left.col(k) = a.col(j) / s;
        } else {
            left.col(k).setZero();
            missing[std::size_t(k)] = true;
        }
    }
    complete_orthonormal(left, missing);

    if (wide) {
        out.u = std::move(rv);
        out.v = std::move(left);
    } else {
        out.u = std::move(left);
        out.v = std::move(rv);
    }
    for (Eigen::Index k = 0; k < r; ++k) {
        Eigen::Index idx = 0;
        out.u.col(k).cwiseAbs().maxCoeff(&idx);
        if (out.u(idx, k) < 0.0) {
            out.u.col(k) *= -1.0;
            out.v.col(k) *= -1.0;
        }
    }
    return out;
}

LowRankFactors lowrank_single(const Matrix<double>& alpha, std::size_t rank) {
    const std::size_t c = std::size_t(std::min(alpha.rows(), alpha.cols()));
    if (rank < 1 || rank > c) {
        throw ConfigError("lowrank_single: rank " + std::to_string(rank) + " outside [1, " + std::to_string(c) + "]");
    }
    const SvdResult s = svd(alpha);
    const auto k = Eigen::Index(rank);
    LowRankFactors out;
    out.beta = s.u.leftCols(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        out.beta.col(j) *= s.singular_values[std::size_t(j)];
    }
    out.gamma = s.v.leftCols(k);
    out.param_fraction =
        Rational(std::int64_t(rank * std::size_t(alpha.rows() + alpha.cols())), std::int64_t(alpha.size()));
    return out;
}

Matrix<double> stack_columns(std::span<const Matrix<double>> blocks) {
    if (blocks.empty()) {
        throw ConfigError("stack_columns: no blocks");
    }
    const Eigen::Index rows = blocks.front().rows(), cols = blocks.front().cols();
    Matrix<double> stacked(rows, cols * Eigen::Index(blocks.size()));
    for (std::size_t t = 0; t < blocks.size(); ++t) {
        if (blocks[t].rows() != rows || blocks[t].cols() != cols) {
            throw ConfigError("stack_columns: block " + std::to_string(t) + " is " +
                              std::to_string(blocks[t].rows()) + "x" + std::to_string(blocks[t].cols()) +
                              ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
        }
        stacked.middleCols(cols * Eigen::Index(t), cols) = blocks[t];
    }
    return stacked;
}

JointFactorization joint_factorize(std::span<const Matrix<double>> alphas, std::size_t rank) {
    const Matrix<double> stacked = stack_columns(alphas);
    const std::size_t limit = std::size_t(std::min(stacked.rows(), stacked.cols()));
    if (rank < 1 || rank > limit) {
        throw ConfigError("joint_factorize: rank " + std::to_string(rank) + " outside [1, " + std::to_string(limit) +
                          "]");
    }
    const SvdResult s = svd(stacked);
    const auto k = Eigen::Index(rank);
    const Eigen::Index block = alphas.front().cols();
    JointFactorization fact;
    fact.singular_values = s.singular_values;
    fact.beta = s.u.leftCols(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        fact.beta.col(j) *= s.singular_values[std::size_t(j)];
    }
    fact.gammas.reserve(alphas.size());
    for (std::size_t t = 0; t < alphas.size(); ++t) {
        fact.gammas.emplace_back(s.v.block(block * Eigen::Index(t), 0, block, k));
    }
    return fact;
}

Matrix<double> reconstruct(const JointFactorization& fact, std::size_t domain) {
    if (domain >= fact.gammas.size()) {
        throw ConfigError("reconstruct: domain index " + std::to_string(domain) + " but only " +
                          std::to_string(fact.gammas.size()) + " domains");
    }
    return fact.beta * fact.gammas[domain].transpose();
}

std::size_t JointFactorization::stored_elements() const {
    std::size_t n = std::size_t(beta.size());
    for (const auto& g : gammas) {
        n += std::size_t(g.size());
    }
    return n;
}

double tail_energy_ratio(std::span<const double> singular_values, std::size_t rank) {
    double total = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < singular_values.size(); ++i) {
        const double e = singular_values[i] * singular_values[i];
        total += e;
        if (i >= rank) {
            tail += e;
        }
    }
    return total > 0.0 ? std::sqrt(tail / total) : 0.0;
}

CompressionRatio compression_ratio(std::size_t domains, std::size_t channels, std::size_t rank) {
    if (domains == 0 || channels == 0 || rank == 0) {
        throw ConfigError("compression_ratio: arguments must be positive");
    }
    const auto t = std::int64_t(domains), c = std::int64_t(channels), k = std::int64_t(rank);
    return {Rational(t * c * k + c * k, t * c * c), Rational(k, c)};
}

}  // namespace resadapt
