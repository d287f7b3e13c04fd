#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "resadapt/rational.hpp"
#include "resadapt/tensor.hpp"

namespace resadapt {

struct SvdOptions {
    int max_sweeps = 100;
    /// A column pair counts as orthogonal once |<a_p, a_q>| <= tolerance * |a_p| |a_q|.
    double tolerance = 1e-12;
};

/// Thin SVD m = u * diag(s) * v^T with r = min(rows, cols).
struct SvdResult {
    Matrix<double> u;                   // rows x r, orthonormal columns
    std::vector<double> singular_values;  // non-increasing
    Matrix<double> v;                   // cols x r, orthonormal columns
    int sweeps = 0;
};

/// One-sided Jacobi SVD. Each column of u has its largest-magnitude entry
/// positive. Throws NumericError if the sweep cap is hit.
SvdResult svd(const Matrix<double>& m, const SvdOptions& options = {});

struct LowRankFactors {
    Matrix<double> beta;   // C_in x K
    Matrix<double> gamma;  // C_out x K, alpha ~ beta * gamma^T
    Rational param_fraction;  // 2K/C for square C x C adapters
};

/// Best rank-K Frobenius approximation of a single adapter.
LowRankFactors lowrank_single(const Matrix<double>& alpha, std::size_t rank);

/// Shared beta and per-domain gammas with alpha_t ~ beta * gamma_t^T.
struct JointFactorization {
    Matrix<double> beta;
    std::vector<Matrix<double>> gammas;
    std::vector<double> singular_values;  // full spectrum of the stacked matrix

    std::size_t rank() const { return std::size_t(beta.cols()); }
    std::size_t domains() const { return gammas.size(); }
    /// Elements actually held by beta and all gammas.
    std::size_t stored_elements() const;
};

/// Stacks [alpha_1 ... alpha_T] into C_in x (T C_out), takes the SVD and keeps
/// the top `rank` triplets: beta = U_K S_K, gamma_t = the t-th row block of V_K.
JointFactorization joint_factorize(std::span<const Matrix<double>> alphas, std::size_t rank);

/// beta * gamma_t^T.
Matrix<double> reconstruct(const JointFactorization& fact, std::size_t domain);

/// sqrt(sum_{i>=K} s_i^2 / sum_i s_i^2): the relative error of a rank-K truncation.
double tail_energy_ratio(std::span<const double> singular_values, std::size_t rank);

struct CompressionRatio {
    Rational ratio;      // (T C K + C K) / (T C^2)
    Rational asymptote;  // K / C
};

CompressionRatio compression_ratio(std::size_t domains, std::size_t channels, std::size_t rank);

/// Horizontal stack used by joint_factorize.
Matrix<double> stack_columns(std::span<const Matrix<double>> blocks);

}  // namespace resadapt
