#pragma once

#include <cstdint>
#include <vector>

#include "condlab/matrix.h"

namespace condlab {

// Eigenvalues of a symmetric matrix, sorted descending, plus the numerical
// rank threshold. rank_eps = dim · max(λ_max, 0) · 1e-12; eigenvalues at or
// below rank_eps are treated as zero by condition-number consumers.
struct Spectrum {
  std::vector<double> eigenvalues;  // descending
  int dim = 0;
  double rank_eps = 0.0;

  double lambda_max() const { return eigenvalues.empty() ? 0.0 : eigenvalues.front(); }
};

// Sorts the given values descending and attaches the standard rank threshold.
Spectrum make_spectrum(std::vector<double> values);

// Full symmetric eigendecomposition. The input is symmetrized internally as
// (A+Aᵀ)/2. Cyclic Jacobi for dim ≤ 64, Householder tridiagonalization plus
// implicit-shift QL above that. If eigenvectors is non-null it receives the
// orthonormal eigenvector columns, ordered to match the returned eigenvalues.
Spectrum sym_eig(const Matrix& a, Matrix* eigenvectors = nullptr);

inline constexpr std::int64_t kKronDefaultCap = 64LL * 1024 * 1024;  // entries

// Kronecker product of square matrices; guards against huge allocations.
Matrix kron(const Matrix& a, const Matrix& b, std::int64_t entry_cap = kKronDefaultCap);

// Largest singular value via power iteration on WᵀW; deterministic
// (normalized all-ones start vector), relative accuracy 1e-8 or better.
double spectral_norm(const Matrix& w);

double frobenius_norm(const Matrix& w);

// Uncentered second moment (1/N)·XᵀX of the given rows; exactly symmetric
// by construction (upper triangle computed, then mirrored).
Matrix second_moment(const Matrix& rows);

}  // namespace condlab
