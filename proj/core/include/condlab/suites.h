#pragma once

#include <string>
#include <vector>

namespace condlab::suites {

// Shared verification suites behind `condlab verify` — each runs a fixed
// seeded battery and reports the worst observed deviation against its bound.
struct SuiteResult {
  std::string name;
  bool pass = false;
  double worst = 0.0;      // worst deviation (semantics per suite)
  double bound = 0.0;      // the tolerance it was checked against
  std::string detail;      // human-readable one-liner
};

// Kronecker spectrum fast path vs. kron+sym_eig oracle on seeded SPD pairs.
SuiteResult run_prop1(int pairs = 100);
// Plain-network scaling identities across K ∈ {2,4,8}, seeded α, μ ∈ {1,1.7}.
SuiteResult run_theorem1();
// Normalized-network scaling invariance, ε = 0 exact plus ε = 1e-5 banded.
SuiteResult run_theorem2();
// BN backward + whole-network gradients vs. central finite differences.
SuiteResult run_bn_grad();
// Per-layer curvature blocks vs. the diagonal of the full-parameter matrix.
SuiteResult run_blocks();

std::vector<std::string> suite_names();
SuiteResult run_suite(const std::string& name);

}  // namespace condlab::suites
