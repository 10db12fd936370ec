#pragma once

#include <cstdint>
#include <ostream>
#include <string>

#include "nftl/losses.hpp"

namespace nftl {

// Finite-difference comparison summary. rel err per coordinate is
// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero coordinates from
// inflating the ratio while still bounding their absolute error.
struct FdReport {
  std::size_t cases = 0;
  double max_rel_err = 0.0;
};

// Closed-form loss gradients vs central differences of an independent
// double-precision reference implementation. Random batches, C <= 8, dim <= 32.
FdReport fd_check_loss(LossId id, std::size_t cases, std::uint64_t seed);

// Softmax Jacobian block form (diag p_i(1-p_i), off-diag -p_i p_j) vs central
// differences of the reference softmax.
FdReport fd_check_softmax(std::size_t cases, std::uint64_t seed);

// Backpropagated parameter gradients of random MLPs vs central differences of
// a double-precision reference forward pass, step 1e-3.
FdReport fd_check_model(std::size_t cases, std::uint64_t seed);

struct ProbeVerdict {
  bool ok = true;
  std::string detail;
};

// Gradient-magnitude dichotomy along the stability probe paths: ce grows
// pointwise, ice/klu shrink pointwise to < 1e-5, dos shrinks to zero, mse
// stays bounded away from zero.
ProbeVerdict check_stability_dichotomy(std::size_t points = 100);

// CSV columns: check, cases, max_rel_err, tolerance, pass.
void write_gradcheck_csv(std::ostream& out, std::size_t cases, std::uint64_t seed);

}  // namespace nftl
