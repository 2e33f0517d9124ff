#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unfmri/kspace.hpp"

namespace unfmri {

enum class Fault { None, EtaSign };

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  Fault fault = Fault::None;
  std::uint64_t seed = 0;
};

/// Groups accepted by run_checks: smw, adjoint, gradients, reduction, convergence.
const std::vector<std::string>& check_groups();

/// Runs the named groups (all when empty) and returns one result per check.
std::vector<CheckResult> run_checks(const std::vector<std::string>& groups, const VerifyOptions& options);

CheckResult check_smw(int instances, const VerifyOptions& options);
CheckResult check_adjoint(int trials, const VerifyOptions& options);
std::vector<CheckResult> check_gradients_battery(const VerifyOptions& options);
CheckResult check_reduction(int configurations, const VerifyOptions& options);
CheckResult check_convergence(int instances, const VerifyOptions& options);

/// Random binary sampling pattern (centered layout) with the DC always sampled.
UndersamplingMask random_pattern_mask(int height, int width, double density, std::uint64_t seed);

/// Quadratic-prior splitting problem: x-step = data consistency with weight eta, z-step =
/// exact prox of (gamma/2)||z - c||^2 with step tau, i.e. z = (x + tau*gamma*c) / (1 + tau*gamma).
struct ConvexInstance {
  UndersamplingMask mask;
  ComplexImage c;
  KSpaceMeasurement y;
  double eta = 0.5;
  double tau_gamma = 0.05;
};

ConvexInstance random_convex_instance(int size, std::uint64_t seed);
/// Fixed point of the splitting iteration from a dense Hermitian solve.
ComplexImage convex_fixed_point(const ConvexInstance& inst);
/// Iterations until ||x_k - x*|| / ||x*|| <= tol (max_iter + 1 if never reached).
/// `accelerated` applies z_hat = z_k + beta_k (z_k - z_{k-1}) with beta_k = (k - 1) / (k + 2).
int splitting_iterations(const ConvexInstance& inst, const ComplexImage& x_star, bool accelerated, double tol,
                         int max_iter);

}  // namespace unfmri
