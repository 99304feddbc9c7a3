#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ticketlab/mask.hpp"
#include "ticketlab/objective.hpp"
#include "ticketlab/param_vector.hpp"
#include "ticketlab/rng.hpp"

namespace ticketlab {

// All curvature probes operate on the masked subspace: every vector that
// goes in or comes out has exact zeros at masked coordinates.

struct EigenResult {
  double value = 0.0;        // Rayleigh quotient of the returned vector
  ParamVector vector;        // unit norm, supported on unmasked coordinates
  double residual = 0.0;     // ||Hv - value*v|| with v unit norm
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> rayleigh_history;  // one entry per iteration
};

// Power iteration on the masked Hessian-vector product. Stops when the
// Rayleigh quotient's relative change drops below tol or after max_iters;
// a non-converged run still returns its best iterate, with the residual
// left for the caller to judge.
EigenResult top_eigenpair(const Objective& obj, const ParamVector& params,
                          const PruningMask& mask, std::size_t max_iters,
                          double tol, RngStream& rng);

struct TraceResult {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

// Hutchinson estimator with Rademacher probes zeroed at masked
// coordinates, so it estimates the trace of the masked-subspace Hessian.
TraceResult trace_estimate(const Objective& obj, const ParamVector& params,
                           const PruningMask& mask, std::size_t samples,
                           RngStream& rng);

struct CurvatureReport {
  EigenResult top;
  TraceResult trace;
};

CurvatureReport curvature_report(const Objective& obj,
                                 const ParamVector& params,
                                 const PruningMask& mask,
                                 std::size_t power_iters, double power_tol,
                                 std::size_t trace_samples, RngStream& rng);

struct SlicePoint {
  double t = 0.0;
  double loss = 0.0;
};

// Loss along params + t * (m . direction) for points evenly spaced on
// [-radius, radius]. points must be odd so the grid contains t = 0; the
// center row is the unperturbed loss, evaluated without any perturbation
// arithmetic. direction must be unit norm on the unmasked support.
std::vector<SlicePoint> landscape_slice(const Objective& obj,
                                        const ParamVector& params,
                                        const PruningMask& mask,
                                        const ParamVector& direction,
                                        double radius, std::size_t points);

// CSV with header "t,loss"; values printed with round-trip precision.
void write_slice_csv(const std::string& path,
                     const std::vector<SlicePoint>& rows);

}  // namespace ticketlab
