#include "ticketlab/hessian.hpp"

#include <cmath>
#include <fstream>

#include "ticketlab/detail/format.hpp"
#include "ticketlab/errors.hpp"

namespace ticketlab {

namespace {

void mask_out(ParamVector& v, const PruningMask& mask) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (mask.bits[i] == 0) v.values[i] = 0.0;
  }
}

ParamVector masked_hvp(const Objective& obj, const ParamVector& params,
                       const PruningMask& mask, const ParamVector& v) {
  ParamVector out = obj.hessian_vector(params, mask, v);
  mask_out(out, mask);
  for (double x : out.values) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite Hessian-vector product");
    }
  }
  return out;
}

}  // namespace

EigenResult top_eigenpair(const Objective& obj, const ParamVector& params,
                          const PruningMask& mask, std::size_t max_iters,
                          double tol, RngStream& rng) {
  mask.require_aligned(params);
  if (max_iters == 0) throw ConfigError("power iteration needs iters >= 1");
  if (mask.unmasked_count() == 0) {
    throw ConfigError("power iteration on an empty unmasked subspace");
  }

  EigenResult res;
  res.vector = zeros_like(params);
  ParamVector& v = res.vector;
  double norm = 0.0;
  while (norm == 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      v.values[i] = mask.bits[i] ? rng.normal() : 0.0;
    }
    norm = std::sqrt(dot(v, v));
  }
  for (double& x : v.values) x /= norm;

  double prev = 0.0;
  bool have_prev = false;
  ParamVector hv = zeros_like(params);
  for (std::size_t it = 0; it < max_iters; ++it) {
    hv = masked_hvp(obj, params, mask, v);
    const double rayleigh = dot(v, hv);
    res.rayleigh_history.push_back(rayleigh);
    res.value = rayleigh;
    res.iterations = it + 1;
    double resid2 = 0.0;
    for (std::size_t i = 0; i < hv.size(); ++i) {
      const double d = hv.values[i] - rayleigh * v.values[i];
      resid2 += d * d;
    }
    res.residual = std::sqrt(resid2);
    if (have_prev &&
        std::abs(rayleigh - prev) <= tol * std::max(1.0, std::abs(rayleigh))) {
      res.converged = true;
      break;
    }
    prev = rayleigh;
    have_prev = true;
    const double hv_norm = std::sqrt(dot(hv, hv));
    if (hv_norm == 0.0) {
      // H annihilates v: v spans a null direction, Rayleigh quotient 0.
      res.converged = true;
      break;
    }
    for (std::size_t i = 0; i < v.size(); ++i) v.values[i] = hv.values[i] / hv_norm;
  }
  return res;
}

TraceResult trace_estimate(const Objective& obj, const ParamVector& params,
                           const PruningMask& mask, std::size_t samples,
                           RngStream& rng) {
  mask.require_aligned(params);
  if (samples < 2) throw ConfigError("trace estimate needs k >= 2 samples");

  TraceResult res;
  res.samples = samples;
  ParamVector z = zeros_like(params);
  double sum = 0.0;
  double sumsq = 0.0;
  for (std::size_t j = 0; j < samples; ++j) {
    for (std::size_t i = 0; i < z.size(); ++i) {
      z.values[i] = mask.bits[i] ? rng.rademacher() : 0.0;
    }
    const ParamVector hz = masked_hvp(obj, params, mask, z);
    const double est = dot(z, hz);
    sum += est;
    sumsq += est * est;
  }
  const double k = static_cast<double>(samples);
  res.value = sum / k;
  const double var = std::max(0.0, (sumsq - k * res.value * res.value) / (k - 1.0));
  res.std_error = std::sqrt(var / k);
  return res;
}

CurvatureReport curvature_report(const Objective& obj,
                                 const ParamVector& params,
                                 const PruningMask& mask,
                                 std::size_t power_iters, double power_tol,
                                 std::size_t trace_samples, RngStream& rng) {
  CurvatureReport rep;
  rep.top = top_eigenpair(obj, params, mask, power_iters, power_tol, rng);
  rep.trace = trace_estimate(obj, params, mask, trace_samples, rng);
  return rep;
}

std::vector<SlicePoint> landscape_slice(const Objective& obj,
                                        const ParamVector& params,
                                        const PruningMask& mask,
                                        const ParamVector& direction,
                                        double radius, std::size_t points) {
  mask.require_aligned(params);
  direction.require_aligned(params);
  if (points < 3 || points % 2 == 0) {
    throw ConfigError("slice needs an odd point count >= 3 so t=0 is sampled");
  }
  if (!(radius > 0.0)) throw ConfigError("slice radius must be positive");

  ParamVector dir = direction;
  mask_out(dir, mask);
  const double dn = std::sqrt(dot(dir, dir));
  if (std::abs(dn - 1.0) > 1e-6) {
    throw ConfigError("slice direction must be unit norm on the unmasked "
                      "support (got " + std::to_string(dn) + ")");
  }

  std::vector<SlicePoint> rows(points);
  ParamVector shifted = params;
  for (std::size_t i = 0; i < points; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(points - 1);
    const double t = -radius + 2.0 * radius * frac;
    rows[i].t = t;
    if (t == 0.0) {
      rows[i].loss = obj.value(params, mask);
      continue;
    }
    for (std::size_t j = 0; j < params.size(); ++j) {
      shifted.values[j] = params.values[j] + t * dir.values[j];
    }
    rows[i].loss = obj.value(shifted, mask);
  }
  return rows;
}

void write_slice_csv(const std::string& path,
                     const std::vector<SlicePoint>& rows) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << "t,loss\n";
  for (const SlicePoint& p : rows) {
    f << detail::format_double(p.t) << "," << detail::format_double(p.loss)
      << "\n";
  }
  if (!f) throw DataError("write failed for '" + path + "'");
}

}  // namespace ticketlab
