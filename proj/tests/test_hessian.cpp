#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include <doctest.h>
#include <Eigen/Dense>

#include "support/oracles.hpp"
#include "ticketlab/errors.hpp"
#include "ticketlab/hessian.hpp"
#include "ticketlab/mlp.hpp"
#include "ticketlab/objective.hpp"

using namespace ticketlab;

namespace {

RegistryPtr flat_registry(std::size_t n) {
  return std::make_shared<const ParamRegistry>(std::vector<ParamSegment>{
      {"w", {n}, 0, SegmentKind::weight}});
}

// f(theta) = 1/2 sum a_i (m_i theta_i)^2; constant diagonal Hessian.
class QuadraticObjective final : public Objective {
 public:
  explicit QuadraticObjective(std::vector<double> diag)
      : diag_(std::move(diag)) {}

  double value(const ParamVector& p, const PruningMask& m) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (m.bits[i]) s += 0.5 * diag_[i] * p[i] * p[i];
    }
    return s;
  }
  ParamVector gradient(const ParamVector& p,
                       const PruningMask& m) const override {
    ParamVector g = zeros_like(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (m.bits[i]) g.values[i] = diag_[i] * p[i];
    }
    return g;
  }
  ParamVector hessian_vector(const ParamVector& p, const PruningMask& m,
                             const ParamVector& d) const override {
    ParamVector h = zeros_like(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (m.bits[i]) h.values[i] = diag_[i] * d[i];
    }
    return h;
  }

 private:
  std::vector<double> diag_;
};

class NanHvpObjective final : public Objective {
 public:
  double value(const ParamVector&, const PruningMask&) const override {
    return 0.0;
  }
  ParamVector gradient(const ParamVector& p,
                       const PruningMask&) const override {
    return zeros_like(p);
  }
  ParamVector hessian_vector(const ParamVector& p, const PruningMask&,
                             const ParamVector&) const override {
    ParamVector h = zeros_like(p);
    h.values[0] = std::numeric_limits<double>::quiet_NaN();
    return h;
  }
};

struct MlpInstance {
  MlpSpec spec;
  Batch batch;
  ParamVector params;
  PruningMask mask;
};

MlpInstance make_instance(std::uint64_t seed, std::size_t batch_n = 16) {
  RngStream rng(seed);
  MlpInstance inst;
  inst.spec = testing::random_small_spec(rng, Activation::tanh);
  inst.batch = testing::random_batch(rng, batch_n, inst.spec.widths.front(),
                                     inst.spec.widths.back());
  const RegistryPtr reg = make_registry(inst.spec);
  inst.params = testing::random_params(reg, rng, 0.8);
  inst.mask = testing::random_mask(reg, rng, 0.7);
  return inst;
}

}  // namespace

TEST_CASE("power iteration nails a diagonal quadratic") {
  const RegistryPtr reg = flat_registry(2);
  QuadraticObjective obj({1.0, 3.0});
  const ParamVector at(reg, {0.0, 0.0});
  const PruningMask mask = PruningMask::all_ones(reg, true);
  RngStream rng(1);

  const EigenResult res = top_eigenpair(obj, at, mask, 500, 1e-14, rng);
  CHECK(res.converged);
  CHECK(res.value == doctest::Approx(3.0).epsilon(1e-10));
  CHECK(res.residual <= 1e-5);
  CHECK(std::abs(res.vector.values[1]) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(std::abs(res.vector.values[0]) <= 1e-6);
  const double norm = std::sqrt(dot(res.vector, res.vector));
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("masking the dominant coordinate moves the answer to the subspace") {
  const RegistryPtr reg = flat_registry(2);
  QuadraticObjective obj({1.0, 3.0});
  const ParamVector at(reg, {0.0, 0.0});
  PruningMask mask = PruningMask::all_ones(reg, true);
  mask.bits[1] = 0;
  RngStream rng(2);

  const EigenResult res = top_eigenpair(obj, at, mask, 200, 1e-14, rng);
  CHECK(res.converged);
  CHECK(res.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.vector.values[1] == 0.0);
  CHECK(std::abs(res.vector.values[0]) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("a null Hessian reports eigenvalue zero without spinning") {
  const RegistryPtr reg = flat_registry(3);
  QuadraticObjective obj({0.0, 0.0, 0.0});
  const ParamVector at(reg, {0.0, 0.0, 0.0});
  const PruningMask mask = PruningMask::all_ones(reg, true);
  RngStream rng(3);

  const EigenResult res = top_eigenpair(obj, at, mask, 100, 1e-12, rng);
  CHECK(res.converged);
  CHECK(res.value == 0.0);
  CHECK(res.iterations <= 2);
}

TEST_CASE("curvature probes validate their inputs") {
  const RegistryPtr reg = flat_registry(2);
  QuadraticObjective obj({1.0, 2.0});
  const ParamVector at(reg, {0.0, 0.0});
  PruningMask mask = PruningMask::all_ones(reg, true);
  RngStream rng(4);

  CHECK_THROWS_AS(top_eigenpair(obj, at, mask, 0, 1e-10, rng), ConfigError);
  CHECK_THROWS_AS(trace_estimate(obj, at, mask, 1, rng), ConfigError);

  mask.bits = {0, 0};
  CHECK_THROWS_WITH_AS(top_eigenpair(obj, at, mask, 10, 1e-10, rng),
                       "power iteration on an empty unmasked subspace",
                       ConfigError);
}

TEST_CASE("power iteration agrees with a dense eigensolve on small nets") {
  // Power iteration converges to the eigenvalue of largest magnitude, so
  // the reference is the dominant (signed) eigenvalue, not the algebraic
  // maximum; at a random point the most negative one sometimes wins.
  for (int k = 0; k < 20; ++k) {
    const MlpInstance inst = make_instance(1000 + static_cast<std::uint64_t>(k));
    MlpBatchObjective obj(inst.spec, inst.batch);

    const Eigen::MatrixXd h =
        testing::dense_masked_hessian(obj, inst.params, inst.mask);
    REQUIRE(h.rows() > 0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(
        0.5 * (h + h.transpose()));
    const Eigen::VectorXd ev = es.eigenvalues();
    double dominant = ev(0);
    for (Eigen::Index i = 1; i < ev.size(); ++i) {
      if (std::abs(ev(i)) > std::abs(dominant)) dominant = ev(i);
    }

    RngStream rng(500 + static_cast<std::uint64_t>(k));
    const EigenResult res =
        top_eigenpair(obj, inst.params, inst.mask, 5000, 1e-12, rng);
    CHECK(res.converged);
    CHECK(std::abs(res.value - dominant) <=
          1e-3 * std::max(1.0, std::abs(dominant)));
    CHECK(res.residual <= 1e-4 * std::max(1.0, std::abs(res.value)));

    // The eigenvector never leaks outside the unmasked support.
    for (std::size_t i = 0; i < res.vector.size(); ++i) {
      if (!inst.mask.bits[i]) CHECK(res.vector.values[i] == 0.0);
    }
  }
}

TEST_CASE("rayleigh history climbs monotonically on a PSD quadratic") {
  const RegistryPtr reg = flat_registry(5);
  QuadraticObjective obj({0.5, 1.0, 2.0, 3.5, 5.0});
  const ParamVector at(reg, std::vector<double>(5, 0.0));
  const PruningMask mask = PruningMask::all_ones(reg, true);
  RngStream rng(11);

  const EigenResult res = top_eigenpair(obj, at, mask, 400, 1e-14, rng);
  REQUIRE(res.rayleigh_history.size() >= 3);
  for (std::size_t i = 1; i < res.rayleigh_history.size(); ++i) {
    CHECK(res.rayleigh_history[i] >= res.rayleigh_history[i - 1] - 1e-12);
  }
  CHECK(res.rayleigh_history.back() == doctest::Approx(5.0).epsilon(1e-10));
}

TEST_CASE("hutchinson is exact on a diagonal Hessian") {
  const RegistryPtr reg = flat_registry(4);
  QuadraticObjective obj({1.0, 2.0, 3.0, 4.0});
  const ParamVector at(reg, std::vector<double>(4, 0.0));
  const PruningMask mask = PruningMask::all_ones(reg, true);
  RngStream rng(12);

  // z^T diag(a) z = sum a_i for Rademacher z, every single probe.
  const TraceResult res = trace_estimate(obj, at, mask, 64, rng);
  CHECK(res.value == doctest::Approx(10.0).epsilon(1e-15));
  CHECK(res.std_error == 0.0);
  CHECK(res.samples == 64);

  PruningMask sub = mask;
  sub.bits = {1, 0, 1, 0};
  RngStream rng2(12);
  const TraceResult masked = trace_estimate(obj, at, sub, 64, rng2);
  CHECK(masked.value == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("hutchinson matches the dense trace within Monte Carlo error") {
  const MlpInstance inst = make_instance(2025, 24);
  MlpBatchObjective obj(inst.spec, inst.batch);
  const Eigen::MatrixXd h =
      testing::dense_masked_hessian(obj, inst.params, inst.mask);
  const double dense_trace = h.trace();

  RngStream rng(606);
  const TraceResult res = trace_estimate(obj, inst.params, inst.mask, 2000, rng);
  CHECK(std::abs(res.value - dense_trace) <= 3.0 * res.std_error);
  CHECK(res.std_error > 0.0);
}

TEST_CASE("a thousand probes land within five percent, seed after seed") {
  const MlpInstance inst = make_instance(2025, 24);
  MlpBatchObjective obj(inst.spec, inst.batch);
  const Eigen::MatrixXd h =
      testing::dense_masked_hessian(obj, inst.params, inst.mask);
  const double dense_trace = h.trace();
  REQUIRE(std::abs(dense_trace) > 1.0);

  int hits = 0;
  for (int s = 0; s < 20; ++s) {
    RngStream rng(7000 + static_cast<std::uint64_t>(s));
    const TraceResult res =
        trace_estimate(obj, inst.params, inst.mask, 1000, rng);
    if (std::abs(res.value - dense_trace) <= 0.05 * std::abs(dense_trace)) {
      ++hits;
    }
  }
  CHECK(hits >= 18);
}

TEST_CASE("curvature report reproduces run to run") {
  const MlpInstance inst = make_instance(321);
  MlpBatchObjective obj(inst.spec, inst.batch);

  RngStream a(5), b(5);
  const CurvatureReport ra =
      curvature_report(obj, inst.params, inst.mask, 500, 1e-10, 200, a);
  const CurvatureReport rb =
      curvature_report(obj, inst.params, inst.mask, 500, 1e-10, 200, b);
  CHECK(ra.top.value == rb.top.value);
  CHECK(ra.top.iterations == rb.top.iterations);
  CHECK(ra.trace.value == rb.trace.value);
  CHECK(ra.trace.std_error == rb.trace.std_error);
  CHECK(ra.top.converged);
}

TEST_CASE("non-finite curvature surfaces as a numeric error") {
  const RegistryPtr reg = flat_registry(2);
  NanHvpObjective obj;
  const ParamVector at(reg, {0.1, 0.2});
  const PruningMask mask = PruningMask::all_ones(reg, true);
  RngStream rng(6);
  CHECK_THROWS_WITH_AS(top_eigenpair(obj, at, mask, 10, 1e-10, rng),
                       "non-finite Hessian-vector product", NumericError);
  CHECK_THROWS_WITH_AS(trace_estimate(obj, at, mask, 4, rng),
                       "non-finite Hessian-vector product", NumericError);
}

TEST_CASE("slice through a quadratic reads back the parabola") {
  const RegistryPtr reg = flat_registry(2);
  QuadraticObjective obj({1.0, 3.0});
  const ParamVector at(reg, {0.0, 0.0});
  const PruningMask mask = PruningMask::all_ones(reg, true);
  ParamVector dir(reg, {0.0, 1.0});

  const auto rows = landscape_slice(obj, at, mask, dir, 2.0, 9);
  REQUIRE(rows.size() == 9);
  CHECK(rows.front().t == -2.0);
  CHECK(rows.back().t == 2.0);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].t == doctest::Approx(-rows[rows.size() - 1 - i].t));
    CHECK(rows[i].loss ==
          doctest::Approx(1.5 * rows[i].t * rows[i].t).epsilon(1e-12));
  }
  // The center row is the plain objective value, no perturbation applied.
  CHECK(rows[4].t == 0.0);
  CHECK(rows[4].loss == obj.value(at, mask));
}

TEST_CASE("slice center is bit-identical to the unperturbed loss on an MLP") {
  const MlpInstance inst = make_instance(55);
  MlpBatchObjective obj(inst.spec, inst.batch);

  // Unit direction on the unmasked support.
  ParamVector dir = zeros_like(inst.params);
  RngStream rng(7);
  for (std::size_t i = 0; i < dir.size(); ++i) {
    if (inst.mask.bits[i]) dir.values[i] = rng.normal();
  }
  const double n = std::sqrt(dot(dir, dir));
  for (double& x : dir.values) x /= n;

  const auto rows = landscape_slice(obj, inst.params, inst.mask, dir, 0.5, 21);
  REQUIRE(rows.size() == 21);
  CHECK(rows[10].t == 0.0);
  CHECK(rows[10].loss == obj.value(inst.params, inst.mask));

  // Second difference at the center approximates dir^T H dir.
  const auto fine = landscape_slice(obj, inst.params, inst.mask, dir, 1e-3, 3);
  const double h = 1e-3;
  const double second =
      (fine[2].loss - 2.0 * fine[1].loss + fine[0].loss) / (h * h);
  const ParamVector hv =
      hvp(inst.spec, inst.params, inst.mask, inst.batch, dir);
  const double quad_form = dot(dir, hv);
  CHECK(std::abs(second - quad_form) <=
        1e-3 * std::max(1.0, std::abs(quad_form)));
}

TEST_CASE("slice rejects malformed grids and directions") {
  const RegistryPtr reg = flat_registry(2);
  QuadraticObjective obj({1.0, 3.0});
  const ParamVector at(reg, {0.0, 0.0});
  PruningMask mask = PruningMask::all_ones(reg, true);
  const ParamVector unit(reg, {0.0, 1.0});

  CHECK_THROWS_AS(landscape_slice(obj, at, mask, unit, 1.0, 4), ConfigError);
  CHECK_THROWS_AS(landscape_slice(obj, at, mask, unit, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(landscape_slice(obj, at, mask, unit, 0.0, 5), ConfigError);
  CHECK_THROWS_AS(
      landscape_slice(obj, at, mask, ParamVector(reg, {0.0, 0.5}), 1.0, 5),
      ConfigError);

  // A unit vector whose mass sits on a masked coordinate is not unit on
  // the support once the mask flattens it.
  mask.bits = {1, 0};
  CHECK_THROWS_AS(landscape_slice(obj, at, mask, unit, 1.0, 5), ConfigError);
}

TEST_CASE("slice csv round-trips every digit") {
  const RegistryPtr reg = flat_registry(2);
  QuadraticObjective obj({1.0, 3.0});
  const ParamVector at(reg, {0.3, -0.7});
  const PruningMask mask = PruningMask::all_ones(reg, true);
  const ParamVector dir(reg, {1.0, 0.0});

  const auto rows = landscape_slice(obj, at, mask, dir, 1.0, 7);
  const std::string path = "slice_test.csv";
  write_slice_csv(path, rows);

  std::ifstream f(path);
  std::string line;
  REQUIRE(std::getline(f, line));
  CHECK(line == "t,loss");
  std::size_t i = 0;
  while (std::getline(f, line)) {
    REQUIRE(i < rows.size());
    const std::size_t comma = line.find(',');
    REQUIRE(comma != std::string::npos);
    CHECK(std::strtod(line.substr(0, comma).c_str(), nullptr) == rows[i].t);
    CHECK(std::strtod(line.substr(comma + 1).c_str(), nullptr) ==
          rows[i].loss);
    ++i;
  }
  CHECK(i == rows.size());
  f.close();
  std::filesystem::remove(path);
}
