#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include <doctest.h>

#include "ticketlab/errors.hpp"
#include "ticketlab/mask.hpp"
#include "ticketlab/mlp.hpp"
#include "ticketlab/rng.hpp"

using namespace ticketlab;

namespace {

// Flat 4-weight layout used by the hand-checkable examples.
RegistryPtr flat_registry(std::size_t n) {
  return std::make_shared<const ParamRegistry>(std::vector<ParamSegment>{
      {"w", {n}, 0, SegmentKind::weight}});
}

ParamVector vec(RegistryPtr reg, std::vector<double> vals) {
  return ParamVector(std::move(reg), std::move(vals));
}

}  // namespace

TEST_CASE("scores follow the criterion definitions") {
  const RegistryPtr reg = flat_registry(2);
  const ParamVector trained = vec(reg, {0.5, -0.9});
  RngStream rng(1);

  const auto large = score(PruneCriterion::large_final, trained, rng);
  CHECK(large == std::vector<double>{0.5, 0.9});

  const auto small = score(PruneCriterion::small_final, trained, rng);
  CHECK(small == std::vector<double>{-0.5, -0.9});
}

TEST_CASE("random scores are reproducible per seed") {
  const RegistryPtr reg = flat_registry(8);
  const ParamVector trained = vec(reg, std::vector<double>(8, 1.0));
  RngStream a(7);
  RngStream b(7);
  RngStream c(8);
  const auto sa = score(PruneCriterion::random_scores, trained, a);
  const auto sb = score(PruneCriterion::random_scores, trained, b);
  const auto sc = score(PruneCriterion::random_scores, trained, c);
  CHECK(sa == sb);
  CHECK(sa != sc);
  for (double s : sa) {
    CHECK(s >= 0.0);
    CHECK(s < 1.0);
  }
}

TEST_CASE("prune_round masks the floor quota of lowest scores") {
  const RegistryPtr reg = flat_registry(10);
  PruningMask mask = PruningMask::all_ones(reg);
  std::vector<double> scores = {9, 8, 7, 6, 5, 4, 3, 2, 1, 0};
  const PruningMask next = prune_round(mask, scores, 0.2);
  CHECK(next.unmasked_prunable_count() == 8);
  CHECK(next.bits[8] == 0);
  CHECK(next.bits[9] == 0);
  for (std::size_t i = 0; i < 8; ++i) CHECK(next.bits[i] == 1);
}

TEST_CASE("worked example: large_final at half rate") {
  const RegistryPtr reg = flat_registry(4);
  const ParamVector trained = vec(reg, {0.5, -0.1, 0.3, -0.9});
  PruningMask mask = PruningMask::all_ones(reg);
  RngStream rng(1);
  const auto scores = score(PruneCriterion::large_final, trained, rng);
  const PruningMask next = prune_round(mask, scores, 0.5);
  CHECK(next.bits == std::vector<std::uint8_t>{1, 0, 0, 1});
  CHECK(next.sparsity() == doctest::Approx(0.5));
}

TEST_CASE("ties break toward the lower index") {
  const RegistryPtr reg = flat_registry(4);
  PruningMask mask = PruningMask::all_ones(reg);
  const std::vector<double> scores = {1.0, 1.0, 1.0, 1.0};
  const PruningMask next = prune_round(mask, scores, 0.5);
  CHECK(next.bits == std::vector<std::uint8_t>{0, 0, 1, 1});
}

TEST_CASE("masked bits stay masked and quota counts only unmasked") {
  const RegistryPtr reg = flat_registry(10);
  PruningMask mask = PruningMask::all_ones(reg);
  const std::vector<double> scores = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  mask = prune_round(mask, scores, 0.2);  // masks 0, 1
  CHECK(mask.unmasked_prunable_count() == 8);
  const PruningMask again = prune_round(mask, scores, 0.25);  // floor(2) of 8
  CHECK(again.unmasked_prunable_count() == 6);
  CHECK(again.bits[0] == 0);
  CHECK(again.bits[1] == 0);
  CHECK(again.bits[2] == 0);
  CHECK(again.bits[3] == 0);
}

TEST_CASE("a quota that floors to zero leaves the mask unchanged") {
  const RegistryPtr reg = flat_registry(4);
  PruningMask mask = PruningMask::all_ones(reg);
  const std::vector<double> scores = {1, 2, 3, 4};
  const PruningMask next = prune_round(mask, scores, 0.2);  // floor(0.8) = 0
  CHECK(next.bits == mask.bits);
}

TEST_CASE("pruning with nothing left errors") {
  const RegistryPtr reg = flat_registry(2);
  PruningMask mask = PruningMask::all_ones(reg);
  mask.bits = {0, 0};
  const std::vector<double> scores = {1, 2};
  CHECK_THROWS_AS(prune_round(mask, scores, 0.5), NumericError);
  CHECK_THROWS_AS(prune_round(PruningMask::all_ones(reg), scores, 0.0),
                  ConfigError);
  CHECK_THROWS_AS(prune_round(PruningMask::all_ones(reg), scores, 1.0),
                  ConfigError);
}

TEST_CASE("sparsity recurrence with floors: eleven rounds pass 90%") {
  const std::size_t n = 1000;
  const RegistryPtr reg = flat_registry(n);
  PruningMask mask = PruningMask::all_ones(reg);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) scores[i] = static_cast<double>(i);

  const auto expected = unmasked_trajectory(n, 0.2, 11);
  REQUIRE(expected.size() == 12);
  CHECK(expected[0] == n);
  for (std::size_t k = 1; k <= 11; ++k) {
    mask = prune_round(mask, scores, 0.2);
    CHECK(mask.unmasked_prunable_count() == expected[k]);
    // Floor excess is < 1 per round and decays 0.8x per later round, so the
    // kept fraction sits within 1/(1-0.8) = 5 coordinates of 0.8^k.
    const double kept =
        static_cast<double>(mask.unmasked_prunable_count()) / n;
    CHECK(kept >= std::pow(0.8, static_cast<double>(k)) - 1e-12);
    CHECK(kept <= std::pow(0.8, static_cast<double>(k)) + 5.0 / n + 1e-12);
  }
  CHECK(mask.sparsity() >= 0.90);
}

TEST_CASE("biases are non-prunable by default and never flip") {
  const MlpSpec spec{{2, 4, 2}, Activation::relu};
  const RegistryPtr reg = make_registry(spec);
  PruningMask mask = PruningMask::all_ones(reg);
  std::vector<double> scores(mask.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    scores[i] = static_cast<double>(i);
  }
  CHECK(mask.prunable_count() == 2 * 4 + 4 * 2);  // weights only
  for (int round = 0; round < 5; ++round) {
    mask = prune_round(mask, scores, 0.5);
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.prunable[i]) CHECK(mask.bits[i] == 1);
  }
  mask.check_invariants();

  PruningMask with_biases = PruningMask::all_ones(reg, true);
  CHECK(with_biases.prunable_count() == with_biases.size());
}

TEST_CASE("sparsity counts prunable coordinates only") {
  const MlpSpec spec{{2, 3, 2}, Activation::relu};
  PruningMask mask = PruningMask::all_ones(make_registry(spec));
  const std::size_t weights = 2 * 3 + 3 * 2;
  CHECK(mask.sparsity() == 0.0);
  // Mask half the weights by hand.
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < mask.size() && flipped < weights / 2; ++i) {
    if (mask.prunable[i]) {
      mask.bits[i] = 0;
      ++flipped;
    }
  }
  CHECK(mask.sparsity() == doctest::Approx(0.5));
  CHECK(mask.unmasked_count() == mask.size() - flipped);
}

TEST_CASE("invariant violation is caught") {
  const MlpSpec spec{{2, 3, 2}, Activation::relu};
  PruningMask mask = PruningMask::all_ones(make_registry(spec));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.prunable[i]) {
      mask.bits[i] = 0;  // illegal: non-prunable must keep bit 1
      break;
    }
  }
  CHECK_THROWS_AS(mask.check_invariants(), ShapeError);
}

TEST_CASE("apply_mask zeroes masked coordinates exactly") {
  const RegistryPtr reg = flat_registry(4);
  ParamVector params = vec(reg, {1.5, -2.5, 3.5, -4.5});
  PruningMask mask = PruningMask::all_ones(reg);
  mask.bits = {1, 0, 1, 0};
  apply_mask(params, mask);
  CHECK(params.values == std::vector<double>{1.5, 0.0, 3.5, 0.0});
}

TEST_CASE("mask serialization round-trips exactly") {
  const MlpSpec spec{{3, 9, 2}, Activation::tanh};
  const RegistryPtr reg = make_registry(spec);
  RngStream rng(99);
  PruningMask mask = PruningMask::all_ones(reg);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.prunable[i] && rng.uniform01() < 0.4) mask.bits[i] = 0;
  }

  const std::string path = "mask_roundtrip.bin";
  save_mask(mask, path);
  const PruningMask loaded = load_mask(path);
  CHECK(loaded.bits == mask.bits);
  CHECK(loaded.prunable == mask.prunable);
  REQUIRE(loaded.registry != nullptr);
  CHECK(*loaded.registry == *mask.registry);

  // Header starts with the format magic.
  std::FILE* f = std::fopen(path.c_str(), "rb");
  REQUIRE(f != nullptr);
  char magic[4] = {};
  REQUIRE(std::fread(magic, 1, 4, f) == 4);
  std::fclose(f);
  CHECK(std::string(magic, 4) == "TLMK");

  std::filesystem::remove(path);
  std::filesystem::remove(path + ".registry.json");
}

TEST_CASE("truncated mask files fail with a byte offset") {
  const MlpSpec spec{{3, 5, 2}, Activation::relu};
  PruningMask mask = PruningMask::all_ones(make_registry(spec));
  const std::string path = "mask_trunc.bin";
  save_mask(mask, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  CHECK_THROWS_AS(load_mask(path), DataError);
  std::filesystem::remove(path);
  std::filesystem::remove(path + ".registry.json");
}
