#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ticketlab/errors.hpp"

namespace ticketlab {

enum class SegmentKind { weight, bias };

struct ParamSegment {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  SegmentKind kind = SegmentKind::weight;

  std::size_t size() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }
};

// Ordered layout of a flat parameter vector. Segments must tile the vector
// exactly with strictly increasing offsets.
class ParamRegistry {
 public:
  ParamRegistry() = default;
  explicit ParamRegistry(std::vector<ParamSegment> segments);

  const std::vector<ParamSegment>& segments() const { return segments_; }
  std::size_t total_size() const { return total_size_; }

  const ParamSegment& segment_at(std::size_t coordinate) const;

  // Stable textual form; backs both equality and the on-disk hash.
  std::string canonical_string() const;
  std::uint64_t hash() const;

  bool operator==(const ParamRegistry& other) const {
    return canonical_string() == other.canonical_string();
  }

 private:
  std::vector<ParamSegment> segments_;
  std::size_t total_size_ = 0;
};

using RegistryPtr = std::shared_ptr<const ParamRegistry>;

// Flat parameter vector sharing an immutable registry.
struct ParamVector {
  RegistryPtr registry;
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(RegistryPtr reg)
      : registry(std::move(reg)), values(registry->total_size(), 0.0) {}
  ParamVector(RegistryPtr reg, std::vector<double> vals);

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }

  bool aligned_with(const ParamVector& other) const;
  void require_aligned(const ParamVector& other,
                       const char* what = "parameter vector") const;
};

ParamVector zeros_like(const ParamVector& v);

inline double dot(const ParamVector& a, const ParamVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

inline double norm2(const ParamVector& a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(const ParamVector& a) {
  for (double x : a.values) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace ticketlab
