#include "ticketlab/param_vector.hpp"

#include <sstream>

namespace ticketlab {

ParamRegistry::ParamRegistry(std::vector<ParamSegment> segments)
    : segments_(std::move(segments)) {
  std::size_t expected_offset = 0;
  for (const auto& seg : segments_) {
    if (seg.offset != expected_offset) {
      throw ShapeError("registry segment '" + seg.name +
                       "' offset " + std::to_string(seg.offset) +
                       " does not tile the vector (expected " +
                       std::to_string(expected_offset) + ")");
    }
    if (seg.size() == 0) {
      throw ShapeError("registry segment '" + seg.name + "' is empty");
    }
    expected_offset += seg.size();
  }
  total_size_ = expected_offset;
}

const ParamSegment& ParamRegistry::segment_at(std::size_t coordinate) const {
  for (const auto& seg : segments_) {
    if (coordinate >= seg.offset && coordinate < seg.offset + seg.size()) {
      return seg;
    }
  }
  throw ShapeError("coordinate " + std::to_string(coordinate) +
                   " outside registry of size " + std::to_string(total_size_));
}

std::string ParamRegistry::canonical_string() const {
  std::ostringstream os;
  for (const auto& seg : segments_) {
    os << seg.name << ':' << (seg.kind == SegmentKind::weight ? 'w' : 'b')
       << ':' << seg.offset << ":[";
    for (std::size_t i = 0; i < seg.shape.size(); ++i) {
      if (i) os << 'x';
      os << seg.shape[i];
    }
    os << "];";
  }
  return os.str();
}

std::uint64_t ParamRegistry::hash() const {
  const std::string s = canonical_string();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

ParamVector::ParamVector(RegistryPtr reg, std::vector<double> vals)
    : registry(std::move(reg)), values(std::move(vals)) {
  if (values.size() != registry->total_size()) {
    throw ShapeError("parameter vector length " +
                     std::to_string(values.size()) +
                     " does not match registry size " +
                     std::to_string(registry->total_size()));
  }
}

bool ParamVector::aligned_with(const ParamVector& other) const {
  if (!registry || !other.registry) return false;
  if (registry == other.registry) return values.size() == other.values.size();
  return *registry == *other.registry;
}

void ParamVector::require_aligned(const ParamVector& other,
                                  const char* what) const {
  if (!aligned_with(other)) {
    throw ShapeError(std::string("misaligned parameter vectors in ") + what);
  }
}

ParamVector zeros_like(const ParamVector& v) {
  ParamVector out;
  out.registry = v.registry;
  out.values.assign(v.values.size(), 0.0);
  return out;
}

}  // namespace ticketlab
