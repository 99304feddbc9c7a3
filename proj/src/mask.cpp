#include "ticketlab/mask.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

namespace ticketlab {

PruningMask PruningMask::all_ones(RegistryPtr reg, bool prune_biases) {
  PruningMask mask;
  mask.registry = std::move(reg);
  const std::size_t n = mask.registry->total_size();
  mask.bits.assign(n, 1);
  mask.prunable.assign(n, 0);
  for (const auto& seg : mask.registry->segments()) {
    if (seg.kind == SegmentKind::weight || prune_biases) {
      std::fill(mask.prunable.begin() + seg.offset,
                mask.prunable.begin() + seg.offset + seg.size(), 1);
    }
  }
  return mask;
}

std::size_t PruningMask::prunable_count() const {
  std::size_t c = 0;
  for (auto p : prunable) c += p;
  return c;
}

std::size_t PruningMask::unmasked_prunable_count() const {
  std::size_t c = 0;
  for (std::size_t i = 0; i < bits.size(); ++i) c += (bits[i] && prunable[i]);
  return c;
}

std::size_t PruningMask::unmasked_count() const {
  std::size_t c = 0;
  for (auto b : bits) c += (b != 0);
  return c;
}

double PruningMask::sparsity() const {
  const std::size_t total = prunable_count();
  if (total == 0) return 0.0;
  return 1.0 - static_cast<double>(unmasked_prunable_count()) /
                   static_cast<double>(total);
}

void PruningMask::check_invariants() const {
  if (bits.size() != prunable.size() ||
      (registry && bits.size() != registry->total_size())) {
    throw ShapeError("mask arrays misaligned with registry");
  }
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (!prunable[i] && !bits[i]) {
      throw ShapeError("non-prunable coordinate " + std::to_string(i) +
                       " has bit 0");
    }
  }
}

bool PruningMask::aligned_with(const ParamVector& params) const {
  return bits.size() == params.values.size();
}

void PruningMask::require_aligned(const ParamVector& params) const {
  if (!aligned_with(params)) {
    throw ShapeError("mask of length " + std::to_string(bits.size()) +
                     " does not align with parameter vector of length " +
                     std::to_string(params.values.size()));
  }
}

const char* to_string(PruneCriterion c) {
  switch (c) {
    case PruneCriterion::large_final: return "large_final";
    case PruneCriterion::small_final: return "small_final";
    case PruneCriterion::random_scores: return "random";
  }
  return "?";
}

PruneCriterion prune_criterion_from_string(const std::string& s) {
  if (s == "large_final") return PruneCriterion::large_final;
  if (s == "small_final") return PruneCriterion::small_final;
  if (s == "random") return PruneCriterion::random_scores;
  throw ConfigError("unknown pruning criterion '" + s + "'");
}

std::vector<double> score(PruneCriterion criterion, const ParamVector& trained,
                          RngStream& rng) {
  std::vector<double> s(trained.size());
  switch (criterion) {
    case PruneCriterion::large_final:
      for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = std::abs(trained.values[i]);
      }
      break;
    case PruneCriterion::small_final:
      for (std::size_t i = 0; i < s.size(); ++i) {
        s[i] = -std::abs(trained.values[i]);
      }
      break;
    case PruneCriterion::random_scores:
      for (std::size_t i = 0; i < s.size(); ++i) s[i] = rng.uniform01();
      break;
  }
  return s;
}

PruningMask prune_round(const PruningMask& mask,
                        const std::vector<double>& scores, double rate) {
  if (!(rate > 0.0 && rate < 1.0)) {
    throw ConfigError("pruning rate must lie in (0,1)");
  }
  if (scores.size() != mask.size()) {
    throw ShapeError("scores length does not match mask");
  }
  std::vector<std::size_t> eligible;
  eligible.reserve(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.bits[i] && mask.prunable[i]) eligible.push_back(i);
  }
  if (eligible.empty()) {
    throw NumericError("all prunable weights already pruned");
  }
  const std::size_t quota = static_cast<std::size_t>(
      std::floor(rate * static_cast<double>(eligible.size())));

  // Bottom `quota` scores, ties resolved toward the lower index.
  std::sort(eligible.begin(), eligible.end(),
            [&scores](std::size_t a, std::size_t b) {
              if (scores[a] != scores[b]) return scores[a] < scores[b];
              return a < b;
            });
  PruningMask out = mask;
  for (std::size_t k = 0; k < quota; ++k) out.bits[eligible[k]] = 0;
  return out;
}

std::vector<std::size_t> unmasked_trajectory(std::size_t initial_unmasked,
                                             double rate, std::size_t rounds) {
  std::vector<std::size_t> traj{initial_unmasked};
  std::size_t u = initial_unmasked;
  for (std::size_t k = 0; k < rounds; ++k) {
    u -= static_cast<std::size_t>(std::floor(rate * static_cast<double>(u)));
    traj.push_back(u);
  }
  return traj;
}

namespace {

constexpr char kMagic[4] = {'T', 'L', 'M', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

std::string pack_bits(const std::vector<std::uint8_t>& bits) {
  std::string out((bits.size() + 7) / 8, '\0');
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i]) out[i / 8] |= static_cast<char>(1u << (i % 8));
  }
  return out;
}

std::vector<std::uint8_t> unpack_bits(const std::string& bytes,
                                      std::size_t count) {
  std::vector<std::uint8_t> bits(count, 0);
  for (std::size_t i = 0; i < count; ++i) {
    bits[i] = (bytes[i / 8] >> (i % 8)) & 1;
  }
  return bits;
}

nlohmann::json registry_to_json(const ParamRegistry& reg) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& seg : reg.segments()) {
    segs.push_back({{"name", seg.name},
                    {"shape", seg.shape},
                    {"offset", seg.offset},
                    {"kind", seg.kind == SegmentKind::weight ? "weight"
                                                             : "bias"}});
  }
  return segs;
}

RegistryPtr registry_from_json(const nlohmann::json& segs) {
  std::vector<ParamSegment> out;
  for (const auto& j : segs) {
    ParamSegment seg;
    seg.name = j.at("name").get<std::string>();
    seg.shape = j.at("shape").get<std::vector<std::size_t>>();
    seg.offset = j.at("offset").get<std::size_t>();
    seg.kind = j.at("kind").get<std::string>() == "weight"
                   ? SegmentKind::weight
                   : SegmentKind::bias;
    out.push_back(std::move(seg));
  }
  return std::make_shared<const ParamRegistry>(std::move(out));
}

}  // namespace

void save_mask(const PruningMask& mask, const std::string& path) {
  mask.check_invariants();
  std::string blob;
  blob.append(kMagic, 4);
  put_u32(blob, kVersion);
  put_u64(blob, mask.bits.size());
  blob += pack_bits(mask.bits);
  blob += pack_bits(mask.prunable);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write mask file '" + path + "'");
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!f) throw DataError("short write to '" + path + "'");

  if (mask.registry) {
    std::ofstream side(path + ".registry.json", std::ios::trunc);
    side << registry_to_json(*mask.registry).dump(2) << "\n";
  }
}

PruningMask load_mask(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open mask file '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  if (blob.size() < 16) {
    throw DataError("mask file '" + path + "' truncated at byte " +
                    std::to_string(blob.size()));
  }
  if (blob.compare(0, 4, kMagic, 4) != 0) {
    throw DataError("bad mask magic in '" + path + "' at byte 0");
  }
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) {
    version |= static_cast<std::uint32_t>(
                   static_cast<unsigned char>(blob[4 + i]))
               << (8 * i);
  }
  if (version != kVersion) {
    throw DataError("unsupported mask version " + std::to_string(version));
  }
  std::uint64_t n = 0;
  for (int i = 0; i < 8; ++i) {
    n |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[8 + i]))
         << (8 * i);
  }
  const std::size_t packed = (static_cast<std::size_t>(n) + 7) / 8;
  if (blob.size() < 16 + 2 * packed) {
    throw DataError("mask file '" + path + "' truncated at byte " +
                    std::to_string(blob.size()));
  }
  PruningMask mask;
  mask.bits = unpack_bits(blob.substr(16, packed), n);
  mask.prunable = unpack_bits(blob.substr(16 + packed, packed), n);

  std::ifstream side(path + ".registry.json");
  if (side) {
    nlohmann::json segs = nlohmann::json::parse(side);
    mask.registry = registry_from_json(segs);
    if (mask.registry->total_size() != n) {
      throw DataError("mask registry sidecar disagrees with bit count");
    }
  }
  mask.check_invariants();
  return mask;
}

void apply_mask(ParamVector& params, const PruningMask& mask) {
  if (!mask.aligned_with(params)) {
    throw ShapeError("apply_mask: mask not aligned with parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!mask.bits[i]) params.values[i] = 0.0;
  }
}

}  // namespace ticketlab
