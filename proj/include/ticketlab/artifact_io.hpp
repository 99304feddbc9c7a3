#pragma once

#include <cstdint>
#include <string>

#include "ticketlab/imp.hpp"
#include "ticketlab/param_vector.hpp"

namespace ticketlab {

std::uint64_t fnv1a64_bytes(const void* data, std::size_t n);
std::uint64_t file_digest(const std::string& path);
std::string digest_hex(std::uint64_t digest);

// Little-endian parameter binary: magic "TLPV", u32 version, u64 length,
// u64 registry hash, then the values as 64-bit floats.
void save_params(const ParamVector& params, const std::string& path);

// expected_registry, when given, is verified against the stored hash and
// attached to the result.
ParamVector load_params(const std::string& path,
                        RegistryPtr expected_registry = nullptr);

// Ticket directory layout: mask.bin (+ registry sidecar), init.tlpv,
// trained.tlpv, an anchor.tlpv only when the rewind point differs from the
// initialization, and ticket.json linking them with content digests.
void save_ticket(const TicketArtifact& ticket, const std::string& dir);
TicketArtifact load_ticket(const std::string& dir);

}  // namespace ticketlab
