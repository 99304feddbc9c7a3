#include "ticketlab/artifact_io.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ticketlab/errors.hpp"
#include "ticketlab/mlp.hpp"

namespace fs = std::filesystem;

namespace ticketlab {

std::uint64_t fnv1a64_bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ull;
  return h;
}

std::uint64_t file_digest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)),
                          std::istreambuf_iterator<char>());
  return fnv1a64_bytes(bytes.data(), bytes.size());
}

std::string digest_hex(std::uint64_t digest) {
  static const char* hex = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = hex[digest & 0xf];
    digest >>= 4;
  }
  return s;
}

namespace {

constexpr char kParamsMagic[4] = {'T', 'L', 'P', 'V'};
constexpr std::uint32_t kParamsVersion = 1;

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(const std::string& b, std::size_t off,
                       const std::string& path) {
  if (off + 4 > b.size()) {
    throw DataError("'" + path + "' truncated at byte " +
                    std::to_string(b.size()));
  }
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(b[off + i]);
  }
  return v;
}

std::uint64_t read_u64(const std::string& b, std::size_t off,
                       const std::string& path) {
  if (off + 8 > b.size()) {
    throw DataError("'" + path + "' truncated at byte " +
                    std::to_string(b.size()));
  }
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | static_cast<unsigned char>(b[off + i]);
  }
  return v;
}

}  // namespace

void save_params(const ParamVector& params, const std::string& path) {
  std::string out;
  out.reserve(24 + 8 * params.size());
  out.append(kParamsMagic, 4);
  append_u32(out, kParamsVersion);
  append_u64(out, params.size());
  append_u64(out, params.registry ? params.registry->hash() : 0);
  for (double x : params.values) append_u64(out, std::bit_cast<std::uint64_t>(x));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

ParamVector load_params(const std::string& path, RegistryPtr expected_registry) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  const std::string b((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());

  if (b.size() < 4 || std::string(b, 0, 4) != std::string(kParamsMagic, 4)) {
    throw DataError("bad magic in '" + path + "' at byte 0 (want TLPV)");
  }
  const std::uint32_t version = read_u32(b, 4, path);
  if (version != kParamsVersion) {
    throw DataError("unsupported parameter file version " +
                    std::to_string(version) + " in '" + path + "'");
  }
  const std::uint64_t length = read_u64(b, 8, path);
  const std::uint64_t hash = read_u64(b, 16, path);
  const std::size_t need = 24 + 8 * static_cast<std::size_t>(length);
  if (b.size() < need) {
    throw DataError("'" + path + "' truncated at byte " +
                    std::to_string(b.size()) + " (expected " +
                    std::to_string(need) + ")");
  }
  if (expected_registry) {
    if (length != expected_registry->total_size()) {
      throw DataError("'" + path + "' holds " + std::to_string(length) +
                      " values, registry expects " +
                      std::to_string(expected_registry->total_size()));
    }
    if (hash != 0 && hash != expected_registry->hash()) {
      throw DataError("registry hash mismatch in '" + path + "'");
    }
  }

  ParamVector out;
  out.registry = std::move(expected_registry);
  out.values.resize(length);
  for (std::size_t i = 0; i < length; ++i) {
    out.values[i] = std::bit_cast<double>(read_u64(b, 24 + 8 * i, path));
  }
  return out;
}

namespace {

nlohmann::ordered_json file_entry(const std::string& dir,
                                  const std::string& name) {
  nlohmann::ordered_json j;
  j["path"] = name;
  j["fnv1a64"] = digest_hex(file_digest(dir + "/" + name));
  return j;
}

}  // namespace

void save_ticket(const TicketArtifact& ticket, const std::string& dir) {
  fs::create_directories(dir);
  save_mask(ticket.mask, dir + "/mask.bin");
  save_params(ticket.init, dir + "/init.tlpv");
  save_params(ticket.trained, dir + "/trained.tlpv");
  const bool anchor_differs = ticket.anchor.values != ticket.init.values;
  if (anchor_differs) save_params(ticket.anchor, dir + "/anchor.tlpv");

  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["model"]["widths"] = ticket.spec.widths;
  j["model"]["activation"] = to_string(ticket.spec.activation);
  j["seed"] = ticket.seed;
  j["learning_rate"] = ticket.learning_rate;
  j["sparsity"] = ticket.mask.sparsity();
  nlohmann::ordered_json rounds = nlohmann::ordered_json::array();
  for (const RoundLog& r : ticket.rounds) {
    nlohmann::ordered_json row;
    row["round"] = r.round;
    row["sparsity"] = r.sparsity;
    row["train_loss"] = r.train_loss;
    row["train_error"] = r.train_error;
    row["test_error"] = r.test_error;
    row["dist_from_init"] = r.dist_from_init;
    rounds.push_back(row);
  }
  j["rounds"] = rounds;
  j["files"]["mask"] = file_entry(dir, "mask.bin");
  j["files"]["init"] = file_entry(dir, "init.tlpv");
  j["files"]["trained"] = file_entry(dir, "trained.tlpv");
  if (anchor_differs) j["files"]["anchor"] = file_entry(dir, "anchor.tlpv");

  std::ofstream f(dir + "/ticket.json");
  if (!f) throw DataError("cannot write '" + dir + "/ticket.json'");
  f << j.dump(2) << "\n";
  if (!f) throw DataError("write failed for '" + dir + "/ticket.json'");
}

TicketArtifact load_ticket(const std::string& dir) {
  std::ifstream f(dir + "/ticket.json");
  if (!f) throw DataError("cannot open '" + dir + "/ticket.json'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed ticket manifest in '" + dir +
                    "': " + e.what());
  }

  TicketArtifact ticket;
  try {
    ticket.spec.widths = j.at("model").at("widths").get<std::vector<std::size_t>>();
    ticket.spec.activation =
        activation_from_string(j.at("model").at("activation").get<std::string>());
    ticket.seed = j.at("seed").get<std::uint64_t>();
    ticket.learning_rate = j.at("learning_rate").get<double>();
    for (const auto& row : j.at("rounds")) {
      RoundLog r;
      r.round = row.at("round").get<std::size_t>();
      r.sparsity = row.at("sparsity").get<double>();
      r.train_loss = row.at("train_loss").get<double>();
      r.train_error = row.at("train_error").get<double>();
      r.test_error = row.at("test_error").get<double>();
      r.dist_from_init = row.at("dist_from_init").get<double>();
      ticket.rounds.push_back(r);
    }
    for (const auto& [name, entry] : j.at("files").items()) {
      const std::string rel = entry.at("path").get<std::string>();
      const std::string want = entry.at("fnv1a64").get<std::string>();
      const std::string got = digest_hex(file_digest(dir + "/" + rel));
      if (got != want) {
        throw DataError("digest mismatch for '" + dir + "/" + rel +
                        "' (manifest " + want + ", file " + got + ")");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("incomplete ticket manifest in '" + dir +
                    "': " + e.what());
  }
  ticket.spec.validate();

  ticket.mask = load_mask(dir + "/mask.bin");
  const RegistryPtr expected = make_registry(ticket.spec);
  if (!ticket.mask.registry || !(*ticket.mask.registry == *expected)) {
    throw DataError("mask registry does not match the model in '" + dir +
                    "'");
  }
  ticket.init = load_params(dir + "/init.tlpv", expected);
  ticket.trained = load_params(dir + "/trained.tlpv", expected);
  if (fs::exists(dir + "/anchor.tlpv")) {
    ticket.anchor = load_params(dir + "/anchor.tlpv", expected);
  } else {
    ticket.anchor = ticket.init;
  }
  return ticket;
}

}  // namespace ticketlab
