#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

namespace ticketlab {

// Append-only JSONL run log. One record per event, every record carrying
// the schema version. Deliberately no timestamps or hostnames: a re-run
// with the same config and seeds must reproduce the file byte for byte.
class RunLog {
 public:
  static constexpr int schema_version = 1;

  RunLog() = default;
  explicit RunLog(const std::string& path) { open(path); }

  void open(const std::string& path);
  bool is_open() const { return out_.is_open(); }
  const std::string& path() const { return path_; }

  void record(const std::string& event, const nlohmann::ordered_json& fields);

 private:
  std::ofstream out_;
  std::string path_;
};

}  // namespace ticketlab
