#include "ticketlab/runlog.hpp"

#include "ticketlab/errors.hpp"

namespace ticketlab {

void RunLog::open(const std::string& path) {
  out_.open(path, std::ios::trunc);
  if (!out_) throw DataError("cannot write '" + path + "'");
  path_ = path;
}

void RunLog::record(const std::string& event,
                    const nlohmann::ordered_json& fields) {
  if (!out_.is_open()) throw DataError("run log is not open");
  nlohmann::ordered_json row;
  row["schema_version"] = schema_version;
  row["event"] = event;
  for (const auto& [key, value] : fields.items()) row[key] = value;
  out_ << row.dump() << "\n";
  if (!out_) throw DataError("write failed for '" + path_ + "'");
  out_.flush();
}

}  // namespace ticketlab
