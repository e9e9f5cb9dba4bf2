#include "trafsim/records.hpp"

#include <fstream>
#include <numeric>
#include <ostream>
#include <string>

#include "trafsim/errors.hpp"
#include "trafsim/text_io.hpp"

namespace trafsim {

void write_trip_log(std::ostream& out, const TripLog& log) {
  out << "vehicle_id,depart_time,arrive_time,distance\n";
  for (const auto& r : log.records) {
    out << r.vehicle_id << ',' << text::format_double(r.depart_time) << ',';
    if (r.arrive_time) out << text::format_double(*r.arrive_time);
    out << ',' << text::format_double(r.distance) << '\n';
  }
}

TripLog read_trip_log(std::istream& in, const std::string& source) {
  TripLog log;
  std::string line;
  text::Location loc{source, 0};
  while (std::getline(in, line)) {
    ++loc.line;
    auto sv = text::trim(line);
    if (sv.empty()) continue;
    if (loc.line == 1 && sv.starts_with("vehicle_id")) continue;
    auto f = text::split(sv, ',');
    if (f.size() != 4) text::fail(loc, "trip log record needs 4 fields");
    TripRecord r;
    r.vehicle_id = std::string(f[0]);
    r.depart_time = text::parse_double(f[1], loc, "depart_time");
    if (!f[2].empty()) r.arrive_time = text::parse_double(f[2], loc, "arrive_time");
    r.distance = text::parse_double(f[3], loc, "distance");
    log.records.push_back(std::move(r));
  }
  return log;
}

void save_trip_log(const std::filesystem::path& path, const TripLog& log) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write trip log '" + path.string() + "'");
  write_trip_log(out, log);
}

TripLog load_trip_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trip log '" + path.string() + "'");
  return read_trip_log(in, path.string());
}

std::int64_t RunMetrics::total_vehicle_steps() const {
  return std::accumulate(vehicle_steps.begin(), vehicle_steps.end(), std::int64_t{0});
}

void write_run_metrics(std::ostream& out, const RunMetrics& m) {
  out << "wall_time,partitions,steps,vehicle_steps,inserted,arrivals,en_route,message_bytes,exchange_time,"
         "communication_fraction,stopped_vehicle_steps,congested_vehicle_steps,follower_steps,groups_formed,"
         "grouping_time\n";
  out << text::format_double(m.wall_time) << ',' << m.partitions << ',' << m.steps << ',' << m.total_vehicle_steps()
      << ',' << m.inserted << ',' << m.arrivals << ',' << m.en_route << ',' << m.message_bytes << ','
      << text::format_double(m.exchange_time) << ',' << text::format_double(m.communication_fraction()) << ','
      << m.stopped_vehicle_steps << ',' << m.congested_vehicle_steps << ',' << m.follower_steps << ','
      << m.groups_formed << ',' << text::format_double(m.grouping_time) << '\n';
}

}  // namespace trafsim
