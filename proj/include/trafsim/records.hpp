#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace trafsim {

struct TripRecord {
  std::string vehicle_id;
  double depart_time = 0.0;  // actual insertion time
  std::optional<double> arrive_time;
  double distance = 0.0;

  bool en_route() const { return !arrive_time.has_value(); }
  double trip_time() const { return *arrive_time - depart_time; }
  bool operator==(const TripRecord&) const = default;
};

// One record per departed vehicle, in trip-table order.
struct TripLog {
  std::vector<TripRecord> records;

  bool operator==(const TripLog&) const = default;
};

// CSV: vehicle_id,depart_time,arrive_time,distance (empty arrive_time while en route).
void write_trip_log(std::ostream& out, const TripLog& log);
TripLog read_trip_log(std::istream& in, const std::string& source = "<stream>");
void save_trip_log(const std::filesystem::path& path, const TripLog& log);
TripLog load_trip_log(const std::filesystem::path& path);

struct RunMetrics {
  double wall_time = 0.0;  // seconds
  int partitions = 1;
  std::int64_t steps = 0;
  std::vector<std::int64_t> vehicle_steps;  // per partition
  std::int64_t message_bytes = 0;
  std::vector<std::int64_t> message_bytes_per_step;
  double exchange_time = 0.0;  // mean over workers of time spent in exchange()
  std::int64_t inserted = 0;
  std::int64_t arrivals = 0;
  std::int64_t en_route = 0;
  std::int64_t stopped_vehicle_steps = 0;    // speed 0 after the step
  std::int64_t congested_vehicle_steps = 0;  // speed 0 and outside the lane's exit zone
  std::int64_t follower_steps = 0;           // vehicle-steps taken on the grouped fast path
  std::int64_t groups_formed = 0;
  double grouping_time = 0.0;  // grouping bookkeeping (detection + disband checks), seconds

  std::int64_t total_vehicle_steps() const;
  double communication_fraction() const { return wall_time > 0 ? exchange_time / wall_time : 0.0; }
};

// One header line plus one data row.
void write_run_metrics(std::ostream& out, const RunMetrics& m);

}  // namespace trafsim
