#pragma once

// Trip statistics and run-to-run comparison.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "trafsim/records.hpp"

namespace trafsim {

struct CdfPoint {
  double value = 0.0;
  double fraction = 0.0;  // share of samples <= value

  bool operator==(const CdfPoint&) const = default;
};

// Empirical CDF, one point per distinct value. Empty input gives an empty CDF.
std::vector<CdfPoint> empirical_cdf(std::vector<double> samples);
// Over arrived vehicles only; throws InputError when nobody arrived.
std::vector<CdfPoint> trip_time_cdf(const TripLog& log);
// Travel distance of vehicles still en route.
std::vector<CdfPoint> en_route_distance_cdf(const TripLog& log);

// kId pairs records by vehicle id; kRank sorts each population by value and pairs by rank
// (quantile-matched when the populations differ in size).
enum class CompareMode { kId, kRank };

struct VehicleDiff {
  std::string vehicle_id;  // base side id (rank mode: the base vehicle at that rank)
  bool arrived = true;     // trip time row, else distance row
  double base = 0.0;
  double other = 0.0;
  double rel_diff = 0.0;
};

struct ComparisonReport {
  CompareMode mode = CompareMode::kId;
  double mean_trip_diff = 0.0;
  double max_trip_diff = 0.0;
  double mean_distance_diff = 0.0;
  double max_distance_diff = 0.0;
  std::size_t matched_arrived = 0;
  std::size_t matched_en_route = 0;
  // Missing from one log, or arrived in one and en route in the other (rank mode: leftovers).
  std::size_t unmatched = 0;
  std::size_t zero_base = 0;  // pairs left out of the means because the base value is 0
  std::vector<VehicleDiff> rows;
};

// |other - base| / base per matched vehicle.
ComparisonReport compare(const TripLog& base, const TripLog& other, CompareMode mode = CompareMode::kId);

struct LoadReport {
  struct Entry {
    int partition = 0;
    std::int64_t vehicle_steps = 0;
  };
  std::vector<Entry> entries;  // heaviest first
  double imbalance = 1.0;      // max / mean
};

LoadReport partition_load_report(const RunMetrics& m);

void write_cdf_csv(std::ostream& out, const std::vector<CdfPoint>& cdf);
void write_compare_csv(std::ostream& out, const ComparisonReport& r);
void write_compare_summary(std::ostream& out, const ComparisonReport& r);
void write_load_csv(std::ostream& out, const LoadReport& r);

}  // namespace trafsim
