#include "trafsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "trafsim/errors.hpp"
#include "trafsim/text_io.hpp"

namespace trafsim {

std::vector<CdfPoint> empirical_cdf(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  std::vector<CdfPoint> cdf;
  const auto n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i + 1 < samples.size() && samples[i + 1] == samples[i]) continue;
    cdf.push_back({samples[i], static_cast<double>(i + 1) / n});
  }
  return cdf;
}

std::vector<CdfPoint> trip_time_cdf(const TripLog& log) {
  std::vector<double> t;
  for (const auto& r : log.records) {
    if (!r.en_route()) t.push_back(r.trip_time());
  }
  if (t.empty()) throw InputError("trip time CDF needs at least one arrived vehicle");
  return empirical_cdf(std::move(t));
}

std::vector<CdfPoint> en_route_distance_cdf(const TripLog& log) {
  std::vector<double> d;
  for (const auto& r : log.records) {
    if (r.en_route()) d.push_back(r.distance);
  }
  return empirical_cdf(std::move(d));
}

namespace {

struct Accumulator {
  double sum = 0.0;
  double max = 0.0;
  std::size_t n = 0;

  void add(double d) {
    sum += d;
    max = std::max(max, d);
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
};

void add_row(ComparisonReport& rep, Accumulator& acc, const std::string& id, bool arrived, double base,
             double other) {
  VehicleDiff d{id, arrived, base, other, 0.0};
  if (base == 0.0) {
    ++rep.zero_base;
    d.rel_diff = base == other ? 0.0 : std::numeric_limits<double>::infinity();
  } else {
    d.rel_diff = std::abs(other - base) / base;
    acc.add(d.rel_diff);
  }
  if (arrived) {
    ++rep.matched_arrived;
  } else {
    ++rep.matched_en_route;
  }
  rep.rows.push_back(std::move(d));
}

}  // namespace

ComparisonReport compare(const TripLog& base, const TripLog& other, CompareMode mode) {
  ComparisonReport rep;
  rep.mode = mode;
  Accumulator trip, dist;
  if (mode == CompareMode::kId) {
    std::unordered_map<std::string, const TripRecord*> by_id;
    for (const auto& r : other.records) by_id.emplace(r.vehicle_id, &r);
    std::size_t found = 0;
    for (const auto& b : base.records) {
      auto it = by_id.find(b.vehicle_id);
      if (it == by_id.end()) {
        ++rep.unmatched;
        continue;
      }
      ++found;
      const TripRecord& o = *it->second;
      if (b.en_route() != o.en_route()) {
        ++rep.unmatched;
      } else if (!b.en_route()) {
        add_row(rep, trip, b.vehicle_id, true, b.trip_time(), o.trip_time());
      } else {
        add_row(rep, dist, b.vehicle_id, false, b.distance, o.distance);
      }
    }
    rep.unmatched += by_id.size() - found;
  } else {
    auto split = [](const TripLog& log, bool arrived) {
      std::vector<std::pair<double, const std::string*>> v;
      for (const auto& r : log.records) {
        if (r.en_route() != arrived) v.emplace_back(arrived ? r.trip_time() : r.distance, &r.vehicle_id);
      }
      std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return *a.second < *b.second;
      });
      return v;
    };
    for (bool arrived : {true, false}) {
      const auto b = split(base, arrived);
      const auto o = split(other, arrived);
      const auto n = std::min(b.size(), o.size());
      // The larger side is sampled at the smaller side's quantiles, so a few extra vehicles
      // at one end do not shift every pair.
      auto at = [n](std::size_t i, std::size_t size) {
        if (size == n || n == 1) return size == n ? i : std::size_t{0};
        return static_cast<std::size_t>(
            std::llround(static_cast<double>(i) * static_cast<double>(size - 1) / static_cast<double>(n - 1)));
      };
      for (std::size_t i = 0; i < n; ++i) {
        const auto& bb = b[at(i, b.size())];
        const auto& oo = o[at(i, o.size())];
        add_row(rep, arrived ? trip : dist, *bb.second, arrived, bb.first, oo.first);
      }
      rep.unmatched += std::max(b.size(), o.size()) - n;
    }
  }
  rep.mean_trip_diff = trip.mean();
  rep.max_trip_diff = trip.max;
  rep.mean_distance_diff = dist.mean();
  rep.max_distance_diff = dist.max;
  return rep;
}

LoadReport partition_load_report(const RunMetrics& m) {
  LoadReport r;
  for (std::size_t p = 0; p < m.vehicle_steps.size(); ++p) r.entries.push_back({static_cast<int>(p), m.vehicle_steps[p]});
  std::stable_sort(r.entries.begin(), r.entries.end(),
                   [](const LoadReport::Entry& a, const LoadReport::Entry& b) { return a.vehicle_steps > b.vehicle_steps; });
  if (!r.entries.empty()) {
    double total = 0.0;
    for (const auto& e : r.entries) total += static_cast<double>(e.vehicle_steps);
    const double mean = total / static_cast<double>(r.entries.size());
    r.imbalance = mean > 0.0 ? static_cast<double>(r.entries.front().vehicle_steps) / mean : 1.0;
  }
  return r;
}

void write_cdf_csv(std::ostream& out, const std::vector<CdfPoint>& cdf) {
  out << "time,fraction\n";
  for (const auto& p : cdf) out << text::format_double(p.value) << ',' << text::format_double(p.fraction) << '\n';
}

void write_compare_csv(std::ostream& out, const ComparisonReport& r) {
  out << "vehicle_id,base,other,rel_diff\n";
  for (const auto& d : r.rows) {
    out << d.vehicle_id << ',' << text::format_double(d.base) << ',' << text::format_double(d.other) << ','
        << text::format_double(d.rel_diff) << '\n';
  }
}

void write_compare_summary(std::ostream& out, const ComparisonReport& r) {
  out << "mode,mean_trip_diff,max_trip_diff,mean_distance_diff,max_distance_diff,matched_arrived,"
         "matched_en_route,unmatched,zero_base\n";
  out << (r.mode == CompareMode::kId ? "id" : "rank") << ',' << text::format_double(r.mean_trip_diff) << ','
      << text::format_double(r.max_trip_diff) << ',' << text::format_double(r.mean_distance_diff) << ','
      << text::format_double(r.max_distance_diff) << ',' << r.matched_arrived << ',' << r.matched_en_route << ','
      << r.unmatched << ',' << r.zero_base << '\n';
}

void write_load_csv(std::ostream& out, const LoadReport& r) {
  out << "partition,vehicle_steps\n";
  for (const auto& e : r.entries) out << e.partition << ',' << e.vehicle_steps << '\n';
}

}  // namespace trafsim
