#pragma once

// Virtual grouping of congested vehicles: a lane is cut into an exit zone at its end and
// `zones` equal body zones before it. A body zone whose vehicles are congested forms a group;
// the foremost member leads and the others copy its speed instead of running the full update.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "trafsim/errors.hpp"

namespace trafsim {

struct GroupingConfig {
  bool enabled = false;
  double alpha = 0.0;  // congestion threshold as a fraction of the speed limit
  int zones = 3;
  double exit_fraction = 0.10;
  double exit_cap = 50.0;  // meters

  void check() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("grouping alpha must be in [0,1]");
    if (zones < 1) throw InputError("grouping zones must be >= 1");
    if (!(exit_fraction > 0.0 && exit_fraction < 1.0)) throw InputError("grouping exit fraction must be in (0,1)");
    if (!(exit_cap > 0.0)) throw InputError("grouping exit cap must be positive");
  }
};

struct LaneZones {
  double lane_length = 0.0;
  double exit_length = 0.0;
  double zone_length = 0.0;
  int zones = 1;

  double exit_start() const { return lane_length - exit_length; }

  // Body zone holding front position `pos`, or -1 inside the exit zone.
  int zone_of(double pos) const {
    if (pos >= exit_start()) return -1;
    if (pos <= 0.0) return 0;
    return std::min(static_cast<int>(pos / zone_length), zones - 1);
  }
  double zone_begin(int z) const { return z * zone_length; }
  double zone_end(int z) const { return z + 1 == zones ? exit_start() : (z + 1) * zone_length; }
};

inline LaneZones lane_zones(double lane_length, const GroupingConfig& cfg) {
  LaneZones z;
  z.lane_length = lane_length;
  z.exit_length = std::min(cfg.exit_fraction * lane_length, cfg.exit_cap);
  z.zones = cfg.zones;
  z.zone_length = (lane_length - z.exit_length) / cfg.zones;
  return z;
}

// With alpha == 0 the test degenerates to "nobody moved"; otherwise mean speed < alpha * S.
inline bool zone_congested(double speed_sum, bool all_stopped, std::size_t count, double speed_limit,
                           const GroupingConfig& cfg) {
  if (count == 0) return false;
  if (cfg.alpha == 0.0) return all_stopped;
  return speed_sum / static_cast<double>(count) < cfg.alpha * speed_limit;
}

// Contiguous run [first, last) of a front-first lane list; `first` is the leader.
struct GroupRange {
  std::uint32_t first = 0;
  std::uint32_t last = 0;
  int zone = 0;

  std::uint32_t size() const { return last - first; }
  bool operator==(const GroupRange&) const = default;
};

// Appends the groups of one lane to `out`. `pos(i)` / `speed(i)` read the i-th vehicle of the
// lane in front-first order. Zones with fewer than two vehicles form no group.
template <typename PosFn, typename SpeedFn>
void detect_groups(std::size_t count, PosFn&& pos, SpeedFn&& speed, double speed_limit, const LaneZones& zones,
                   const GroupingConfig& cfg, std::vector<GroupRange>& out) {
  std::size_t i = 0;
  while (i < count && zones.zone_of(pos(i)) < 0) ++i;
  while (i < count) {
    const int z = zones.zone_of(pos(i));
    std::size_t j = i;
    double sum = 0.0;
    bool stopped = true;
    while (j < count && zones.zone_of(pos(j)) == z) {
      const double v = speed(j);
      sum += v;
      stopped = stopped && v == 0.0;
      ++j;
    }
    if (j - i >= 2 && zone_congested(sum, stopped, j - i, speed_limit, cfg)) {
      out.push_back(GroupRange{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), z});
    }
    i = j;
  }
}

struct LaneVehicle {
  std::int32_t id = -1;
  double pos = 0.0;
  double speed = 0.0;
};

struct Group {
  std::int32_t leader = -1;
  std::vector<std::int32_t> followers;  // front to back
  int zone = 0;
};

inline std::vector<Group> detect_groups(std::span<const LaneVehicle> lane, double speed_limit, const LaneZones& zones,
                                        const GroupingConfig& cfg) {
  std::vector<GroupRange> ranges;
  detect_groups(
      lane.size(), [&](std::size_t i) { return lane[i].pos; }, [&](std::size_t i) { return lane[i].speed; },
      speed_limit, zones, cfg, ranges);
  std::vector<Group> groups;
  for (const auto& r : ranges) {
    Group g;
    g.leader = lane[r.first].id;
    g.zone = r.zone;
    for (auto k = r.first + 1; k < r.last; ++k) g.followers.push_back(lane[k].id);
    groups.push_back(std::move(g));
  }
  return groups;
}

// Followers take the leader's new speed and advance by it.
template <typename Range, typename Access>
void follower_update(const Range& followers, double leader_speed, double dt, Access&& access) {
  for (auto f : followers) {
    auto& v = access(f);
    v.speed = leader_speed;
    v.pos += leader_speed * dt;
  }
}

inline void follower_update(std::span<LaneVehicle> followers, double leader_speed, double dt) {
  for (auto& v : followers) {
    v.speed = leader_speed;
    v.pos += leader_speed * dt;
  }
}

// End-of-step check: disband when the members no longer pass the congestion test or the
// leader's front has reached the exit zone.
inline bool disband_check(double leader_pos, double speed_sum, bool all_stopped, std::size_t members,
                          double speed_limit, const LaneZones& zones, const GroupingConfig& cfg) {
  if (leader_pos >= zones.exit_start()) return true;
  return !zone_congested(speed_sum, all_stopped, members, speed_limit, cfg);
}

inline bool disband_check(std::span<const LaneVehicle> members, double speed_limit, const LaneZones& zones,
                          const GroupingConfig& cfg) {
  if (members.empty()) return true;
  double sum = 0.0;
  bool stopped = true;
  for (const auto& m : members) {
    sum += m.speed;
    stopped = stopped && m.speed == 0.0;
  }
  return disband_check(members.front().pos, sum, stopped, members.size(), speed_limit, zones, cfg);
}

}  // namespace trafsim
