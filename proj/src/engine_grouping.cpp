// Grouping side of the engine: change tracking, per-step (re)detection, the follower fast
// path and the end-of-step disband checks.

#include <algorithm>
#include <chrono>
#include <limits>

#include "trafsim/engine.hpp"
#include "trafsim/errors.hpp"

namespace trafsim {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

void Engine::zone_add(LaneIndex lane, double pos, double speed, int delta) {
  const int z = zone_key(lane, pos);
  const std::size_t cell = static_cast<std::size_t>(lane) * zone_stride() + static_cast<std::size_t>(z);
  zone_count_[cell] += static_cast<std::uint32_t>(delta);
  if (speed != 0.0) zone_movers_[cell] += static_cast<std::uint32_t>(delta);
  if (z < config_.grouping.zones) zone_dirty_[cell] = 1;
  touch(lane);
}

void Engine::note_move(LaneIndex lane, double old_pos, double pos, double old_speed, double speed) {
  const bool was_moving = old_speed != 0.0;
  const bool moving = speed != 0.0;
  // alpha == 0 only looks at "stopped or not"; otherwise every speed enters the zone mean.
  const bool exact_speed = config_.grouping.alpha != 0.0;
  const bool speed_relevant = was_moving != moving || (exact_speed && old_speed != speed);
  int z = -1;
  if (old_pos == pos) {
    if (!speed_relevant) return;
    z = zone_key(lane, pos);
  } else {
    z = zone_key(lane, pos);
    if (z != zone_key(lane, old_pos)) {
      zone_add(lane, old_pos, old_speed, -1);
      zone_add(lane, pos, speed, +1);
      return;
    }
    if (!speed_relevant) return;
  }
  const std::size_t cell = static_cast<std::size_t>(lane) * zone_stride() + static_cast<std::size_t>(z);
  if (was_moving != moving) zone_movers_[cell] += moving ? 1u : static_cast<std::uint32_t>(-1);
  if (z < config_.grouping.zones) zone_dirty_[cell] = 1;
  touch(lane);
}

void Engine::regroup_lane(LaneIndex slot, EdgeIndex e) {
  const auto& list = lanes_[slot];
  const int k = config_.grouping.zones;
  const std::size_t base = static_cast<std::size_t>(slot) * zone_stride();
  const std::uint32_t* count = &zone_count_[base];
  const std::uint32_t* movers = &zone_movers_[base];
  std::uint8_t* dirty = &zone_dirty_[base];
  lane_shift_[slot] = 0;
  auto& groups = lane_groups_[slot];
  auto& next = regroup_scratch_;
  next.clear();
  const double limit = scenario_->speed_limit(e);
  // Lane lists run front first: exit zone, then body zones k-1 down to 0.
  std::uint32_t first = count[k];
  for (int z = k - 1; z >= 0; --z) {
    const std::uint32_t n = count[z];
    auto old = std::find_if(groups.begin(), groups.end(), [&](const LaneGroup& g) { return g.zone == z; });
    if (!dirty[z]) {
      if (old != groups.end()) {
        old->first = first;
        old->last = first + n;
        next.push_back(std::move(*old));
      }
      first += n;
      continue;
    }
    dirty[z] = 0;
    if (old != groups.end()) {
      for (VehicleHandle f : old->followers) vehicles_[f].group_leader = -1;
    }
    bool congested = false;
    if (n >= 2) {
      if (config_.grouping.alpha == 0.0) {
        congested = movers[z] == 0;
      } else {
        double sum = 0.0;
        for (std::uint32_t i = first; i < first + n; ++i) sum += vehicles_[list[i]].speed;
        congested = zone_congested(sum, movers[z] == 0, n, limit, config_.grouping);
      }
      // A vehicle inserted this step has no previous speed to judge, so its zone waits a step.
      for (std::uint32_t i = first; congested && i < first + n; ++i) {
        congested = vehicles_[list[i]].inserted_step != clock_;
      }
    }
    if (congested) {
      LaneGroup g;
      g.first = first;
      g.last = first + n;
      g.leader = list[first];
      g.zone = z;
      g.followers.assign(list.begin() + first + 1, list.begin() + first + n);
      for (VehicleHandle f : g.followers) vehicles_[f].group_leader = g.leader;
      next.push_back(std::move(g));
    }
    first += n;
  }
  groups.swap(next);
  ++stats_.lanes_regrouped;
}

void Engine::detect_groups_all() {
  if (!config_.grouping.enabled) return;
  const auto t0 = Clock::now();
  // Zones held back for a fresh vehicle last step get another look even if nothing moved.
  for (const auto& [slot, pos] : fresh_prev_) {
    const int z = zone_key(slot, pos);
    if (z < config_.grouping.zones) zone_dirty_[static_cast<std::size_t>(slot) * zone_stride() + static_cast<std::size_t>(z)] = 1;
    touch(slot);
  }
  fresh_prev_.swap(fresh_now_);
  fresh_now_.clear();
  for (LaneIndex slot : touched_lanes_) {
    lane_touched_[slot] = 0;
    const EdgeIndex e = lane_edge_[slot];
    if (!grouping_allowed(e)) {
      lane_shift_[slot] = 0;
      const std::size_t base = static_cast<std::size_t>(slot) * zone_stride();
      std::fill_n(zone_dirty_.begin() + static_cast<std::ptrdiff_t>(base), zone_stride(), std::uint8_t{0});
      continue;
    }
    group_total_ -= static_cast<std::int64_t>(lane_groups_[slot].size());
    regroup_lane(slot, e);
    const bool has = !lane_groups_[slot].empty();
    group_total_ += static_cast<std::int64_t>(lane_groups_[slot].size());
    auto& idx = grouped_index_[slot];
    if (has && idx < 0) {
      idx = static_cast<std::int32_t>(grouped_lanes_.size());
      grouped_lanes_.push_back(slot);
    } else if (!has && idx >= 0) {
      grouped_index_[grouped_lanes_.back()] = idx;
      grouped_lanes_[static_cast<std::size_t>(idx)] = grouped_lanes_.back();
      grouped_lanes_.pop_back();
      idx = -1;
    }
  }
  touched_lanes_.clear();
  stats_.groups_formed += group_total_;
  stats_.grouping_time += seconds_since(t0);
  if (config_.check_invariants) verify_groups();
}

void Engine::detect_lane(LaneIndex slot, EdgeIndex e, std::vector<GroupRange>& out) const {
  out.clear();
  const auto& list = lanes_[slot];
  detect_groups(
      list.size(), [&](std::size_t i) { return vehicles_[list[i]].pos; },
      [&](std::size_t i) {
        const auto& v = vehicles_[list[i]];
        return v.inserted_step == clock_ ? std::numeric_limits<double>::infinity() : v.speed;
      },
      scenario_->speed_limit(e), zones_[e], config_.grouping,
      out);
}

// Compares the incrementally maintained groups with a from-scratch detection.
void Engine::verify_groups() const {
  std::vector<GroupRange> fresh;
  std::vector<VehicleHandle> expect;
  const auto ne = static_cast<EdgeIndex>(roles_.size());
  for (EdgeIndex e = 0; e < ne; ++e) {
    if (!grouping_allowed(e)) continue;
    for (int l = 0; l < scenario_->lanes(e); ++l) {
      const LaneIndex slot = lane_slot(e, l);
      const auto& list = lanes_[slot];
      const auto where = "lane " + std::to_string(l) + " of edge '" + scenario_->network().edges()[e].id + "'";
      std::vector<std::uint32_t> count(zone_stride(), 0), movers(zone_stride(), 0);
      for (VehicleHandle h : list) {
        const auto z = static_cast<std::size_t>(zone_key(slot, vehicles_[h].pos));
        ++count[z];
        if (vehicles_[h].speed != 0.0) ++movers[z];
      }
      const std::size_t base = static_cast<std::size_t>(slot) * zone_stride();
      if (!std::equal(count.begin(), count.end(), zone_count_.begin() + static_cast<std::ptrdiff_t>(base)) ||
          !std::equal(movers.begin(), movers.end(), zone_movers_.begin() + static_cast<std::ptrdiff_t>(base))) {
        throw InvariantViolation("zone counts out of date on " + where);
      }
      detect_lane(slot, e, fresh);
      const auto& groups = lane_groups_[slot];
      const bool same = std::equal(fresh.begin(), fresh.end(), groups.begin(), groups.end(),
                                   [&](const GroupRange& a, const LaneGroup& b) {
                                     return a.first == b.first && a.last == b.last && list[a.first] == b.leader &&
                                            b.followers.size() + 1 == a.size();
                                   });
      expect.assign(list.size(), -1);
      for (const auto& g : fresh) {
        for (auto i = g.first + 1; i < g.last; ++i) expect[i] = list[g.first];
      }
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (vehicles_[list[i]].group_leader != expect[i]) throw InvariantViolation("stale group link on " + where);
      }
      if (!same) throw InvariantViolation("stale groups on " + where);
    }
  }
}

void Engine::update_followers() {
  if (grouped_lanes_.empty()) return;
  const double dt = config_.step_length;
  const double vlen = vehicle_length();
  const bool stopped_groups = config_.grouping.alpha == 0.0;
  for (LaneIndex slot : grouped_lanes_) {
    const EdgeIndex e = lane_edge_[slot];
    for (const auto& g : lane_groups_[slot]) {
      const auto n = static_cast<std::int64_t>(g.followers.size());
      const auto& leader = vehicles_[g.leader];
      const double lv = leader.speed;
      stats_.follower_steps += n;
      if (lv == 0.0 && stopped_groups) {
        // Everyone was stationary at formation and stays put.
        stats_.stopped_vehicle_steps += n;
        stats_.congested_vehicle_steps += n;
        continue;
      }
      const double exit_start = zones_[e].exit_start();
      // A leader that left the lane no longer bounds the first follower.
      const bool leader_here = leader.state == Presence::kActive && lane_slot(leader.edge, leader.lane) == slot;
      double limit = leader_here ? leader.pos - vlen : scenario_->length(e);
      for (VehicleHandle h : g.followers) {
        auto& v = vehicles_[h];
        const double old = v.pos;
        const double old_speed = v.speed;
        double target = old + lv * dt;
        if (target > limit) {
          target = std::max(limit, old);
          v.speed = (target - old) / dt;
        } else {
          v.speed = lv;
        }
        v.pos = target;
        v.distance += target - old;
        note_move(slot, old, target, old_speed, v.speed);
        if (v.speed == 0.0) {
          ++stats_.stopped_vehicle_steps;
          if (target < exit_start) ++stats_.congested_vehicle_steps;
        }
        limit = target - vlen;
      }
    }
  }
}

void Engine::disband_groups() {
  if (grouped_lanes_.empty()) return;
  const auto t0 = Clock::now();
  // Groups in zones untouched this step still pass; only changed zones are checked.
  for (LaneIndex slot : touched_lanes_) {
    const auto& groups = lane_groups_[slot];
    if (groups.empty()) continue;
    const std::size_t base = static_cast<std::size_t>(slot) * zone_stride();
    const EdgeIndex e = lane_edge_[slot];
    for (const auto& g : groups) {
      if (!zone_dirty_[base + static_cast<std::size_t>(g.zone)]) continue;
      const auto& leader = vehicles_[g.leader];
      if (leader.state != Presence::kActive || lane_slot(leader.edge, leader.lane) != slot) {
        ++stats_.groups_disbanded;
        continue;
      }
      double sum = leader.speed;
      bool stopped = leader.speed == 0.0;
      for (VehicleHandle f : g.followers) {
        sum += vehicles_[f].speed;
        stopped = stopped && vehicles_[f].speed == 0.0;
      }
      if (disband_check(leader.pos, sum, stopped, g.followers.size() + 1, scenario_->speed_limit(e), zones_[e],
                        config_.grouping)) {
        ++stats_.groups_disbanded;
      }
    }
  }
  stats_.grouping_time += seconds_since(t0);
}

}  // namespace trafsim
