#pragma once

// Car-following (Krauss-style safe speed, no driver imperfection) and strategic lane changing.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace trafsim {

struct CfmParams {
  double accel = 2.6;           // m/s^2
  double decel = 4.5;           // m/s^2
  double tau = 0.5;             // s, equals the step length
  double min_gap = 2.5;         // m
  double vehicle_length = 5.0;  // m
  double sigma = 0.0;           // driver imperfection, always 0

  bool operator==(const CfmParams&) const = default;
};

enum class Role : unsigned char { kNormal, kPrimary, kShadow };

struct VehicleState {
  std::string id;
  std::string edge;
  int lane = 0;
  double pos = 0.0;    // front bumper, meters from lane start
  double speed = 0.0;  // m/s
  int route_index = 0;
  std::optional<std::string> leader_link;  // set on grouped followers
  Role role = Role::kNormal;
};

namespace kin {

// Highest speed from which a vehicle can still stop behind an obstacle `space` meters ahead
// (moving at `v_obstacle`) when both brake at `decel`, given one reaction step `tau`.
inline double krauss_speed(double v_obstacle, double space, double decel, double tau) {
  const double bt = decel * tau;
  const double radicand = bt * bt + v_obstacle * v_obstacle + 2.0 * decel * std::max(space, 0.0);
  return std::max(0.0, -bt + std::sqrt(radicand));
}

}  // namespace kin

// `gap` is bumper-to-bumper distance to the leader; min_gap is kept as a standstill buffer.
inline double safe_speed(double v_leader, double gap, const CfmParams& p) {
  return kin::krauss_speed(v_leader, gap - p.min_gap, p.decel, p.tau);
}

// Speed that stops the front bumper at a line `distance` meters ahead.
inline double stop_speed(double distance, const CfmParams& p) {
  return kin::krauss_speed(0.0, distance, p.decel, p.tau);
}

inline double next_speed(double speed, double v_limit, double v_safe, const CfmParams& p, double dt) {
  return std::max(0.0, std::min({speed + p.accel * dt, v_limit, v_safe}));
}

enum class LaneNeed { kNone, kLeft, kRight };
enum class LaneDecision { kStay, kLeft, kRight };

// Neighbour situation in one lane, relative to the deciding vehicle's position.
struct LaneContext {
  bool has_leader = false;
  double leader_gap = std::numeric_limits<double>::infinity();  // from our front to leader's rear
  double leader_speed = 0.0;
  bool has_follower = false;
  double follower_gap = std::numeric_limits<double>::infinity();  // from follower's front to our rear
  double follower_speed = 0.0;
};

// A vehicle at `speed` may stay behind an obstacle if one step of braking at `decel`
// brings it down to the safe speed for that gap.
inline bool can_follow(double speed, double v_leader, double gap, const CfmParams& p) {
  if (gap < p.min_gap) return false;
  return speed - p.decel * p.tau <= safe_speed(v_leader, gap, p) + 1e-9;
}

// Strategic-only: move toward `need` when it is safe for us w.r.t. the new leader and for the
// new follower w.r.t. us; otherwise stay.
inline LaneDecision lane_change_decision(double speed, const LaneContext& /*current*/, const LaneContext& target,
                                         LaneNeed need, const CfmParams& p) {
  if (need == LaneNeed::kNone) return LaneDecision::kStay;
  if (target.has_leader && !can_follow(speed, target.leader_speed, target.leader_gap, p)) {
    return LaneDecision::kStay;
  }
  if (target.has_follower && !can_follow(target.follower_speed, speed, target.follower_gap, p)) {
    return LaneDecision::kStay;
  }
  return need == LaneNeed::kLeft ? LaneDecision::kLeft : LaneDecision::kRight;
}

}  // namespace trafsim
