#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "trafsim/demand.hpp"
#include "trafsim/grouping.hpp"
#include "trafsim/kinematics.hpp"
#include "trafsim/netmodel.hpp"
#include "trafsim/records.hpp"

namespace trafsim {

using VehicleHandle = std::int32_t;  // index into the trip table

struct SimulationConfig {
  double step_length = 0.5;  // seconds
  double end_time = 3600.0;  // seconds, a multiple of step_length
  GroupingConfig grouping;   // grouping.enabled == false disables the fast path
  CfmParams cfm;             // cfm.tau is forced to step_length
  bool check_invariants = false;

  void check() const;
  std::int64_t total_steps() const;
};

// Network plus trip table with routes resolved to edge indexes. Immutable and shared by all
// engines of a run; the network and trips must outlive it.
class Scenario {
 public:
  Scenario(const RoadNetwork& net, const TripTable& trips);

  const RoadNetwork& network() const { return *net_; }
  const TripTable& trips() const { return *trips_; }
  std::size_t vehicle_count() const { return routes_.size(); }
  std::span<const EdgeIndex> route(VehicleHandle h) const { return routes_[h]; }
  const std::string& vehicle_id(VehicleHandle h) const { return trips_->vehicles[h].id; }
  std::optional<VehicleHandle> find_vehicle(std::string_view id) const;

  // Dense per-edge data used on the hot path.
  double length(EdgeIndex e) const { return length_[e]; }
  double speed_limit(EdgeIndex e) const { return speed_[e]; }
  int lanes(EdgeIndex e) const { return lanes_[e]; }

 private:
  const RoadNetwork* net_;
  const TripTable* trips_;
  std::vector<std::vector<EdgeIndex>> routes_;
  std::unordered_map<std::string, VehicleHandle> ids_;
  std::vector<double> length_;
  std::vector<double> speed_;
  std::vector<int> lanes_;
};

// Which replica of an edge a partition holds.
enum class EdgeRole : std::uint8_t { kAbsent, kInternal, kPrimary, kShadow };

struct Approach {
  VehicleHandle vehicle = -1;
  std::string_view edge_id;
  int lane = 0;
  LaneIndex target_lane = kNone;
  double eta = 0.0;  // seconds until the front bumper reaches the stop line
  bool controlled = false;
  bool green = true;
};

struct Grant {
  std::size_t approach = 0;  // index into the input span
  bool granted = false;
};

// Decides one junction's registered approaches. Order: earliest eta, then (edge id, lane).
// Controlled connections pass only on green; each receiving lane admits one vehicle per step.
std::vector<Grant> right_of_way(std::span<const Approach> approaches);

// Per-step bookkeeping consumed by the border synchronization layer.
struct StepEvents {
  std::vector<VehicleHandle> entered_shadow;  // primary vehicles now on a shadow edge
  struct Left {
    VehicleHandle vehicle;
    EdgeIndex edge;
  };
  std::vector<Left> left_primary;  // vehicles that left a primary border edge (crossing or arrival)
};

struct EngineStats {
  std::int64_t vehicle_steps = 0;
  std::int64_t inserted = 0;
  std::int64_t arrivals = 0;
  std::int64_t stopped_vehicle_steps = 0;
  std::int64_t congested_vehicle_steps = 0;
  std::int64_t follower_steps = 0;
  std::int64_t groups_formed = 0;
  std::int64_t groups_disbanded = 0;
  std::int64_t lanes_regrouped = 0;  // lanes whose groups were recomputed rather than reused
  double grouping_time = 0.0;
};

// Single-partition simulation state. Runs the whole network when built from a Scenario alone,
// or one partition's edges when given per-edge roles and the departures it owns.
class Engine {
 public:
  Engine(const Scenario& scenario, const SimulationConfig& config);
  Engine(const Scenario& scenario, const SimulationConfig& config, std::vector<EdgeRole> roles,
         std::vector<VehicleHandle> departures);

  // Advances one timestep: insert departures, group detection, plan, junction approaches,
  // movement, follower fast path, lane changes, disband checks.
  void step();

  std::int64_t clock() const { return clock_; }
  double time() const { return static_cast<double>(clock_) * config_.step_length; }
  bool finished() const { return clock_ >= config_.total_steps(); }

  const Scenario& scenario() const { return *scenario_; }
  const SimulationConfig& config() const { return config_; }
  const EngineStats& stats() const { return stats_; }
  EdgeRole edge_role(EdgeIndex e) const { return roles_[e]; }

  bool is_active(VehicleHandle h) const { return vehicles_[h].state == Presence::kActive; }
  bool is_shadow(VehicleHandle h) const { return is_active(h) && vehicles_[h].role == Role::kShadow; }
  bool is_primary(VehicleHandle h) const { return is_active(h) && vehicles_[h].role != Role::kShadow; }
  bool has_arrived(VehicleHandle h) const { return vehicles_[h].state == Presence::kArrived; }
  std::size_t active_count() const { return active_; }
  std::size_t primary_count() const;
  std::size_t pending_count() const;
  VehicleState vehicle_state(VehicleHandle h) const;
  std::span<const VehicleHandle> lane_vehicles(EdgeIndex e, int lane) const;
  std::vector<VehicleHandle> active_vehicles() const;

  // Trip record for a vehicle this engine is responsible for: arrived here or primary here.
  std::optional<TripRecord> trip_record(VehicleHandle h) const;
  TripLog trip_log() const;

  // Synchronization hooks.
  const StepEvents& events() const { return events_; }
  void demote_to_shadow(VehicleHandle h);
  struct Handover {
    VehicleHandle vehicle = -1;
    EdgeIndex edge = kNone;
    int lane = 0;
    double pos = 0.0;
    double speed = 0.0;
    int route_index = 0;
    double depart_time = 0.0;
    double distance = 0.0;
  };
  void accept_primary(const Handover& h);
  void update_shadow(VehicleHandle h, double pos, double speed, int lane);
  void remove_shadow(VehicleHandle h, EdgeIndex edge);
  // Restores lane ordering after a batch of shadow updates.
  void resort_lanes();
  void vehicle_route_position(VehicleHandle h, EdgeIndex& edge, int& route_index) const;
  double vehicle_distance(VehicleHandle h) const { return vehicles_[h].distance; }
  double vehicle_depart_time(VehicleHandle h) const { return vehicles_[h].depart_time; }

  // Structural checks: lane ordering, single occupancy, and (on the given roles) no overlap.
  std::vector<std::string> check_invariants(bool include_border_edges) const;

 private:
  enum class Presence : std::uint8_t { kPending, kActive, kArrived, kGone };

  struct Vehicle {
    EdgeIndex edge = kNone;
    int lane = 0;
    int route_index = 0;
    double pos = 0.0;
    double speed = 0.0;
    double depart_time = 0.0;
    double distance = 0.0;
    std::optional<double> arrive_time;
    VehicleHandle group_leader = -1;
    std::int64_t inserted_step = -1;  // has no previous-step speed while this equals clock_
    Role role = Role::kNormal;
    Presence state = Presence::kPending;
    // scratch for the current step
    double v_plan = 0.0;
    double prev_pos = 0.0;
    double prev_speed = 0.0;
    bool crossing = false;
    bool granted = false;
    LaneIndex target_lane = kNone;
  };

  // Lane list indexes [first, last) as of the last detection; the leader is at `first`.
  struct LaneGroup {
    std::uint32_t first = 0;
    std::uint32_t last = 0;
    VehicleHandle leader = -1;
    int zone = 0;
    std::vector<VehicleHandle> followers;
  };

  LaneIndex lane_slot(EdgeIndex e, int lane) const { return lane_offset_[e] + lane; }
  double vehicle_length() const { return config_.cfm.vehicle_length; }
  bool grouping_allowed(EdgeIndex e) const { return roles_[e] == EdgeRole::kInternal; }

  void signal_step();
  void insert_departures();
  bool try_insert(VehicleHandle h);
  void detect_groups_all();
  void plan_move();
  void resolve_junctions();
  void execute_movement();
  void update_followers();
  void change_lanes();
  void disband_groups();

  LaneNeed lane_need(const Vehicle& v) const;
  bool signal_green(ConnectionIndex c) const;
  void push_back_lane(VehicleHandle h, LaneIndex lane);
  void place_in_lane(VehicleHandle h, LaneIndex lane);
  // `pos`/`speed` are the state the lane last accounted the vehicle with.
  void erase_from_lane(VehicleHandle h, LaneIndex lane, double pos, double speed);

  // Grouping bookkeeping. Groups are recomputed every step, but a zone whose population,
  // positions-by-zone and congestion inputs did not change since the last detection yields the
  // same group, so only changed zones are re-evaluated. Per-zone vehicle and mover counts
  // (exit zone last) give each zone's index range without scanning the lane.
  std::size_t zone_stride() const { return static_cast<std::size_t>(config_.grouping.zones) + 1; }
  int zone_key(LaneIndex lane, double pos) const {
    const int z = zones_[lane_edge_[lane]].zone_of(pos);
    return z < 0 ? config_.grouping.zones : z;
  }
  void touch(LaneIndex lane) {
    if (!lane_touched_[lane]) {
      lane_touched_[lane] = 1;
      touched_lanes_.push_back(lane);
    }
  }
  void zone_add(LaneIndex lane, double pos, double speed, int delta);
  void note_move(LaneIndex lane, double old_pos, double pos, double old_speed, double speed);
  void regroup_lane(LaneIndex slot, EdgeIndex e);
  void detect_lane(LaneIndex slot, EdgeIndex e, std::vector<GroupRange>& out) const;
  void verify_groups() const;

  const Scenario* scenario_;
  SimulationConfig config_;
  std::vector<EdgeRole> roles_;
  std::vector<LaneIndex> lane_offset_;
  std::vector<EdgeIndex> lane_edge_;
  std::vector<std::vector<VehicleHandle>> lanes_;  // front first
  std::vector<Vehicle> vehicles_;
  std::vector<VehicleHandle> departures_;  // owned, in trip-table order
  std::size_t next_departure_ = 0;
  std::vector<std::vector<VehicleHandle>> waiting_;  // per depart edge, FIFO
  std::vector<std::size_t> waiting_head_;
  std::vector<EdgeIndex> waiting_edges_;  // edges with a non-empty queue, ascending
  std::size_t active_ = 0;
  std::int64_t clock_ = 0;
  EngineStats stats_;
  StepEvents events_;
  std::vector<LaneZones> zones_;  // per edge
  std::vector<LaneIndex> dirty_lanes_;  // lanes needing a resort after shadow updates

  // step scratch
  std::vector<const std::string*> phase_state_;  // per signal program
  std::vector<Approach> approaches_;
  std::vector<JunctionIndex> approach_junction_;
  std::vector<std::size_t> order_scratch_;
  std::vector<Approach> batch_scratch_;
  std::vector<VehicleHandle> crossers_;
  std::vector<VehicleHandle> arrivals_;

  // grouping state
  std::vector<std::vector<LaneGroup>> lane_groups_;
  std::vector<std::uint32_t> zone_count_;   // lanes x (zones + 1)
  std::vector<std::uint32_t> zone_movers_;  // vehicles with speed != 0
  std::vector<std::uint8_t> zone_dirty_;
  std::vector<std::uint32_t> lane_shift_;  // front removals since detection
  std::vector<std::uint8_t> lane_touched_;
  std::vector<LaneIndex> touched_lanes_;
  // lanes that received a fresh vehicle this step / last step, with its insertion position
  std::vector<std::pair<LaneIndex, double>> fresh_now_, fresh_prev_;
  std::vector<LaneIndex> grouped_lanes_;     // lanes holding groups, unordered
  std::vector<std::int32_t> grouped_index_;  // position in grouped_lanes_, or -1
  std::int64_t group_total_ = 0;
  std::vector<LaneGroup> regroup_scratch_;
};

struct RunResult {
  TripLog log;
  RunMetrics metrics;
};

// Sequential baseline over the whole network.
RunResult run(const RoadNetwork& net, const TripTable& trips, const SimulationConfig& config);

}  // namespace trafsim
