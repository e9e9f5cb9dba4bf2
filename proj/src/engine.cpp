#include "trafsim/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "trafsim/errors.hpp"

namespace trafsim {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

void SimulationConfig::check() const {
  if (!(step_length > 0.0) || !std::isfinite(step_length)) throw InputError("step length must be positive");
  if (!(end_time >= 0.0) || !std::isfinite(end_time)) throw InputError("end time must be non-negative");
  const double steps = end_time / step_length;
  if (std::abs(steps - std::round(steps)) > 1e-6) throw InputError("end time must be a multiple of the step length");
  if (!(cfm.accel > 0.0) || !(cfm.decel > 0.0) || !(cfm.vehicle_length > 0.0) || !(cfm.min_gap >= 0.0)) {
    throw InputError("car-following parameters must be positive");
  }
  if (cfm.sigma != 0.0) throw InputError("driver imperfection (sigma) must be 0");
  if (grouping.enabled) grouping.check();
}

std::int64_t SimulationConfig::total_steps() const {
  return std::llround(end_time / step_length);
}

Scenario::Scenario(const RoadNetwork& net, const TripTable& trips) : net_(&net), trips_(&trips) {
  if (!net.finalized()) throw InputError("network is not finalized");
  check_trips(net, trips);
  routes_.reserve(trips.vehicles.size());
  for (std::size_t i = 0; i < trips.vehicles.size(); ++i) {
    const auto& v = trips.vehicles[i];
    std::vector<EdgeIndex> r;
    r.reserve(v.route.size());
    for (const auto& id : v.route) r.push_back(net.edge_index(id));
    routes_.push_back(std::move(r));
    ids_.emplace(v.id, static_cast<VehicleHandle>(i));
  }
  for (const auto& e : net.edges()) {
    length_.push_back(e.length);
    speed_.push_back(e.speed_limit);
    lanes_.push_back(e.lanes);
  }
}

std::optional<VehicleHandle> Scenario::find_vehicle(std::string_view id) const {
  auto it = ids_.find(std::string(id));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::vector<Grant> right_of_way(std::span<const Approach> approaches) {
  std::vector<std::size_t> order(approaches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = approaches[a];
    const auto& y = approaches[b];
    if (x.eta != y.eta) return x.eta < y.eta;
    if (x.edge_id != y.edge_id) return x.edge_id < y.edge_id;
    if (x.lane != y.lane) return x.lane < y.lane;
    return a < b;
  });
  std::vector<Grant> grants;
  grants.reserve(order.size());
  std::vector<LaneIndex> used;
  for (std::size_t idx : order) {
    const auto& a = approaches[idx];
    bool ok = !(a.controlled && !a.green);
    if (ok && std::find(used.begin(), used.end(), a.target_lane) != used.end()) ok = false;
    if (ok) used.push_back(a.target_lane);
    grants.push_back(Grant{idx, ok});
  }
  return grants;
}

Engine::Engine(const Scenario& scenario, const SimulationConfig& config)
    : Engine(scenario, config, std::vector<EdgeRole>(scenario.network().edges().size(), EdgeRole::kInternal), [&] {
        std::vector<VehicleHandle> all(scenario.vehicle_count());
        std::iota(all.begin(), all.end(), VehicleHandle{0});
        return all;
      }()) {}

Engine::Engine(const Scenario& scenario, const SimulationConfig& config, std::vector<EdgeRole> roles,
               std::vector<VehicleHandle> departures)
    : scenario_(&scenario), config_(config), roles_(std::move(roles)), departures_(std::move(departures)) {
  config_.check();
  config_.cfm.tau = config_.step_length;
  const auto& net = scenario.network();
  const auto ne = net.edges().size();
  if (roles_.size() != ne) throw InputError("edge role vector does not match the network");
  lane_offset_.resize(ne);
  for (std::size_t e = 0; e < ne; ++e) lane_offset_[e] = net.lane_offset(static_cast<EdgeIndex>(e));
  lanes_.assign(static_cast<std::size_t>(net.total_lanes()), {});
  lane_edge_.resize(lanes_.size());
  for (std::size_t e = 0; e < ne; ++e) {
    for (int l = 0; l < net.edges()[e].lanes; ++l) lane_edge_[lane_offset_[e] + l] = static_cast<EdgeIndex>(e);
  }
  lane_groups_.assign(lanes_.size(), {});
  if (config_.grouping.enabled) {
    const std::size_t cells = lanes_.size() * zone_stride();
    zone_count_.assign(cells, 0);
    zone_movers_.assign(cells, 0);
    zone_dirty_.assign(cells, 0);
    lane_shift_.assign(lanes_.size(), 0);
    lane_touched_.assign(lanes_.size(), 0);
    grouped_index_.assign(lanes_.size(), -1);
  }
  vehicles_.assign(scenario.vehicle_count(), Vehicle{});
  waiting_.assign(ne, {});
  waiting_head_.assign(ne, 0);
  zones_.reserve(ne);
  for (std::size_t e = 0; e < ne; ++e) zones_.push_back(lane_zones(scenario.length(static_cast<EdgeIndex>(e)), config_.grouping));
  std::sort(departures_.begin(), departures_.end());
  for (VehicleHandle h : departures_) {
    const EdgeIndex first = scenario.route(h).front();
    if (roles_[first] == EdgeRole::kAbsent || roles_[first] == EdgeRole::kPrimary) {
      throw InputError("vehicle '" + scenario.vehicle_id(h) + "' departs on an edge this partition does not own");
    }
  }
}

void Engine::step() {
  events_.entered_shadow.clear();
  events_.left_primary.clear();
  signal_step();
  insert_departures();
  detect_groups_all();
  plan_move();
  resolve_junctions();
  execute_movement();
  update_followers();
  change_lanes();
  disband_groups();
  ++clock_;
  if (config_.check_invariants) {
    auto problems = check_invariants(false);
    if (!problems.empty()) {
      throw InvariantViolation("step " + std::to_string(clock_) + ": " + problems.front());
    }
  }
}

void Engine::insert_departures() {
  const double now = time();
  while (next_departure_ < departures_.size()) {
    const VehicleHandle h = departures_[next_departure_];
    if (scenario_->trips().vehicles[h].depart_time > now + 1e-9) break;
    const EdgeIndex e = scenario_->route(h).front();
    if (waiting_[e].size() == waiting_head_[e]) {
      waiting_edges_.insert(std::lower_bound(waiting_edges_.begin(), waiting_edges_.end(), e), e);
    }
    waiting_[e].push_back(h);
    ++next_departure_;
  }
  std::size_t keep = 0;
  for (EdgeIndex e : waiting_edges_) {
    auto& queue = waiting_[e];
    auto& head = waiting_head_[e];
    while (head < queue.size() && try_insert(queue[head])) ++head;
    if (head == queue.size()) {
      queue.clear();
      head = 0;
    } else {
      waiting_edges_[keep++] = e;
    }
  }
  waiting_edges_.resize(keep);
}

bool Engine::try_insert(VehicleHandle h) {
  const auto route = scenario_->route(h);
  const EdgeIndex e = route.front();
  const auto& net = scenario_->network();
  const double pos = std::min(vehicle_length(), scenario_->length(e));
  const int lanes = scenario_->lanes(e);
  // Rightmost lane that continues onto the next route edge.
  int l = 0;
  if (route.size() > 1) {
    while (l < lanes && !net.connection_for(e, l, route[1])) ++l;
    if (l == lanes) l = 0;
  }
  const LaneIndex slot = lane_slot(e, l);
  const auto& list = lanes_[slot];
  double speed = std::min(scenario_->trips().vehicles[h].depart_speed, scenario_->speed_limit(e));
  if (!list.empty()) {
    const auto& last = vehicles_[list.back()];
    const double gap = last.pos - vehicle_length() - pos;
    if (gap < config_.cfm.min_gap) return false;
    speed = std::min(speed, safe_speed(last.speed, gap, config_.cfm));
  }
  auto& v = vehicles_[h];
  v.edge = e;
  v.lane = l;
  v.route_index = 0;
  v.pos = pos;
  v.speed = speed;
  v.depart_time = time();
  v.distance = 0.0;
  v.arrive_time.reset();
  v.group_leader = -1;
  v.inserted_step = clock_;
  v.role = Role::kNormal;
  v.state = Presence::kActive;
  push_back_lane(h, slot);
  if (config_.grouping.enabled) fresh_now_.emplace_back(slot, pos);
  ++active_;
  ++stats_.inserted;
  if (roles_[e] == EdgeRole::kShadow) events_.entered_shadow.push_back(h);
  return true;
}

void Engine::signal_step() {
  const auto& signals = scenario_->network().signals();
  phase_state_.resize(signals.size());
  const double now = time();
  for (std::size_t i = 0; i < signals.size(); ++i) phase_state_[i] = &signals[i].phase_at(now).state;
}

bool Engine::signal_green(ConnectionIndex c) const {
  const int prog = scenario_->network().connection_signal_index(c);
  if (prog < 0) return true;
  const auto& conn = scenario_->network().connections()[c];
  return (*phase_state_[static_cast<std::size_t>(prog)])[static_cast<std::size_t>(*conn.signal_slot)] == 'G';
}

void Engine::plan_move() {
  approaches_.clear();
  approach_junction_.clear();
  const auto& net = scenario_->network();
  const auto& cfm = config_.cfm;
  const double dt = config_.step_length;
  const double vlen = vehicle_length();
  const auto ne = static_cast<EdgeIndex>(roles_.size());
  for (EdgeIndex e = 0; e < ne; ++e) {
    if (roles_[e] == EdgeRole::kAbsent) continue;
    const double len = scenario_->length(e);
    const double vlim = scenario_->speed_limit(e);
    const int lanes = scenario_->lanes(e);
    for (int l = 0; l < lanes; ++l) {
      const LaneIndex slot = lane_slot(e, l);
      const auto& list = lanes_[slot];
      const auto& groups = lane_groups_[slot];
      std::size_t gi = 0;
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (gi < groups.size() && i == groups[gi].first + 1) {
          i = groups[gi++].last - 1;
          continue;
        }
        const VehicleHandle h = list[i];
        auto& v = vehicles_[h];
        v.crossing = false;
        v.granted = false;
        v.target_lane = kNone;
        double vsafe = kInf;
        bool controlled = false;
        if (i > 0) {
          const auto& lead = vehicles_[list[i - 1]];
          vsafe = safe_speed(lead.speed, lead.pos - vlen - v.pos, cfm);
        } else if (v.role == Role::kShadow || roles_[e] == EdgeRole::kShadow) {
          // includes vehicles inserted here this step, handed over after the step
          vsafe = stop_speed(len - v.pos, cfm);
        } else {
          const auto route = scenario_->route(h);
          const auto ri = static_cast<std::size_t>(v.route_index);
          if (ri + 1 < route.size()) {
            const EdgeIndex next = route[ri + 1];
            const auto conn = net.connection_for(e, l, next);
            if (!conn || !signal_green(*conn)) {
              vsafe = stop_speed(len - v.pos, cfm);
            } else {
              if (roles_[next] == EdgeRole::kAbsent) {
                throw InvariantViolation("vehicle '" + scenario_->vehicle_id(h) + "' routes onto edge '" +
                                         net.edges()[next].id + "' outside its partition");
              }
              controlled = net.connection_signal(*conn) != nullptr;
              const LaneIndex tl = lane_slot(next, net.connections()[*conn].to_lane);
              const auto& tlist = lanes_[tl];
              if (!tlist.empty()) {
                const auto& last = vehicles_[tlist.back()];
                vsafe = safe_speed(last.speed, (len - v.pos) + (last.pos - vlen), cfm);
              }
              if (ri + 2 < route.size()) vsafe = std::min(vsafe, stop_speed(len - v.pos + scenario_->length(next), cfm));
              v.target_lane = tl;
            }
          }
        }
        v.v_plan = next_speed(v.speed, vlim, vsafe, cfm, dt);
        if (i == 0 && v.target_lane != kNone && v.pos + v.v_plan * dt > len) {
          v.crossing = true;
          approaches_.push_back(Approach{h, net.edges()[e].id, l, v.target_lane, (len - v.pos) / v.v_plan, controlled, true});
          approach_junction_.push_back(net.edge_to(e));
        }
      }
    }
  }
}

void Engine::resolve_junctions() {
  crossers_.clear();
  if (approaches_.empty()) return;
  auto& order = order_scratch_;
  order.resize(approaches_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return approach_junction_[a] < approach_junction_[b]; });
  auto& batch = batch_scratch_;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    batch.clear();
    while (j < order.size() && approach_junction_[order[j]] == approach_junction_[order[i]]) {
      batch.push_back(approaches_[order[j]]);
      ++j;
    }
    for (const auto& g : right_of_way(batch)) {
      const VehicleHandle h = batch[g.approach].vehicle;
      vehicles_[h].granted = g.granted;
      if (g.granted) crossers_.push_back(h);
    }
    i = j;
  }
}

void Engine::execute_movement() {
  arrivals_.clear();
  const bool grouping = config_.grouping.enabled;
  const double dt = config_.step_length;
  const double vlen = vehicle_length();
  const auto ne = static_cast<EdgeIndex>(roles_.size());
  for (EdgeIndex e = 0; e < ne; ++e) {
    if (roles_[e] == EdgeRole::kAbsent) continue;
    const double len = scenario_->length(e);
    const double exit_start = zones_[e].exit_start();
    const int lanes = scenario_->lanes(e);
    for (int l = 0; l < lanes; ++l) {
      const LaneIndex slot = lane_slot(e, l);
      const auto& list = lanes_[slot];
      const auto& groups = lane_groups_[slot];
      std::size_t gi = 0;
      double bound = len;
      for (std::size_t i = 0; i < list.size(); ++i) {
        if (gi < groups.size() && i == groups[gi].first + 1) {
          // followers: moved later by update_followers
          const auto& g = groups[gi++];
          stats_.vehicle_steps += g.last - g.first - 1;
          bound = std::min(len, vehicles_[list[g.last - 1]].pos - vlen);
          i = g.last - 1;
          continue;
        }
        const VehicleHandle h = list[i];
        auto& v = vehicles_[h];
        if (v.role != Role::kShadow) ++stats_.vehicle_steps;
        const double old = v.pos;
        const double old_speed = v.speed;
        v.prev_pos = old;
        v.prev_speed = old_speed;
        double target = old + v.v_plan * dt;
        bool leaves = false;
        if (i == 0 && v.role != Role::kShadow) {
          const auto route = scenario_->route(h);
          const bool last_edge = static_cast<std::size_t>(v.route_index) + 1 == route.size();
          if (last_edge && target >= len) {
            leaves = true;
            v.distance += len - old;
            v.speed = v.v_plan;
            v.arrive_time = static_cast<double>(clock_ + 1) * dt;
            arrivals_.push_back(h);
          } else if (v.crossing && v.granted) {
            // Entry must fit behind the receiving lane's rearmost vehicle.
            const auto& tlist = lanes_[v.target_lane];
            const double room = tlist.empty() ? kInf : vehicles_[tlist.back()].pos - vlen;
            if (room >= 0.0) {
              leaves = true;
              v.pos = target;
              v.speed = v.v_plan;
            } else {
              v.crossing = false;
            }
          }
        }
        if (!leaves) {
          const double limit = i == 0 ? len : bound;
          if (target > limit) {
            target = std::max(limit, old);
            v.speed = (target - old) / dt;
          } else {
            v.speed = v.v_plan;
          }
          v.distance += target - old;
          v.pos = target;
          if (grouping) note_move(slot, old, target, old_speed, v.speed);
          bound = std::min(len, target - vlen);
          if (v.role != Role::kShadow && v.speed == 0.0) {
            ++stats_.stopped_vehicle_steps;
            if (target < exit_start) ++stats_.congested_vehicle_steps;
          }
        } else {
          bound = len;
          v.granted = v.granted && v.crossing;
        }
      }
    }
  }

  for (VehicleHandle h : arrivals_) {
    auto& v = vehicles_[h];
    const LaneIndex slot = lane_slot(v.edge, v.lane);
    erase_from_lane(h, slot, v.prev_pos, v.prev_speed);
    if (roles_[v.edge] == EdgeRole::kPrimary) events_.left_primary.push_back({h, v.edge});
    v.pos = scenario_->length(v.edge);
    v.state = Presence::kArrived;
    v.group_leader = -1;
    --active_;
    ++stats_.arrivals;
  }

  for (VehicleHandle h : crossers_) {
    auto& v = vehicles_[h];
    if (!v.crossing || !v.granted) continue;
    const EdgeIndex from = v.edge;
    const double len = scenario_->length(from);
    const auto route = scenario_->route(h);
    const EdgeIndex next = route[static_cast<std::size_t>(v.route_index) + 1];
    const double old = v.prev_pos;
    const auto& tlist = lanes_[v.target_lane];
    double entry = v.pos - len;
    if (!tlist.empty()) entry = std::min(entry, vehicles_[tlist.back()].pos - vlen);
    entry = std::clamp(entry, 0.0, scenario_->length(next));
    erase_from_lane(h, lane_slot(from, v.lane), old, v.prev_speed);
    if (roles_[from] == EdgeRole::kPrimary) events_.left_primary.push_back({h, from});
    const double moved = (len - old) + entry;
    v.speed = std::min(v.speed, moved / dt);
    v.distance += moved;
    v.edge = next;
    v.lane = v.target_lane - lane_offset_[next];
    v.route_index += 1;
    v.pos = entry;
    v.role = roles_[next] == EdgeRole::kPrimary ? Role::kPrimary : Role::kNormal;
    v.group_leader = -1;
    push_back_lane(h, v.target_lane);
    if (roles_[next] == EdgeRole::kShadow) events_.entered_shadow.push_back(h);
    if (v.speed == 0.0) {
      ++stats_.stopped_vehicle_steps;
      if (entry < zones_[next].exit_start()) ++stats_.congested_vehicle_steps;
    }
  }
}

LaneNeed Engine::lane_need(const Vehicle& v) const {
  const auto route = scenario_->route(static_cast<VehicleHandle>(&v - vehicles_.data()));
  const auto ri = static_cast<std::size_t>(v.route_index);
  if (ri + 1 >= route.size()) return LaneNeed::kNone;
  const auto& net = scenario_->network();
  const EdgeIndex next = route[ri + 1];
  if (net.connection_for(v.edge, v.lane, next)) return LaneNeed::kNone;
  int best = -1;
  const int lanes = scenario_->lanes(v.edge);
  for (int l = 0; l < lanes; ++l) {
    if (!net.connection_for(v.edge, l, next)) continue;
    if (best < 0 || std::abs(l - v.lane) < std::abs(best - v.lane)) best = l;
  }
  if (best < 0) return LaneNeed::kNone;
  return best > v.lane ? LaneNeed::kLeft : LaneNeed::kRight;
}

void Engine::change_lanes() {
  const double vlen = vehicle_length();
  const auto ne = static_cast<EdgeIndex>(roles_.size());
  std::vector<VehicleHandle> candidates;
  for (EdgeIndex e = 0; e < ne; ++e) {
    if (roles_[e] == EdgeRole::kAbsent) continue;
    const int lanes = scenario_->lanes(e);
    if (lanes < 2) continue;
    candidates.clear();
    for (int l = 0; l < lanes; ++l) {
      for (VehicleHandle h : lanes_[lane_slot(e, l)]) {
        const auto& v = vehicles_[h];
        if (v.role == Role::kShadow || v.group_leader != -1) continue;
        if (lane_need(v) != LaneNeed::kNone) candidates.push_back(h);
      }
    }
    for (VehicleHandle h : candidates) {
      auto& v = vehicles_[h];
      const LaneNeed need = lane_need(v);
      if (need == LaneNeed::kNone) continue;
      const int target = v.lane + (need == LaneNeed::kLeft ? 1 : -1);
      const LaneIndex tslot = lane_slot(e, target);
      auto& tlist = lanes_[tslot];
      const auto it = std::partition_point(tlist.begin(), tlist.end(),
                                           [&](VehicleHandle o) { return vehicles_[o].pos >= v.pos; });
      LaneContext ctx;
      if (it != tlist.begin()) {
        const auto& lead = vehicles_[*(it - 1)];
        ctx.has_leader = true;
        ctx.leader_gap = lead.pos - vlen - v.pos;
        ctx.leader_speed = lead.speed;
      }
      if (it != tlist.end()) {
        const auto& fol = vehicles_[*it];
        ctx.has_follower = true;
        ctx.follower_gap = v.pos - vlen - fol.pos;
        ctx.follower_speed = fol.speed;
      }
      if (lane_change_decision(v.speed, LaneContext{}, ctx, need, config_.cfm) == LaneDecision::kStay) continue;
      const auto pos = it - tlist.begin();
      erase_from_lane(h, lane_slot(e, v.lane), v.pos, v.speed);
      tlist.insert(tlist.begin() + pos, h);
      if (config_.grouping.enabled) zone_add(tslot, v.pos, v.speed, +1);
      v.lane = target;
    }
  }
}

void Engine::push_back_lane(VehicleHandle h, LaneIndex lane) {
  lanes_[lane].push_back(h);
  if (config_.grouping.enabled) zone_add(lane, vehicles_[h].pos, vehicles_[h].speed, +1);
}

void Engine::place_in_lane(VehicleHandle h, LaneIndex lane) {
  auto& list = lanes_[lane];
  const double pos = vehicles_[h].pos;
  const auto it = std::partition_point(list.begin(), list.end(), [&](VehicleHandle o) {
    const double p = vehicles_[o].pos;
    return p > pos || (p == pos && o < h);
  });
  list.insert(it, h);
  if (config_.grouping.enabled) zone_add(lane, pos, vehicles_[h].speed, +1);
}

void Engine::erase_from_lane(VehicleHandle h, LaneIndex lane, double pos, double speed) {
  auto& list = lanes_[lane];
  auto it = std::find(list.begin(), list.end(), h);
  if (it == list.end()) throw InvariantViolation("vehicle '" + scenario_->vehicle_id(h) + "' missing from its lane");
  const bool front = it == list.begin();
  list.erase(it);
  if (!config_.grouping.enabled) return;
  if (front) ++lane_shift_[lane];
  zone_add(lane, pos, speed, -1);
}

std::size_t Engine::primary_count() const {
  std::size_t n = 0;
  for (const auto& v : vehicles_) n += (v.state == Presence::kActive && v.role != Role::kShadow) ? 1 : 0;
  return n;
}

std::size_t Engine::pending_count() const {
  std::size_t n = departures_.size() - next_departure_;
  for (EdgeIndex e : waiting_edges_) n += waiting_[e].size() - waiting_head_[e];
  return n;
}

VehicleState Engine::vehicle_state(VehicleHandle h) const {
  const auto& v = vehicles_[h];
  VehicleState s;
  s.id = scenario_->vehicle_id(h);
  if (v.edge != kNone) s.edge = scenario_->network().edges()[v.edge].id;
  s.lane = v.lane;
  s.pos = v.pos;
  s.speed = v.speed;
  s.route_index = v.route_index;
  if (v.group_leader != -1) s.leader_link = scenario_->vehicle_id(v.group_leader);
  s.role = v.role;
  return s;
}

std::span<const VehicleHandle> Engine::lane_vehicles(EdgeIndex e, int lane) const {
  return lanes_[lane_slot(e, lane)];
}

std::vector<VehicleHandle> Engine::active_vehicles() const {
  std::vector<VehicleHandle> out;
  for (std::size_t h = 0; h < vehicles_.size(); ++h) {
    if (vehicles_[h].state == Presence::kActive) out.push_back(static_cast<VehicleHandle>(h));
  }
  return out;
}

std::optional<TripRecord> Engine::trip_record(VehicleHandle h) const {
  const auto& v = vehicles_[h];
  const bool mine = v.state == Presence::kArrived || (v.state == Presence::kActive && v.role != Role::kShadow);
  if (!mine) return std::nullopt;
  return TripRecord{scenario_->vehicle_id(h), v.depart_time, v.arrive_time, v.distance};
}

TripLog Engine::trip_log() const {
  TripLog log;
  for (std::size_t h = 0; h < vehicles_.size(); ++h) {
    if (auto r = trip_record(static_cast<VehicleHandle>(h))) log.records.push_back(std::move(*r));
  }
  return log;
}

void Engine::demote_to_shadow(VehicleHandle h) {
  auto& v = vehicles_[h];
  if (v.state != Presence::kActive || v.role == Role::kShadow || roles_[v.edge] != EdgeRole::kShadow) {
    throw ProtocolError("cannot demote vehicle '" + scenario_->vehicle_id(h) + "': not a primary on a shadow edge");
  }
  v.role = Role::kShadow;
  v.group_leader = -1;
}

void Engine::accept_primary(const Handover& in) {
  auto& v = vehicles_[in.vehicle];
  if (v.state == Presence::kActive) {
    throw ProtocolError("insert for vehicle '" + scenario_->vehicle_id(in.vehicle) + "' which is already present");
  }
  if (in.edge < 0 || static_cast<std::size_t>(in.edge) >= roles_.size() || roles_[in.edge] != EdgeRole::kPrimary) {
    throw ProtocolError("insert for vehicle '" + scenario_->vehicle_id(in.vehicle) + "' onto a non-primary edge");
  }
  if (in.lane < 0 || in.lane >= scenario_->lanes(in.edge)) throw ProtocolError("insert lane out of range");
  v.edge = in.edge;
  v.lane = in.lane;
  v.pos = in.pos;
  v.speed = in.speed;
  v.route_index = in.route_index;
  v.depart_time = in.depart_time;
  v.distance = in.distance;
  v.arrive_time.reset();
  v.group_leader = -1;
  v.role = Role::kPrimary;
  v.state = Presence::kActive;
  ++active_;
  place_in_lane(in.vehicle, lane_slot(in.edge, in.lane));
}

void Engine::update_shadow(VehicleHandle h, double pos, double speed, int lane) {
  auto& v = vehicles_[h];
  if (v.state != Presence::kActive || v.role != Role::kShadow) {
    throw ProtocolError("update for vehicle '" + scenario_->vehicle_id(h) + "' which is not a local shadow");
  }
  if (lane < 0 || lane >= scenario_->lanes(v.edge)) throw ProtocolError("update lane out of range");
  if (lane != v.lane) {
    erase_from_lane(h, lane_slot(v.edge, v.lane), v.pos, v.speed);
    v.lane = lane;
    v.pos = pos;
    v.speed = speed;
    push_back_lane(h, lane_slot(v.edge, lane));
  } else {
    if (config_.grouping.enabled) note_move(lane_slot(v.edge, lane), v.pos, pos, v.speed, speed);
    v.pos = pos;
    v.speed = speed;
  }
  dirty_lanes_.push_back(lane_slot(v.edge, lane));
}

void Engine::remove_shadow(VehicleHandle h, EdgeIndex edge) {
  auto& v = vehicles_[h];
  if (v.state != Presence::kActive || v.role != Role::kShadow || v.edge != edge) {
    throw ProtocolError("remove for vehicle '" + scenario_->vehicle_id(h) + "' which is not a shadow on that edge");
  }
  erase_from_lane(h, lane_slot(v.edge, v.lane), v.pos, v.speed);
  v.state = Presence::kGone;
  --active_;
}

void Engine::resort_lanes() {
  std::sort(dirty_lanes_.begin(), dirty_lanes_.end());
  dirty_lanes_.erase(std::unique(dirty_lanes_.begin(), dirty_lanes_.end()), dirty_lanes_.end());
  for (LaneIndex slot : dirty_lanes_) {
    auto& list = lanes_[slot];
    std::stable_sort(list.begin(), list.end(), [&](VehicleHandle a, VehicleHandle b) {
      const double pa = vehicles_[a].pos, pb = vehicles_[b].pos;
      if (pa != pb) return pa > pb;
      return a < b;
    });
  }
  dirty_lanes_.clear();
}

void Engine::vehicle_route_position(VehicleHandle h, EdgeIndex& edge, int& route_index) const {
  edge = vehicles_[h].edge;
  route_index = vehicles_[h].route_index;
}

std::vector<std::string> Engine::check_invariants(bool include_border_edges) const {
  std::vector<std::string> problems;
  const auto& net = scenario_->network();
  const double vlen = vehicle_length();
  std::size_t seen = 0;
  const auto ne = static_cast<EdgeIndex>(roles_.size());
  for (EdgeIndex e = 0; e < ne; ++e) {
    if (roles_[e] == EdgeRole::kAbsent) continue;
    const bool check_overlap = include_border_edges || roles_[e] == EdgeRole::kInternal;
    const double len = scenario_->length(e);
    for (int l = 0; l < scenario_->lanes(e); ++l) {
      const auto& list = lanes_[lane_slot(e, l)];
      for (std::size_t i = 0; i < list.size(); ++i) {
        const auto& v = vehicles_[list[i]];
        const std::string& id = scenario_->vehicle_id(list[i]);
        ++seen;
        if (v.state != Presence::kActive) problems.push_back("inactive vehicle '" + id + "' in lane");
        if (v.edge != e || v.lane != l) problems.push_back("vehicle '" + id + "' stored in the wrong lane");
        if (v.pos < -1e-9 || v.pos > len + 1e-9) problems.push_back("vehicle '" + id + "' outside its lane");
        if (v.speed < 0.0) problems.push_back("vehicle '" + id + "' has negative speed");
        if (i > 0) {
          const auto& lead = vehicles_[list[i - 1]];
          if (lead.pos < v.pos) problems.push_back("lane " + net.edges()[e].id + " out of order at '" + id + "'");
          else if (check_overlap && lead.pos - vlen < v.pos - 1e-9) {
            problems.push_back("collision: '" + id + "' overlaps '" + scenario_->vehicle_id(list[i - 1]) + "'");
          }
        }
      }
    }
  }
  if (seen != active_) problems.push_back("lane occupancy does not match active vehicle count");
  return problems;
}

RunResult run(const RoadNetwork& net, const TripTable& trips, const SimulationConfig& config) {
  const Scenario scenario(net, trips);
  Engine engine(scenario, config);
  const auto t0 = Clock::now();
  while (!engine.finished()) engine.step();
  RunResult result;
  result.metrics.wall_time = seconds_since(t0);
  result.log = engine.trip_log();
  const auto& s = engine.stats();
  auto& m = result.metrics;
  m.partitions = 1;
  m.steps = engine.clock();
  m.vehicle_steps = {s.vehicle_steps};
  m.inserted = s.inserted;
  m.arrivals = s.arrivals;
  m.en_route = static_cast<std::int64_t>(engine.active_count());
  m.stopped_vehicle_steps = s.stopped_vehicle_steps;
  m.congested_vehicle_steps = s.congested_vehicle_steps;
  m.follower_steps = s.follower_steps;
  m.groups_formed = s.groups_formed;
  m.grouping_time = s.grouping_time;
  return result;
}

}  // namespace trafsim
