#include "trafsim/sync.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <exception>
#include <thread>

#include "trafsim/errors.hpp"

namespace trafsim {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  std::size_t size() const { return out_.size(); }
  void patch_u32(std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[at_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[at_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[at_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + at_), n);
    at_ += n;
    return s;
  }
  std::size_t offset() const { return at_; }
  std::size_t remaining() const { return in_.size() - at_; }

 private:
  void need(std::size_t n) const {
    if (in_.size() - at_ < n) throw ProtocolError("truncated batch at byte " + std::to_string(at_));
  }

  std::span<const std::uint8_t> in_;
  std::size_t at_ = 0;
};

}  // namespace

bool record_before(const SyncRecord& a, const SyncRecord& b) {
  if (a.kind != b.kind) return a.kind < b.kind;
  return a.vehicle < b.vehicle;
}

std::vector<std::uint8_t> encode_batch(const RoundBatch& b) {
  std::vector<std::uint8_t> out;
  Writer w(out);
  w.u32(b.from);
  w.u32(b.to);
  w.u64(b.step);
  w.u32(static_cast<std::uint32_t>(b.records.size()));
  for (const auto& r : b.records) {
    const auto len_at = w.size();
    w.u32(0);
    w.u8(static_cast<std::uint8_t>(r.kind));
    w.str(r.vehicle);
    switch (r.kind) {
      case RecordKind::kRemove:
        w.str(r.edge);
        break;
      case RecordKind::kInsert:
        w.str(r.edge);
        w.u32(static_cast<std::uint32_t>(r.lane));
        w.f64(r.pos);
        w.f64(r.speed);
        w.f64(r.depart_time);
        w.f64(r.distance);
        w.u32(static_cast<std::uint32_t>(r.route.size()));
        for (const auto& e : r.route) w.str(e);
        break;
      case RecordKind::kUpdate:
        w.u32(static_cast<std::uint32_t>(r.lane));
        w.f64(r.pos);
        w.f64(r.speed);
        break;
    }
    w.patch_u32(len_at, static_cast<std::uint32_t>(w.size() - len_at - 4));
  }
  return out;
}

RoundBatch decode_batch(std::span<const std::uint8_t> bytes) {
  Reader rd(bytes);
  RoundBatch b;
  b.from = rd.u32();
  b.to = rd.u32();
  b.step = rd.u64();
  const auto count = rd.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = rd.u32();
    if (len > rd.remaining()) throw ProtocolError("record " + std::to_string(i) + " overruns the batch");
    const auto end = rd.offset() + len;
    SyncRecord r;
    const auto kind = rd.u8();
    if (kind > 2) throw ProtocolError("unknown record kind " + std::to_string(kind));
    r.kind = static_cast<RecordKind>(kind);
    r.vehicle = rd.str();
    switch (r.kind) {
      case RecordKind::kRemove:
        r.edge = rd.str();
        break;
      case RecordKind::kInsert: {
        r.edge = rd.str();
        r.lane = static_cast<int>(rd.u32());
        r.pos = rd.f64();
        r.speed = rd.f64();
        r.depart_time = rd.f64();
        r.distance = rd.f64();
        const auto n = rd.u32();
        for (std::uint32_t k = 0; k < n; ++k) r.route.push_back(rd.str());
        break;
      }
      case RecordKind::kUpdate:
        r.lane = static_cast<int>(rd.u32());
        r.pos = rd.f64();
        r.speed = rd.f64();
        break;
    }
    if (rd.offset() != end) throw ProtocolError("record " + std::to_string(i) + " length mismatch");
    b.records.push_back(std::move(r));
  }
  if (rd.remaining() != 0) throw ProtocolError("trailing bytes after batch");
  return b;
}

std::vector<std::vector<VehicleHandle>> assign_departures(const Scenario& scenario, const PartitionAssignment& a) {
  std::vector<std::vector<VehicleHandle>> out(a.k);
  const auto& net = scenario.network();
  for (std::size_t h = 0; h < scenario.vehicle_count(); ++h) {
    // internal edges belong to both ends' owner, border edges insert on the shadow side
    const EdgeIndex e = scenario.route(static_cast<VehicleHandle>(h)).front();
    out[a.part[net.edge_from(e)]].push_back(static_cast<VehicleHandle>(h));
  }
  return out;
}

PartitionWorker::PartitionWorker(const Scenario& scenario, const SimulationConfig& config,
                                 const PartitionAssignment& assignment, PartitionedWorld world,
                                 std::vector<VehicleHandle> departures)
    : scenario_(&scenario),
      assignment_(&assignment),
      world_(std::move(world)),
      engine_(scenario, config, world_.edges, std::move(departures)) {
  for (std::size_t e = 0; e < world_.edges.size(); ++e) {
    if (world_.edges[e] == EdgeRole::kPrimary) primary_edges_.push_back(static_cast<EdgeIndex>(e));
  }
}

VehicleHandle PartitionWorker::vehicle(const std::string& id) const {
  auto h = scenario_->find_vehicle(id);
  if (!h) throw ProtocolError("partition " + std::to_string(index()) + ": unknown vehicle '" + id + "'");
  return *h;
}

EdgeIndex PartitionWorker::edge(const std::string& id) const {
  auto e = scenario_->network().find_edge(id);
  if (!e) throw ProtocolError("partition " + std::to_string(index()) + ": unknown edge '" + id + "'");
  return *e;
}

std::vector<RoundBatch> PartitionWorker::collect_outbound() {
  const auto& net = scenario_->network();
  const auto& part = assignment_->part;
  std::vector<RoundBatch> out(assignment_->k);
  for (int p = 0; p < assignment_->k; ++p) {
    out[p].from = static_cast<std::uint32_t>(index());
    out[p].to = static_cast<std::uint32_t>(p);
    out[p].step = static_cast<std::uint64_t>(engine_.clock());
  }
  const auto& ev = engine_.events();
  for (VehicleHandle h : ev.entered_shadow) {
    EdgeIndex e = kNone;
    int ri = 0;
    engine_.vehicle_route_position(h, e, ri);
    const auto st = engine_.vehicle_state(h);
    SyncRecord r;
    r.kind = RecordKind::kInsert;
    r.vehicle = st.id;
    r.edge = st.edge;
    r.lane = st.lane;
    r.pos = st.pos;
    r.speed = st.speed;
    r.depart_time = engine_.vehicle_depart_time(h);
    r.distance = engine_.vehicle_distance(h);
    const auto route = scenario_->route(h);
    for (std::size_t i = static_cast<std::size_t>(ri); i < route.size(); ++i) r.route.push_back(net.edges()[route[i]].id);
    out[part[net.edge_to(e)]].records.push_back(std::move(r));
    engine_.demote_to_shadow(h);
  }
  for (const auto& left : ev.left_primary) {
    SyncRecord r;
    r.kind = RecordKind::kRemove;
    r.vehicle = scenario_->vehicle_id(left.vehicle);
    r.edge = net.edges()[left.edge].id;
    out[part[net.edge_from(left.edge)]].records.push_back(std::move(r));
  }
  for (EdgeIndex e : primary_edges_) {
    auto& batch = out[part[net.edge_from(e)]];
    for (int l = 0; l < scenario_->lanes(e); ++l) {
      for (VehicleHandle h : engine_.lane_vehicles(e, l)) {
        if (!engine_.is_primary(h)) continue;
        const auto st = engine_.vehicle_state(h);
        SyncRecord r;
        r.kind = RecordKind::kUpdate;
        r.vehicle = st.id;
        r.lane = st.lane;
        r.pos = st.pos;
        r.speed = st.speed;
        batch.records.push_back(std::move(r));
      }
    }
  }
  for (auto& b : out) std::sort(b.records.begin(), b.records.end(), record_before);
  return out;
}

void PartitionWorker::apply_inbound(std::span<const RoundBatch> batches) {
  std::vector<const SyncRecord*> records;
  for (const auto& b : batches) {
    if (b.to != static_cast<std::uint32_t>(index()) || b.step != static_cast<std::uint64_t>(engine_.clock())) {
      throw ProtocolError("partition " + std::to_string(index()) + " got a batch for partition " +
                          std::to_string(b.to) + " step " + std::to_string(b.step) + " at step " +
                          std::to_string(engine_.clock()));
    }
    for (const auto& r : b.records) records.push_back(&r);
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const SyncRecord* a, const SyncRecord* b) { return record_before(*a, *b); });
  const auto& net = scenario_->network();
  for (const SyncRecord* r : records) {
    const VehicleHandle h = vehicle(r->vehicle);
    switch (r->kind) {
      case RecordKind::kRemove:
        engine_.remove_shadow(h, edge(r->edge));
        break;
      case RecordKind::kInsert: {
        const auto route = scenario_->route(h);
        if (r->route.empty() || r->route.size() > route.size()) {
          throw ProtocolError("insert for '" + r->vehicle + "' carries a bad route");
        }
        const std::size_t ri = route.size() - r->route.size();
        for (std::size_t i = 0; i < r->route.size(); ++i) {
          if (net.edges()[route[ri + i]].id != r->route[i]) {
            throw ProtocolError("insert for '" + r->vehicle + "' disagrees with the local route");
          }
        }
        if (r->route.front() != r->edge) throw ProtocolError("insert for '" + r->vehicle + "' is off its route");
        Engine::Handover in;
        in.vehicle = h;
        in.edge = edge(r->edge);
        in.lane = r->lane;
        in.pos = r->pos;
        in.speed = r->speed;
        in.route_index = static_cast<int>(ri);
        in.depart_time = r->depart_time;
        in.distance = r->distance;
        engine_.accept_primary(in);
        break;
      }
      case RecordKind::kUpdate:
        engine_.update_shadow(h, r->pos, r->speed, r->lane);
        break;
    }
  }
  engine_.resort_lanes();
}

TripLog merge_logs(const Scenario& scenario, std::span<const Engine* const> engines) {
  TripLog log;
  for (std::size_t h = 0; h < scenario.vehicle_count(); ++h) {
    std::optional<TripRecord> found;
    for (const Engine* e : engines) {
      auto r = e->trip_record(static_cast<VehicleHandle>(h));
      if (!r) continue;
      if (found) throw InvariantViolation("vehicle '" + r->vehicle_id + "' is claimed by two partitions");
      found = std::move(r);
    }
    if (found) log.records.push_back(std::move(*found));
  }
  return log;
}

namespace {

void check_assignment(const RoadNetwork& net, const PartitionAssignment& a) {
  if (a.k < 1) throw InputError("partition count must be >= 1");
  if (a.part.size() != net.junctions().size()) throw InputError("assignment does not cover the network");
  for (int p : a.part) {
    if (p < 0 || p >= a.k) throw InputError("assignment index out of range");
  }
}

std::vector<std::unique_ptr<PartitionWorker>> make_workers(const Scenario& scenario, const SimulationConfig& config,
                                                           const PartitionAssignment& a) {
  auto worlds = materialize(scenario.network(), a);
  auto deps = assign_departures(scenario, a);
  std::vector<std::unique_ptr<PartitionWorker>> workers;
  for (int p = 0; p < a.k; ++p) {
    workers.push_back(std::make_unique<PartitionWorker>(scenario, config, a, std::move(worlds[p]), std::move(deps[p])));
  }
  return workers;
}

}  // namespace

RunResult run_parallel(const RoadNetwork& net, const TripTable& trips, const SimulationConfig& config,
                       const PartitionAssignment& assignment, const ParallelOptions& options) {
  check_assignment(net, assignment);
  const Scenario scenario(net, trips);
  auto workers = make_workers(scenario, config, assignment);
  const int k = assignment.k;
  const auto steps = config.total_steps();
  std::unique_ptr<Transport> transport;
  if (k > 1) {
    transport = options.transport == TransportKind::kSocket ? make_socket_transport(k) : make_in_process_transport(k);
  }
  std::vector<std::vector<std::int64_t>> bytes(k, std::vector<std::int64_t>(static_cast<std::size_t>(steps), 0));
  std::vector<double> exchange_time(k, 0.0);
  std::vector<std::exception_ptr> errors(k);

  auto body = [&](int self) {
    PartitionWorker& w = *workers[self];
    try {
      while (!w.engine().finished()) {
        w.step();
        if (!transport) continue;
        auto batches = w.collect_outbound();
        std::vector<std::vector<std::uint8_t>> enc(k);
        std::int64_t sent = 0;
        for (int p = 0; p < k; ++p) {
          if (p == self) continue;
          enc[p] = encode_batch(batches[p]);
          sent += static_cast<std::int64_t>(enc[p].size());
        }
        bytes[self][static_cast<std::size_t>(w.engine().clock() - 1)] = sent;
        const auto t0 = Clock::now();
        auto in = transport->exchange(self, std::move(enc));
        exchange_time[self] += seconds_since(t0);
        std::vector<RoundBatch> decoded;
        for (int p = 0; p < k; ++p) {
          if (p != self) decoded.push_back(decode_batch(in[p]));
        }
        w.apply_inbound(decoded);
      }
    } catch (...) {
      errors[self] = std::current_exception();
      if (transport) transport->abort(self);
    }
  };

  const auto t0 = Clock::now();
  if (k == 1) {
    body(0);
  } else {
    std::vector<std::thread> threads;
    for (int p = 0; p < k; ++p) threads.emplace_back(body, p);
    for (auto& t : threads) t.join();
  }
  const double wall = seconds_since(t0);

  // Report the root cause rather than the peers' transport errors it triggered.
  std::exception_ptr first;
  for (auto& e : errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const TransportError&) {
      if (!first) first = e;
    } catch (...) {
      std::rethrow_exception(e);
    }
  }
  if (first) std::rethrow_exception(first);

  std::vector<const Engine*> engines;
  for (auto& w : workers) engines.push_back(&w->engine());
  RunResult result;
  result.log = merge_logs(scenario, engines);
  auto& m = result.metrics;
  m.wall_time = wall;
  m.partitions = k;
  m.steps = steps;
  if (k > 1) m.message_bytes_per_step.assign(static_cast<std::size_t>(steps), 0);
  for (int p = 0; p < k; ++p) {
    const auto& s = workers[p]->engine().stats();
    m.vehicle_steps.push_back(s.vehicle_steps);
    m.inserted += s.inserted;
    m.arrivals += s.arrivals;
    m.stopped_vehicle_steps += s.stopped_vehicle_steps;
    m.congested_vehicle_steps += s.congested_vehicle_steps;
    m.follower_steps += s.follower_steps;
    m.groups_formed += s.groups_formed;
    m.grouping_time += s.grouping_time;
    m.exchange_time += exchange_time[p] / k;
    m.en_route += static_cast<std::int64_t>(workers[p]->engine().primary_count());
    if (k > 1) {
      for (std::size_t t = 0; t < bytes[p].size(); ++t) {
        m.message_bytes_per_step[t] += bytes[p][t];
        m.message_bytes += bytes[p][t];
      }
    }
  }
  return result;
}

LockstepHarness::LockstepHarness(const RoadNetwork& net, const TripTable& trips, const SimulationConfig& config,
                                 const PartitionAssignment& assignment)
    : scenario_(net, trips) {
  check_assignment(net, assignment);
  // workers keep a pointer to the assignment, so hold a copy that lives as long as they do
  assignment_ = std::make_unique<PartitionAssignment>(assignment);
  workers_ = make_workers(scenario_, config, *assignment_);
  last_round_.assign(assignment.k, {});
}

void LockstepHarness::step() {
  const int k = size();
  for (auto& w : workers_) w->step();
  std::vector<std::vector<RoundBatch>> inbound(k);
  for (int from = 0; from < k; ++from) {
    auto batches = workers_[from]->collect_outbound();
    for (int to = 0; to < k; ++to) {
      if (to == from) {
        if (!batches[to].records.empty()) protocol_problems_.push_back("self-addressed records");
        continue;
      }
      const auto bytes = encode_batch(batches[to]);
      message_bytes_ += static_cast<std::int64_t>(bytes.size());
      auto decoded = decode_batch(bytes);
      if (!(decoded == batches[to])) protocol_problems_.push_back("batch did not survive encoding");
      inbound[to].push_back(std::move(decoded));
    }
  }
  const auto& net = scenario_.network();
  for (int to = 0; to < k; ++to) {
    for (const auto& b : inbound[to]) {
      for (const auto& r : b.records) {
        if (r.kind == RecordKind::kUpdate) continue;
        const auto e = net.find_edge(r.edge);
        if (!e) {
          protocol_problems_.push_back("record names unknown edge '" + r.edge + "'");
          continue;
        }
        const int expect = r.kind == RecordKind::kInsert ? assignment_->part[net.edge_to(*e)]
                                                         : assignment_->part[net.edge_from(*e)];
        if (expect != to) protocol_problems_.push_back("record for '" + r.vehicle + "' sent to the wrong partition");
        const auto key = std::make_pair(r.vehicle, r.edge);
        if (r.kind == RecordKind::kInsert) {
          if (!open_episodes_.insert(key).second) protocol_problems_.push_back("second insert for '" + r.vehicle + "'");
        } else if (open_episodes_.erase(key) == 0) {
          protocol_problems_.push_back("remove without insert for '" + r.vehicle + "' on '" + r.edge + "'");
        }
      }
    }
  }
  for (int to = 0; to < k; ++to) workers_[to]->apply_inbound(inbound[to]);
  last_round_ = std::move(inbound);
}

std::vector<std::string> LockstepHarness::violations() const {
  std::vector<std::string> out = protocol_problems_;
  const auto& net = scenario_.network();
  const int k = size();
  for (int p = 1; p < k; ++p) {
    if (workers_[p]->engine().clock() != workers_[0]->engine().clock()) out.push_back("worker clocks differ");
  }
  std::size_t shadows = 0;
  for (std::size_t i = 0; i < scenario_.vehicle_count(); ++i) {
    const auto h = static_cast<VehicleHandle>(i);
    int primaries = 0;
    bool active = false;
    for (const auto& w : workers_) {
      const Engine& e = w->engine();
      active = active || e.is_active(h);
      if (e.is_primary(h)) ++primaries;
      if (!e.is_shadow(h)) continue;
      ++shadows;
      EdgeIndex edge = kNone;
      int ri = 0;
      e.vehicle_route_position(h, edge, ri);
      const std::string& id = scenario_.vehicle_id(h);
      const Engine& owner = workers_[assignment_->part[net.edge_to(edge)]]->engine();
      EdgeIndex owner_edge = kNone;
      owner.vehicle_route_position(h, owner_edge, ri);
      if (!owner.is_primary(h) || owner_edge != edge) out.push_back("shadow of '" + id + "' has no primary on its edge");
      if (!open_episodes_.count({id, net.edges()[edge].id})) out.push_back("shadow of '" + id + "' without an insert");
    }
    if (active && primaries != 1) {
      out.push_back("vehicle '" + scenario_.vehicle_id(h) + "' is primary in " + std::to_string(primaries) +
                    " partitions");
    }
  }
  if (shadows != open_episodes_.size()) out.push_back("open insert episodes do not match live shadows");
  return out;
}

TripLog LockstepHarness::trip_log() const {
  std::vector<const Engine*> engines;
  for (const auto& w : workers_) engines.push_back(&w->engine());
  return merge_logs(scenario_, engines);
}

}  // namespace trafsim
