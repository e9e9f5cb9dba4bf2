#include <algorithm>
#include <bit>
#include <cstring>
#include <map>
#include <random>
#include <thread>

#include "doctest.h"
#include "support.hpp"
#include "trafsim/errors.hpp"
#include "trafsim/sync.hpp"

using namespace trafsim;

namespace {

// J0 - J1 | J2 - J3, with U-turns at J2 so a vehicle can cross the cut and come straight back
const char* kUturnLine = R"([junctions]
J0,0,0
J1,100,0
J2,200,0
J3,300,0
[edges]
a0,J0,J1,100,13.89,1
a1,J1,J2,100,13.89,1
a2,J2,J3,100,13.89,1
b2,J3,J2,100,13.89,1
b1,J2,J1,100,13.89,1
b0,J1,J0,100,13.89,1
[connections]
a0,0,a1,0
a1,0,a2,0
b2,0,b1,0
b1,0,b0,0
a1,0,b1,0
)";

SimulationConfig config(double end) {
  SimulationConfig c;
  c.end_time = end;
  c.check_invariants = true;
  return c;
}

PartitionAssignment halves(const RoadNetwork& net) {
  PartitionAssignment a{2, {}, true};
  const auto n = net.junctions().size();
  for (std::size_t j = 0; j < n; ++j) a.part.push_back(j < n / 2 ? 0 : 1);
  return a;
}

void le(std::vector<std::uint8_t>& o, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) o.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void s(std::vector<std::uint8_t>& o, const std::string& x) {
  le(o, x.size(), 4);
  o.insert(o.end(), x.begin(), x.end());
}

SyncRecord random_record(std::mt19937_64& rng) {
  SyncRecord r;
  r.kind = static_cast<RecordKind>(rng() % 3);
  r.vehicle = "v" + std::to_string(rng() % 1000);
  std::uniform_real_distribution<double> U(0, 500);
  if (r.kind != RecordKind::kUpdate) r.edge = "e" + std::to_string(rng() % 50);
  if (r.kind != RecordKind::kRemove) {
    r.lane = static_cast<int>(rng() % 3);
    r.pos = U(rng);
    r.speed = U(rng) / 30;
  }
  if (r.kind == RecordKind::kInsert) {
    r.depart_time = U(rng);
    r.distance = U(rng);
    r.route.push_back(r.edge);
    for (unsigned i = 0; i < rng() % 5; ++i) r.route.push_back("e" + std::to_string(rng() % 50));
  }
  return r;
}

// Runs `rounds` exchanges over `t` with k threads sending random records, and checks
// every batch arrives unchanged at its addressee.
void exchange_conserves(Transport& t, int rounds, std::uint64_t seed) {
  const int k = t.size();
  std::vector<std::multiset<std::string>> sent(k), got(k);
  std::vector<std::thread> th;
  std::vector<std::string> errors(k);
  std::mutex m;
  for (int self = 0; self < k; ++self) {
    th.emplace_back([&, self] {
      std::mt19937_64 rng(seed * 31 + self);
      try {
        for (int r = 0; r < rounds; ++r) {
          std::vector<std::vector<std::uint8_t>> out(k);
          for (int to = 0; to < k; ++to) {
            if (to == self) continue;
            RoundBatch b{static_cast<std::uint32_t>(self), static_cast<std::uint32_t>(to), static_cast<std::uint64_t>(r), {}};
            const int n = static_cast<int>(rng() % 40);
            for (int i = 0; i < n; ++i) b.records.push_back(random_record(rng));
            out[to] = encode_batch(b);
            std::lock_guard lk(m);
            for (const auto& rec : b.records) sent[to].insert(std::to_string(r) + rec.vehicle + rec.edge + std::to_string(rec.pos));
          }
          auto in = t.exchange(self, std::move(out));
          for (int from = 0; from < k; ++from) {
            if (from == self) {
              if (!in[from].empty()) throw std::runtime_error("own slot not empty");
              continue;
            }
            auto b = decode_batch(in[from]);
            if (b.from != static_cast<std::uint32_t>(from) || b.to != static_cast<std::uint32_t>(self) ||
                b.step != static_cast<std::uint64_t>(r)) {
              throw std::runtime_error("misrouted batch");
            }
            std::lock_guard lk(m);
            for (const auto& rec : b.records) got[self].insert(std::to_string(r) + rec.vehicle + rec.edge + std::to_string(rec.pos));
          }
        }
      } catch (const std::exception& e) {
        errors[self] = e.what();
        t.abort(self);
      }
    });
  }
  for (auto& x : th) x.join();
  for (int p = 0; p < k; ++p) {
    CHECK(errors[p] == "");
    CHECK(sent[p] == got[p]);
  }
}

}  // namespace

TEST_SUITE("sync") {
  TEST_CASE("record order: removes, inserts, updates, then vehicle id") {
    SyncRecord u{RecordKind::kUpdate, "a"}, i{RecordKind::kInsert, "z"}, r{RecordKind::kRemove, "m"},
        i2{RecordKind::kInsert, "b"};
    std::vector<SyncRecord> v{u, i, r, i2};
    std::sort(v.begin(), v.end(), record_before);
    CHECK(v[0].vehicle == "m");
    CHECK(v[1].vehicle == "b");
    CHECK(v[2].vehicle == "z");
    CHECK(v[3].vehicle == "a");
  }

  TEST_CASE("wire layout matches a hand-assembled batch") {
    RoundBatch b{1, 2, 77, {}};
    SyncRecord rm{RecordKind::kRemove, "v1", "e1"};
    SyncRecord ins;
    ins.kind = RecordKind::kInsert;
    ins.vehicle = "v2";
    ins.edge = "e2";
    ins.lane = 1;
    ins.pos = 12.0;
    ins.speed = 3.0;
    ins.depart_time = 4.5;
    ins.distance = 250.0;
    ins.route = {"e2", "e3"};
    SyncRecord up;
    up.vehicle = "v3";
    up.lane = 0;
    up.pos = 99.5;
    up.speed = 0.25;
    b.records = {rm, ins, up};

    std::vector<std::uint8_t> o;
    le(o, 1, 4);
    le(o, 2, 4);
    le(o, 77, 8);
    le(o, 3, 4);
    auto record = [&](std::vector<std::uint8_t> body) {
      le(o, body.size(), 4);
      o.insert(o.end(), body.begin(), body.end());
    };
    std::vector<std::uint8_t> body{0};
    s(body, "v1");
    s(body, "e1");
    record(body);
    body = {1};
    s(body, "v2");
    s(body, "e2");
    le(body, 1, 4);
    for (double d : {12.0, 3.0, 4.5, 250.0}) le(body, std::bit_cast<std::uint64_t>(d), 8);
    le(body, 2, 4);
    s(body, "e2");
    s(body, "e3");
    record(body);
    body = {2};
    s(body, "v3");
    le(body, 0, 4);
    for (double d : {99.5, 0.25}) le(body, std::bit_cast<std::uint64_t>(d), 8);
    record(body);

    CHECK(encode_batch(b) == o);
    CHECK(decode_batch(o) == b);
  }

  TEST_CASE("empty batch is a 20-byte header") {
    RoundBatch b{0, 1, 5, {}};
    auto bytes = encode_batch(b);
    CHECK(bytes.size() == 20);
    CHECK(decode_batch(bytes) == b);
  }

  TEST_CASE("malformed batches raise protocol errors") {
    std::mt19937_64 rng(1);
    RoundBatch b{0, 1, 5, {}};
    for (int i = 0; i < 10; ++i) b.records.push_back(random_record(rng));
    auto bytes = encode_batch(b);
    CHECK(decode_batch(bytes) == b);
    for (std::size_t cut = 0; cut < bytes.size(); cut += 7) {
      CHECK_THROWS_AS(decode_batch(std::span(bytes.data(), cut)), ProtocolError);
    }
    auto extra = bytes;
    extra.push_back(0);
    CHECK_THROWS_AS(decode_batch(extra), ProtocolError);
    auto kind = bytes;
    kind[24] = 9;  // first record's kind byte
    CHECK_THROWS_AS(decode_batch(kind), ProtocolError);
    // random corruption either decodes or fails cleanly
    for (int t = 0; t < 2000; ++t) {
      auto c = bytes;
      c[rng() % c.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
      try {
        decode_batch(c);
      } catch (const ProtocolError&) {
      }
    }
  }

  TEST_CASE("codec round trip on random batches (property)") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 300; ++t) {
      RoundBatch b{static_cast<std::uint32_t>(rng() % 8), static_cast<std::uint32_t>(rng() % 8), rng(), {}};
      for (unsigned i = 0; i < rng() % 30; ++i) b.records.push_back(random_record(rng));
      REQUIRE(decode_batch(encode_batch(b)) == b);
    }
  }

  TEST_CASE("k=1 exchange is a no-op") {
    for (int kind = 0; kind < 2; ++kind) {
      auto t = kind ? make_socket_transport(1) : make_in_process_transport(1);
      std::vector<std::vector<std::uint8_t>> out(1);
      auto in = t->exchange(0, out);
      REQUIRE(in.size() == 1);
      CHECK(in[0].empty());
    }
  }

  TEST_CASE("k=3 with one non-empty batch delivers exactly that batch") {
    for (int kind = 0; kind < 2; ++kind) {
      auto t = kind ? make_socket_transport(3) : make_in_process_transport(3);
      std::vector<std::vector<std::vector<std::uint8_t>>> in(3);
      RoundBatch payload{2, 0, 0, {SyncRecord{RecordKind::kRemove, "x", "e"}}};
      std::vector<std::thread> th;
      for (int self = 0; self < 3; ++self) {
        th.emplace_back([&, self] {
          std::vector<std::vector<std::uint8_t>> out(3);
          for (int to = 0; to < 3; ++to) {
            if (to != self) out[to] = encode_batch(RoundBatch{static_cast<std::uint32_t>(self), static_cast<std::uint32_t>(to), 0, {}});
          }
          if (self == 2) out[0] = encode_batch(payload);
          in[self] = t->exchange(self, std::move(out));
        });
      }
      for (auto& x : th) x.join();
      CHECK(decode_batch(in[0][2]) == payload);
      for (int to = 0; to < 3; ++to) {
        for (int from = 0; from < 3; ++from) {
          if (from == to || (to == 0 && from == 2)) continue;
          CHECK(decode_batch(in[to][from]).records.empty());
        }
      }
    }
  }

  TEST_CASE("randomized k=4 exchange conserves the record multiset") {
    auto a = make_in_process_transport(4);
    exchange_conserves(*a, 50, 1);
    auto b = make_socket_transport(4);
    exchange_conserves(*b, 50, 2);
  }

  TEST_CASE("large frames pass through the socket transport") {
    auto t = make_socket_transport(2);
    std::vector<std::uint8_t> big(3 << 20);
    for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<std::uint8_t>(i * 7);
    std::vector<std::vector<std::uint8_t>> got(2);
    std::thread other([&] {
      std::vector<std::vector<std::uint8_t>> out(2);
      out[0] = big;
      got[1] = t->exchange(1, std::move(out))[0];
    });
    std::vector<std::vector<std::uint8_t>> out(2);
    out[1] = big;
    got[0] = t->exchange(0, std::move(out))[1];
    other.join();
    CHECK(got[0] == big);
    CHECK(got[1] == big);
  }

  TEST_CASE("abort releases peers blocked in exchange") {
    for (int kind = 0; kind < 2; ++kind) {
      auto t = kind ? make_socket_transport(3) : make_in_process_transport(3);
      std::vector<int> failed(3, 0);
      std::vector<std::thread> th;
      for (int self = 0; self < 2; ++self) {
        th.emplace_back([&, self] {
          try {
            t->exchange(self, std::vector<std::vector<std::uint8_t>>(3));
          } catch (const TransportError&) {
            failed[self] = 1;
          }
        });
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      t->abort(2);
      for (auto& x : th) x.join();
      CHECK(failed[0] == 1);
      CHECK(failed[1] == 1);
    }
  }

  TEST_CASE("departures go to the owner of their first edge's source junction") {
    auto net = testing::line_network(4);
    TripTable t;
    t.vehicles = {testing::vehicle("p", 0, {"a0"}), testing::vehicle("q", 0, {"a1", "a2"}),
                  testing::vehicle("r", 0, {"b1", "b0"})};
    Scenario sc(net, t);
    auto d = assign_departures(sc, halves(net));
    CHECK(d[0] == std::vector<VehicleHandle>{0, 1});
    CHECK(d[1] == std::vector<VehicleHandle>{2});
  }

  TEST_CASE("scripted border crossing: message trace and one-step lag") {
    auto net = testing::line_network(4);
    TripTable t;
    t.vehicles = {testing::vehicle("v", 0, {"a0", "a1", "a2"})};
    const auto cfg = config(60);
    // sequential oracle: on which steps does the vehicle end on the border edge a1
    std::vector<int> seq_on_a1;
    {
      Scenario sc(net, t);
      Engine eng(sc, cfg);
      while (!eng.finished()) {
        eng.step();
        if (eng.is_active(0) && eng.vehicle_state(0).edge == "a1") seq_on_a1.push_back(static_cast<int>(eng.clock()));
      }
    }
    REQUIRE(seq_on_a1.size() > 3);

    LockstepHarness h(net, t, cfg, halves(net));
    std::vector<std::string> trace;
    int lag_checks = 0;
    std::optional<VehicleState> primary_prev;
    while (!h.finished()) {
      // state partition 0 starts this step with, against partition 1's primary after the last step
      if (primary_prev && h.worker(0).engine().is_shadow(0)) {
        auto sh = h.worker(0).engine().vehicle_state(0);
        CHECK(sh.pos == primary_prev->pos);
        CHECK(sh.speed == primary_prev->speed);
        CHECK(sh.lane == primary_prev->lane);
        CHECK(sh.edge == primary_prev->edge);
        ++lag_checks;
      }
      h.step();
      REQUIRE(h.violations().empty());
      primary_prev.reset();
      if (h.worker(1).engine().is_primary(0)) primary_prev = h.worker(1).engine().vehicle_state(0);
      for (int to = 0; to < 2; ++to) {
        for (const auto& b : h.last_round()[to]) {
          for (const auto& r : b.records) {
            const char* k = r.kind == RecordKind::kInsert ? "I" : r.kind == RecordKind::kRemove ? "R" : "U";
            trace.push_back(std::string(k) + std::to_string(b.from) + std::to_string(b.to) + "@" + std::to_string(b.step));
          }
        }
      }
    }
    std::vector<std::string> expect;
    const int first = seq_on_a1.front(), last = seq_on_a1.back();
    expect.push_back("I01@" + std::to_string(first));
    for (int s = first + 1; s <= last; ++s) expect.push_back("U10@" + std::to_string(s));
    expect.push_back("R10@" + std::to_string(last + 1));
    CHECK(trace == expect);
    CHECK(lag_checks == static_cast<int>(seq_on_a1.size()));
  }

  TEST_CASE("insert recreates the vehicle at exactly the sent state") {
    auto net = testing::line_network(4);
    TripTable t;
    t.vehicles = {testing::vehicle("v", 0, {"a0", "a1", "a2"})};
    Scenario sc(net, t);
    auto a = halves(net);
    auto worlds = materialize(net, a);
    PartitionWorker w(sc, config(10), a, worlds[1], {});
    SyncRecord r;
    r.kind = RecordKind::kInsert;
    r.vehicle = "v";
    r.edge = "a1";
    r.pos = 12.0;
    r.speed = 3.0;
    r.depart_time = 1.5;
    r.distance = 97.0;
    r.route = {"a1", "a2"};
    RoundBatch b{0, 1, 0, {r}};
    w.apply_inbound(std::span(&b, 1));
    REQUIRE(w.engine().is_primary(0));
    auto st = w.engine().vehicle_state(0);
    CHECK(st.edge == "a1");
    CHECK(st.pos == 12.0);
    CHECK(st.speed == 3.0);
    CHECK(st.route_index == 1);
    CHECK(w.engine().vehicle_distance(0) == 97.0);
    CHECK(w.engine().vehicle_depart_time(0) == 1.5);

    // a second insert for the same vehicle is a protocol violation
    CHECK_THROWS_AS(w.apply_inbound(std::span(&b, 1)), ProtocolError);
  }

  TEST_CASE("protocol violations on apply") {
    auto net = testing::line_network(4);
    TripTable t;
    t.vehicles = {testing::vehicle("v", 0, {"a0", "a1", "a2"})};
    Scenario sc(net, t);
    auto a = halves(net);
    auto worlds = materialize(net, a);
    PartitionWorker w(sc, config(10), a, worlds[0], assign_departures(sc, a)[0]);
    SyncRecord up;
    up.vehicle = "v";
    RoundBatch b{1, 0, 0, {up}};
    CHECK_THROWS_AS(w.apply_inbound(std::span(&b, 1)), ProtocolError);
    b.records = {SyncRecord{RecordKind::kRemove, "v", "a1"}};
    CHECK_THROWS_AS(w.apply_inbound(std::span(&b, 1)), ProtocolError);
    b.records = {SyncRecord{RecordKind::kRemove, "ghost", "a1"}};
    CHECK_THROWS_AS(w.apply_inbound(std::span(&b, 1)), ProtocolError);
    b.records.clear();
    b.step = 3;  // wrong round
    CHECK_THROWS_AS(w.apply_inbound(std::span(&b, 1)), ProtocolError);
    b.step = 0;
    b.to = 1;  // misaddressed
    CHECK_THROWS_AS(w.apply_inbound(std::span(&b, 1)), ProtocolError);

    SyncRecord ins;
    ins.kind = RecordKind::kInsert;
    ins.vehicle = "v";
    ins.edge = "b0";
    ins.route = {"b0"};
    b = RoundBatch{1, 0, 0, {ins}};
    CHECK_THROWS_AS(w.apply_inbound(std::span(&b, 1)), ProtocolError);
  }

  TEST_CASE("empty inbound batches leave the world unchanged") {
    auto net = testing::line_network(4);
    TripTable t;
    t.vehicles = {testing::vehicle("v", 0, {"a0", "a1"})};
    Scenario sc(net, t);
    auto a = halves(net);
    auto worlds = materialize(net, a);
    PartitionWorker w(sc, config(10), a, worlds[0], assign_departures(sc, a)[0]);
    w.step();
    const auto before = w.engine().vehicle_state(0);
    auto out = w.collect_outbound();
    REQUIRE(out.size() == 2);
    for (const auto& b : out) CHECK(b.records.empty());
    RoundBatch empty{1, 0, 1, {}};
    w.apply_inbound(std::span(&empty, 1));
    const auto after = w.engine().vehicle_state(0);
    CHECK(after.pos == before.pos);
    CHECK(after.speed == before.speed);
    CHECK(w.engine().active_count() == 1);
  }

  TEST_CASE("re-entry: same-round remove and insert resolve to one primary") {
    auto net = testing::parse_net(kUturnLine);
    TripTable t;
    t.vehicles = {testing::vehicle("v", 0, {"a0", "a1", "b1", "b0"})};
    const auto cfg = config(120);
    auto a = halves(net);
    LockstepHarness h(net, t, cfg, a);
    bool seen = false;
    while (!h.finished()) {
      h.step();
      REQUIRE(h.violations().empty());
      bool rm = false, ins = false;
      for (const auto& b : h.last_round()[0]) {
        for (const auto& r : b.records) {
          rm = rm || (r.kind == RecordKind::kRemove && r.edge == "a1");
          ins = ins || (r.kind == RecordKind::kInsert && r.edge == "b1");
        }
      }
      if (rm && ins) {
        seen = true;
        CHECK(h.worker(0).engine().is_primary(0));
        CHECK(h.worker(0).engine().vehicle_state(0).edge == "b1");
        CHECK(h.worker(1).engine().is_shadow(0));
        CHECK(h.worker(1).engine().vehicle_state(0).edge == "b1");
      }
    }
    CHECK(seen);
    auto seq = run(net, t, cfg);
    CHECK(h.trip_log() == seq.log);
    REQUIRE(seq.log.records[0].arrive_time);
  }

  TEST_CASE("path network through-vehicle: same trip as sequential") {
    auto net = testing::line_network(6);
    TripTable t;
    t.vehicles = {testing::vehicle("v", 0, {"a0", "a1", "a2", "a3", "a4"})};
    const auto cfg = config(120);
    auto seq = run(net, t, cfg);
    auto par = run_parallel(net, t, cfg, halves(net));
    REQUIRE(seq.log.records[0].arrive_time);
    CHECK(par.log.records[0].trip_time() == seq.log.records[0].trip_time());
    CHECK(par.log == seq.log);
    CHECK(par.metrics.message_bytes > 0);
  }

  TEST_CASE("k=1 parallel run equals the sequential run") {
    GridSpec gs;
    gs.cols = gs.rows = 5;
    auto net = generate_grid(gs);
    TripGenSpec ts;
    ts.rate = 0.5;
    ts.duration = 300;
    auto t = generate_random_trips(net, ts);
    auto cfg = config(400);
    auto seq = run(net, t, cfg);
    auto one = partition(net, uniform_weights(net), 1);
    auto par = run_parallel(net, t, cfg, one);
    CHECK(par.log == seq.log);
    CHECK(par.metrics.message_bytes == 0);
    CHECK(par.metrics.total_vehicle_steps() == seq.metrics.total_vehicle_steps());
  }

  TEST_CASE("4-partition runs: invariants every step, deterministic, transport-independent") {
    GridSpec gs;
    gs.cols = 6;
    gs.rows = 5;
    gs.lanes_per_edge = 2;
    auto net = generate_grid(gs);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      TripGenSpec ts;
      ts.rate = 1.5;
      ts.duration = 200;
      ts.seed = seed;
      auto t = generate_random_trips(net, ts);
      auto cfg = config(300);
      PartitionOptions po;
      po.seed = seed;
      auto a = partition(net, vertex_weights(net, edge_access_counts(net, t)), 4, po);
      LockstepHarness h(net, t, cfg, a);
      while (!h.finished()) {
        h.step();
        auto v = h.violations();
        if (!v.empty()) FAIL("step " << h.clock() << ": " << v.front());
      }
      auto threaded = run_parallel(net, t, cfg, a);
      ParallelOptions so;
      so.transport = TransportKind::kSocket;
      auto socket = run_parallel(net, t, cfg, a, so);
      CHECK(h.trip_log() == threaded.log);
      CHECK(socket.log == threaded.log);
      CHECK(run_parallel(net, t, cfg, a).log == threaded.log);
      CHECK(socket.metrics.message_bytes == threaded.metrics.message_bytes);
      CHECK(h.message_bytes() == threaded.metrics.message_bytes);
      std::int64_t sum = 0;
      for (auto x : threaded.metrics.message_bytes_per_step) sum += x;
      CHECK(sum == threaded.metrics.message_bytes);
    }
  }

  TEST_CASE("bad assignment is rejected before the run") {
    auto net = testing::line_network(4);
    TripTable t;
    PartitionAssignment a{2, {0, 0, 1}, true};
    CHECK_THROWS_AS(run_parallel(net, t, config(10), a), InputError);
    a.part = {0, 0, 1, 2};
    CHECK_THROWS_AS(LockstepHarness(net, t, config(10), a), InputError);
  }
}
