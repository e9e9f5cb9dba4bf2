#pragma once

// Border-edge synchronization between partition engines and the lockstep drivers built on it.
// Byte layout of RoundBatch is in docs/protocol.md.

#include <cstdint>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trafsim/engine.hpp"
#include "trafsim/partition.hpp"

namespace trafsim {

// Application order within a round: every Remove, then every Insert, then every Update.
enum class RecordKind : std::uint8_t { kRemove = 0, kInsert = 1, kUpdate = 2 };

struct SyncRecord {
  RecordKind kind = RecordKind::kUpdate;
  std::string vehicle;
  std::string edge;  // Insert, Remove
  int lane = 0;      // Insert, Update
  double pos = 0.0;  // Insert, Update
  double speed = 0.0;
  double depart_time = 0.0;        // Insert
  double distance = 0.0;           // Insert
  std::vector<std::string> route;  // Insert: remaining route, current edge first

  bool operator==(const SyncRecord&) const = default;
};

// Kind first, then vehicle id (byte order).
bool record_before(const SyncRecord& a, const SyncRecord& b);

struct RoundBatch {
  std::uint32_t from = 0;
  std::uint32_t to = 0;
  std::uint64_t step = 0;
  std::vector<SyncRecord> records;

  bool operator==(const RoundBatch&) const = default;
};

std::vector<std::uint8_t> encode_batch(const RoundBatch& b);
// Throws ProtocolError on truncated or malformed input.
RoundBatch decode_batch(std::span<const std::uint8_t> bytes);

// All-to-all delivery of one encoded batch per ordered partition pair and step. `outbound` is
// indexed by destination and the returned vector by sender; the own slot is empty both ways.
// Every worker calls exchange() once per step; it returns after all of this step's batches
// addressed to the caller arrived.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual int size() const = 0;
  virtual std::vector<std::vector<std::uint8_t>> exchange(int self, std::vector<std::vector<std::uint8_t>> outbound) = 0;
  // Called by a failing worker; peers blocked in or entering exchange() get TransportError.
  virtual void abort(int self) = 0;
};

enum class TransportKind { kInProcess, kSocket };

std::unique_ptr<Transport> make_in_process_transport(int k);
// One AF_UNIX stream socketpair per partition pair, frames prefixed with a u32 length.
std::unique_ptr<Transport> make_socket_transport(int k);

// Departing vehicles go to the partition owning their first edge's replica they can be
// inserted on: internal edges to their owner, border edges to the shadow side.
std::vector<std::vector<VehicleHandle>> assign_departures(const Scenario& scenario, const PartitionAssignment& a);

// One partition: its engine plus the collect/apply halves of the protocol.
class PartitionWorker {
 public:
  PartitionWorker(const Scenario& scenario, const SimulationConfig& config, const PartitionAssignment& assignment,
                  PartitionedWorld world, std::vector<VehicleHandle> departures);

  int index() const { return world_.index; }
  Engine& engine() { return engine_; }
  const Engine& engine() const { return engine_; }
  const PartitionedWorld& world() const { return world_; }

  void step() { engine_.step(); }
  // k batches indexed by destination, own slot included but always empty and never sent.
  // Vehicles that entered a shadow edge are demoted locally.
  std::vector<RoundBatch> collect_outbound();
  // All batches addressed to this partition for the current step, any order.
  void apply_inbound(std::span<const RoundBatch> batches);

 private:
  VehicleHandle vehicle(const std::string& id) const;
  EdgeIndex edge(const std::string& id) const;

  const Scenario* scenario_;
  const PartitionAssignment* assignment_;
  PartitionedWorld world_;
  Engine engine_;
  std::vector<EdgeIndex> primary_edges_;
};

struct ParallelOptions {
  TransportKind transport = TransportKind::kInProcess;
};

// Threaded lockstep run, one worker per partition. k == 1 degenerates to the sequential run.
RunResult run_parallel(const RoadNetwork& net, const TripTable& trips, const SimulationConfig& config,
                       const PartitionAssignment& assignment, const ParallelOptions& options = {});

// Merges worker logs: each departed vehicle's record comes from the one worker that holds it
// as primary or saw it arrive. Throws InvariantViolation when two workers claim a vehicle.
TripLog merge_logs(const Scenario& scenario, std::span<const Engine* const> engines);

// Single-threaded lockstep driver with a global view, for tests: steps every worker, routes
// the encoded batches in memory and checks the cross-partition invariants after each round.
class LockstepHarness {
 public:
  LockstepHarness(const RoadNetwork& net, const TripTable& trips, const SimulationConfig& config,
                  const PartitionAssignment& assignment);

  void step();
  bool finished() const { return workers_.front()->engine().finished(); }
  std::int64_t clock() const { return workers_.front()->engine().clock(); }

  int size() const { return static_cast<int>(workers_.size()); }
  PartitionWorker& worker(int i) { return *workers_[i]; }
  const Scenario& scenario() const { return scenario_; }
  // Batches delivered in the last round, grouped by receiver.
  const std::vector<std::vector<RoundBatch>>& last_round() const { return last_round_; }
  std::int64_t message_bytes() const { return message_bytes_; }

  // Exactly one primary per active vehicle, every shadow mirrored by a primary on the same
  // edge in the partition owning it, equal clocks, and Insert/Remove episode pairing.
  std::vector<std::string> violations() const;
  TripLog trip_log() const;

 private:
  const Scenario scenario_;
  std::unique_ptr<PartitionAssignment> assignment_;
  std::vector<std::unique_ptr<PartitionWorker>> workers_;
  std::vector<std::vector<RoundBatch>> last_round_;
  std::set<std::pair<std::string, std::string>> open_episodes_;  // (vehicle, border edge)
  std::vector<std::string> protocol_problems_;
  std::int64_t message_bytes_ = 0;
};

}  // namespace trafsim
