#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace trafsim {

using JunctionIndex = std::int32_t;
using EdgeIndex = std::int32_t;
using ConnectionIndex = std::int32_t;
using LaneIndex = std::int32_t;  // global lane slot: edge lane offset + lane number

inline constexpr std::int32_t kNone = -1;

struct Junction {
  std::string id;
  double x = 0.0;
  double y = 0.0;
  std::optional<std::string> signal;

  bool operator==(const Junction&) const = default;
};

struct Edge {
  std::string id;
  std::string from;
  std::string to;
  double length = 0.0;
  double speed_limit = 0.0;
  int lanes = 1;  // lane 0 is the rightmost

  bool operator==(const Edge&) const = default;
};

struct Connection {
  std::string from_edge;
  int from_lane = 0;
  std::string to_edge;
  int to_lane = 0;
  std::optional<int> signal_slot;

  bool operator==(const Connection&) const = default;
};

struct SignalPhase {
  double duration = 0.0;
  std::string state;  // one of 'G' / 'r' per controlled connection slot

  bool operator==(const SignalPhase&) const = default;
};

struct SignalProgram {
  std::string id;
  std::vector<SignalPhase> phases;

  double cycle() const;
  // Phase active at simulation time `t` (seconds); the program repeats.
  const SignalPhase& phase_at(double t) const;

  bool operator==(const SignalProgram&) const = default;
};

// Road network. Built through the add_* calls, then finalize() resolves ids and derives indexes.
// Immutable and shareable across threads once finalized.
class RoadNetwork {
 public:
  void add_junction(Junction j);
  void add_edge(Edge e);
  void add_connection(Connection c);
  void add_signal(SignalProgram p);

  // Resolves references; throws InputError naming the first dangling id.
  void finalize();

  const std::vector<Junction>& junctions() const { return junctions_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<Connection>& connections() const { return connections_; }
  const std::vector<SignalProgram>& signals() const { return signals_; }

  std::optional<JunctionIndex> find_junction(const std::string& id) const;
  std::optional<EdgeIndex> find_edge(const std::string& id) const;
  JunctionIndex junction_index(const std::string& id) const;  // throws InputError
  EdgeIndex edge_index(const std::string& id) const;          // throws InputError

  JunctionIndex edge_from(EdgeIndex e) const { return edge_from_[e]; }
  JunctionIndex edge_to(EdgeIndex e) const { return edge_to_[e]; }
  std::span<const EdgeIndex> out_edges(JunctionIndex j) const { return out_edges_[j]; }
  std::span<const EdgeIndex> in_edges(JunctionIndex j) const { return in_edges_[j]; }
  // Edges reachable from `e` through at least one connection, ascending index order.
  std::span<const EdgeIndex> successors(EdgeIndex e) const { return successors_[e]; }
  std::span<const ConnectionIndex> connections_from(EdgeIndex e) const { return connections_from_[e]; }

  // Connection from lane `lane` of `e` into `next`, lowest target lane first.
  std::optional<ConnectionIndex> connection_for(EdgeIndex e, int lane, EdgeIndex next) const;
  bool connected(EdgeIndex e, EdgeIndex next) const;

  EdgeIndex connection_to_edge(ConnectionIndex c) const { return conn_to_edge_[c]; }
  // Signal program controlling `c`, or nullptr when the connection is unsignalized.
  const SignalProgram* connection_signal(ConnectionIndex c) const;
  // Index into signals(), or -1 when the connection is uncontrolled.
  int connection_signal_index(ConnectionIndex c) const { return conn_signal_[c]; }

  LaneIndex lane_offset(EdgeIndex e) const { return lane_offset_[e]; }
  LaneIndex total_lanes() const { return total_lanes_; }

  bool finalized() const { return finalized_; }

  bool operator==(const RoadNetwork& other) const;

 private:
  std::vector<Junction> junctions_;
  std::vector<Edge> edges_;
  std::vector<Connection> connections_;
  std::vector<SignalProgram> signals_;

  bool finalized_ = false;
  std::unordered_map<std::string, JunctionIndex> junction_ids_;
  std::unordered_map<std::string, EdgeIndex> edge_ids_;
  std::unordered_map<std::string, std::int32_t> signal_ids_;
  std::vector<JunctionIndex> edge_from_;
  std::vector<JunctionIndex> edge_to_;
  std::vector<std::vector<EdgeIndex>> out_edges_;
  std::vector<std::vector<EdgeIndex>> in_edges_;
  std::vector<std::vector<EdgeIndex>> successors_;
  std::vector<std::vector<ConnectionIndex>> connections_from_;
  std::vector<EdgeIndex> conn_to_edge_;
  std::vector<std::int32_t> conn_signal_;
  std::vector<LaneIndex> lane_offset_;
  LaneIndex total_lanes_ = 0;
};

struct Violation {
  std::string subject;  // id of the offending entity
  std::string message;
};

// Type-invariant check. Returns an empty list iff the network is valid.
std::vector<Violation> validate(const RoadNetwork& net);

RoadNetwork read_network(std::istream& in, const std::string& source = "<stream>");
void write_network(std::ostream& out, const RoadNetwork& net);

// Parses, resolves, and validates; throws InputError on any failure.
RoadNetwork load_network(const std::filesystem::path& path);
void save_network(const std::filesystem::path& path, const RoadNetwork& net);

struct GridSpec {
  int cols = 10;
  int rows = 10;
  double h_len = 100.0;  // length of east-west edges
  double v_len = 100.0;  // length of north-south edges
  int lanes_per_edge = 1;
  double speed_limit = 13.89;
  bool signalized = true;
  double green_duration = 30.0;
};

std::string grid_junction_id(int col, int row);

// Junction at every (col,row), two directed edges per 4-neighbour adjacency.
// Signalized grids give every junction with >= 2 incoming edges a 2-phase program
// (north-south green, then east-west green).
RoadNetwork generate_grid(const GridSpec& spec);

}  // namespace trafsim
