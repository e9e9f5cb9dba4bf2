#pragma once

// Traffic-aware junction weights, balanced min-cut partitioning and the per-partition views
// (primary/shadow replicas) the parallel run is built from.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "trafsim/demand.hpp"
#include "trafsim/engine.hpp"
#include "trafsim/netmodel.hpp"

namespace trafsim {

// Per-edge access counts, indexed by EdgeIndex.
struct TrafficProfile {
  std::vector<std::int64_t> counts;
};

// Counts every (vehicle, route occurrence) pair. Throws InputError on an unknown edge id.
TrafficProfile edge_access_counts(const RoadNetwork& net, const TripTable& trips);

struct VertexWeights {
  std::vector<double> raw;     // sum of count * length over in- and out-incident edges
  std::vector<double> weight;  // mean(raw) + raw
};

// Edges missing from the profile count as zero traffic.
VertexWeights vertex_weights(const RoadNetwork& net, const TrafficProfile& profile);
// Traffic-blind weights (every junction 1), the static partitioning baseline.
VertexWeights uniform_weights(const RoadNetwork& net);

struct PartitionOptions {
  double epsilon = 0.05;  // allowed excess of the heaviest partition over the mean
  int refine_passes = 10;
  int trials = 4;  // seeded growing attempts per bisection
  std::uint64_t seed = 1;
};

struct PartitionAssignment {
  int k = 1;
  std::vector<int> part;  // per junction
  bool balanced = true;   // false when no assignment within epsilon was found

  bool operator==(const PartitionAssignment& o) const { return k == o.k && part == o.part; }
};

// Recursive bisection (greedy growing + FM refinement) followed by k-way boundary refinement.
// Deterministic for fixed inputs and seed. Throws InputError unless 1 <= k <= junction count.
PartitionAssignment partition(const RoadNetwork& net, const VertexWeights& weights, int k,
                              const PartitionOptions& options = {});

// Undirected junction adjacencies split by the assignment, each counted once.
std::int64_t cut_size(const RoadNetwork& net, const PartitionAssignment& a);
// Directed edges whose endpoints lie in different partitions, over all edges.
double border_edge_ratio(const RoadNetwork& net, const PartitionAssignment& a);
// Heaviest partition weight over the mean partition weight.
double balance_factor(const VertexWeights& weights, const PartitionAssignment& a);
std::vector<double> partition_weights(const VertexWeights& weights, const PartitionAssignment& a);

// Text lines `junction_id,partition_index`. Loading requires every junction exactly once;
// k <= 0 takes k as the largest index plus one.
void write_assignment(std::ostream& out, const RoadNetwork& net, const PartitionAssignment& a);
PartitionAssignment read_assignment(std::istream& in, const RoadNetwork& net, int k = 0,
                                    const std::string& source = "<stream>");
void save_assignment(const std::filesystem::path& path, const RoadNetwork& net, const PartitionAssignment& a);
PartitionAssignment load_assignment(const std::filesystem::path& path, const RoadNetwork& net, int k = 0);

enum class JunctionRole : std::uint8_t { kAbsent, kPrimary, kShadow };

// One partition's view of the shared network. Border edge u->v is primary on v's side and
// shadow on u's side, so each partition holds every edge incident to its own junctions.
struct PartitionedWorld {
  int index = 0;
  std::vector<JunctionRole> junctions;  // per junction
  std::vector<EdgeRole> edges;          // per edge

  std::size_t count(JunctionRole r) const;
  std::size_t count(EdgeRole r) const;
};

std::vector<PartitionedWorld> materialize(const RoadNetwork& net, const PartitionAssignment& a);

}  // namespace trafsim
