#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "trafsim/netmodel.hpp"

namespace trafsim {

struct VehicleSpec {
  std::string id;
  double depart_time = 0.0;
  std::vector<std::string> route;  // edge ids
  double depart_speed = 0.0;

  bool operator==(const VehicleSpec&) const = default;
};

// Vehicles sorted by depart time, ties by id.
struct TripTable {
  std::vector<VehicleSpec> vehicles;

  void sort();
  bool operator==(const TripTable&) const = default;
};

// Checks ids, depart times, and route connectivity; throws InputError on the first problem.
void check_trips(const RoadNetwork& net, const TripTable& trips);

TripTable read_trips(std::istream& in, const std::string& source = "<stream>");
void write_trips(std::ostream& out, const TripTable& trips);
TripTable load_trips(const std::filesystem::path& path);
void save_trips(const std::filesystem::path& path, const TripTable& trips);

// Minimum free-flow time route (sum of length / speed_limit over its edges, both ends included).
// Equal-cost alternatives are broken toward the lexicographically smaller predecessor edge id.
// Throws UnreachableError when `dest` cannot be reached.
std::vector<EdgeIndex> shortest_route(const RoadNetwork& net, EdgeIndex origin, EdgeIndex dest);
std::vector<std::string> shortest_route(const RoadNetwork& net, const std::string& origin, const std::string& dest);

// Uniform index in [0, n) from a 64-bit engine by rejection; independent of the
// standard library's distribution implementation.
std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n);

struct TripGenSpec {
  double rate = 1.0;       // vehicles per second
  double duration = 3600;  // seconds
  std::uint64_t seed = 1;
  // Candidate OD edges; empty means every edge of the network.
  std::vector<std::string> origins;
  std::vector<std::string> destinations;
  int max_attempts = 100;
};

// floor(rate * duration) vehicles "v<i>" departing at i / rate on shortest routes between
// uniformly drawn, distinct, mutually reachable edges. Pure function of (net, spec).
TripTable generate_random_trips(const RoadNetwork& net, const TripGenSpec& spec);

}  // namespace trafsim
