#include "trafsim/demand.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <queue>
#include <unordered_set>

#include "trafsim/errors.hpp"
#include "trafsim/text_io.hpp"

namespace trafsim {

void TripTable::sort() {
  std::stable_sort(vehicles.begin(), vehicles.end(), [](const VehicleSpec& a, const VehicleSpec& b) {
    if (a.depart_time != b.depart_time) return a.depart_time < b.depart_time;
    return a.id < b.id;
  });
}

void check_trips(const RoadNetwork& net, const TripTable& trips) {
  std::unordered_set<std::string> seen;
  const VehicleSpec* prev = nullptr;
  for (const auto& v : trips.vehicles) {
    if (!seen.insert(v.id).second) throw InputError("duplicate vehicle id '" + v.id + "'");
    if (!(v.depart_time >= 0.0)) throw InputError("vehicle '" + v.id + "' has negative depart time");
    if (!(v.depart_speed >= 0.0)) throw InputError("vehicle '" + v.id + "' has negative depart speed");
    if (v.route.empty()) throw InputError("vehicle '" + v.id + "' has an empty route");
    if (prev && (prev->depart_time > v.depart_time || (prev->depart_time == v.depart_time && prev->id > v.id))) {
      throw InputError("trip table not sorted by (depart_time, id) at vehicle '" + v.id + "'");
    }
    EdgeIndex last = kNone;
    for (const auto& id : v.route) {
      auto e = net.find_edge(id);
      if (!e) throw InputError("vehicle '" + v.id + "' uses unknown edge '" + id + "'");
      if (last != kNone && !net.connected(last, *e)) {
        throw InputError("vehicle '" + v.id + "' route is not connected at edge '" + id + "'");
      }
      last = *e;
    }
    prev = &v;
  }
}

TripTable read_trips(std::istream& in, const std::string& source) {
  TripTable t;
  text::for_each_record(in, source, [&](const std::string& section, const std::vector<std::string_view>& f,
                                        const text::Location& loc) {
    if (section != "vehicles") text::fail(loc, "unknown section [" + section + "]");
    if (f.size() < 3 || f.size() > 4) text::fail(loc, "vehicle record needs 3 or 4 fields");
    VehicleSpec v;
    v.id = std::string(f[0]);
    v.depart_time = text::parse_double(f[1], loc, "depart_time");
    for (auto tok : text::tokens(f[2])) v.route.emplace_back(tok);
    if (f.size() == 4) v.depart_speed = text::parse_double(f[3], loc, "depart_speed");
    if (v.route.empty()) text::fail(loc, "vehicle '" + v.id + "' has an empty route");
    t.vehicles.push_back(std::move(v));
  });
  return t;
}

void write_trips(std::ostream& out, const TripTable& trips) {
  out << "[vehicles]\n";
  for (const auto& v : trips.vehicles) {
    out << v.id << ',' << text::format_double(v.depart_time) << ',';
    for (std::size_t i = 0; i < v.route.size(); ++i) {
      if (i) out << ' ';
      out << v.route[i];
    }
    if (v.depart_speed != 0.0) out << ',' << text::format_double(v.depart_speed);
    out << '\n';
  }
}

TripTable load_trips(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trip file '" + path.string() + "'");
  return read_trips(in, path.string());
}

void save_trips(const std::filesystem::path& path, const TripTable& trips) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write trip file '" + path.string() + "'");
  write_trips(out, trips);
}

std::vector<EdgeIndex> shortest_route(const RoadNetwork& net, EdgeIndex origin, EdgeIndex dest) {
  const auto& edges = net.edges();
  const auto n = edges.size();
  auto cost = [&](EdgeIndex e) { return edges[e].length / edges[e].speed_limit; };
  if (origin == dest) return {origin};

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, kInf);
  std::vector<EdgeIndex> pred(n, kNone);
  std::vector<char> done(n, 0);
  using Item = std::pair<double, EdgeIndex>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[origin] = cost(origin);
  pq.emplace(dist[origin], origin);
  while (!pq.empty()) {
    auto [d, e] = pq.top();
    pq.pop();
    if (done[e]) continue;
    done[e] = 1;
    if (e == dest) break;
    for (EdgeIndex next : net.successors(e)) {
      if (done[next]) continue;
      const double nd = d + cost(next);
      const double tol = 1e-9 * std::max(1.0, nd);
      if (nd < dist[next] - tol) {
        dist[next] = nd;
        pred[next] = e;
        pq.emplace(nd, next);
      } else if (nd <= dist[next] + tol && edges[e].id < edges[pred[next]].id) {
        pred[next] = e;
      }
    }
  }
  if (!done[dest]) {
    throw UnreachableError("edge '" + edges[dest].id + "' is unreachable from '" + edges[origin].id + "'");
  }
  std::vector<EdgeIndex> route;
  for (EdgeIndex e = dest; e != kNone; e = pred[e]) route.push_back(e);
  std::reverse(route.begin(), route.end());
  return route;
}

std::vector<std::string> shortest_route(const RoadNetwork& net, const std::string& origin, const std::string& dest) {
  auto route = shortest_route(net, net.edge_index(origin), net.edge_index(dest));
  std::vector<std::string> ids;
  ids.reserve(route.size());
  for (EdgeIndex e : route) ids.push_back(net.edges()[e].id);
  return ids;
}

std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - (max % n + 1) % n;  // largest multiple of n, minus one
  std::uint64_t x;
  do {
    x = rng();
  } while (x > limit);
  return x % n;
}

TripTable generate_random_trips(const RoadNetwork& net, const TripGenSpec& spec) {
  if (!(spec.rate > 0.0) || !std::isfinite(spec.rate)) throw InputError("trip rate must be positive");
  if (!(spec.duration > 0.0) || !std::isfinite(spec.duration)) throw InputError("trip duration must be positive");
  if (net.edges().size() < 2) throw InputError("random trips need a network with at least 2 edges");

  auto resolve = [&](const std::vector<std::string>& ids) {
    std::vector<EdgeIndex> out;
    if (ids.empty()) {
      out.resize(net.edges().size());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<EdgeIndex>(i);
    } else {
      for (const auto& id : ids) out.push_back(net.edge_index(id));
    }
    return out;
  };
  const auto origins = resolve(spec.origins);
  const auto destinations = resolve(spec.destinations);

  std::mt19937_64 rng(spec.seed);
  const auto count = static_cast<std::uint64_t>(std::floor(spec.rate * spec.duration + 1e-9));
  TripTable table;
  table.vehicles.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::vector<EdgeIndex> route;
    for (int attempt = 0; attempt < spec.max_attempts && route.empty(); ++attempt) {
      const EdgeIndex o = origins[uniform_index(rng, origins.size())];
      const EdgeIndex d = destinations[uniform_index(rng, destinations.size())];
      if (o == d) continue;
      try {
        route = shortest_route(net, o, d);
      } catch (const UnreachableError&) {
      }
    }
    if (route.empty()) {
      throw InputError("no reachable OD pair found for vehicle " + std::to_string(i) + " after " +
                       std::to_string(spec.max_attempts) + " attempts");
    }
    VehicleSpec v;
    v.id = "v" + std::to_string(i);
    v.depart_time = static_cast<double>(i) / spec.rate;
    for (EdgeIndex e : route) v.route.push_back(net.edges()[e].id);
    table.vehicles.push_back(std::move(v));
  }
  table.sort();
  return table;
}

}  // namespace trafsim
