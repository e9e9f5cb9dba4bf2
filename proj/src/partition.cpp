#include "trafsim/partition.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <random>
#include <set>
#include <string>

#include "trafsim/errors.hpp"
#include "trafsim/text_io.hpp"

namespace trafsim {

TrafficProfile edge_access_counts(const RoadNetwork& net, const TripTable& trips) {
  TrafficProfile p;
  p.counts.assign(net.edges().size(), 0);
  for (const auto& v : trips.vehicles) {
    for (const auto& id : v.route) {
      auto e = net.find_edge(id);
      if (!e) throw InputError("vehicle '" + v.id + "' routes over unknown edge '" + id + "'");
      ++p.counts[*e];
    }
  }
  return p;
}

VertexWeights vertex_weights(const RoadNetwork& net, const TrafficProfile& profile) {
  const auto& edges = net.edges();
  auto load = [&](EdgeIndex e) {
    const auto c = static_cast<std::size_t>(e) < profile.counts.size() ? profile.counts[e] : 0;
    return static_cast<double>(c) * edges[e].length;
  };
  const auto n = net.junctions().size();
  VertexWeights w;
  w.raw.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    const auto v = static_cast<JunctionIndex>(j);
    for (EdgeIndex e : net.in_edges(v)) w.raw[j] += load(e);
    for (EdgeIndex e : net.out_edges(v)) w.raw[j] += load(e);
  }
  const double mean = n ? std::accumulate(w.raw.begin(), w.raw.end(), 0.0) / static_cast<double>(n) : 0.0;
  w.weight.resize(n);
  for (std::size_t j = 0; j < n; ++j) w.weight[j] = mean + w.raw[j];
  return w;
}

VertexWeights uniform_weights(const RoadNetwork& net) {
  VertexWeights w;
  w.raw.assign(net.junctions().size(), 0.0);
  w.weight.assign(net.junctions().size(), 1.0);
  return w;
}

namespace {

// Undirected junction adjacency, both directions of a road merged, no self loops.
std::vector<std::vector<int>> adjacency(const RoadNetwork& net) {
  std::vector<std::vector<int>> adj(net.junctions().size());
  for (std::size_t e = 0; e < net.edges().size(); ++e) {
    const int u = net.edge_from(static_cast<EdgeIndex>(e));
    const int v = net.edge_to(static_cast<EdgeIndex>(e));
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }
  return adj;
}

struct SubGraph {
  std::vector<int> global;  // local -> junction
  std::vector<std::vector<int>> adj;
  std::vector<double> w;
  double total = 0.0;
};

SubGraph induced(const std::vector<std::vector<int>>& adj, const std::vector<double>& w, const std::vector<int>& verts,
                 std::vector<int>& local_of) {
  SubGraph g;
  g.global = verts;
  for (std::size_t i = 0; i < verts.size(); ++i) local_of[verts[i]] = static_cast<int>(i);
  g.adj.resize(verts.size());
  g.w.resize(verts.size());
  for (std::size_t i = 0; i < verts.size(); ++i) {
    g.w[i] = w[verts[i]];
    g.total += g.w[i];
    for (int u : adj[verts[i]]) {
      if (local_of[u] >= 0) g.adj[i].push_back(local_of[u]);
    }
  }
  for (int v : verts) local_of[v] = -1;
  return g;
}

std::vector<int> bfs_distance(const SubGraph& g, int src) {
  std::vector<int> dist(g.adj.size(), -1);
  std::queue<int> q;
  dist[src] = 0;
  q.push(src);
  while (!q.empty()) {
    int v = q.front();
    q.pop();
    for (int u : g.adj[v]) {
      if (dist[u] < 0) {
        dist[u] = dist[v] + 1;
        q.push(u);
      }
    }
  }
  return dist;
}

int farthest(const std::vector<int>& dist, int fallback) {
  int best = fallback;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist[i] > dist[best]) best = static_cast<int>(i);
  }
  return best;
}

// Side 0 is the region grown to weight `target`; the rest is side 1.
struct Bisection {
  std::vector<char> side;
  double w0 = 0.0;
  std::int64_t cut = 0;
  double violation = 0.0;

  bool better_than(const Bisection& o) const {
    if (violation != o.violation) return violation < o.violation;
    return cut < o.cut;
  }
};

class Bisector {
 public:
  Bisector(const SubGraph& g, double target, double tol) : g_(g), lo_(target - tol), hi_(target + tol), target_(target) {}

  double violation(double w0) const { return std::max({0.0, lo_ - w0, w0 - hi_}); }

  Bisection grow(int seed) const {
    const auto n = g_.adj.size();
    Bisection b;
    b.side.assign(n, 1);
    const auto dist = bfs_distance(g_, seed);
    std::vector<int> gain(n, 0);
    for (std::size_t v = 0; v < n; ++v) gain[v] = -static_cast<int>(g_.adj[v].size());
    // frontier ordered by gain, then hop distance from the seed, then index
    auto key = [&](int v) { return std::make_tuple(-gain[v], dist[v] < 0 ? 1 << 30 : dist[v], v); };
    std::set<std::tuple<int, int, int>> frontier;
    std::vector<char> queued(n, 0);
    auto add = [&](int v) {
      b.side[v] = 0;
      b.w0 += g_.w[v];
      for (int u : g_.adj[v]) {
        if (b.side[u] == 0) continue;
        if (queued[u]) frontier.erase(key(u));
        gain[u] += 2;
        frontier.insert(key(u));
        queued[u] = 1;
      }
    };
    add(seed);
    std::size_t scan = 0;
    while (b.w0 < target_) {
      int v = -1;
      if (!frontier.empty()) {
        v = std::get<2>(*frontier.begin());
        frontier.erase(frontier.begin());
        queued[v] = 0;
      } else {
        while (scan < n && b.side[scan] == 0) ++scan;
        if (scan == n) break;
        v = static_cast<int>(scan);
      }
      if (b.w0 + g_.w[v] - target_ > target_ - b.w0) break;
      add(v);
    }
    finish(b);
    return b;
  }

  // Fiduccia-Mattheyses passes with rollback to the best prefix.
  void refine(Bisection& b, int passes) const {
    const auto n = static_cast<int>(g_.adj.size());
    std::vector<int> gain(n);
    std::vector<char> locked(n);
    std::set<std::pair<int, int>> bucket[2];
    std::vector<int> moves;
    for (int pass = 0; pass < passes; ++pass) {
      bucket[0].clear();
      bucket[1].clear();
      std::fill(locked.begin(), locked.end(), 0);
      for (int v = 0; v < n; ++v) {
        gain[v] = 0;
        for (int u : g_.adj[v]) gain[v] += b.side[u] != b.side[v] ? 1 : -1;
        bucket[static_cast<int>(b.side[v])].insert({-gain[v], v});
      }
      moves.clear();
      Bisection best = b;
      std::size_t best_len = 0;
      const std::size_t patience = 64 + static_cast<std::size_t>(n) / 20;
      while (true) {
        int pick = -1;
        int pick_gain = 0;
        double pick_viol = 0.0;
        const double cur = b.violation;
        for (int s = 0; s < 2; ++s) {
          int seen = 0;
          for (auto it = bucket[s].begin(); it != bucket[s].end() && seen < 16; ++it, ++seen) {
            const int v = it->second;
            const double w0 = s == 0 ? b.w0 - g_.w[v] : b.w0 + g_.w[v];
            const double nv = violation(w0);
            if (nv > 0.0 && nv >= cur) continue;
            const int gv = -it->first;
            if (pick < 0 || gv > pick_gain || (gv == pick_gain && nv < pick_viol)) {
              pick = v;
              pick_gain = gv;
              pick_viol = nv;
            }
            break;
          }
        }
        if (pick < 0) break;
        const int s = b.side[pick];
        bucket[s].erase({-gain[pick], pick});
        locked[pick] = 1;
        b.side[pick] = static_cast<char>(1 - s);
        b.w0 += s == 0 ? -g_.w[pick] : g_.w[pick];
        b.cut -= gain[pick];
        b.violation = pick_viol;
        for (int u : g_.adj[pick]) {
          if (locked[u]) continue;
          bucket[static_cast<int>(b.side[u])].erase({-gain[u], u});
          gain[u] += b.side[u] == b.side[pick] ? -2 : 2;
          bucket[static_cast<int>(b.side[u])].insert({-gain[u], u});
        }
        moves.push_back(pick);
        if (b.better_than(best)) {
          best.w0 = b.w0;
          best.cut = b.cut;
          best.violation = b.violation;
          best_len = moves.size();
        } else if (moves.size() - best_len > patience) {
          break;
        }
      }
      for (std::size_t i = moves.size(); i > best_len; --i) {
        const int v = moves[i - 1];
        b.side[v] = static_cast<char>(1 - b.side[v]);
      }
      b.w0 = best.w0;
      b.cut = best.cut;
      b.violation = best.violation;
      if (best_len == 0) break;
    }
  }

 private:
  void finish(Bisection& b) const {
    b.cut = 0;
    for (std::size_t v = 0; v < g_.adj.size(); ++v) {
      for (int u : g_.adj[v]) {
        if (static_cast<std::size_t>(u) > v && b.side[u] != b.side[v]) ++b.cut;
      }
    }
    b.violation = violation(b.w0);
  }

  const SubGraph& g_;
  double lo_;
  double hi_;
  double target_;
};

struct Recursion {
  const std::vector<std::vector<int>>& adj;
  const std::vector<double>& w;
  const PartitionOptions& opt;
  double eps_level;
  std::mt19937_64 rng;
  std::vector<int> local_of;
  std::vector<int>& part;

  void split(const std::vector<int>& verts, int k, int offset) {
    if (k == 1 || verts.size() <= 1) {
      for (int v : verts) part[v] = offset;
      return;
    }
    const int k0 = k / 2;
    const int k1 = k - k0;
    const SubGraph g = induced(adj, w, verts, local_of);
    const double target = g.total * k0 / k;
    const double tol = eps_level * g.total * std::min(k0, k1) / k;
    Bisector bis(g, target, tol);
    Bisection best;
    bool have = false;
    const auto n = g.adj.size();
    for (int t = 0; t < std::max(1, opt.trials); ++t) {
      // pseudo-peripheral seed from a seeded start
      const int start = static_cast<int>(uniform_index(rng, n));
      int seed = farthest(bfs_distance(g, start), start);
      if (t % 2 == 1) seed = farthest(bfs_distance(g, seed), seed);
      Bisection b = bis.grow(seed);
      bis.refine(b, opt.refine_passes);
      if (!have || b.better_than(best)) {
        best = std::move(b);
        have = true;
      }
    }
    std::vector<int> side0, side1;
    for (std::size_t i = 0; i < n; ++i) (best.side[i] == 0 ? side0 : side1).push_back(g.global[i]);
    // keep every final partition non-empty
    while (static_cast<int>(side0.size()) < k0 && side1.size() > static_cast<std::size_t>(k1)) {
      side0.push_back(side1.back());
      side1.pop_back();
    }
    while (static_cast<int>(side1.size()) < k1 && side0.size() > static_cast<std::size_t>(k0)) {
      side1.push_back(side0.back());
      side0.pop_back();
    }
    split(side0, k0, offset);
    split(side1, k1, offset + k0);
  }
};

// Moves boundary junctions out of overweight partitions, then greedy positive-gain moves.
void refine_kway(const std::vector<std::vector<int>>& adj, const std::vector<double>& w, int k, double max_w,
                 int passes, std::vector<int>& part) {
  const auto n = static_cast<int>(adj.size());
  std::vector<double> pw(k, 0.0);
  std::vector<int> size(k, 0);
  for (int v = 0; v < n; ++v) {
    pw[part[v]] += w[v];
    ++size[part[v]];
  }
  std::vector<int> conn(k, 0);
  std::vector<int> touched;
  auto tally = [&](int v) {
    touched.clear();
    for (int u : adj[v]) {
      if (conn[part[u]]++ == 0) touched.push_back(part[u]);
    }
  };
  auto untally = [&]() {
    for (int q : touched) conn[q] = 0;
  };
  auto move = [&](int v, int q) {
    pw[part[v]] -= w[v];
    --size[part[v]];
    part[v] = q;
    pw[q] += w[v];
    ++size[q];
  };

  for (int round = 0; round < n; ++round) {
    const int heavy = static_cast<int>(std::max_element(pw.begin(), pw.end()) - pw.begin());
    if (pw[heavy] <= max_w) break;
    int best_v = -1, best_q = -1, best_gain = 0;
    double best_after = 0.0;
    for (int v = 0; v < n; ++v) {
      if (part[v] != heavy || size[heavy] <= 1) continue;
      tally(v);
      for (int q : touched) {
        if (q == heavy || pw[q] + w[v] > max_w) continue;
        const int gain = conn[q] - conn[heavy];
        const double after = pw[q] + w[v];
        if (best_v < 0 || gain > best_gain || (gain == best_gain && after < best_after)) {
          best_v = v;
          best_q = q;
          best_gain = gain;
          best_after = after;
        }
      }
      untally();
    }
    if (best_v < 0) break;
    move(best_v, best_q);
  }

  const double cap = std::max(max_w, *std::max_element(pw.begin(), pw.end()));
  for (int pass = 0; pass < passes; ++pass) {
    bool moved = false;
    for (int v = 0; v < n; ++v) {
      const int p = part[v];
      if (size[p] <= 1) continue;
      tally(v);
      int best_q = -1, best_gain = 0;
      for (int q : touched) {
        if (q == p || pw[q] + w[v] > cap) continue;
        const int gain = conn[q] - conn[p];
        if (gain > best_gain || (gain == best_gain && best_q >= 0 && pw[q] < pw[best_q])) {
          best_q = q;
          best_gain = gain;
        }
      }
      untally();
      if (best_q >= 0 && best_gain > 0) {
        move(v, best_q);
        moved = true;
      }
    }
    if (!moved) break;
  }
}

}  // namespace

PartitionAssignment partition(const RoadNetwork& net, const VertexWeights& weights, int k,
                              const PartitionOptions& options) {
  const auto n = static_cast<int>(net.junctions().size());
  if (k < 1) throw InputError("partition count must be >= 1");
  if (k > n) throw InputError("partition count " + std::to_string(k) + " exceeds junction count " + std::to_string(n));
  if (weights.weight.size() != static_cast<std::size_t>(n)) throw InputError("vertex weights do not match network");
  PartitionAssignment a;
  a.k = k;
  a.part.assign(n, 0);
  if (k == 1) return a;

  const auto adj = adjacency(net);
  const int levels = static_cast<int>(std::ceil(std::log2(static_cast<double>(k))));
  Recursion r{adj, weights.weight, options, std::pow(1.0 + options.epsilon, 1.0 / levels) - 1.0,
              std::mt19937_64(options.seed), std::vector<int>(n, -1), a.part};
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  r.split(all, k, 0);

  const double total = std::accumulate(weights.weight.begin(), weights.weight.end(), 0.0);
  const double max_w = (1.0 + options.epsilon) * total / k;
  refine_kway(adj, weights.weight, k, max_w, options.refine_passes, a.part);
  const auto pw = partition_weights(weights, a);
  a.balanced = *std::max_element(pw.begin(), pw.end()) <= max_w * (1.0 + 1e-12);
  return a;
}

std::int64_t cut_size(const RoadNetwork& net, const PartitionAssignment& a) {
  const auto adj = adjacency(net);
  std::int64_t cut = 0;
  for (std::size_t v = 0; v < adj.size(); ++v) {
    for (int u : adj[v]) {
      if (static_cast<std::size_t>(u) > v && a.part[u] != a.part[v]) ++cut;
    }
  }
  return cut;
}

double border_edge_ratio(const RoadNetwork& net, const PartitionAssignment& a) {
  const auto m = net.edges().size();
  if (m == 0) return 0.0;
  std::size_t border = 0;
  for (std::size_t e = 0; e < m; ++e) {
    if (a.part[net.edge_from(static_cast<EdgeIndex>(e))] != a.part[net.edge_to(static_cast<EdgeIndex>(e))]) ++border;
  }
  return static_cast<double>(border) / static_cast<double>(m);
}

std::vector<double> partition_weights(const VertexWeights& weights, const PartitionAssignment& a) {
  std::vector<double> pw(a.k, 0.0);
  for (std::size_t v = 0; v < a.part.size(); ++v) pw[a.part[v]] += weights.weight[v];
  return pw;
}

double balance_factor(const VertexWeights& weights, const PartitionAssignment& a) {
  const auto pw = partition_weights(weights, a);
  const double mean = std::accumulate(pw.begin(), pw.end(), 0.0) / a.k;
  if (mean == 0.0) return 1.0;
  return *std::max_element(pw.begin(), pw.end()) / mean;
}

void write_assignment(std::ostream& out, const RoadNetwork& net, const PartitionAssignment& a) {
  const auto& js = net.junctions();
  for (std::size_t j = 0; j < js.size(); ++j) out << js[j].id << ',' << a.part[j] << '\n';
}

PartitionAssignment read_assignment(std::istream& in, const RoadNetwork& net, int k, const std::string& source) {
  const auto n = net.junctions().size();
  PartitionAssignment a;
  a.part.assign(n, -1);
  std::string line;
  text::Location loc{source, 0};
  int max_index = -1;
  while (std::getline(in, line)) {
    ++loc.line;
    const auto sv = text::trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    const auto f = text::split(sv, ',');
    if (f.size() != 2) text::fail(loc, "expected 'junction_id,partition_index'");
    const auto j = net.find_junction(std::string(f[0]));
    if (!j) text::fail(loc, "unknown junction '" + std::string(f[0]) + "'");
    const auto p = text::parse_int(f[1], loc, "partition_index");
    if (p < 0 || (k > 0 && p >= k)) text::fail(loc, "partition index " + std::to_string(p) + " out of range");
    if (a.part[*j] >= 0) text::fail(loc, "junction '" + std::string(f[0]) + "' assigned twice");
    a.part[*j] = static_cast<int>(p);
    max_index = std::max(max_index, static_cast<int>(p));
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (a.part[j] < 0) throw InputError(source + ": junction '" + net.junctions()[j].id + "' has no partition");
  }
  a.k = k > 0 ? k : max_index + 1;
  return a;
}

void save_assignment(const std::filesystem::path& path, const RoadNetwork& net, const PartitionAssignment& a) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write assignment file '" + path.string() + "'");
  write_assignment(out, net, a);
}

PartitionAssignment load_assignment(const std::filesystem::path& path, const RoadNetwork& net, int k) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open assignment file '" + path.string() + "'");
  return read_assignment(in, net, k, path.string());
}

std::size_t PartitionedWorld::count(JunctionRole r) const {
  return static_cast<std::size_t>(std::count(junctions.begin(), junctions.end(), r));
}

std::size_t PartitionedWorld::count(EdgeRole r) const {
  return static_cast<std::size_t>(std::count(edges.begin(), edges.end(), r));
}

std::vector<PartitionedWorld> materialize(const RoadNetwork& net, const PartitionAssignment& a) {
  std::vector<PartitionedWorld> worlds(a.k);
  const auto nj = net.junctions().size();
  const auto ne = net.edges().size();
  if (a.part.size() != nj) throw InputError("assignment does not cover the network");
  for (int p = 0; p < a.k; ++p) {
    worlds[p].index = p;
    worlds[p].junctions.assign(nj, JunctionRole::kAbsent);
    worlds[p].edges.assign(ne, EdgeRole::kAbsent);
  }
  for (std::size_t j = 0; j < nj; ++j) {
    const int p = a.part[j];
    if (p < 0 || p >= a.k) throw InputError("partition index out of range for junction '" + net.junctions()[j].id + "'");
    worlds[p].junctions[j] = JunctionRole::kPrimary;
  }
  for (std::size_t e = 0; e < ne; ++e) {
    const auto u = net.edge_from(static_cast<EdgeIndex>(e));
    const auto v = net.edge_to(static_cast<EdgeIndex>(e));
    const int pu = a.part[u];
    const int pv = a.part[v];
    if (pu == pv) {
      worlds[pu].edges[e] = EdgeRole::kInternal;
      continue;
    }
    worlds[pv].edges[e] = EdgeRole::kPrimary;
    worlds[pu].edges[e] = EdgeRole::kShadow;
    if (worlds[pv].junctions[u] == JunctionRole::kAbsent) worlds[pv].junctions[u] = JunctionRole::kShadow;
    if (worlds[pu].junctions[v] == JunctionRole::kAbsent) worlds[pu].junctions[v] = JunctionRole::kShadow;
  }
  return worlds;
}

}  // namespace trafsim
