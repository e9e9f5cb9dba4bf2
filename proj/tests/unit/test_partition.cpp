#include <map>
#include <random>
#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "trafsim/errors.hpp"
#include "trafsim/partition.hpp"

using namespace trafsim;

namespace {

RoadNetwork three_junctions() {
  RoadNetwork net;
  net.add_junction({"A", 0, 0, {}});
  net.add_junction({"B", 100, 0, {}});
  net.add_junction({"C", 150, 0, {}});
  net.add_edge({"ab", "A", "B", 100, 10, 1});
  net.add_edge({"bc", "B", "C", 50, 10, 1});
  net.add_connection({"ab", 0, "bc", 0, {}});
  net.finalize();
  return net;
}

// w'_v = sum over incident edges of count * length, w_v = mean(w') + w'_v, from raw tuples
std::map<std::string, double> oracle_weights(const std::vector<std::tuple<std::string, std::string, double, double>>& edges,
                                             const std::vector<std::string>& junctions) {
  std::map<std::string, double> raw;
  for (const auto& j : junctions) raw[j] = 0;
  for (const auto& [from, to, len, count] : edges) {
    raw[from] += count * len;
    raw[to] += count * len;
  }
  double mean = 0;
  for (auto& [_, w] : raw) mean += w;
  mean /= static_cast<double>(raw.size());
  for (auto& [_, w] : raw) w += mean;
  return raw;
}

RoadNetwork grid(int c, int r) {
  GridSpec g;
  g.cols = c;
  g.rows = r;
  return generate_grid(g);
}

TripTable trips(const RoadNetwork& net, double rate, double duration, std::uint64_t seed) {
  TripGenSpec s;
  s.rate = rate;
  s.duration = duration;
  s.seed = seed;
  return generate_random_trips(net, s);
}

}  // namespace

TEST_SUITE("partition") {
  TEST_CASE("access counts") {
    auto net = testing::line_network(3);
    TripTable none;
    auto c = edge_access_counts(net, none);
    for (auto x : c.counts) CHECK(x == 0);

    TripTable t;
    t.vehicles = {testing::vehicle("p", 0, {"a0", "a1"}), testing::vehicle("q", 0, {"a0"})};
    c = edge_access_counts(net, t);
    CHECK(c.counts[net.edge_index("a0")] == 2);
    CHECK(c.counts[net.edge_index("a1")] == 1);
    CHECK(c.counts[net.edge_index("b0")] == 0);

    t.vehicles.push_back(testing::vehicle("r", 0, {"nope"}));
    CHECK_THROWS_AS(edge_access_counts(net, t), InputError);
  }

  TEST_CASE("access counts sum to the total route length") {
    auto net = grid(10, 10);
    auto t = trips(net, 1, 3600, 5);
    auto c = edge_access_counts(net, t);
    std::int64_t total = 0, routes = 0;
    for (auto x : c.counts) total += x;
    std::map<std::string, std::int64_t> recount;
    for (const auto& v : t.vehicles) {
      routes += static_cast<std::int64_t>(v.route.size());
      for (const auto& e : v.route) ++recount[e];
    }
    CHECK(total == routes);
    for (const auto& [id, n] : recount) CHECK(c.counts[net.edge_index(id)] == n);
  }

  TEST_CASE("three-junction worked example") {
    auto net = three_junctions();
    TrafficProfile p{{2, 1}};
    auto w = vertex_weights(net, p);
    auto o = oracle_weights({{"A", "B", 100, 2}, {"B", "C", 50, 1}}, {"A", "B", "C"});
    const std::vector<double> raw{200, 250, 50};
    const std::vector<double> expect{1100.0 / 3, 1250.0 / 3, 650.0 / 3};
    for (int i = 0; i < 3; ++i) {
      const auto& id = net.junctions()[i].id;
      CHECK(w.raw[i] == doctest::Approx(raw[i]).epsilon(1e-12));
      CHECK(w.weight[i] == doctest::Approx(o[id]).epsilon(1e-9));
      CHECK(w.weight[i] == doctest::Approx(expect[i]).epsilon(1e-9));
    }
    CHECK(w.weight[0] == doctest::Approx(366.67).epsilon(5e-5));  // two-decimal figures
    CHECK(w.weight[1] == doctest::Approx(416.67).epsilon(5e-5));
    CHECK(w.weight[2] == doctest::Approx(216.67).epsilon(5e-5));
  }

  TEST_CASE("weights: base identity, linearity and zero traffic (100 random instances)") {
    std::mt19937_64 rng(99);
    for (int inst = 0; inst < 100; ++inst) {
      GridSpec g;
      g.cols = 2 + static_cast<int>(rng() % 6);
      g.rows = 2 + static_cast<int>(rng() % 6);
      g.h_len = 50 + static_cast<double>(rng() % 300);
      g.v_len = 50 + static_cast<double>(rng() % 300);
      auto net = generate_grid(g);
      TrafficProfile p;
      for (std::size_t e = 0; e < net.edges().size(); ++e) p.counts.push_back(static_cast<std::int64_t>(rng() % 50));
      auto w = vertex_weights(net, p);

      std::vector<std::tuple<std::string, std::string, double, double>> tuples;
      std::vector<std::string> ids;
      for (std::size_t e = 0; e < net.edges().size(); ++e) {
        const auto& ed = net.edges()[e];
        tuples.emplace_back(ed.from, ed.to, ed.length, static_cast<double>(p.counts[e]));
      }
      for (const auto& j : net.junctions()) ids.push_back(j.id);
      auto o = oracle_weights(tuples, ids);
      double mean = 0;
      for (double r : w.raw) mean += r;
      mean /= static_cast<double>(w.raw.size());
      for (std::size_t j = 0; j < ids.size(); ++j) {
        REQUIRE(w.weight[j] == doctest::Approx(o[ids[j]]).epsilon(1e-9));
        REQUIRE(w.weight[j] == mean + w.raw[j]);
      }

      TrafficProfile twice = p;
      for (auto& c : twice.counts) c *= 2;
      auto w2 = vertex_weights(net, twice);
      for (std::size_t j = 0; j < ids.size(); ++j) {
        REQUIRE(w2.raw[j] == doctest::Approx(2 * w.raw[j]).epsilon(1e-12));
        REQUIRE(w2.weight[j] == doctest::Approx(2 * w.weight[j]).epsilon(1e-12));
      }

      TrafficProfile zero;
      zero.counts.assign(net.edges().size(), 0);
      auto w0 = vertex_weights(net, zero);
      for (std::size_t j = 0; j < ids.size(); ++j) REQUIRE(w0.weight[j] == 0.0);
      // a short profile means no traffic on the missing edges
      CHECK(vertex_weights(net, TrafficProfile{}).weight == w0.weight);
    }
  }

  TEST_CASE("k=1 is the all-zero assignment") {
    auto net = grid(5, 4);
    auto a = partition(net, uniform_weights(net), 1);
    CHECK(a.k == 1);
    for (int p : a.part) CHECK(p == 0);
    CHECK(cut_size(net, a) == 0);
    CHECK(border_edge_ratio(net, a) == 0.0);
  }

  TEST_CASE("path graph A-B-C-D matches the brute-force best bisection") {
    auto net = testing::line_network(4);
    auto w = uniform_weights(net);
    PartitionOptions opt;
    std::int64_t best = -1;
    for (unsigned mask = 1; mask + 1 < 16; ++mask) {
      PartitionAssignment a{2, {}, true};
      for (int j = 0; j < 4; ++j) a.part.push_back((mask >> j) & 1);
      if (balance_factor(w, a) > 1 + opt.epsilon) continue;
      const auto c = cut_size(net, a);
      if (best < 0 || c < best) best = c;
    }
    REQUIRE(best == 1);
    auto a = partition(net, w, 2, opt);
    CHECK(a.balanced);
    CHECK(cut_size(net, a) == best);
    CHECK(a.part[0] == a.part[1]);
    CHECK(a.part[2] == a.part[3]);
    CHECK(a.part[0] != a.part[2]);
  }

  TEST_CASE("invalid k") {
    auto net = testing::line_network(4);
    CHECK_THROWS_AS(partition(net, uniform_weights(net), 0), InputError);
    CHECK_THROWS_AS(partition(net, uniform_weights(net), 5), InputError);
    CHECK_NOTHROW(partition(net, uniform_weights(net), 4));
  }

  TEST_CASE("balanced and deterministic on traffic-aware grid weights") {
    auto net = grid(24, 16);
    auto w = vertex_weights(net, edge_access_counts(net, trips(net, 1, 2000, 3)));
    for (int k : {2, 3, 4, 8, 16}) {
      CAPTURE(k);
      auto a = partition(net, w, k);
      auto b = partition(net, w, k);
      CHECK(a == b);
      CHECK(a.balanced);
      CHECK(balance_factor(w, a) <= 1.05 + 1e-9);
      std::vector<int> sizes(k);
      for (int p : a.part) {
        REQUIRE(p >= 0);
        REQUIRE(p < k);
        ++sizes[p];
      }
      for (int s : sizes) CHECK(s > 0);
    }
  }

  TEST_CASE("a dominating junction is reported as unbalanced") {
    auto net = testing::line_network(4);
    VertexWeights w = uniform_weights(net);
    w.weight[1] = 1000;
    auto a = partition(net, w, 2);
    CHECK_FALSE(a.balanced);
    CHECK(a.part.size() == 4);
  }

  TEST_CASE("grid bisection cuts a small share of edges") {
    auto net = grid(40, 10);
    auto a = partition(net, uniform_weights(net), 2);
    CHECK(a.balanced);
    // the straight cut across the short side
    CHECK(cut_size(net, a) == 10);
    CHECK(border_edge_ratio(net, a) == doctest::Approx(20.0 / net.edges().size()));
  }

  TEST_CASE("assignment files") {
    auto net = grid(4, 3);
    auto a = partition(net, uniform_weights(net), 3);
    std::stringstream buf;
    write_assignment(buf, net, a);
    auto back = read_assignment(buf, net, 3);
    CHECK(back == a);
    std::stringstream buf2(buf.str());
    CHECK(read_assignment(buf2, net).k == 3);

    auto bad = [&](std::string text, int k) {
      std::istringstream in(text);
      return read_assignment(in, net, k);
    };
    std::string good = buf.str();
    CHECK_THROWS_WITH_AS(bad(good + "J9_9,0\n", 3), doctest::Contains("J9_9"), InputError);
    std::string high = good;
    high.replace(high.find(",0"), 2, ",3");
    CHECK_THROWS_AS(bad(high, 3), InputError);
    CHECK_THROWS_AS(bad(good + "J0_0,1\n", 3), InputError);
    CHECK_THROWS_AS(bad(good.substr(0, good.rfind('\n', good.size() - 2) + 1), 3), InputError);
    CHECK_THROWS_AS(bad("J0_0,x\n", 3), InputError);
  }

  TEST_CASE("materialize: k=1 is the whole network with no shadows") {
    auto net = grid(3, 3);
    auto worlds = materialize(net, partition(net, uniform_weights(net), 1));
    REQUIRE(worlds.size() == 1);
    CHECK(worlds[0].count(EdgeRole::kInternal) == net.edges().size());
    CHECK(worlds[0].count(JunctionRole::kPrimary) == net.junctions().size());
    CHECK(worlds[0].count(EdgeRole::kShadow) == 0);
    CHECK(worlds[0].count(JunctionRole::kShadow) == 0);
  }

  TEST_CASE("materialize: split pair follows the destination rule") {
    auto net = testing::line_network(2);
    PartitionAssignment a{2, {0, 1}, true};
    auto w = materialize(net, a);
    const auto ab = net.edge_index("a0"), ba = net.edge_index("b0");
    CHECK(w[1].edges[ab] == EdgeRole::kPrimary);
    CHECK(w[0].edges[ab] == EdgeRole::kShadow);
    CHECK(w[0].edges[ba] == EdgeRole::kPrimary);
    CHECK(w[1].edges[ba] == EdgeRole::kShadow);
    CHECK(w[0].junctions[1] == JunctionRole::kShadow);
    CHECK(w[1].junctions[0] == JunctionRole::kShadow);
  }

  TEST_CASE("materialize completeness on random assignments (property)") {
    std::mt19937_64 rng(8);
    auto net = grid(6, 5);
    for (int trial = 0; trial < 200; ++trial) {
      const int k = 1 + static_cast<int>(rng() % 6);
      PartitionAssignment a{k, {}, true};
      for (std::size_t j = 0; j < net.junctions().size(); ++j) a.part.push_back(static_cast<int>(rng() % k));
      auto worlds = materialize(net, a);
      REQUIRE(static_cast<int>(worlds.size()) == k);
      std::size_t owned = 0;
      for (const auto& w : worlds) owned += w.count(EdgeRole::kInternal) + w.count(EdgeRole::kPrimary);
      CHECK(owned == net.edges().size());
      for (EdgeIndex e = 0; e < static_cast<EdgeIndex>(net.edges().size()); ++e) {
        int primary = 0, shadow = 0, internal = 0;
        for (const auto& w : worlds) {
          primary += w.edges[e] == EdgeRole::kPrimary;
          shadow += w.edges[e] == EdgeRole::kShadow;
          internal += w.edges[e] == EdgeRole::kInternal;
        }
        const int pu = a.part[net.edge_from(e)], pv = a.part[net.edge_to(e)];
        if (pu == pv) {
          REQUIRE((internal == 1 && primary == 0 && shadow == 0));
          REQUIRE(worlds[pu].edges[e] == EdgeRole::kInternal);
        } else {
          REQUIRE((primary == 1 && shadow == 1 && internal == 0));
          REQUIRE(worlds[pv].edges[e] == EdgeRole::kPrimary);
          REQUIRE(worlds[pu].edges[e] == EdgeRole::kShadow);
        }
      }
      for (std::size_t j = 0; j < net.junctions().size(); ++j) {
        int primary = 0;
        for (const auto& w : worlds) primary += w.junctions[j] == JunctionRole::kPrimary;
        REQUIRE(primary == 1);
      }
    }
  }
}
