#pragma once

// Small hand-built networks shared by the unit suites.

#include <sstream>
#include <string>
#include <vector>

#include "trafsim/demand.hpp"
#include "trafsim/netmodel.hpp"

namespace testing {

inline trafsim::RoadNetwork parse_net(const std::string& text) {
  std::istringstream in(text);
  return trafsim::read_network(in, "<test>");
}

// Junctions J0..J{n-1} on a line, spaced `len` apart, edges both ways, no signals.
// Edge ids: "a<i>" forward J<i>->J<i+1>, "b<i>" backward J<i+1>->J<i>.
inline trafsim::RoadNetwork line_network(int n, double len = 100.0, double speed = 13.89, int lanes = 1) {
  trafsim::RoadNetwork net;
  for (int i = 0; i < n; ++i) net.add_junction({"J" + std::to_string(i), i * len, 0.0, std::nullopt});
  for (int i = 0; i + 1 < n; ++i) {
    const auto a = "J" + std::to_string(i), b = "J" + std::to_string(i + 1);
    net.add_edge({"a" + std::to_string(i), a, b, len, speed, lanes});
    net.add_edge({"b" + std::to_string(i), b, a, len, speed, lanes});
  }
  for (int i = 0; i + 2 < n; ++i) {
    for (int l = 0; l < lanes; ++l) {
      net.add_connection({"a" + std::to_string(i), l, "a" + std::to_string(i + 1), l, std::nullopt});
      net.add_connection({"b" + std::to_string(i + 1), l, "b" + std::to_string(i), l, std::nullopt});
    }
  }
  net.finalize();
  return net;
}

inline trafsim::VehicleSpec vehicle(std::string id, double t, std::vector<std::string> route) {
  return trafsim::VehicleSpec{std::move(id), t, std::move(route), 0.0};
}

}  // namespace testing
