#include "trafsim/netmodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "trafsim/errors.hpp"
#include "trafsim/text_io.hpp"

namespace trafsim {

double SignalProgram::cycle() const {
  double total = 0.0;
  for (const auto& p : phases) total += p.duration;
  return total;
}

const SignalPhase& SignalProgram::phase_at(double t) const {
  const double c = cycle();
  double r = std::fmod(t, c);
  if (r < 0) r += c;
  for (const auto& p : phases) {
    if (r < p.duration) return p;
    r -= p.duration;
  }
  return phases.back();
}

void RoadNetwork::add_junction(Junction j) {
  finalized_ = false;
  junctions_.push_back(std::move(j));
}

void RoadNetwork::add_edge(Edge e) {
  finalized_ = false;
  edges_.push_back(std::move(e));
}

void RoadNetwork::add_connection(Connection c) {
  finalized_ = false;
  connections_.push_back(std::move(c));
}

void RoadNetwork::add_signal(SignalProgram p) {
  finalized_ = false;
  signals_.push_back(std::move(p));
}

void RoadNetwork::finalize() {
  junction_ids_.clear();
  edge_ids_.clear();
  signal_ids_.clear();
  for (std::size_t i = 0; i < junctions_.size(); ++i) {
    if (!junction_ids_.emplace(junctions_[i].id, static_cast<JunctionIndex>(i)).second) {
      throw InputError("duplicate junction id '" + junctions_[i].id + "'");
    }
  }
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    if (!edge_ids_.emplace(edges_[i].id, static_cast<EdgeIndex>(i)).second) {
      throw InputError("duplicate edge id '" + edges_[i].id + "'");
    }
  }
  for (std::size_t i = 0; i < signals_.size(); ++i) {
    if (!signal_ids_.emplace(signals_[i].id, static_cast<std::int32_t>(i)).second) {
      throw InputError("duplicate signal program id '" + signals_[i].id + "'");
    }
  }

  auto lookup_junction = [&](const std::string& id, const std::string& who) {
    auto it = junction_ids_.find(id);
    if (it == junction_ids_.end()) throw InputError("dangling reference: junction '" + id + "' (used by " + who + ")");
    return it->second;
  };
  auto lookup_edge = [&](const std::string& id, const std::string& who) {
    auto it = edge_ids_.find(id);
    if (it == edge_ids_.end()) throw InputError("dangling reference: edge '" + id + "' (used by " + who + ")");
    return it->second;
  };

  for (const auto& j : junctions_) {
    if (j.signal && !signal_ids_.contains(*j.signal)) {
      throw InputError("dangling reference: signal program '" + *j.signal + "' (used by junction " + j.id + ")");
    }
  }

  const auto nj = junctions_.size();
  const auto ne = edges_.size();
  edge_from_.assign(ne, kNone);
  edge_to_.assign(ne, kNone);
  out_edges_.assign(nj, {});
  in_edges_.assign(nj, {});
  lane_offset_.assign(ne, 0);
  total_lanes_ = 0;
  for (std::size_t i = 0; i < ne; ++i) {
    const auto& e = edges_[i];
    edge_from_[i] = lookup_junction(e.from, "edge " + e.id);
    edge_to_[i] = lookup_junction(e.to, "edge " + e.id);
    out_edges_[edge_from_[i]].push_back(static_cast<EdgeIndex>(i));
    in_edges_[edge_to_[i]].push_back(static_cast<EdgeIndex>(i));
    lane_offset_[i] = total_lanes_;
    total_lanes_ += std::max(e.lanes, 0);
  }

  connections_from_.assign(ne, {});
  successors_.assign(ne, {});
  conn_to_edge_.assign(connections_.size(), kNone);
  conn_signal_.assign(connections_.size(), kNone);
  for (std::size_t i = 0; i < connections_.size(); ++i) {
    const auto& c = connections_[i];
    const std::string who = "connection " + c.from_edge + "->" + c.to_edge;
    const EdgeIndex from = lookup_edge(c.from_edge, who);
    const EdgeIndex to = lookup_edge(c.to_edge, who);
    conn_to_edge_[i] = to;
    connections_from_[from].push_back(static_cast<ConnectionIndex>(i));
    successors_[from].push_back(to);
    if (c.signal_slot) {
      const auto& via = junctions_[edge_to_[from]];
      if (via.signal) conn_signal_[i] = signal_ids_.at(*via.signal);
    }
  }
  for (auto& s : successors_) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  finalized_ = true;
}

std::optional<JunctionIndex> RoadNetwork::find_junction(const std::string& id) const {
  auto it = junction_ids_.find(id);
  if (it == junction_ids_.end()) return std::nullopt;
  return it->second;
}

std::optional<EdgeIndex> RoadNetwork::find_edge(const std::string& id) const {
  auto it = edge_ids_.find(id);
  if (it == edge_ids_.end()) return std::nullopt;
  return it->second;
}

JunctionIndex RoadNetwork::junction_index(const std::string& id) const {
  auto j = find_junction(id);
  if (!j) throw InputError("unknown junction '" + id + "'");
  return *j;
}

EdgeIndex RoadNetwork::edge_index(const std::string& id) const {
  auto e = find_edge(id);
  if (!e) throw InputError("unknown edge '" + id + "'");
  return *e;
}

std::optional<ConnectionIndex> RoadNetwork::connection_for(EdgeIndex e, int lane, EdgeIndex next) const {
  std::optional<ConnectionIndex> best;
  for (ConnectionIndex c : connections_from_[e]) {
    const auto& conn = connections_[c];
    if (conn.from_lane != lane || conn_to_edge_[c] != next) continue;
    if (!best || conn.to_lane < connections_[*best].to_lane) best = c;
  }
  return best;
}

bool RoadNetwork::connected(EdgeIndex e, EdgeIndex next) const {
  const auto s = successors_[e];
  return std::binary_search(s.begin(), s.end(), next);
}

const SignalProgram* RoadNetwork::connection_signal(ConnectionIndex c) const {
  const auto s = conn_signal_[c];
  return s == kNone ? nullptr : &signals_[s];
}

bool RoadNetwork::operator==(const RoadNetwork& other) const {
  return junctions_ == other.junctions_ && edges_ == other.edges_ && connections_ == other.connections_ &&
         signals_ == other.signals_;
}

std::vector<Violation> validate(const RoadNetwork& net) {
  std::vector<Violation> out;
  std::unordered_map<std::string, const Edge*> edges;
  std::unordered_map<std::string, const SignalProgram*> programs;
  std::unordered_map<std::string, int> incident;
  for (const auto& e : net.edges()) edges.emplace(e.id, &e);
  for (const auto& p : net.signals()) programs.emplace(p.id, &p);
  for (const auto& j : net.junctions()) incident.emplace(j.id, 0);

  for (const auto& e : net.edges()) {
    if (!(e.length > 0.0) || !std::isfinite(e.length)) out.push_back({e.id, "edge length must be positive"});
    if (!(e.speed_limit > 0.0) || !std::isfinite(e.speed_limit)) {
      out.push_back({e.id, "edge speed limit must be positive"});
    }
    if (e.lanes < 1) out.push_back({e.id, "edge must have at least one lane"});
    auto from = incident.find(e.from);
    auto to = incident.find(e.to);
    if (from == incident.end()) out.push_back({e.id, "edge references unknown junction '" + e.from + "'"});
    else ++from->second;
    if (to == incident.end()) out.push_back({e.id, "edge references unknown junction '" + e.to + "'"});
    else ++to->second;
  }
  for (const auto& j : net.junctions()) {
    if (incident[j.id] == 0) out.push_back({j.id, "junction has no incident edge"});
  }

  // Controlled slots per junction: every phase must cover every slot in use.
  std::unordered_map<std::string, int> max_slot;
  for (const auto& c : net.connections()) {
    const std::string name = c.from_edge + "->" + c.to_edge;
    auto fe = edges.find(c.from_edge);
    auto te = edges.find(c.to_edge);
    if (fe == edges.end()) {
      out.push_back({name, "connection references unknown edge '" + c.from_edge + "'"});
      continue;
    }
    if (te == edges.end()) {
      out.push_back({name, "connection references unknown edge '" + c.to_edge + "'"});
      continue;
    }
    if (c.from_lane < 0 || c.from_lane >= fe->second->lanes) out.push_back({name, "connection from_lane out of range"});
    if (c.to_lane < 0 || c.to_lane >= te->second->lanes) out.push_back({name, "connection to_lane out of range"});
    if (te->second->from != fe->second->to) {
      out.push_back({name, "connection does not join consecutive edges"});
    }
    if (c.signal_slot) {
      if (*c.signal_slot < 0) {
        out.push_back({name, "negative signal slot"});
      } else {
        auto& m = max_slot[fe->second->to];
        m = std::max(m, *c.signal_slot + 1);
      }
    }
  }
  for (const auto& j : net.junctions()) {
    auto used = max_slot.find(j.id);
    if (!j.signal) {
      if (used != max_slot.end()) out.push_back({j.id, "signal slots used at an unsignalized junction"});
      continue;
    }
    auto p = programs.find(*j.signal);
    if (p == programs.end()) {
      out.push_back({j.id, "junction references unknown signal program '" + *j.signal + "'"});
      continue;
    }
    if (used == max_slot.end()) continue;
    for (const auto& phase : p->second->phases) {
      if (static_cast<int>(phase.state.size()) < used->second) {
        out.push_back({j.id, "signal program '" + p->first + "' phase does not cover every controlled connection"});
        break;
      }
    }
  }
  for (const auto& p : net.signals()) {
    if (p.phases.empty()) out.push_back({p.id, "signal program has no phases"});
    for (const auto& phase : p.phases) {
      if (!(phase.duration > 0.0)) out.push_back({p.id, "signal phase duration must be positive"});
      if (phase.state.find_first_not_of("Gr") != std::string::npos) {
        out.push_back({p.id, "signal phase state may only contain 'G' and 'r'"});
      }
    }
  }
  return out;
}

RoadNetwork read_network(std::istream& in, const std::string& source) {
  RoadNetwork net;
  std::unordered_map<std::string, std::size_t> program_pos;
  std::vector<SignalProgram> programs;
  text::for_each_record(in, source, [&](const std::string& section, const std::vector<std::string_view>& f,
                                        const text::Location& loc) {
    auto need = [&](std::size_t lo, std::size_t hi) {
      if (f.size() < lo || f.size() > hi) {
        text::fail(loc, "[" + section + "] record has " + std::to_string(f.size()) + " fields");
      }
    };
    if (section == "junctions") {
      need(3, 4);
      Junction j;
      j.id = std::string(f[0]);
      j.x = text::parse_double(f[1], loc, "x");
      j.y = text::parse_double(f[2], loc, "y");
      if (f.size() == 4 && !f[3].empty()) j.signal = std::string(f[3]);
      net.add_junction(std::move(j));
    } else if (section == "edges") {
      need(6, 6);
      Edge e;
      e.id = std::string(f[0]);
      e.from = std::string(f[1]);
      e.to = std::string(f[2]);
      e.length = text::parse_double(f[3], loc, "length");
      e.speed_limit = text::parse_double(f[4], loc, "speed_limit");
      e.lanes = static_cast<int>(text::parse_int(f[5], loc, "lanes"));
      net.add_edge(std::move(e));
    } else if (section == "connections") {
      need(4, 5);
      Connection c;
      c.from_edge = std::string(f[0]);
      c.from_lane = static_cast<int>(text::parse_int(f[1], loc, "from_lane"));
      c.to_edge = std::string(f[2]);
      c.to_lane = static_cast<int>(text::parse_int(f[3], loc, "to_lane"));
      if (f.size() == 5 && !f[4].empty()) c.signal_slot = static_cast<int>(text::parse_int(f[4], loc, "signal_slot"));
      net.add_connection(std::move(c));
    } else if (section == "signals") {
      need(3, 3);
      std::string id(f[0]);
      SignalPhase phase{text::parse_double(f[1], loc, "duration"), std::string(f[2])};
      auto [it, fresh] = program_pos.emplace(id, programs.size());
      if (fresh) programs.push_back(SignalProgram{id, {}});
      programs[it->second].phases.push_back(std::move(phase));
    } else {
      text::fail(loc, "unknown section [" + section + "]");
    }
  });
  for (auto& p : programs) net.add_signal(std::move(p));
  net.finalize();
  return net;
}

void write_network(std::ostream& out, const RoadNetwork& net) {
  out << "[junctions]\n";
  for (const auto& j : net.junctions()) {
    out << j.id << ',' << text::format_double(j.x) << ',' << text::format_double(j.y);
    if (j.signal) out << ',' << *j.signal;
    out << '\n';
  }
  out << "[edges]\n";
  for (const auto& e : net.edges()) {
    out << e.id << ',' << e.from << ',' << e.to << ',' << text::format_double(e.length) << ','
        << text::format_double(e.speed_limit) << ',' << e.lanes << '\n';
  }
  out << "[connections]\n";
  for (const auto& c : net.connections()) {
    out << c.from_edge << ',' << c.from_lane << ',' << c.to_edge << ',' << c.to_lane;
    if (c.signal_slot) out << ',' << *c.signal_slot;
    out << '\n';
  }
  out << "[signals]\n";
  for (const auto& p : net.signals()) {
    for (const auto& phase : p.phases) {
      out << p.id << ',' << text::format_double(phase.duration) << ',' << phase.state << '\n';
    }
  }
}

RoadNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open network file '" + path.string() + "'");
  RoadNetwork net = read_network(in, path.string());
  auto violations = validate(net);
  if (!violations.empty()) {
    throw InputError(path.string() + ": invalid network: " + violations.front().subject + ": " +
                     violations.front().message);
  }
  return net;
}

void save_network(const std::filesystem::path& path, const RoadNetwork& net) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write network file '" + path.string() + "'");
  write_network(out, net);
}

std::string grid_junction_id(int col, int row) {
  return "J" + std::to_string(col) + "_" + std::to_string(row);
}

namespace {

enum class Turn { kRight, kStraight, kLeft, kUTurn };

Turn classify(double dx_in, double dy_in, double dx_out, double dy_out) {
  const double cross = dx_in * dy_out - dy_in * dx_out;
  const double dot = dx_in * dx_out + dy_in * dy_out;
  if (cross > 0) return Turn::kLeft;
  if (cross < 0) return Turn::kRight;
  return dot > 0 ? Turn::kStraight : Turn::kUTurn;
}

}  // namespace

RoadNetwork generate_grid(const GridSpec& spec) {
  if (spec.cols < 1 || spec.rows < 1 || spec.cols * spec.rows < 2) {
    throw InputError("degenerate grid dimension: cols=" + std::to_string(spec.cols) +
                     " rows=" + std::to_string(spec.rows) + " (need cols>=2 or rows>=2, both >= 1)");
  }
  if (!(spec.h_len > 0) || !(spec.v_len > 0) || !(spec.speed_limit > 0) || spec.lanes_per_edge < 1 ||
      !(spec.green_duration > 0)) {
    throw InputError("grid lengths, speed, lanes and green duration must be positive");
  }

  RoadNetwork net;
  const int lanes = spec.lanes_per_edge;
  auto in_grid = [&](int c, int r) { return c >= 0 && r >= 0 && c < spec.cols && r < spec.rows; };
  auto edge_id = [](int c0, int r0, int c1, int r1) {
    return grid_junction_id(c0, r0) + "-" + grid_junction_id(c1, r1);
  };

  // Neighbour order: east, north, west, south.
  constexpr int kDc[4] = {1, 0, -1, 0};
  constexpr int kDr[4] = {0, 1, 0, -1};

  struct Dir {
    int dc, dr;
  };
  std::vector<std::vector<Dir>> incoming(static_cast<std::size_t>(spec.cols * spec.rows));
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      for (int d = 0; d < 4; ++d) {
        const int c1 = c + kDc[d], r1 = r + kDr[d];
        if (!in_grid(c1, r1)) continue;
        net.add_edge(Edge{edge_id(c, r, c1, r1), grid_junction_id(c, r), grid_junction_id(c1, r1),
                          kDr[d] == 0 ? spec.h_len : spec.v_len, spec.speed_limit, lanes});
        incoming[static_cast<std::size_t>(r1 * spec.cols + c1)].push_back({kDc[d], kDr[d]});
      }
    }
  }

  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      const auto idx = static_cast<std::size_t>(r * spec.cols + c);
      const bool signal = spec.signalized && incoming[idx].size() >= 2;
      Junction j{grid_junction_id(c, r), c * spec.h_len, r * spec.v_len, std::nullopt};
      if (signal) j.signal = j.id;
      net.add_junction(std::move(j));
    }
  }

  // Connections, grouped by the junction they cross; slots numbered per junction.
  std::vector<int> next_slot(static_cast<std::size_t>(spec.cols * spec.rows), 0);
  std::vector<std::string> slot_axis(static_cast<std::size_t>(spec.cols * spec.rows));
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      for (int d = 0; d < 4; ++d) {
        const int c1 = c + kDc[d], r1 = r + kDr[d];
        if (!in_grid(c1, r1)) continue;
        const auto via = static_cast<std::size_t>(r1 * spec.cols + c1);
        const bool signal = spec.signalized && incoming[via].size() >= 2;
        // Outgoing options at (c1,r1), U-turn only when nothing else exists.
        std::vector<std::pair<int, Turn>> outs;
        for (int d2 = 0; d2 < 4; ++d2) {
          const int c2 = c1 + kDc[d2], r2 = r1 + kDr[d2];
          if (!in_grid(c2, r2)) continue;
          outs.emplace_back(d2, classify(kDc[d], kDr[d], kDc[d2], kDr[d2]));
        }
        const bool only_uturn = std::all_of(outs.begin(), outs.end(), [](auto& o) { return o.second == Turn::kUTurn; });
        for (auto [d2, turn] : outs) {
          if (turn == Turn::kUTurn && !only_uturn) continue;
          const int c2 = c1 + kDc[d2], r2 = r1 + kDr[d2];
          std::vector<std::pair<int, int>> lane_pairs;
          switch (turn) {
            case Turn::kRight:
              lane_pairs.emplace_back(0, 0);
              break;
            case Turn::kLeft:
            case Turn::kUTurn:
              lane_pairs.emplace_back(lanes - 1, lanes - 1);
              break;
            case Turn::kStraight:
              for (int l = 0; l < lanes; ++l) lane_pairs.emplace_back(l, l);
              break;
          }
          for (auto [fl, tl] : lane_pairs) {
            Connection conn{edge_id(c, r, c1, r1), fl, edge_id(c1, r1, c2, r2), tl, std::nullopt};
            if (signal) {
              conn.signal_slot = next_slot[via]++;
              slot_axis[via].push_back(kDr[d] != 0 ? 'v' : 'h');
            }
            net.add_connection(std::move(conn));
          }
        }
      }
    }
  }

  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      const auto idx = static_cast<std::size_t>(r * spec.cols + c);
      if (!spec.signalized || incoming[idx].size() < 2) continue;
      std::string ns, ew;
      for (char axis : slot_axis[idx]) {
        ns.push_back(axis == 'v' ? 'G' : 'r');
        ew.push_back(axis == 'h' ? 'G' : 'r');
      }
      net.add_signal(SignalProgram{grid_junction_id(c, r),
                                   {SignalPhase{spec.green_duration, ns}, SignalPhase{spec.green_duration, ew}}});
    }
  }
  net.finalize();
  return net;
}

}  // namespace trafsim
