#include "trafsim/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "trafsim/demand.hpp"
#include "trafsim/engine.hpp"
#include "trafsim/errors.hpp"
#include "trafsim/metrics.hpp"
#include "trafsim/netmodel.hpp"
#include "trafsim/partition.hpp"
#include "trafsim/sync.hpp"
#include "trafsim/text_io.hpp"

namespace trafsim {

namespace {

namespace fs = std::filesystem;
using Action = std::function<void(std::ostream&)>;

struct Command {
  const char* name;
  const char* about;
  std::function<Action(CLI::App&)> setup;
};

void add_sim_options(CLI::App& app, SimulationConfig& cfg, bool group_flag) {
  app.add_option("--step", cfg.step_length, "Timestep length in seconds")->capture_default_str();
  app.add_option("--end", cfg.end_time, "Simulated seconds, a multiple of the step")->capture_default_str();
  if (group_flag) app.add_flag("--group", cfg.grouping.enabled, "Enable virtual grouping of congested vehicles");
  app.add_option("--alpha", cfg.grouping.alpha, "Congestion threshold as a fraction of the speed limit")
      ->capture_default_str();
  app.add_option("--zones", cfg.grouping.zones, "Body zones per lane")->capture_default_str();
  app.add_option("--exit-fraction", cfg.grouping.exit_fraction, "Exit zone length as a fraction of the lane")
      ->capture_default_str();
  app.add_option("--exit-cap", cfg.grouping.exit_cap, "Exit zone length cap in meters")->capture_default_str();
  app.add_flag("--check", cfg.check_invariants, "Verify engine invariants after every step");
}

template <typename F>
void write_file(const fs::path& path, F&& body) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  body(out);
}

Action setup_generate_grid(CLI::App& app) {
  auto spec = std::make_shared<GridSpec>();
  auto output = std::make_shared<std::string>();
  auto unsignalized = std::make_shared<bool>(false);
  app.add_option("--cols", spec->cols, "Junction columns (>= 2)")
      ->check(CLI::Range(2, std::numeric_limits<int>::max()))
      ->capture_default_str();
  app.add_option("--rows", spec->rows, "Junction rows (>= 2)")
      ->check(CLI::Range(2, std::numeric_limits<int>::max()))
      ->capture_default_str();
  app.add_option("--hlen", spec->h_len, "Length of east-west edges in meters")->capture_default_str();
  app.add_option("--vlen", spec->v_len, "Length of north-south edges in meters")->capture_default_str();
  app.add_option("--lanes", spec->lanes_per_edge, "Lanes per edge")->capture_default_str();
  app.add_option("--speed", spec->speed_limit, "Speed limit in m/s")->capture_default_str();
  app.add_option("--green", spec->green_duration, "Green phase duration in seconds")->capture_default_str();
  app.add_flag("--unsignalized", *unsignalized, "Generate junctions without signal programs");
  app.add_option("-o,--output", *output, "Network file to write")->required();
  return [=](std::ostream& out) {
    spec->signalized = !*unsignalized;
    const auto net = generate_grid(*spec);
    save_network(*output, net);
    out << "junctions=" << net.junctions().size() << " edges=" << net.edges().size() << '\n';
  };
}

Action setup_generate_trips(CLI::App& app) {
  auto spec = std::make_shared<TripGenSpec>();
  auto network = std::make_shared<std::string>();
  auto output = std::make_shared<std::string>();
  app.add_option("-n,--network", *network, "Network file")->required();
  app.add_option("--rate", spec->rate, "Vehicles inserted per second")->capture_default_str();
  app.add_option("--duration", spec->duration, "Insertion period in seconds")->capture_default_str();
  app.add_option("--seed", spec->seed, "Random seed")->capture_default_str();
  app.add_option("--origins", spec->origins, "Candidate origin edges (default: all)")->delimiter(',');
  app.add_option("--destinations", spec->destinations, "Candidate destination edges (default: all)")->delimiter(',');
  app.add_option("-o,--output", *output, "Trip file to write")->required();
  return [=](std::ostream& out) {
    const auto net = load_network(*network);
    const auto trips = generate_random_trips(net, *spec);
    save_trips(*output, trips);
    out << "vehicles=" << trips.vehicles.size() << '\n';
  };
}

struct PartitionFlags {
  std::string network;
  std::string trips;
  std::string output;
  int k = 2;
  bool topology_only = false;
  PartitionOptions options;
};

PartitionAssignment compute_partition(const RoadNetwork& net, const TripTable* trips, int k, bool topology_only,
                                      const PartitionOptions& options) {
  const auto weights = trips && !topology_only ? vertex_weights(net, edge_access_counts(net, *trips))
                                               : uniform_weights(net);
  return partition(net, weights, k, options);
}

Action setup_partition(CLI::App& app) {
  auto f = std::make_shared<PartitionFlags>();
  app.add_option("-n,--network", f->network, "Network file")->required();
  app.add_option("-t,--trips", f->trips, "Trip file for traffic-aware weights (omit for uniform weights)");
  app.add_option("-k,--partitions", f->k, "Number of partitions")->capture_default_str();
  app.add_option("--epsilon", f->options.epsilon, "Allowed excess of the heaviest partition over the mean")
      ->capture_default_str();
  app.add_option("--seed", f->options.seed, "Partitioner seed")->capture_default_str();
  app.add_option("--passes", f->options.refine_passes, "Refinement passes")->capture_default_str();
  app.add_option("--trials", f->options.trials, "Growing attempts per bisection")->capture_default_str();
  app.add_flag("--topology-only", f->topology_only, "Ignore traffic and weight every junction equally");
  app.add_option("-o,--output", f->output, "Assignment file to write")->required();
  return [=](std::ostream& out) {
    const auto net = load_network(f->network);
    std::optional<TripTable> trips;
    if (!f->trips.empty()) {
      trips = load_trips(f->trips);
      check_trips(net, *trips);
    }
    const auto a = compute_partition(net, trips ? &*trips : nullptr, f->k, f->topology_only, f->options);
    save_assignment(f->output, net, a);
    const auto weights = trips && !f->topology_only ? vertex_weights(net, edge_access_counts(net, *trips))
                                                    : uniform_weights(net);
    out << "k=" << a.k << " cut=" << cut_size(net, a) << " border_edge_ratio=" << border_edge_ratio(net, a)
        << " balance=" << balance_factor(weights, a) << " balanced=" << (a.balanced ? "yes" : "no") << '\n';
    if (!a.balanced) out << "warning: no assignment within epsilon; best effort written\n";
  };
}

TransportKind parse_transport(const std::string& s) {
  if (s == "inproc") return TransportKind::kInProcess;
  if (s == "socket") return TransportKind::kSocket;
  throw InputError("unknown transport '" + s + "'");
}

struct RunFlags {
  std::string network;
  std::string trips;
  std::string assignment;
  std::string out_dir;
  std::string transport = "inproc";
  int k = 1;
  std::uint64_t partition_seed = 1;
  SimulationConfig config;
};

void write_run_outputs(const fs::path& dir, const RunResult& r) {
  fs::create_directories(dir);
  save_trip_log(dir / "trips.csv", r.log);
  write_file(dir / "run.csv", [&](std::ostream& o) { write_run_metrics(o, r.metrics); });
  write_file(dir / "load.csv", [&](std::ostream& o) { write_load_csv(o, partition_load_report(r.metrics)); });
  const bool any_arrived =
      std::any_of(r.log.records.begin(), r.log.records.end(), [](const TripRecord& t) { return !t.en_route(); });
  if (any_arrived) write_file(dir / "cdf.csv", [&](std::ostream& o) { write_cdf_csv(o, trip_time_cdf(r.log)); });
}

RunResult run_scenario(const RoadNetwork& net, const TripTable& trips, const SimulationConfig& cfg, int k,
                       const std::string& assignment, std::uint64_t seed, TransportKind transport) {
  if (k < 1) throw InputError("partition count must be >= 1");
  if (k == 1 && assignment.empty()) return run(net, trips, cfg);
  PartitionOptions po;
  po.seed = seed;
  const auto a = assignment.empty() ? compute_partition(net, &trips, k, false, po) : load_assignment(assignment, net, k);
  ParallelOptions opt;
  opt.transport = transport;
  return run_parallel(net, trips, cfg, a, opt);
}

Action setup_run(CLI::App& app) {
  auto f = std::make_shared<RunFlags>();
  app.add_option("-n,--network", f->network, "Network file")->required();
  app.add_option("-t,--trips", f->trips, "Trip file")->required();
  app.add_option("-k,--partitions", f->k, "Partitions; 1 runs the sequential engine")->capture_default_str();
  app.add_option("-a,--assignment", f->assignment, "Assignment file (default: traffic-aware partitioning)");
  app.add_option("--partition-seed", f->partition_seed, "Seed used when partitioning on the fly")
      ->capture_default_str();
  app.add_option("--transport", f->transport, "Worker transport: inproc or socket")->capture_default_str();
  add_sim_options(app, f->config, true);
  app.add_option("-o,--out-dir", f->out_dir, "Directory for trips.csv, run.csv, load.csv and cdf.csv");
  return [=](std::ostream& out) {
    const auto net = load_network(f->network);
    const auto trips = load_trips(f->trips);
    check_trips(net, trips);
    const auto r = run_scenario(net, trips, f->config, f->k, f->assignment, f->partition_seed,
                                parse_transport(f->transport));
    if (!f->out_dir.empty()) write_run_outputs(f->out_dir, r);
    write_run_metrics(out, r.metrics);
  };
}

struct CompareFlags {
  std::string base;
  std::string other;
  std::string mode = "id";
  std::string output;
};

Action setup_compare(CLI::App& app) {
  auto f = std::make_shared<CompareFlags>();
  app.add_option("--base", f->base, "Reference trip log")->required();
  app.add_option("--other", f->other, "Trip log to compare")->required();
  app.add_option("--mode", f->mode, "Pairing: id or rank")->capture_default_str();
  app.add_option("-o,--output", f->output, "Per-vehicle compare.csv to write");
  return [=](std::ostream& out) {
    CompareMode mode;
    if (f->mode == "id") {
      mode = CompareMode::kId;
    } else if (f->mode == "rank") {
      mode = CompareMode::kRank;
    } else {
      throw InputError("unknown compare mode '" + f->mode + "'");
    }
    const auto r = compare(load_trip_log(f->base), load_trip_log(f->other), mode);
    if (!f->output.empty()) write_file(f->output, [&](std::ostream& o) { write_compare_csv(o, r); });
    write_compare_summary(out, r);
  };
}

struct BenchFlags {
  std::string network;
  std::string trips;
  std::string output;
  std::string grouping = "both";
  std::string transport = "inproc";
  std::vector<int> ks{1};
  int repeat = 1;
  std::uint64_t partition_seed = 1;
  SimulationConfig config;
};

Action setup_bench(CLI::App& app) {
  auto f = std::make_shared<BenchFlags>();
  app.add_option("-n,--network", f->network, "Network file")->required();
  app.add_option("-t,--trips", f->trips, "Trip file")->required();
  app.add_option("-k,--partitions", f->ks, "Comma-separated partition counts")->delimiter(',')->capture_default_str();
  app.add_option("--grouping", f->grouping, "Grouping runs: off, on or both")->capture_default_str();
  app.add_option("--repeat", f->repeat, "Runs per configuration; the fastest counts")->capture_default_str();
  app.add_option("--partition-seed", f->partition_seed, "Partitioner seed")->capture_default_str();
  app.add_option("--transport", f->transport, "Worker transport: inproc or socket")->capture_default_str();
  add_sim_options(app, f->config, false);
  app.add_option("-o,--output", f->output, "Speedup table CSV to write");
  return [=](std::ostream& out) {
    std::vector<bool> modes;
    if (f->grouping == "off" || f->grouping == "both") modes.push_back(false);
    if (f->grouping == "on" || f->grouping == "both") modes.push_back(true);
    if (modes.empty()) throw InputError("unknown grouping selection '" + f->grouping + "'");
    if (f->repeat < 1) throw InputError("repeat must be >= 1");
    const auto net = load_network(f->network);
    const auto trips = load_trips(f->trips);
    check_trips(net, trips);
    const auto transport = parse_transport(f->transport);
    struct Row {
      int k;
      bool grouped;
      double wall;
      std::int64_t vehicle_steps;
      std::int64_t bytes;
    };
    std::vector<Row> rows;
    for (bool grouped : modes) {
      for (int k : f->ks) {
        auto cfg = f->config;
        cfg.grouping.enabled = grouped;
        double best = std::numeric_limits<double>::infinity();
        RunMetrics m;
        for (int i = 0; i < f->repeat; ++i) {
          auto r = run_scenario(net, trips, cfg, k, "", f->partition_seed, transport);
          if (r.metrics.wall_time < best) best = r.metrics.wall_time;
          m = r.metrics;
        }
        rows.push_back({k, grouped, best, m.total_vehicle_steps(), m.message_bytes});
      }
    }
    // Speedups are relative to the sequential ungrouped run when there is one.
    double reference = rows.front().wall;
    for (const auto& r : rows) {
      if (r.k == 1 && !r.grouped) reference = r.wall;
    }
    std::ostringstream csv;
    csv << "partitions,grouping,wall_time,speedup,vehicle_steps,message_bytes\n";
    for (const auto& r : rows) {
      csv << r.k << ',' << (r.grouped ? "on" : "off") << ',' << text::format_double(r.wall) << ','
          << text::format_double(r.wall > 0 ? reference / r.wall : 1.0) << ',' << r.vehicle_steps << ',' << r.bytes
          << '\n';
    }
    if (!f->output.empty()) write_file(f->output, [&](std::ostream& o) { o << csv.str(); });
    out << csv.str();
  };
}

const std::vector<Command>& commands() {
  static const std::vector<Command> list{
      {"generate-grid", "Write a rectangular grid network", setup_generate_grid},
      {"generate-trips", "Write random shortest-path trips for a network", setup_generate_trips},
      {"partition", "Partition a network's junctions and write the assignment", setup_partition},
      {"run", "Simulate sequentially or across partitions", setup_run},
      {"compare", "Compare two trip logs", setup_compare},
      {"bench", "Time a scenario across partition counts, with and without grouping", setup_bench},
  };
  return list;
}

void usage(std::ostream& os) {
  os << "Usage: trafsim <command> [OPTIONS]\n\nCommands:\n";
  for (const auto& c : commands()) os << "  " << c.name << std::string(18 - std::string(c.name).size(), ' ') << c.about << '\n';
  os << "\nRun 'trafsim <command> --help' for the command's options.\n"
        "Every command accepts --config FILE with key=value lines named after its long options.\n";
}

}  // namespace

std::vector<std::string> cli_commands() {
  std::vector<std::string> names;
  for (const auto& c : commands()) names.emplace_back(c.name);
  return names;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    usage(err);
    return 1;
  }
  if (args[0] == "-h" || args[0] == "--help") {
    usage(out);
    return 0;
  }
  const auto it = std::find_if(commands().begin(), commands().end(), [&](const Command& c) { return args[0] == c.name; });
  if (it == commands().end()) {
    err << "unknown command '" << args[0] << "'\n";
    usage(err);
    return 1;
  }
  CLI::App app{it->about, "trafsim " + args[0]};
  app.set_config("--config", "", "Read defaults from a key=value file; flags given here override it");
  const Action action = it->setup(app);
  std::vector<std::string> rest(args.rbegin(), args.rend() - 1);  // CLI11 takes them reversed
  try {
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    action(out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const InvariantViolation& e) {
    err << "invariant violation: " << e.what() << '\n';
    return 3;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace trafsim
