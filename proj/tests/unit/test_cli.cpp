#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "doctest.h"
#include "trafsim/cli.hpp"
#include "trafsim/netmodel.hpp"
#include "trafsim/partition.hpp"
#include "trafsim/records.hpp"

using namespace trafsim;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("trafsim_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int n = 0;
    return n;
  }
};

// Every flag each command is documented to take.
const std::map<std::string, std::vector<std::string>> kFlags{
    {"generate-grid",
     {"--cols", "--rows", "--hlen", "--vlen", "--lanes", "--speed", "--green", "--unsignalized", "--output", "--config"}},
    {"generate-trips",
     {"--network", "--rate", "--duration", "--seed", "--origins", "--destinations", "--output", "--config"}},
    {"partition",
     {"--network", "--trips", "--partitions", "--epsilon", "--seed", "--passes", "--trials", "--topology-only",
      "--output", "--config"}},
    {"run",
     {"--network", "--trips", "--partitions", "--assignment", "--partition-seed", "--transport", "--step", "--end",
      "--group", "--alpha", "--zones", "--exit-fraction", "--exit-cap", "--check", "--out-dir", "--config"}},
    {"compare", {"--base", "--other", "--mode", "--output", "--config"}},
    {"bench",
     {"--network", "--trips", "--partitions", "--grouping", "--repeat", "--partition-seed", "--transport", "--step",
      "--end", "--alpha", "--zones", "--exit-fraction", "--exit-cap", "--check", "--output", "--config"}},
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("top-level help lists every command") {
    auto r = cli({"--help"});
    CHECK(r.code == 0);
    for (const auto& c : cli_commands()) CHECK(r.out.find(c) != std::string::npos);
    CHECK(cli_commands().size() == kFlags.size());
    auto none = cli({});
    CHECK(none.code == 1);
    CHECK(cli({"frobnicate"}).code == 1);
  }

  TEST_CASE("every command's help documents every flag") {
    for (const auto& [cmd, flags] : kFlags) {
      auto r = cli({cmd, "--help"});
      CAPTURE(cmd);
      CHECK(r.code == 0);
      for (const auto& f : flags) {
        CAPTURE(f);
        CHECK(r.out.find(f) != std::string::npos);
      }
    }
  }

  TEST_CASE("usage errors exit 1") {
    TempDir d;
    CHECK(cli({"generate-grid", "--cols", "1", "-o", d / "g.net"}).code == 1);
    CHECK_FALSE(fs::exists(d / "g.net"));
    CHECK(cli({"generate-grid"}).code == 1);
    CHECK(cli({"run", "-n", "x"}).code == 1);
    CHECK(cli({"generate-grid", "--bogus", "-o", d / "g.net"}).code == 1);
  }

  TEST_CASE("generate-grid writes the 150x10 network") {
    TempDir d;
    auto r = cli({"generate-grid", "--cols", "150", "--rows", "10", "--hlen", "100", "--vlen", "300", "-o", d / "g.net"});
    REQUIRE(r.code == 0);
    auto net = load_network(d / "g.net");
    CHECK(net.junctions().size() == 1500);
    CHECK(net.edges().size() == 5680);
    REQUIRE(cli({"generate-grid", "-o", d / "default.net"}).code == 0);
    CHECK(validate(load_network(d / "default.net")).empty());
  }

  TEST_CASE("generate-trips: count, determinism and bad rate") {
    TempDir d;
    REQUIRE(cli({"generate-grid", "-o", d / "g.net"}).code == 0);
    REQUIRE(cli({"generate-trips", "-n", d / "g.net", "--rate", "1", "--duration", "3600", "--seed", "1", "-o",
                 d / "a.trips"})
                .code == 0);
    REQUIRE(cli({"generate-trips", "-n", d / "g.net", "--rate", "1", "--duration", "3600", "--seed", "1", "-o",
                 d / "b.trips"})
                .code == 0);
    auto text = slurp(d / "a.trips");
    CHECK(text == slurp(d / "b.trips"));
    CHECK(std::count(text.begin(), text.end(), '\n') == 3601);
    auto bad = cli({"generate-trips", "-n", d / "g.net", "--rate", "0", "-o", d / "c.trips"});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("rate") != std::string::npos);
    CHECK(cli({"generate-trips", "-n", d / "missing.net", "-o", d / "c.trips"}).code == 2);
  }

  TEST_CASE("partition: k=1 file, path halves, traffic awareness") {
    TempDir d;
    {
      std::ofstream net(d / "path.net");
      net << "[junctions]\nA,0,0\nB,100,0\nC,200,0\nD,300,0\n[edges]\n"
             "ab,A,B,100,10,1\nba,B,A,100,10,1\nbc,B,C,100,10,1\ncb,C,B,100,10,1\ncd,C,D,100,10,1\ndc,D,C,100,10,1\n"
             "[connections]\nab,0,bc,0\nbc,0,cd,0\ndc,0,cb,0\ncb,0,ba,0\n";
    }
    REQUIRE(cli({"partition", "-n", d / "path.net", "-k", "1", "-o", d / "one.part"}).code == 0);
    auto one = slurp(d / "one.part");
    for (auto j : {"A,0", "B,0", "C,0", "D,0"}) CHECK(one.find(j) != std::string::npos);

    auto r = cli({"partition", "-n", d / "path.net", "-k", "2", "-o", d / "two.part"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("cut=1") != std::string::npos);
    auto net = load_network(d / "path.net");
    auto a = load_assignment(d / "two.part", net, 2);
    CHECK(a.part[0] == a.part[1]);
    CHECK(a.part[2] == a.part[3]);
    CHECK(a.part[0] != a.part[2]);

    // demand piled on the west side moves the split
    REQUIRE(cli({"generate-grid", "--cols", "8", "--rows", "4", "-o", d / "g.net"}).code == 0);
    std::vector<std::string> west;
    for (int r = 0; r < 4; ++r) west.push_back("J0_" + std::to_string(r) + "-J1_" + std::to_string(r));
    std::string origins;
    for (const auto& e : west) origins += (origins.empty() ? "" : ",") + e;
    std::string dests = "J1_0-J0_0,J1_1-J0_1,J1_2-J0_2,J1_3-J0_3";
    REQUIRE(cli({"generate-trips", "-n", d / "g.net", "--rate", "2", "--duration", "300", "--origins", origins,
                 "--destinations", dests, "-o", d / "west.trips"})
                .code == 0);
    REQUIRE(cli({"partition", "-n", d / "g.net", "-t", d / "west.trips", "-k", "2", "-o", d / "aware.part"}).code == 0);
    REQUIRE(cli({"partition", "-n", d / "g.net", "-t", d / "west.trips", "-k", "2", "--topology-only", "-o",
                 d / "blind.part"})
                .code == 0);
    CHECK(slurp(d / "aware.part") != slurp(d / "blind.part"));
  }

  TEST_CASE("run, compare and bench end to end") {
    TempDir d;
    REQUIRE(cli({"generate-grid", "--cols", "5", "--rows", "5", "-o", d / "g.net"}).code == 0);
    REQUIRE(cli({"generate-trips", "-n", d / "g.net", "--rate", "0.5", "--duration", "200", "-o", d / "t.trips"}).code == 0);
    auto seq = cli({"run", "-n", d / "g.net", "-t", d / "t.trips", "--end", "400", "-o", d / "seq"});
    REQUIRE(seq.code == 0);
    for (auto f : {"trips.csv", "run.csv", "load.csv", "cdf.csv"}) CHECK(fs::exists(d.path / "seq" / f));
    REQUIRE(cli({"run", "-n", d / "g.net", "-t", d / "t.trips", "--end", "400", "-o", d / "seq2"}).code == 0);
    CHECK(slurp(d / "seq/trips.csv") == slurp(d / "seq2/trips.csv"));

    REQUIRE(cli({"partition", "-n", d / "g.net", "-k", "1", "-o", d / "one.part"}).code == 0);
    REQUIRE(cli({"run", "-n", d / "g.net", "-t", d / "t.trips", "--end", "400", "-k", "1", "-a", d / "one.part", "-o",
                 d / "k1"})
                .code == 0);
    CHECK(slurp(d / "seq/trips.csv") == slurp(d / "k1/trips.csv"));

    REQUIRE(cli({"run", "-n", d / "g.net", "-t", d / "t.trips", "--end", "400", "-k", "3", "--transport", "socket",
                 "-o", d / "k3"})
                .code == 0);
    auto cmp = cli({"compare", "--base", d / "seq/trips.csv", "--other", d / "k3/trips.csv", "-o", d / "cmp.csv"});
    REQUIRE(cmp.code == 0);
    CHECK(cmp.out.rfind("mode,mean_trip_diff", 0) == 0);
    CHECK(fs::exists(d / "cmp.csv"));
    auto self = cli({"compare", "--base", d / "seq/trips.csv", "--other", d / "seq/trips.csv", "--mode", "rank"});
    REQUIRE(self.code == 0);
    CHECK(self.out.find("\nrank,0,0,0,0,") != std::string::npos);
    CHECK(cli({"compare", "--base", d / "nope.csv", "--other", d / "seq/trips.csv"}).code == 2);
    CHECK(cli({"compare", "--base", d / "seq/trips.csv", "--other", d / "seq/trips.csv", "--mode", "x"}).code == 2);

    auto bench = cli({"bench", "-n", d / "g.net", "-t", d / "t.trips", "--end", "200", "-k", "1", "--grouping", "off"});
    REQUIRE(bench.code == 0);
    CHECK(bench.out.find("partitions,grouping,wall_time,speedup,vehicle_steps,message_bytes\n1,off,") == 0);
    CHECK(bench.out.find(",1,") != std::string::npos);  // speedup of the reference row
  }

  TEST_CASE("--group on free-flow traffic leaves the log unchanged") {
    TempDir d;
    REQUIRE(cli({"generate-grid", "--cols", "5", "--rows", "5", "--unsignalized", "-o", d / "g.net"}).code == 0);
    REQUIRE(cli({"generate-trips", "-n", d / "g.net", "--rate", "0.05", "--duration", "400", "-o", d / "t.trips"}).code == 0);
    REQUIRE(cli({"run", "-n", d / "g.net", "-t", d / "t.trips", "--end", "600", "-o", d / "plain"}).code == 0);
    REQUIRE(cli({"run", "-n", d / "g.net", "-t", d / "t.trips", "--end", "600", "--group", "-o", d / "grouped"}).code == 0);
    CHECK(slurp(d / "plain/trips.csv") == slurp(d / "grouped/trips.csv"));
  }

  TEST_CASE("config file supplies defaults, flags override") {
    TempDir d;
    {
      std::ofstream c(d / "g.ini");
      c << "cols=3\nrows=4\n";
    }
    REQUIRE(cli({"generate-grid", "--config", d / "g.ini", "-o", d / "a.net"}).code == 0);
    CHECK(load_network(d / "a.net").junctions().size() == 12);
    REQUIRE(cli({"generate-grid", "--config", d / "g.ini", "--rows", "2", "-o", d / "b.net"}).code == 0);
    CHECK(load_network(d / "b.net").junctions().size() == 6);
  }

  TEST_CASE("input and invariant errors map to exit codes") {
    TempDir d;
    {
      std::ofstream bad(d / "bad.net");
      bad << "[junctions]\nA,0,0\n[edges]\nab,A,Z,10,10,1\n";
    }
    auto r = cli({"generate-trips", "-n", d / "bad.net", "-o", d / "t.trips"});
    CHECK(r.code == 2);
    CHECK(r.err.find("Z") != std::string::npos);
    REQUIRE(cli({"generate-grid", "--cols", "3", "--rows", "3", "-o", d / "g.net"}).code == 0);
    {
      std::ofstream t(d / "t.trips");
      t << "[vehicles]\nv,0,J0_0-J1_0 J2_2-J1_2\n";
    }
    CHECK(cli({"run", "-n", d / "g.net", "-t", d / "t.trips"}).code == 2);
    {
      std::ofstream t(d / "t.trips");
      t << "[vehicles]\nv,0,J0_0-J1_0\n";
    }
    CHECK(cli({"run", "-n", d / "g.net", "-t", d / "t.trips", "--end", "10", "--step", "0.3"}).code == 2);
    CHECK(cli({"run", "-n", d / "g.net", "-t", d / "t.trips", "--end", "10", "-k", "2", "--transport", "pigeon"}).code == 2);
  }
}
