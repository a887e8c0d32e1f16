#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ddsm/boundary.hpp"
#include "ddsm/commands.hpp"
#include "ddsm/io.hpp"

using namespace ddsm;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "ddsm");
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ddsm_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(slurp(p));
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// Initial loss of a zero-step training run; depends only on the seed here.
std::string initial_curve(const fs::path& dir, std::vector<std::string> extra) {
  std::vector<std::string> args{"train", "--steps", "0", "--image", "16", "--out", dir.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  const Run r = run(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  return slurp(dir / "loss.csv");
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("gradcheck") != std::string::npos);
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"cost", "--no_such_option", "1"}).code == 2);
  CHECK(run({"cost", "--k", "three"}).code == 2);
  const fs::path dir = scratch("usage");
  std::ofstream(dir / "bad.conf") << "k = 3\nbogus = 1\n";
  CHECK(run({"cost", "--config", (dir / "bad.conf").string(), "--out", dir.string()}).code == 2);
  CHECK(run({"train", "--arch", "unet", "--out", dir.string()}).code == 2);
  CHECK(run({"fscore", "--out", dir.string()}).code == 2);
}

TEST_CASE("seed precedence: command line, then DDSM_SEED, then config file") {
  const fs::path dir = scratch("seed");
  std::ofstream(dir / "seed.conf") << "seed = 5\n";
  const std::string conf = (dir / "seed.conf").string();
  const std::string s3 = initial_curve(dir / "a", {"--seed", "3"});
  const std::string s5 = initial_curve(dir / "b", {"--seed", "5"});
  REQUIRE(s3 != s5);
  CHECK(initial_curve(dir / "c", {"--config", conf}) == s5);
  setenv("DDSM_SEED", "3", 1);
  CHECK(initial_curve(dir / "d", {"--config", conf}) == s3);
  CHECK(initial_curve(dir / "e", {"--config", conf, "--seed", "5"}) == s5);
  CHECK(initial_curve(dir / "f", {"--seed=5"}) == s5);
  setenv("DDSM_SEED", "x3", 1);
  CHECK(run({"cost", "--out", dir.string()}).code == 2);
  unsetenv("DDSM_SEED");
}

TEST_CASE("gradcheck negative control names the corrupted group") {
  const fs::path dir = scratch("fault");
  const Run r = run({"gradcheck", "--fault", "spatial.W_g.weight", "--out", dir.string()});
  CHECK(r.code == 1);
  CHECK(r.out.find("FAIL spatial.W_g.weight") != std::string::npos);
  CHECK(fs::exists(dir / "gradcheck.csv"));
  CHECK(fs::exists(dir / "gradcheck.config"));
  CHECK(run({"gradcheck", "--fault", "no.such.group", "--out", dir.string()}).code == 2);
}

TEST_CASE("equiv passes and fails under a corrupted kernel") {
  const fs::path dir = scratch("equiv");
  const Run ok = run({"equiv", "--out", dir.string()});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("equiv passed") != std::string::npos);
  const auto rows = read_csv(dir / "equiv.csv");
  REQUIRE(rows.size() > 4);
  CHECK(rows[0] == std::vector<std::string>{"check", "max_abs_err", "tolerance", "pass"});
  const Run bad = run({"equiv", "--fault", "kernel", "--out", dir.string()});
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL ") != std::string::npos);
  CHECK(run({"equiv", "--fault", "spatial.W_g.weight", "--out", dir.string()}).code == 2);
}

TEST_CASE("cost reports the sparse to dense affinity ratio") {
  const fs::path dir = scratch("cost");
  const Run r = run({"cost", "--h", "64", "--w", "64", "--k", "5", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("affinity_ratio 25/4096") != std::string::npos);
  const auto rows = read_csv(dir / "affinity_ratio.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1][2] == "25/4096");
  CHECK(std::stoull(rows[1][0]) * 4096 == std::stoull(rows[1][1]) * 25);
  CHECK(fs::exists(dir / "cost.csv"));
}

TEST_CASE("fscore on label files") {
  const fs::path dir = scratch("fscore");
  LabelMap gt{32, 32, std::vector<int>(32 * 32, 0)}, pred = gt;
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      gt.labels[y * 32 + x] = x >= 16;
      pred.labels[y * 32 + x] = x >= 21;
    }
  write_pgm_labels(dir / "gt.pgm", gt);
  write_pgm_labels(dir / "pred.pgm", pred);
  const Run r = run({"fscore", "--pred", (dir / "pred.pgm").string(), "--gt", (dir / "gt.pgm").string(), "--thresholds",
                     "3,9", "--out", dir.string()});
  CHECK(r.code == 0);
  const auto rows = read_csv(dir / "fscore.csv");
  REQUIRE(rows.size() == 4);
  CHECK(std::stod(rows[1][3]) == 0.0);
  CHECK(std::stod(rows[2][3]) == 1.0);
  CHECK(rows[3][0] == "mean");
  CHECK(run({"fscore", "--pred", (dir / "pred.pgm").string(), "--gt", (dir / "missing.pgm").string(), "--out",
             dir.string()}).code == 2);
}

TEST_CASE("train writes the curve, checkpoint and config") {
  const fs::path dir = scratch("train");
  const Run r = run({"train", "--steps", "3", "--image", "16", "--out", dir.string()});
  REQUIRE(r.code == 0);
  const auto rows = read_csv(dir / "loss.csv");
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == std::vector<std::string>{"step", "loss", "accuracy"});
  CHECK(rows[4][0] == "3");
  CHECK(fs::is_directory(dir / "checkpoint"));
  CHECK(slurp(dir / "train.config").find("steps") != std::string::npos);
  CHECK(run({"train", "--steps", "30", "--image", "16", "--lr", "1e12", "--out", dir.string()}).code == 1);
}

TEST_CASE("dump markers") {
  const fs::path dir = scratch("dump");
  SUBCASE("fresh predictors sample the plain k x k lattice") {
    const Run r = run({"dump", "--image", "16", "--qy", "1", "--qx", "0", "--out", dir.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto rows = read_csv(dir / "markers.csv");
    REQUIRE(rows.size() == 26);  // best preset: k = 5
    std::set<std::pair<long, long>> lattice;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const long dy = std::stol(rows[i][1]), dx = std::stol(rows[i][2]);
      CHECK(std::stod(rows[i][3]) == 0.0);
      CHECK(std::stod(rows[i][4]) == 0.0);
      CHECK(std::stod(rows[i][5]) == 1.0 + dy);
      CHECK(std::stod(rows[i][6]) == 0.0 + dx);
      lattice.insert({dy, dx});
    }
    CHECK(lattice.size() == 25);
    CHECK(lattice.begin()->first == -2);
    CHECK(lattice.rbegin()->second == 2);
    for (const char* f : {"x_l.pgm", "x_h.pgm", "x_sout.pgm", "x_sout_cout.pgm", "samples.ppm", "dump.config"})
      CHECK(fs::exists(dir / f));
  }
  SUBCASE("trained offsets read back through the marker file") {
    const fs::path train = dir / "train";
    REQUIRE(run({"train", "--steps", "5", "--image", "16", "--out", train.string()}).code == 0);
    REQUIRE(run({"dump", "--image", "16", "--checkpoint", (train / "checkpoint").string(), "--out", dir.string()})
                .code == 0);
    const auto rows = read_csv(dir / "markers.csv");
    REQUIRE(rows.size() == 26);
    bool moved = false;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double y = std::stod(rows[i][5]), expect = 4.0 + std::stol(rows[i][1]) + std::stod(rows[i][3]);
      CHECK(std::abs(y - expect) < 1e-12);  // default query is the centre of the 8x8 map
      moved = moved || std::stod(rows[i][3]) != 0.0;
    }
    CHECK(moved);
  }
  CHECK(run({"dump", "--image", "16", "--qy", "99", "--out", dir.string()}).code == 2);
  CHECK(run({"dump", "--preset", "baseline", "--image", "16", "--out", dir.string()}).code == 2);
}
