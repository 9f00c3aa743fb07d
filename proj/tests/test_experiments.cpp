#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "wgfh/experiments.hpp"

using namespace wgfh;
namespace ex = wgfh::experiments;
namespace fs = std::filesystem;

namespace {

const char* kSmallEdi = R"J({
  "name": "small_edi",
  "kind": "edi",
  "dim": 1,
  "medium": {
    "B": "2 + sin(2*pi*y)",
    "bounds": [1, 3],
    "pi": {"variant": "oscillatory", "pi0": "1 + 0.3*cos(2*pi*x)", "pi1": "0.4*sin(2*pi*y)"}
  },
  "initial": "1 + 0.5*cos(2*pi*x)",
  "eps": ["1/8", "1/16"],
  "cells": 2048,
  "T": 0.02,
  "output_times": [0.01, 0.02],
  "edi": {"refinement_cells": [512, 1024, 2048]}
})J";

class TempDir {
public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("wgfh_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

private:
  static inline int counter_ = 0;
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

std::string pointer_of(const std::string& source) {
  try {
    ex::load_config(source);
  } catch (const ConfigError& e) {
    return e.pointer();
  }
  return "<accepted>";
}

int tool(const std::string& args) {
  const std::string cmd = std::string(WGFH_TOOL) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ErrorsCarryJsonPointers) {
  EXPECT_EQ(pointer_of(R"J({"eps": ["1/8", "1/4"]})J"), "/eps/1");
  EXPECT_EQ(pointer_of(R"J({"eps": [0]})J"), "/eps/0");
  EXPECT_EQ(pointer_of(R"J({"epsilon": [0.5]})J"), "/epsilon");
  EXPECT_EQ(pointer_of(R"J({"cells": 8})J"), "/cells");
  EXPECT_EQ(pointer_of(R"J({"kind": "flow"})J"), "/kind");
  EXPECT_EQ(pointer_of(R"J({"medium": {"B": "2 + sin(2*pi*y)"}})J"), "/medium/bounds");
  EXPECT_EQ(pointer_of(R"J({"medium": {"B": "2 + sin(2*pi*", "bounds": [1, 3]}})J"), "/medium/B");
  EXPECT_EQ(pointer_of(R"J({"T": 1, "output_times": [0.5, 0.25]})J"), "/output_times/1");
  EXPECT_EQ(pointer_of(R"J({"edi": {"refinement_cells": [128, 512]}})J"), "/edi/refinement_cells/1");
  EXPECT_EQ(pointer_of("{"), "/");
  EXPECT_EQ(pointer_of(kSmallEdi), "<accepted>");
}

TEST(Config, ConstantExpressionsAreAcceptedAsNumbers) {
  const auto c = ex::load_config(R"J({"eps": ["1/8", 0.0625, "2^-5"], "T": "1/10"})J");
  ASSERT_EQ(c.eps.size(), 3u);
  EXPECT_EQ(c.eps[0], 0.125);
  EXPECT_EQ(c.eps[2], 1.0 / 32);
  EXPECT_DOUBLE_EQ(c.T, 0.1);
  EXPECT_THROW(ex::load_config(R"J({"T": "x/10"})J"), ConfigError);
}

TEST(Config, KindMismatchIsRejected) {
  TempDir d;
  const auto c = ex::load_config(kSmallEdi);
  ex::RunOptions opt;
  opt.out = d.path();
  try {
    ex::run_experiment(c, ex::Kind::sweep, opt);
    FAIL() << "no error";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.pointer(), "/kind");
  }
}

TEST(Runs, ByteIdenticalAcrossRepeatsAndThreadCounts) {
  TempDir a, b;
  const auto c = ex::load_config(kSmallEdi);
  ex::RunOptions oa, ob;
  oa.out = a.path();
  oa.threads = 1;
  ob.out = b.path();
  ob.threads = 4;
  const auto ma = ex::run_experiment(c, ex::Kind::edi, oa);
  const auto mb = ex::run_experiment(c, ex::Kind::edi, ob);
  ASSERT_EQ(ma.artifacts.size(), mb.artifacts.size());
  ASSERT_GE(ma.artifacts.size(), 3u);
  for (std::size_t k = 0; k < ma.artifacts.size(); ++k) {
    EXPECT_EQ(ma.artifacts[k].file, mb.artifacts[k].file);
    EXPECT_EQ(ma.artifacts[k].checksum, mb.artifacts[k].checksum) << ma.artifacts[k].file;
    EXPECT_EQ(slurp(a.path() / ma.artifacts[k].file), slurp(b.path() / mb.artifacts[k].file));
  }
  EXPECT_TRUE(ma.passed());
  const ex::Report r = ex::report(a.path() / "manifest.json");
  EXPECT_TRUE(r.ok()) << r.text();
  EXPECT_EQ(r.lines.back(), "PASS " + std::to_string(r.total) + "/" + std::to_string(r.total));
}

TEST(Runs, ConstantMediumEffectiveIsASingleRowWithB) {
  TempDir d;
  const auto c = ex::load_config(R"J({"name": "flat", "kind": "effective", "medium": {"B": {"family": "constant", "value": 2.5}}})J");
  ex::RunOptions opt;
  opt.out = d.path();
  const auto m = ex::run_experiment(c, ex::Kind::effective, opt);
  EXPECT_TRUE(m.passed());
  const ex::CsvTable t = ex::parse_csv(slurp(d.path() / "effective.csv"));
  ASSERT_EQ(t.rows.size(), 1u);
  const int col = t.column("B_11");
  ASSERT_GE(col, 0);
  EXPECT_NEAR(t.rows[0][col], 2.5, 1e-13);
}

TEST(Report, FlagsInjectedNegativeResidual) {
  TempDir d;
  const auto c = ex::load_config(kSmallEdi);
  ex::RunOptions opt;
  opt.out = d.path();
  ex::run_experiment(c, ex::Kind::edi, opt);
  const fs::path csv = d.path() / "edi.csv";
  ex::CsvTable t = ex::parse_csv(slurp(csv));
  const int res = t.column("residual");
  ASSERT_GE(res, 0);
  // rewrite the last data row with a negative residual
  std::istringstream in(slurp(csv));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  std::vector<std::string> cells;
  {
    std::istringstream row(lines.back());
    for (std::string v; std::getline(row, v, ',');) cells.push_back(v);
  }
  cells[res] = "-0.001";
  std::string joined;
  for (std::size_t k = 0; k < cells.size(); ++k) joined += (k ? "," : "") + cells[k];
  lines.back() = joined;
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  spit(csv, out);

  const ex::Report r = ex::report(d.path() / "manifest.json");
  EXPECT_FALSE(r.ok());
  bool sign = false, checksum = false;
  for (const auto& l : r.lines) {
    if (l.rfind("FAIL edi_residual_sign (edi.csv)", 0) == 0) {
      sign = true;
      EXPECT_NE(l.find("-0.001"), std::string::npos) << l;
    }
    if (l.rfind("FAIL artifact_checksums", 0) == 0) checksum = true;
  }
  EXPECT_TRUE(sign) << r.text();
  EXPECT_TRUE(checksum) << r.text();
  EXPECT_EQ(tool("report " + (d.path() / "manifest.json").string()), 1);
}

TEST(Report, EmptyManifestAndMissingArtifactAreErrors) {
  TempDir d;
  spit(d.path() / "manifest.json", "");
  EXPECT_THROW(ex::report(d.path() / "manifest.json"), Error);
  spit(d.path() / "manifest.json", R"J({"checks": [], "artifacts": []})J");
  EXPECT_THROW(ex::report(d.path() / "manifest.json"), Error);
  spit(d.path() / "manifest.json", R"J({"checks": [], "artifacts": [{"file": "gone.csv", "fnv1a64": "0"}]})J");
  EXPECT_THROW(ex::report(d.path() / "manifest.json"), Error);
  EXPECT_THROW(ex::report(d.path() / "nothing.json"), Error);
}

TEST(Checksums, Fnv1aReferenceValues) {
  // published FNV-1a 64 test vectors
  EXPECT_EQ(ex::fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(ex::fnv1a64("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(ex::fnv1a64("foobar"), 0x85944171f73967e8ull);
}

TEST(Cli, ExitCodes) {
  TempDir d;
  const fs::path good = d.path() / "small.json";
  spit(good, kSmallEdi);
  const std::string out = " --out " + (d.path() / "run").string();
  EXPECT_EQ(tool("edi --config " + good.string() + out), 0);
  EXPECT_TRUE(fs::exists(d.path() / "run" / "manifest.json"));

  EXPECT_EQ(tool("edi"), 2);                                          // missing --config
  EXPECT_EQ(tool("edi --config " + (d.path() / "none.json").string()), 2);
  EXPECT_EQ(tool("sweep --config " + good.string() + out), 2);        // kind mismatch
  EXPECT_EQ(tool("edi --config " + good.string() + " --threads 0"), 2);
  EXPECT_EQ(tool("bogus"), 2);

  const fs::path bad = d.path() / "bad.json";
  spit(bad, R"J({"eps": ["1/8", "1/4"]})J");
  EXPECT_EQ(tool("edi --config " + bad.string() + out), 2);

  // the initial datum cannot be evaluated on half the grid
  std::string broken = kSmallEdi;
  broken.replace(broken.find("1 + 0.5*cos(2*pi*x)"), 19, "sqrt(x - 0.5)");
  const fs::path num = d.path() / "num.json";
  spit(num, broken);
  EXPECT_EQ(tool("edi --config " + num.string() + out), 3);

  EXPECT_EQ(tool("report " + (d.path() / "run" / "manifest.json").string()), 0);
}

TEST(Cli, ThreadsFallBackToEnvironment) {
  TempDir d;
  const fs::path good = d.path() / "small.json";
  spit(good, kSmallEdi);
  const std::string out = " --out " + (d.path() / "run").string();
  EXPECT_EQ(tool("edi --config " + good.string() + out + " WGFH_THREADS=x"), 2);  // stray positional
  const std::string env = "WGFH_THREADS=3 ";
  const int status = std::system((env + WGFH_TOOL + " edi --config " + good.string() + out + " >/dev/null 2>&1").c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  EXPECT_NE(slurp(d.path() / "run" / "manifest.json").find("\"threads\": 3"), std::string::npos);
  const int bad = std::system(("WGFH_THREADS=zero " + std::string(WGFH_TOOL) + " edi --config " + good.string() + out +
                               " >/dev/null 2>&1").c_str());
  ASSERT_TRUE(WIFEXITED(bad));
  EXPECT_EQ(WEXITSTATUS(bad), 2);
}

TEST(Configs, EveryShippedConfigLoads) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(fs::path(WGFH_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".json" || e.path().filename() == "schema.json") continue;
    const auto c = ex::load_config_file(e.path());
    EXPECT_TRUE(c.kind.has_value()) << e.path();
    EXPECT_EQ(c.name, e.path().stem().string());
    ++n;
  }
  EXPECT_GE(n, 9);
}
