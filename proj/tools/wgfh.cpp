// wgfh <kind> --config path [--out dir] [--threads k]
// wgfh report <manifest.json>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wgfh/experiments.hpp"

namespace {

enum Exit { kPass = 0, kInvariant = 1, kConfig = 2, kNumerical = 3 };

int threads_from_env() {
  const char* v = std::getenv("WGFH_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 1024) throw wgfh::ConfigError(std::string("WGFH_THREADS must be a positive integer, got '") + v + "'");
  return int(n);
}

}  // namespace

int main(int argc, char** argv) {
  namespace ex = wgfh::experiments;
  CLI::App app{"Homogenisation experiments for Fokker-Planck gradient flows"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ex::kToolVersion);

  std::string config, out, manifest;
  int threads = 0;
  for (auto name : ex::kKindNames) {
    auto* sub = app.add_subcommand(std::string(name), "run a '" + std::string(name) + "' experiment");
    sub->add_option("--config", config, "JSON experiment config")->required();
    sub->add_option("--out", out, "output directory (default: config 'out' or out/<name>)");
    sub->add_option("--threads", threads, "worker threads (fallback: WGFH_THREADS)")->check(CLI::PositiveNumber);
  }
  auto* rep = app.add_subcommand("report", "summarise a run from its manifest");
  rep->add_option("manifest", manifest, "path to manifest.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kConfig;
  }

  try {
    if (rep->parsed()) {
      const ex::Report r = ex::report(manifest);
      std::cout << r.text();
      return r.ok() ? kPass : kInvariant;
    }
    const auto* sub = app.get_subcommands().front();
    const auto kind = ex::kind_from_name(sub->get_name());
    ex::RunOptions opt;
    if (!out.empty()) opt.out = out;
    opt.threads = threads > 0 ? threads : threads_from_env();
    const ex::RunManifest m = ex::run(config, *kind, opt);
    const ex::Report r = ex::report(m.directory / "manifest.json");
    std::cout << r.text();
    return m.passed() && r.ok() ? kPass : kInvariant;
  } catch (const wgfh::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const wgfh::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
}
