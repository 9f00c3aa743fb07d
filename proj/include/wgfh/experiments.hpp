#ifndef WGFH_EXPERIMENTS_HPP
#define WGFH_EXPERIMENTS_HPP

// Named experiments: JSON configuration, one runner per kind, CSV / manifest persistence and
// the pass/fail report bound to a run directory.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wgfh/cell_problem.hpp"
#include "wgfh/edi.hpp"
#include "wgfh/error.hpp"
#include "wgfh/expr.hpp"
#include "wgfh/fp_solver.hpp"
#include "wgfh/gamma.hpp"
#include "wgfh/media.hpp"
#include "wgfh/metric.hpp"
#include "wgfh/parallel.hpp"

namespace wgfh::experiments {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";

// Pinned tolerances of the invariant suites.
inline constexpr double kMassTol = 1e-13;
inline constexpr double kIdentityTol = 1e-10;
inline constexpr double kEdiSignTol = 1e-8;
inline constexpr double kEdiRelativeTol = 1e-3;
inline constexpr double kEdiMinOrder = 0.95;
inline constexpr double kFenchelYoungTol = 1e-10;
inline constexpr double kVariationalTol = 1e-10;
inline constexpr double kClosedFormTol = 1e-8;
inline constexpr double kGapTol = 1e-10;
inline constexpr double kMinErrorRatio = 1.5;
inline constexpr double kW2Spread = 0.2;
inline constexpr double kFinslerTol = 0.05;

enum class Kind { solve, effective, edi, sweep, metric, gamma, checkerboard };

inline constexpr std::array<std::string_view, 7> kKindNames = {"solve",  "effective", "edi",         "sweep",
                                                               "metric", "gamma",     "checkerboard"};

inline std::string_view kind_name(Kind k) { return kKindNames[std::size_t(k)]; }

inline std::optional<Kind> kind_from_name(std::string_view s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == s) return Kind(i);
  return std::nullopt;
}

inline std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

/// CSV text with a fixed header and %.17g numbers.
class Csv {
public:
  explicit Csv(const std::vector<std::string>& header) : columns_(header.size()) {
    for (std::size_t i = 0; i < header.size(); ++i) text_ += (i ? "," : "") + header[i];
    text_ += '\n';
  }

  void row(const std::vector<double>& values) {
    if (values.size() != columns_) throw Error("csv row has " + std::to_string(values.size()) + " fields, header has " +
                                               std::to_string(columns_));
    for (std::size_t i = 0; i < values.size(); ++i) text_ += (i ? "," : "") + fmt17(values[i]);
    text_ += '\n';
  }

  const std::string& text() const noexcept { return text_; }

private:
  std::size_t columns_;
  std::string text_;
};

/// Parsed CSV: header names and numeric rows.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return int(i);
    return -1;
  }
};

inline CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    out.push_back(cur);
    return out;
  };
  if (!std::getline(in, line)) return t;
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> r;
    for (const auto& f : split(line)) r.push_back(std::strtod(f.c_str(), nullptr));
    t.rows.push_back(std::move(r));
  }
  return t;
}

// ---------------------------------------------------------------------------------------------
// configuration

struct RecoveryConfig {
  double slope = 1.0;
  double d1 = 2.0, d2 = 4.0;
  int cells_per_period = 32;
  std::optional<expr::Expr> weight;
};

struct DirichletConfig {
  int dim = 1;
  std::optional<Medium> medium;  // defaults to the top-level medium
  std::vector<double> eps;
  int cells = 4096;
  std::array<double, 2> slope{1.0, 0.0};
};

struct ExperimentConfig {
  std::string name;
  std::optional<Kind> kind;
  std::string description;
  std::string out;
  int dim = 1;
  std::uint64_t seed = 1;
  std::optional<Medium> medium;
  expr::Expr initial = expr::Expr::constant(1.0);
  std::vector<double> eps;
  int cells = 256;
  int ycells = 64;
  int slow_cells = 16;
  std::optional<double> dt;
  double T = 0.1;
  std::vector<double> output_times;

  bool homogenized = false;           // solve: also run the homogenised system
  std::vector<int> refinement_cells;  // edi: refinement study (default cells/4, cells/2, cells)
  int w2_samples = 11;                // sweep: snapshot times for the W2 equicontinuity constant

  // metric
  double metric_x = 0.0, metric_y = 1.0;
  bool metric_torus = false;
  std::optional<expr::Expr> metric_target;
  int metric_cells = 1024;

  // checkerboard
  double cb_alpha = 0.25, cb_beta = 1.0;
  int cb_per_period = 8;
  int cb_refined_per_period = 16;
  Point cb_source{0.0, 0.0}, cb_target{1.0, 1.0};

  // gamma
  std::optional<RecoveryConfig> recovery;
  std::optional<DirichletConfig> dirichlet;

  json raw;
  std::string source;  // config file bytes

  double step() const { return dt ? *dt : 1.0 / (4.0 * cells); }
};

namespace detail {

inline std::string ptr_child(const std::string& p, std::string_view key) {
  std::string out = p + "/";
  for (char c : key) {
    if (c == '~') out += "~0";
    else if (c == '/') out += "~1";
    else out += c;
  }
  return out;
}

inline std::string ptr_child(const std::string& p, std::size_t i) { return p + "/" + std::to_string(i); }

inline const json* member(const json& obj, std::string_view key) {
  if (!obj.is_object()) return nullptr;
  auto it = obj.find(std::string(key));
  return it == obj.end() ? nullptr : &*it;
}

inline void only_keys(const json& obj, const std::string& ptr, std::initializer_list<std::string_view> keys) {
  if (!obj.is_object()) throw ConfigError("expected an object", ptr.empty() ? "/" : ptr);
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end())
      throw ConfigError("unknown field '" + it.key() + "'", ptr_child(ptr, it.key()));
  }
}

inline expr::Expr parse_expression(const json& j, const std::string& ptr) {
  if (!j.is_string()) throw ConfigError("expected an expression string", ptr);
  try {
    return expr::parse(j.get<std::string>());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("expression ") + e.what(), ptr);
  }
}

/// A number, or a constant expression such as "1/64".
inline double number(const json& j, const std::string& ptr) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const expr::Expr e = parse_expression(j, ptr);
    if (e.free_variables() != 0) throw ConfigError("expected a constant", ptr);
    return e.evaluate(expr::Bindings{});
  }
  throw ConfigError("expected a number", ptr);
}

inline double number_in(const json& j, const std::string& ptr, double lo, double hi) {
  const double v = number(j, ptr);
  if (!(v >= lo && v <= hi))
    throw ConfigError("value " + fmt_short(v) + " outside [" + fmt_short(lo) + ", " + fmt_short(hi) + "]", ptr);
  return v;
}

inline double positive(const json& j, const std::string& ptr) {
  const double v = number(j, ptr);
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("value must be positive and finite", ptr);
  return v;
}

inline int integer_in(const json& j, const std::string& ptr, int lo, int hi) {
  if (!j.is_number_integer()) throw ConfigError("expected an integer", ptr);
  const auto v = j.get<long long>();
  if (v < lo || v > hi) throw ConfigError("value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                                              std::to_string(hi) + "]", ptr);
  return int(v);
}

inline bool boolean(const json& j, const std::string& ptr) {
  if (!j.is_boolean()) throw ConfigError("expected true or false", ptr);
  return j.get<bool>();
}

inline std::vector<double> numbers(const json& j, const std::string& ptr) {
  if (!j.is_array()) throw ConfigError("expected an array", ptr);
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], ptr_child(ptr, i)));
  return out;
}

inline std::vector<double> eps_list(const json& j, const std::string& ptr) {
  const auto v = numbers(j, ptr);
  if (v.empty()) throw ConfigError("eps list must not be empty", ptr);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v[i] > 0.0 && v[i] <= 1.0)) throw ConfigError("eps must lie in (0, 1]", ptr_child(ptr, i));
    if (i > 0 && !(v[i] < v[i - 1])) throw ConfigError("eps list must be strictly decreasing", ptr_child(ptr, i));
  }
  return v;
}

inline Point point(const json& j, const std::string& ptr) {
  const auto v = numbers(j, ptr);
  if (v.size() != 2) throw ConfigError("expected two coordinates", ptr);
  return {v[0], v[1]};
}

inline MobilityTensor parse_mobility(const json& j, const std::string& ptr, int dim) {
  if (j.is_string()) {
    const expr::Expr e = parse_expression(j, ptr);
    return dim == 1 ? MobilityTensor::expression(1, e) : MobilityTensor::expression(2, e, e);
  }
  if (!j.is_object()) throw ConfigError("expected an expression or an object", ptr);
  if (const json* fam = member(j, "family")) {
    if (!fam->is_string()) throw ConfigError("expected a string", ptr_child(ptr, "family"));
    const std::string f = fam->get<std::string>();
    auto req = [&](std::string_view key) -> const json& {
      const json* v = member(j, key);
      if (!v) throw ConfigError("missing field", ptr_child(ptr, key));
      return *v;
    };
    if (f == "constant") {
      only_keys(j, ptr, {"family", "value"});
      return MobilityTensor::constant(dim, Mat2::scalar(positive(req("value"), ptr_child(ptr, "value"))));
    }
    if (f == "sinusoidal") {
      only_keys(j, ptr, {"family", "mean", "amplitude", "axis"});
      const double mean = positive(req("mean"), ptr_child(ptr, "mean"));
      const double amp = number(req("amplitude"), ptr_child(ptr, "amplitude"));
      if (!(std::fabs(amp) < mean)) throw ConfigError("amplitude must be smaller than the mean", ptr_child(ptr, "amplitude"));
      int axis = 0;
      if (const json* a = member(j, "axis")) axis = integer_in(*a, ptr_child(ptr, "axis"), 0, dim - 1);
      return MobilityTensor::sinusoidal(dim, mean, amp, axis);
    }
    if (f == "layered") {
      only_keys(j, ptr, {"family", "breaks", "values"});
      const auto br = numbers(req("breaks"), ptr_child(ptr, "breaks"));
      const auto vals = numbers(req("values"), ptr_child(ptr, "values"));
      for (std::size_t i = 0; i < vals.size(); ++i)
        if (!(vals[i] > 0.0)) throw ConfigError("layer values must be positive", ptr_child(ptr_child(ptr, "values"), i));
      try {
        return MobilityTensor::layered(dim, br, vals);
      } catch (const ConfigError& e) {
        throw ConfigError(e.what(), ptr);
      }
    }
    if (f == "checkerboard") {
      only_keys(j, ptr, {"family", "alpha", "beta"});
      if (dim != 2) throw ConfigError("checkerboard mobility is two-dimensional", ptr_child(ptr, "family"));
      return MobilityTensor::checkerboard(2, positive(req("alpha"), ptr_child(ptr, "alpha")),
                                          positive(req("beta"), ptr_child(ptr, "beta")));
    }
    throw ConfigError("unknown family '" + f + "' (constant, sinusoidal, layered, checkerboard)",
                      ptr_child(ptr, "family"));
  }
  only_keys(j, ptr, {"B11", "B22", "B12", "B21"});
  const json* b11 = member(j, "B11");
  if (!b11) throw ConfigError("missing field", ptr_child(ptr, "B11"));
  auto opt = [&](std::string_view key) -> std::optional<expr::Expr> {
    if (const json* v = member(j, key)) return parse_expression(*v, ptr_child(ptr, key));
    return std::nullopt;
  };
  try {
    if (dim == 1) {
      if (member(j, "B22") || member(j, "B12") || member(j, "B21"))
        throw ConfigError("1D mobility has a single entry B11");
      return MobilityTensor::expression(1, parse_expression(*b11, ptr_child(ptr, "B11")));
    }
    return MobilityTensor::expression(2, parse_expression(*b11, ptr_child(ptr, "B11")), opt("B22"), opt("B12"), opt("B21"));
  } catch (const ConfigError& e) {
    if (!e.pointer().empty()) throw;
    throw ConfigError(e.what(), ptr);
  }
}

inline StationaryDensity parse_density(const json* j, const std::string& ptr, int dim, const MobilityTensor& b) {
  if (!j) return StationaryDensity::general(dim, expr::Expr::constant(1.0));
  if (j->is_string()) return StationaryDensity::general(dim, parse_expression(*j, ptr));
  if (!j->is_object()) throw ConfigError("expected an expression or an object", ptr);
  if (const json* v = member(*j, "variant")) {
    only_keys(*j, ptr, {"variant", "pi0", "pi1"});
    const json* p0 = member(*j, "pi0");
    const json* p1 = member(*j, "pi1");
    if (!p0) throw ConfigError("missing field", ptr_child(ptr, "pi0"));
    if (!p1) throw ConfigError("missing field", ptr_child(ptr, "pi1"));
    const expr::Expr e0 = parse_expression(*p0, ptr_child(ptr, "pi0"));
    const expr::Expr e1 = parse_expression(*p1, ptr_child(ptr, "pi1"));
    const std::string name = v->is_string() ? v->get<std::string>() : "";
    try {
      if (name == "oscillatory") return StationaryDensity::oscillatory(dim, e0, e1);
      if (name == "uniform") return StationaryDensity::uniform(dim, e0, e1);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), ptr);
    }
    throw ConfigError("unknown variant (oscillatory, uniform)", ptr_child(ptr, "variant"));
  }
  if (const json* fam = member(*j, "family")) {
    only_keys(*j, ptr, {"family", "c"});
    if (!fam->is_string() || fam->get<std::string>() != "sqrtB")
      throw ConfigError("unknown family (sqrtB)", ptr_child(ptr, "family"));
    double c = 1.0;
    if (const json* cv = member(*j, "c")) c = positive(*cv, ptr_child(ptr, "c"));
    try {
      return StationaryDensity::sqrt_mobility(b, c);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), ptr);
    }
  }
  throw ConfigError("expected 'variant' or 'family'", ptr);
}

inline Medium parse_medium(const json& j, const std::string& ptr, int dim) {
  only_keys(j, ptr, {"B", "pi", "bounds", "pi_bounds"});
  const json* bj = member(j, "B");
  if (!bj) throw ConfigError("missing field", ptr_child(ptr, "B"));
  MobilityTensor b = parse_mobility(*bj, ptr_child(ptr, "B"), dim);
  if (const json* bd = member(j, "bounds")) {
    const auto v = numbers(*bd, ptr_child(ptr, "bounds"));
    if (v.size() != 2) throw ConfigError("expected [C1, C2]", ptr_child(ptr, "bounds"));
    try {
      b.declare_bounds(v[0], v[1]);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), ptr_child(ptr, "bounds"));
    }
  } else if (b.family() == MobilityTensor::Family::expression) {
    throw ConfigError("expression mobilities need declared bounds [C1, C2]", ptr_child(ptr, "bounds"));
  }
  StationaryDensity pi = parse_density(member(j, "pi"), ptr_child(ptr, "pi"), dim, b);
  if (const json* pb = member(j, "pi_bounds")) {
    const auto v = numbers(*pb, ptr_child(ptr, "pi_bounds"));
    if (v.size() != 2) throw ConfigError("expected [m, M]", ptr_child(ptr, "pi_bounds"));
    try {
      pi.declare_bounds(v[0], v[1]);
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), ptr_child(ptr, "pi_bounds"));
    }
  }
  Medium med{std::move(b), std::move(pi)};
  try {
    validate_medium(med);
  } catch (const EvalError& e) {
    throw ConfigError(e.what(), ptr);
  } catch (const ConfigError& e) {
    if (!e.pointer().empty()) throw;
    throw ConfigError(e.what(), ptr);
  }
  return med;
}

}  // namespace detail

/// Parses and validates a configuration document. `source` is kept for the config hash.
inline ExperimentConfig load_config(const std::string& source, const std::string& fallback_name = "experiment") {
  json j;
  try {
    j = json::parse(source);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what(), "/");
  }
  using namespace detail;
  only_keys(j, "", {"name", "kind", "description", "out", "dim", "seed", "medium", "initial", "eps", "cells", "ycells",
                    "slow_cells", "dt", "T", "output_times", "solve", "edi", "sweep", "metric", "gamma",
                    "checkerboard"});
  ExperimentConfig c;
  c.raw = j;
  c.source = source;
  c.name = fallback_name;
  if (const json* v = member(j, "name")) {
    if (!v->is_string() || v->get<std::string>().empty()) throw ConfigError("expected a nonempty string", "/name");
    c.name = v->get<std::string>();
  }
  if (const json* v = member(j, "kind")) {
    if (!v->is_string()) throw ConfigError("expected a string", "/kind");
    c.kind = kind_from_name(v->get<std::string>());
    if (!c.kind) throw ConfigError("unknown kind '" + v->get<std::string>() + "'", "/kind");
  }
  if (const json* v = member(j, "description")) {
    if (!v->is_string()) throw ConfigError("expected a string", "/description");
    c.description = v->get<std::string>();
  }
  if (const json* v = member(j, "out")) {
    if (!v->is_string()) throw ConfigError("expected a string", "/out");
    c.out = v->get<std::string>();
  }
  if (const json* v = member(j, "dim")) c.dim = integer_in(*v, "/dim", 1, 2);
  if (const json* v = member(j, "seed")) {
    if (!v->is_number_unsigned()) throw ConfigError("expected a nonnegative integer", "/seed");
    c.seed = v->get<std::uint64_t>();
  }
  if (const json* v = member(j, "medium")) c.medium = parse_medium(*v, "/medium", c.dim);
  if (const json* v = member(j, "initial")) c.initial = parse_expression(*v, "/initial");
  if (const json* v = member(j, "eps")) c.eps = eps_list(*v, "/eps");
  if (const json* v = member(j, "cells")) c.cells = integer_in(*v, "/cells", 16, c.dim == 1 ? 1 << 16 : 1024);
  if (const json* v = member(j, "ycells")) c.ycells = integer_in(*v, "/ycells", kMinCellResolution, 4096);
  if (const json* v = member(j, "slow_cells")) c.slow_cells = integer_in(*v, "/slow_cells", 1, 4096);
  if (const json* v = member(j, "T")) c.T = number_in(*v, "/T", 0.0, 100.0);
  if (const json* v = member(j, "dt")) c.dt = positive(*v, "/dt");
  if (const json* v = member(j, "output_times")) {
    c.output_times = numbers(*v, "/output_times");
    for (std::size_t i = 0; i < c.output_times.size(); ++i) {
      const double t = c.output_times[i];
      if (!(t > 0.0 && t <= c.T + 1e-12)) throw ConfigError("output time must lie in (0, T]", ptr_child("/output_times", i));
      if (i > 0 && !(t > c.output_times[i - 1]))
        throw ConfigError("output times must increase strictly", ptr_child("/output_times", i));
    }
  }
  if (const json* v = member(j, "solve")) {
    only_keys(*v, "/solve", {"homogenized"});
    if (const json* h = member(*v, "homogenized")) c.homogenized = boolean(*h, "/solve/homogenized");
  }
  if (const json* v = member(j, "edi")) {
    only_keys(*v, "/edi", {"refinement_cells"});
    if (const json* r = member(*v, "refinement_cells")) {
      if (!r->is_array() || r->size() < 2) throw ConfigError("expected at least two grid sizes", "/edi/refinement_cells");
      for (std::size_t i = 0; i < r->size(); ++i) {
        c.refinement_cells.push_back(integer_in((*r)[i], ptr_child("/edi/refinement_cells", i), 16, 1 << 16));
        if (i > 0 && c.refinement_cells[i] != 2 * c.refinement_cells[i - 1])
          throw ConfigError("refinement grids must double", ptr_child("/edi/refinement_cells", i));
      }
    }
  }
  if (const json* v = member(j, "sweep")) {
    only_keys(*v, "/sweep", {"w2_samples"});
    if (const json* s = member(*v, "w2_samples")) c.w2_samples = integer_in(*s, "/sweep/w2_samples", 2, 101);
  }
  if (const json* v = member(j, "metric")) {
    only_keys(*v, "/metric", {"x", "y", "torus", "target", "cells"});
    if (const json* x = member(*v, "x")) c.metric_x = number_in(*x, "/metric/x", 0.0, 1.0);
    if (const json* y = member(*v, "y")) c.metric_y = number_in(*y, "/metric/y", 0.0, 1.0);
    if (const json* t = member(*v, "torus")) c.metric_torus = boolean(*t, "/metric/torus");
    if (const json* t = member(*v, "target")) c.metric_target = parse_expression(*t, "/metric/target");
    if (const json* n = member(*v, "cells")) c.metric_cells = integer_in(*n, "/metric/cells", 16, 1 << 16);
  }
  if (const json* v = member(j, "checkerboard")) {
    only_keys(*v, "/checkerboard", {"alpha", "beta", "per_period", "refined_per_period", "source", "target"});
    if (const json* a = member(*v, "alpha")) c.cb_alpha = positive(*a, "/checkerboard/alpha");
    if (const json* b = member(*v, "beta")) c.cb_beta = positive(*b, "/checkerboard/beta");
    if (const json* p = member(*v, "per_period")) c.cb_per_period = integer_in(*p, "/checkerboard/per_period", 1, 64);
    if (const json* p = member(*v, "refined_per_period"))
      c.cb_refined_per_period = integer_in(*p, "/checkerboard/refined_per_period", 1, 64);
    if (const json* s = member(*v, "source")) c.cb_source = point(*s, "/checkerboard/source");
    if (const json* t = member(*v, "target")) c.cb_target = point(*t, "/checkerboard/target");
    if (!(2.0 * c.cb_alpha < c.cb_beta))
      throw ConfigError("the skeleton must be cheap: need n alpha < beta with n = 2", "/checkerboard/alpha");
  }
  if (const json* v = member(j, "gamma")) {
    only_keys(*v, "/gamma", {"recovery", "dirichlet"});
    if (const json* r = member(*v, "recovery")) {
      only_keys(*r, "/gamma/recovery", {"slope", "d1", "d2", "cells_per_period", "weight"});
      RecoveryConfig rc;
      if (const json* s = member(*r, "slope")) rc.slope = number(*s, "/gamma/recovery/slope");
      if (const json* d = member(*r, "d1")) rc.d1 = positive(*d, "/gamma/recovery/d1");
      if (const json* d = member(*r, "d2")) rc.d2 = positive(*d, "/gamma/recovery/d2");
      if (!(rc.d2 > rc.d1)) throw ConfigError("need d1 < d2", "/gamma/recovery/d2");
      if (const json* p = member(*r, "cells_per_period"))
        rc.cells_per_period = integer_in(*p, "/gamma/recovery/cells_per_period", kMinCellResolution, 1024);
      if (const json* w = member(*r, "weight")) rc.weight = parse_expression(*w, "/gamma/recovery/weight");
      c.recovery = rc;
    }
    if (const json* d = member(*v, "dirichlet")) {
      only_keys(*d, "/gamma/dirichlet", {"dim", "medium", "eps", "cells", "slope"});
      DirichletConfig dc;
      dc.dim = c.dim;
      if (const json* x = member(*d, "dim")) dc.dim = integer_in(*x, "/gamma/dirichlet/dim", 1, 2);
      if (const json* m = member(*d, "medium")) dc.medium = parse_medium(*m, "/gamma/dirichlet/medium", dc.dim);
      const json* e = member(*d, "eps");
      if (!e) throw ConfigError("missing field", "/gamma/dirichlet/eps");
      dc.eps = eps_list(*e, "/gamma/dirichlet/eps");
      if (const json* n = member(*d, "cells")) dc.cells = integer_in(*n, "/gamma/dirichlet/cells", 4, dc.dim == 1 ? 1 << 20 : 1024);
      if (const json* s = member(*d, "slope")) {
        const auto p = numbers(*s, "/gamma/dirichlet/slope");
        if (p.size() != std::size_t(dc.dim)) throw ConfigError("slope needs one entry per dimension", "/gamma/dirichlet/slope");
        dc.slope = {p[0], dc.dim == 2 ? p[1] : 0.0};
      }
      if (!dc.medium && (!c.medium || c.dim != dc.dim))
        throw ConfigError("needs a medium of matching dimension", "/gamma/dirichlet/medium");
      c.dirichlet = dc;
    }
  }
  return c;
}

inline ExperimentConfig load_config_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_config(ss.str(), path.stem().string());
}

// ---------------------------------------------------------------------------------------------
// run bookkeeping

struct Artifact {
  std::string file;
  std::uintmax_t bytes = 0;
  std::string checksum;  // FNV-1a 64, hex
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct RunManifest {
  std::string name;
  std::string kind;
  std::string config_path;
  std::string config_hash;
  std::string version = kToolVersion;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string started, finished;
  std::vector<Artifact> artifacts;
  std::vector<Check> checks;
  fs::path directory;  // where the run was written (not serialised)

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
  }

  json to_json() const {
    json j;
    j["tool"] = "wgfh";
    j["version"] = version;
    j["name"] = name;
    j["kind"] = kind;
    j["config"] = config_path;
    j["config_hash"] = config_hash;
    j["seed"] = seed;
    j["threads"] = threads;
    j["started"] = started;
    j["finished"] = finished;
    j["artifacts"] = json::array();
    for (const auto& a : artifacts) j["artifacts"].push_back({{"file", a.file}, {"bytes", a.bytes}, {"fnv1a64", a.checksum}});
    j["checks"] = json::array();
    for (const auto& c : checks) j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    j["status"] = passed() ? "pass" : "fail";
    return j;
  }
};

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Output directory plus the artifact and check lists of one run. Writes are thread-safe.
class Run {
public:
  Run(fs::path dir, int threads) : dir_(std::move(dir)), threads_(std::max(1, threads)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir_.string() + ": " + ec.message(), "/out");
  }

  const fs::path& dir() const noexcept { return dir_; }
  int threads() const noexcept { return threads_; }

  void write(const std::string& file, const std::string& text) {
    const fs::path p = dir_ / file;
    {
      std::ofstream out(p, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write " + p.string());
      out << text;
      if (!out) throw Error("write failed for " + p.string());
    }
    std::lock_guard lock(mutex_);
    artifacts_.push_back({file, text.size(), hex64(fnv1a64(text))});
  }

  void check(std::string name, bool passed, std::string detail) {
    std::lock_guard lock(mutex_);
    checks_.push_back({std::move(name), passed, std::move(detail)});
  }

  /// Artifacts sorted by file name; checks in registration order.
  std::vector<Artifact> artifacts() const {
    auto a = artifacts_;
    std::sort(a.begin(), a.end(), [](const Artifact& x, const Artifact& y) { return x.file < y.file; });
    return a;
  }
  const std::vector<Check>& checks() const noexcept { return checks_; }

private:
  fs::path dir_;
  int threads_;
  std::mutex mutex_;
  std::vector<Artifact> artifacts_;
  std::vector<Check> checks_;
};

namespace detail {

inline std::string eps_tag(double eps) { return "eps=" + fmt_short(eps); }

inline std::string indexed(const std::string& stem, std::size_t k, const std::string& ext = ".csv") {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%02zu", k);
  return stem + buf + ext;
}

inline const Medium& require_medium(const ExperimentConfig& c) {
  if (!c.medium) throw ConfigError("missing field", "/medium");
  return *c.medium;
}

inline const std::vector<double>& require_eps(const ExperimentConfig& c) {
  if (c.eps.empty()) throw ConfigError("missing field", "/eps");
  return c.eps;
}

inline std::vector<double> output_times_or_T(const ExperimentConfig& c) {
  return c.output_times.empty() ? std::vector<double>{c.T} : c.output_times;
}

inline int steps_for(double T, double dt) { return T > 0.0 ? std::max<int>(1, int(std::llround(T / dt))) : 0; }

/// Index of the stored snapshot at time t (nearest step).
inline std::size_t snapshot_index(const Trajectory& tr, double t) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < tr.times.size(); ++k)
    if (std::fabs(tr.times[k] - t) < std::fabs(tr.times[best] - t)) best = k;
  if (std::fabs(tr.times[best] - t) > 0.5 * tr.dt + 1e-14) throw Error("no snapshot stored near t = " + fmt_short(t));
  return best;
}

/// EDI record at time t (nearest step).
inline const EDIRecord& record_at(const std::vector<EDIRecord>& r, double t) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < r.size(); ++k)
    if (std::fabs(r[k].t - t) < std::fabs(r[best].t - t)) best = k;
  return r[best];
}

struct FlowRun {
  Trajectory traj;
  std::vector<EDIRecord> edi;
};

inline FlowRun flow(const DiffusionSystem& sys, const DensityState& init, double T, double dt,
                    std::vector<double> keep_times, bool with_edi) {
  FlowRun r;
  EvolveOptions opt;
  opt.keep_every = 0;
  opt.output_times = std::move(keep_times);
  std::optional<EdiAccumulator> acc;
  if (with_edi) {
    acc.emplace(sys);
    acc->start(init.t, init.f);
    opt.observer = [&](int, double t, std::span<const double>, std::span<const double> next) { acc->push(t, next); };
  }
  r.traj = evolve(init, sys, T, dt, opt);
  if (acc) r.edi = acc->records();
  return r;
}

inline DiffusionSystem homogenized(const ExperimentConfig& c, const Medium& med, int cells, int threads) {
  return homogenized_system(effective_tensors(med, Grid(med.dim(), cells), c.ycells, threads));
}

inline void check_trajectory(Run& run, const std::string& tag, const Trajectory& tr) {
  run.check("mass_conservation " + tag, tr.max_mass_drift <= kMassTol,
            "max relative mass change per step " + fmt_short(tr.max_mass_drift) + " (tol " + fmt_short(kMassTol) + ")");
  run.check("max_principle " + tag, tr.max_principle, tr.max_principle ? "range of f never expands" : "range of f expanded");
  const auto& id = tr.identities;
  const double worst = std::max({id.l2, id.h1, id.l2_timeder, id.h1_timeder});
  run.check("energy_identities " + tag, worst <= kIdentityTol,
            "L2 " + fmt_short(id.l2) + ", H1 " + fmt_short(id.h1) + ", L2 time-derivative " + fmt_short(id.l2_timeder) +
                ", H1 time-derivative " + fmt_short(id.h1_timeder) + " (tol " + fmt_short(kIdentityTol) + ")");
  bool dt_monotone = true;
  for (std::size_t k = 2; k < tr.diagnostics.size(); ++k)
    if (tr.diagnostics[k].dt_norm > tr.diagnostics[k - 1].dt_norm * (1.0 + 1e-12) + 1e-300) dt_monotone = false;
  run.check("free_energy_monotone " + tag, tr.free_energy_increase <= 1e-13 && dt_monotone,
            "max energy increase " + fmt_short(tr.free_energy_increase) +
                (dt_monotone ? "; time-derivative norm nonincreasing" : "; time-derivative norm increased"));
}

inline std::vector<std::string> coordinate_header(int dim) {
  return dim == 1 ? std::vector<std::string>{"x"} : std::vector<std::string>{"x1", "x2"};
}

inline std::string snapshot_csv(const Trajectory& tr, std::size_t k) {
  const Grid& g = tr.system.grid;
  auto header = coordinate_header(g.dim);
  header.push_back("rho");
  header.push_back("f");
  Csv csv(header);
  const Field rho = tr.rho(k);
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (g.dim == 1) csv.row({g.center(c, 0), rho[c], tr.f[k][c]});
    else csv.row({g.center(c, 0), g.center(c, 1), rho[c], tr.f[k][c]});
  }
  return csv.text();
}

inline std::string diagnostics_csv(const Trajectory& tr) {
  Csv csv({"t", "min_f", "max_f", "norm_pi", "dirichlet", "dt_norm", "mass"});
  for (const auto& d : tr.diagnostics) csv.row({d.t, d.min_f, d.max_f, d.norm_pi, d.dirichlet, d.dt_norm, d.mass});
  return csv.text();
}

inline const std::vector<std::string>& edi_header() {
  static const std::vector<std::string> h = {"eps",   "t",        "E_eps",          "int_psi", "int_psistar",
                                             "E_bar", "int_psi_bar", "int_psistar_bar", "residual"};
  return h;
}

inline std::vector<double> edi_row(double eps, double t, const EDIRecord& e, const EDIRecord& b) {
  return {eps, t, e.energy, e.int_psi, e.int_psistar, b.energy, b.int_psi, b.int_psistar, e.residual};
}

inline double min_residual(const std::vector<EDIRecord>& r) {
  double m = 0.0;
  for (const auto& x : r) m = std::min(m, x.residual);
  return m;
}

inline double max_fy(const std::vector<EDIRecord>& r) {
  double m = 0.0;
  for (const auto& x : r) m = std::max(m, std::fabs(x.fy_gap));
  return m;
}

inline bool nonincreasing(const std::vector<double>& v, double tol) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[k - 1] + tol) return false;
  return true;
}

inline bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (!(v[k] < v[k - 1])) return false;
  return true;
}

inline std::string list(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + fmt_short(v[k]);
  return s + "]";
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// runners

inline void run_effective(const ExperimentConfig& c, Run& run) {
  const Medium& med = detail::require_medium(c);
  const int dim = med.dim();
  const bool uniform = med.density.variant() == StationaryDensity::Variant::uniform;
  const Grid slow(dim, c.slow_cells);
  const EffectiveTensors eff = effective_tensors(med, slow, c.ycells, run.threads());

  std::vector<std::string> header = detail::coordinate_header(dim);
  const char* names[] = {"D", "G", "B"};
  for (const char* n : names)
    for (int i = 1; i <= dim; ++i)
      for (int k = 1; k <= dim; ++k) header.push_back(std::string(n) + "_" + std::to_string(i) + std::to_string(k));
  header.push_back("pi_bar");
  Csv csv(header);

  std::vector<std::size_t> rows;
  if (eff.x_independent) rows.push_back(0);
  else
    for (std::size_t s = 0; s < slow.size(); ++s) rows.push_back(s);
  auto point_of = [&](std::size_t s) -> Point {
    if (eff.x_independent) return dim == 1 ? Point{0.5, 0.0} : Point{0.5, 0.5};
    return {slow.center(s, 0), dim == 2 ? slow.center(s, 1) : 0.0};
  };

  double recompute = 0.0;
  for (std::size_t s : rows) {
    const EffectivePoint& e = eff.at(s);
    const Point x = point_of(s);
    std::vector<double> r = {x.c1};
    if (dim == 2) r.push_back(x.c2);
    for (const Mat2* m : {&e.D_bar, &e.G_bar, &e.B_bar})
      for (int i = 0; i < dim; ++i)
        for (int k = 0; k < dim; ++k) r.push_back((*m)(i, k));
    r.push_back(e.pi_bar);
    csv.row(r);
    // B-bar against ((D + G) / pi-bar)^{-1} assembled here
    const Mat2 direct = ((e.D_bar + e.G_bar) * (1.0 / e.pi_bar)).inverse(dim);
    for (int i = 0; i < dim; ++i)
      for (int k = 0; k < dim; ++k)
        recompute = std::max(recompute, std::fabs(direct(i, k) - e.B_bar(i, k)) / std::max(1.0, std::fabs(e.B_bar(i, k))));
  }
  run.write("effective.csv", csv.text());
  run.check("effective_bounds", true, "eigenvalues of D-bar + G-bar inside the declared bound interval at every point");
  run.check("effective_inverse", recompute <= 1e-12, "max relative deviation of B-bar from ((D+G)/pi-bar)^-1: " + fmt_short(recompute));

  // variational cross-check on up to four points, 20 seeded directions each
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Medium unit{med.mobility, StationaryDensity::general(dim, expr::Expr::constant(1.0))};
  double worst = 0.0;
  const std::size_t stride = std::max<std::size_t>(1, rows.size() / 4);
  for (std::size_t i = 0; i < rows.size(); i += stride) {
    const std::size_t s = rows[i];
    const Point x = point_of(s);
    const Mat2 total = eff.total(s);
    const double scale = uniform ? med.density.two_scale(x, {}) : 1.0;
    for (int k = 0; k < 20; ++k) {
      const double p[2] = {normal(rng), dim == 2 ? normal(rng) : 0.0};
      const double quad = total.quad(p, dim);
      const double var = scale * effective_tensor_variational(uniform ? unit : med, x, std::span<const double>(p, dim), c.ycells);
      worst = std::max(worst, std::fabs(quad - var) / std::max(1.0, std::fabs(quad)));
    }
  }
  run.check("variational_crosscheck", worst <= kVariationalTol,
            "max relative difference of <(D+G)p,p> and the minimisation: " + fmt_short(worst) + " (tol " +
                fmt_short(kVariationalTol) + ")");

  if (dim == 1) {
    double dev = 0.0;
    for (std::size_t s : rows)
      dev = std::max(dev, std::fabs(eff.at(s).B_bar.a11 - effective_mobility_1d_closed_form(med, point_of(s))));
    run.check("closed_form_1d", dev <= kClosedFormTol,
              "max |B-bar - pi-bar int B/pi| = " + fmt_short(dev) + " (tol " + fmt_short(kClosedFormTol) + ")");
  }
}

inline void run_solve(const ExperimentConfig& c, Run& run) {
  const Medium& med = detail::require_medium(c);
  const auto& eps = detail::require_eps(c);
  const auto times = detail::output_times_or_T(c);
  const std::size_t entries = eps.size() + (c.homogenized ? 1 : 0);
  std::vector<Trajectory> out(entries);
  std::optional<DiffusionSystem> hom;
  if (c.homogenized) hom = detail::homogenized(c, med, c.cells, run.threads());
  parallel_for(entries, run.threads(), [&](std::size_t k) {
    const DiffusionSystem sys = k < eps.size() ? sample_medium(med, eps[k], c.cells).system() : *hom;
    const DensityState init = well_prepared_initial(c.initial, med, sys);
    out[k] = detail::flow(sys, init, c.T, c.step(), times, false).traj;
  });
  for (std::size_t k = 0; k < entries; ++k) {
    const bool is_hom = k == eps.size();
    const std::string stem = is_hom ? std::string("hom") : detail::indexed("e", k, "");
    const std::string tag = is_hom ? "homogenized" : detail::eps_tag(eps[k]);
    for (std::size_t j = 0; j < times.size(); ++j)
      run.write("snapshot_" + stem + "_" + detail::indexed("t", j), detail::snapshot_csv(out[k], detail::snapshot_index(out[k], times[j])));
    run.write("diagnostics_" + stem + ".csv", detail::diagnostics_csv(out[k]));
    detail::check_trajectory(run, tag, out[k]);
  }
  if (c.homogenized) {
    Csv csv({"eps", "l2_error"});
    std::vector<double> err;
    const Trajectory& h = out.back();
    for (std::size_t k = 0; k < eps.size(); ++k) {
      err.push_back(l2_distance(h.system.grid, out[k].f.back(), h.f.back()));
      csv.row({eps[k], err.back()});
    }
    run.write("solve_error.csv", csv.text());
    if (eps.size() > 1)
      run.check("homogenization_convergence", detail::strictly_decreasing(err),
                "L2 error of f at T against the homogenised solve " + detail::list(err));
  }
}

inline void run_edi(const ExperimentConfig& c, Run& run) {
  const Medium& med = detail::require_medium(c);
  const auto& eps = detail::require_eps(c);
  std::vector<double> times = c.output_times;
  if (times.empty())
    for (int k = 1; k <= 10; ++k) times.push_back(c.T * k / 10.0);
  const double dt = c.step();

  std::vector<int> grids = c.refinement_cells;
  if (grids.empty()) grids = {c.cells / 4, c.cells / 2, c.cells};
  for (int n : grids)
    if (n * eps.front() < kMinCellsPerPeriod || std::fabs(n * eps.front() - std::round(n * eps.front())) > 1e-9)
      throw ConfigError("refinement grid " + std::to_string(n) + " does not resolve eps", "/edi/refinement_cells");

  // entries: every eps at the default grid, the homogenised system, then the refinement grids
  const std::size_t ne = eps.size();
  const std::size_t entries = ne + 1 + grids.size();
  std::vector<std::vector<EDIRecord>> rec(entries);
  const DiffusionSystem hom = detail::homogenized(c, med, c.cells, run.threads());
  parallel_for(entries, run.threads(), [&](std::size_t k) {
    if (k < ne) {
      const DiffusionSystem sys = sample_medium(med, eps[k], c.cells).system();
      rec[k] = detail::flow(sys, well_prepared_initial(c.initial, med, sys), c.T, dt, {}, true).edi;
    } else if (k == ne) {
      rec[k] = detail::flow(hom, well_prepared_initial(c.initial, med, hom), c.T, dt, {}, true).edi;
    } else {
      const int n = grids[k - ne - 1];
      const DiffusionSystem sys = sample_medium(med, eps.front(), n).system();
      rec[k] = detail::flow(sys, well_prepared_initial(c.initial, med, sys), c.T, dt * c.cells / n, {}, true).edi;
    }
  });

  Csv csv(detail::edi_header());
  for (std::size_t k = 0; k < ne; ++k) {
    csv.row(detail::edi_row(eps[k], 0.0, rec[k].front(), rec[ne].front()));
    for (double t : times) csv.row(detail::edi_row(eps[k], t, detail::record_at(rec[k], t), detail::record_at(rec[ne], t)));
  }
  run.write("edi.csv", csv.text());

  Csv ref({"eps", "cells", "dt", "residual", "relative", "order"});
  std::vector<double> residuals;
  for (std::size_t i = 0; i < grids.size(); ++i) {
    const auto& r = rec[ne + 1 + i];
    residuals.push_back(r.back().residual);
    const double order = i > 0 ? std::log2(residuals[i - 1] / residuals[i]) : 0.0;
    ref.row({eps.front(), double(grids[i]), dt * c.cells / grids[i], r.back().residual, r.back().residual / r.front().energy, order});
  }
  run.write("edi_refinement.csv", ref.text());

  double min_res = 0.0, fy = 0.0;
  for (const auto& r : rec) {
    min_res = std::min(min_res, detail::min_residual(r));
    fy = std::max(fy, detail::max_fy(r));
  }
  run.check("edi_sign", min_res >= -kEdiSignTol,
            "min residual " + fmt_short(min_res) + " (energy dissipation inequality direction, tol " + fmt_short(kEdiSignTol) + ")");
  run.check("fenchel_young_on_flow", fy <= kFenchelYoungTol, "max |Fenchel-Young gap| along the flow " + fmt_short(fy));
  for (std::size_t k = 0; k < ne; ++k) {
    const double rel = std::fabs(rec[k].back().residual) / std::fabs(rec[k].front().energy);
    run.check("edi_relative " + detail::eps_tag(eps[k]), rel <= kEdiRelativeTol,
              "|residual| / E(rho_0) at T = " + fmt_short(rel) + " (tol " + fmt_short(kEdiRelativeTol) + ")");
  }
  const double order = std::log2(residuals[residuals.size() - 2] / residuals.back());
  run.check("edi_order", order >= kEdiMinOrder,
            "residuals " + detail::list(residuals) + ", observed order " + fmt_short(order) + " (min " + fmt_short(kEdiMinOrder) + ")");
}

/// Max over pairs of sampled snapshots of W2^2(rho_t, rho_s) / |t - s|.
inline double w2_equicontinuity(const Trajectory& tr, const std::vector<double>& times) {
  std::vector<Field> rho;
  for (double t : times) rho.push_back(tr.rho(detail::snapshot_index(tr, t)));
  double best = 0.0;
  const TransportCost cost = TransportCost::euclidean();
  for (std::size_t i = 0; i < rho.size(); ++i)
    for (std::size_t j = i + 1; j < rho.size(); ++j) {
      const double w = wasserstein_1d(rho[i], rho[j], cost);
      best = std::max(best, w * w / std::fabs(times[j] - times[i]));
    }
  return best;
}

inline void run_sweep(const ExperimentConfig& c, Run& run) {
  const Medium& med = detail::require_medium(c);
  const auto& eps = detail::require_eps(c);
  const std::vector<double> times = c.output_times.empty() ? std::vector<double>{0.02, 0.05, 0.1} : c.output_times;
  std::vector<double> w2_times;
  for (int k = 0; k < c.w2_samples; ++k) w2_times.push_back(c.T * k / (c.w2_samples - 1));
  std::vector<double> keep = times;
  keep.insert(keep.end(), w2_times.begin(), w2_times.end());

  const std::size_t ne = eps.size();
  std::vector<detail::FlowRun> runs(ne + 1);
  const DiffusionSystem hom = detail::homogenized(c, med, c.cells, run.threads());
  parallel_for(ne + 1, run.threads(), [&](std::size_t k) {
    const DiffusionSystem sys = k < ne ? sample_medium(med, eps[k], c.cells).system() : hom;
    runs[k] = detail::flow(sys, well_prepared_initial(c.initial, med, sys), c.T, c.step(), keep, true);
  });
  const auto& bar = runs[ne].edi;

  std::vector<std::string> header = detail::edi_header();
  for (const char* h : {"diff_E", "diff_psistar", "diff_psi", "delta_E", "delta_psistar", "delta_psi", "monotone"})
    header.push_back(h);
  Csv csv(header);
  // delta[q][j][k]: q quantity, j time, k eps
  std::array<std::vector<std::vector<double>>, 3> delta;
  for (auto& d : delta) d.assign(times.size(), std::vector<double>(ne, 0.0));
  const double tol = 1e-12;
  for (std::size_t j = 0; j < times.size(); ++j) {
    const EDIRecord& b = detail::record_at(bar, times[j]);
    for (std::size_t k = 0; k < ne; ++k) {
      const EDIRecord& e = detail::record_at(runs[k].edi, times[j]);
      const double diff[3] = {e.energy - b.energy, e.int_psistar - b.int_psistar, e.int_psi - b.int_psi};
      bool monotone = true;
      for (int q = 0; q < 3; ++q) {
        delta[q][j][k] = std::max(0.0, -diff[q]);
        if (k > 0 && delta[q][j][k] > delta[q][j][k - 1] + tol) monotone = false;
      }
      auto row = detail::edi_row(eps[k], times[j], e, b);
      row.insert(row.end(), {diff[0], diff[1], diff[2], delta[0][j][k], delta[1][j][k], delta[2][j][k], monotone ? 1.0 : 0.0});
      csv.row(row);
    }
  }
  run.write("sweep.csv", csv.text());

  const char* qnames[3] = {"free_energy", "int_psistar", "int_psi"};
  for (int q = 0; q < 3; ++q)
    for (std::size_t j = 0; j < times.size(); ++j)
      run.check(std::string("lower_bound ") + qnames[q] + " t=" + fmt_short(times[j]), detail::nonincreasing(delta[q][j], tol),
                "delta(eps) = " + detail::list(delta[q][j]));

  // convergence of f at T against the homogenised solve
  Csv err_csv({"eps", "l2_error", "ratio"});
  std::vector<double> err;
  double min_ratio = 1e300;
  for (std::size_t k = 0; k < ne; ++k) {
    err.push_back(l2_distance(hom.grid, runs[k].traj.f.back(), runs[ne].traj.f.back()));
    const double ratio = k > 0 ? err[k - 1] / err[k] : 0.0;
    if (k > 0) min_ratio = std::min(min_ratio, ratio);
    err_csv.row({eps[k], err[k], ratio});
  }
  run.write("sweep_error.csv", err_csv.text());
  if (ne > 1) {
    run.check("homogenization_convergence", detail::strictly_decreasing(err), "L2 error of f at T " + detail::list(err));
    run.check("homogenization_rate", min_ratio >= kMinErrorRatio,
              "min ratio between consecutive eps " + fmt_short(min_ratio) + " (min " + fmt_short(kMinErrorRatio) + ")");
  }

  double min_res = 0.0;
  for (const auto& r : runs) min_res = std::min(min_res, detail::min_residual(r.edi));
  run.check("edi_sign", min_res >= -kEdiSignTol,
            "min residual " + fmt_short(min_res) + " (energy dissipation inequality direction, tol " + fmt_short(kEdiSignTol) + ")");
  for (std::size_t k = 0; k <= ne; ++k)
    detail::check_trajectory(run, k < ne ? detail::eps_tag(eps[k]) : "homogenized", runs[k].traj);

  if (med.dim() == 1) {
    Csv w2({"eps", "w2_constant"});
    std::vector<double> cst;
    for (std::size_t k = 0; k < ne; ++k) {
      cst.push_back(w2_equicontinuity(runs[k].traj, w2_times));
      w2.row({eps[k], cst.back()});
    }
    run.write("sweep_w2.csv", w2.text());
    const auto [lo, hi] = std::minmax_element(cst.begin(), cst.end());
    const double spread = (*hi - *lo) / *lo;
    run.check("w2_equicontinuity", spread <= kW2Spread,
              "max W2^2/|t-s| per eps " + detail::list(cst) + ", spread " + fmt_short(spread) + " (max " + fmt_short(kW2Spread) + ")");
  }
}

inline void run_metric(const ExperimentConfig& c, Run& run) {
  const Medium& med = detail::require_medium(c);
  if (med.dim() != 1) throw ConfigError("metric experiments are one-dimensional", "/dim");
  const auto& eps = detail::require_eps(c);
  if (!c.metric_target) throw ConfigError("missing field", "/metric/target");
  const MetricReport1D rep = gap_report(med, {0.5, 0.0}, std::max(c.ycells, 256));

  const Grid g(1, c.metric_cells);
  auto density = [&](const expr::Expr& e) {
    Field r = evaluate_on_grid(e, g);
    const double m = integrate(g, r);
    if (!(m > 0.0)) throw ConfigError("transport densities need positive mass", "/metric/target");
    for (double& v : r) v /= m;
    return r;
  };
  const Field rho0 = density(c.initial), rho1 = density(*c.metric_target);
  const double w_gh = wasserstein_1d(rho0, rho1, TransportCost::d_gh(rep.c_bar));
  const double w_bar = wasserstein_1d(rho0, rho1, TransportCost::d_bar(rep.b_bar));
  const double x = c.metric_x, y = c.metric_y;
  const double dgh = d_gh_1d(rep.c_bar, x, y);
  const double dbar = d_bar(Mat2::scalar(rep.b_bar), 1, {x, 0.0}, {y, 0.0});

  Csv csv({"eps", "C_bar", "B_bar", "gap", "d_eps", "d_gh", "d_bar", "W_eps", "W_gh", "W_bar"});
  std::vector<double> derr(eps.size());
  std::vector<std::array<double, 2>> vals(eps.size());
  parallel_for(eps.size(), run.threads(), [&](std::size_t k) {
    vals[k] = {d_eps_1d(med.mobility, eps[k], x, y, c.metric_torus),
               wasserstein_1d(rho0, rho1, TransportCost::d_eps(med.mobility, eps[k]))};
  });
  for (std::size_t k = 0; k < eps.size(); ++k) {
    derr[k] = std::fabs(vals[k][0] - dgh);
    csv.row({eps[k], rep.c_bar, rep.b_bar, rep.gap, vals[k][0], dgh, dbar, vals[k][1], w_gh, w_bar});
  }
  run.write("metric.csv", csv.text());
  Csv summary({"C_bar", "B_bar", "gap", "equality"});
  summary.row({rep.c_bar, rep.b_bar, rep.gap, rep.equality ? 1.0 : 0.0});
  run.write("metric_summary.csv", summary.text());

  // C-bar <= B-bar on the slow grid, not only at the report point
  double worst = rep.gap;
  if (med.density.depends_on_slow()) {
    const Grid slow(1, c.slow_cells);
    for (std::size_t s = 0; s < slow.size(); ++s)
      worst = std::min(worst, gap_report(med, {slow.center(s, 0), 0.0}, std::max(c.ycells, 256)).gap);
  }
  run.check("gap_sign", worst >= -kGapTol, "min of B-bar - C-bar " + fmt_short(worst));
  if (rep.equality)
    run.check("equality_case", std::fabs(rep.gap) <= kGapTol, "pi = c sqrt(B): gap " + fmt_short(rep.gap) + " (tol " + fmt_short(kGapTol) + ")");
  else
    run.check("strict_gap", rep.gap > kGapTol, "pi is not c sqrt(B): gap " + fmt_short(rep.gap));
  run.check("d_eps_convergence", detail::nonincreasing(derr, 1e-12), "|d_eps - d_gh| over eps " + detail::list(derr));
  run.check("w_ordering", w_gh <= w_bar * (1.0 + 1e-12), "W_gh " + fmt_short(w_gh) + " <= W_bar " + fmt_short(w_bar));
}

inline void run_checkerboard(const ExperimentConfig& c, Run& run) {
  const auto& eps = detail::require_eps(c);
  const Medium med{MobilityTensor::checkerboard(2, c.cb_alpha, c.cb_beta),
                   StationaryDensity::general(2, expr::Expr::constant(1.0))};
  const EffectivePoint eff = effective_at(med, {0.5, 0.5}, c.ycells);
  const double dbar = d_bar(eff.B_bar, 2, c.cb_source, c.cb_target);
  const double limit = std::sqrt(c.cb_alpha) * (std::fabs(c.cb_target.c1 - c.cb_source.c1) + std::fabs(c.cb_target.c2 - c.cb_source.c2));

  struct Job {
    double eps;
    int per_period;
  };
  std::vector<Job> jobs;
  for (double e : eps) jobs.push_back({e, c.cb_per_period});
  jobs.push_back({eps.front(), c.cb_refined_per_period});
  std::vector<double> geo(jobs.size());
  parallel_for(jobs.size(), run.threads(), [&](std::size_t k) {
    geo[k] = checkerboard_geodesic({jobs[k].eps, jobs[k].per_period, c.cb_alpha, c.cb_beta}, c.cb_source, c.cb_target);
  });

  Csv csv({"eps", "per_period", "spacing", "geodesic", "limit", "rel_error", "d_bar"});
  std::vector<double> rel;
  bool strict = true;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const GeodesicGrid2D grid{jobs[k].eps, jobs[k].per_period, c.cb_alpha, c.cb_beta};
    const double r = std::fabs(geo[k] - limit) / limit;
    if (k < eps.size()) rel.push_back(r);
    if (!(dbar > geo[k])) strict = false;
    csv.row({jobs[k].eps, double(jobs[k].per_period), grid.spacing(), geo[k], limit, r, dbar});
  }
  run.write("checkerboard.csv", csv.text());
  run.check("finsler_limit", rel.back() <= kFinslerTol,
            "relative error at eps " + fmt_short(eps.back()) + ": " + fmt_short(rel.back()) + " (tol " + fmt_short(kFinslerTol) + ")");
  run.check("strict_gap", strict, "d_bar " + fmt_short(dbar) + " exceeds every lattice geodesic");
  run.check("lattice_refinement", geo.back() <= geo.front() * (1.0 + 1e-12),
            "per_period " + std::to_string(c.cb_refined_per_period) + ": " + fmt_short(geo.back()) + " vs " +
                std::to_string(c.cb_per_period) + ": " + fmt_short(geo.front()));
  run.check("eps_trend", detail::nonincreasing(rel, 1e-12), "relative errors " + detail::list(rel));
}

inline void run_gamma(const ExperimentConfig& c, Run& run) {
  if (!c.recovery && !c.dirichlet) throw ConfigError("needs a 'recovery' or 'dirichlet' block", "/gamma");
  if (c.recovery) {
    const Medium& med = detail::require_medium(c);
    const auto& eps = detail::require_eps(c);
    const RecoveryConfig& rc = *c.recovery;
    const PiecewiseAffine xi = PiecewiseAffine::tent(med.dim(), rc.slope);
    RecoveryOptions opt;
    opt.d1 = rc.d1;
    opt.d2 = rc.d2;
    opt.cells_per_period = rc.cells_per_period;
    opt.threads = run.threads();
    if (rc.weight) {
      const expr::Expr w = *rc.weight;
      const int dim = med.dim();
      opt.weight = [w, dim](const Point& x) { return w.evaluate(wgfh::detail::bind_slow_fast(dim, x.c1, x.c2, 0.0, 0.0)); };
    }
    Csv csv({"eps", "F_eps", "F_limit", "error"});
    Csv detail_csv({"eps", "gradient_ratio", "l2_distance", "l2_over_eps"});
    std::vector<double> err, ratio, l2;
    for (double e : eps) {
      RecoveryResult r;
      try {
        r = build_recovery(xi, med, e, opt);
      } catch (const ConfigError& ex) {
        if (!ex.pointer().empty()) throw;
        throw ConfigError(ex.what(), "/eps");
      }
      csv.row({e, r.energy_eps, r.energy_limit, r.error});
      detail_csv.row({e, r.gradient_ratio, r.l2_distance, r.l2_distance / e});
      err.push_back(r.error);
      ratio.push_back(r.gradient_ratio);
      l2.push_back(r.l2_distance);
    }
    run.write("gamma.csv", csv.text());
    run.write("gamma_recovery.csv", detail_csv.text());
    run.check("recovery_error_decreasing", detail::strictly_decreasing(err), "|F_eps - F| " + detail::list(err));
    bool grad = true;
    for (std::size_t k = 1; k < ratio.size(); ++k)
      if (ratio[k] > ratio[k - 1] * (1.0 + 1e-9)) grad = false;
    run.check("gradient_bound_nonincreasing", grad, "max |grad xi_eps| / max |grad xi| " + detail::list(ratio));
    run.check("recovery_l2_decreasing", detail::strictly_decreasing(l2), "||xi_eps - xi||_L2 " + detail::list(l2));

    // the periodic-affine minimiser reproduces <A-bar p, p> of the cell problem
    if (!med.density.depends_on_slow() && med.density.variant() != StationaryDensity::Variant::uniform) {
      const Point x0 = med.dim() == 1 ? Point{0.5, 0.0} : Point{0.5, 0.5};
      const double p[2] = {rc.slope, 0.0};
      const std::span<const double> ps(p, med.dim());
      const double a = minimize_periodic_affine([&](const Point& y) { return med.conductance(x0, y); }, ps, med.dim(), c.ycells);
      const double b = effective_tensor_variational(med, x0, ps, c.ycells);
      const double d = std::fabs(a - b) / std::max(1.0, std::fabs(b));
      run.check("periodic_affine_crosscheck", d <= 1e-9, "relative difference " + fmt_short(d));
    }
  }
  if (c.dirichlet) {
    const DirichletConfig& dc = *c.dirichlet;
    const Medium& med = dc.medium ? *dc.medium : detail::require_medium(c);
    if (med.density.depends_on_slow() || med.density.variant() == StationaryDensity::Variant::uniform)
      throw ConfigError("the Dirichlet example needs a density independent of x", "/gamma/dirichlet/medium");
    const int dim = med.dim();
    const Point x0 = dim == 1 ? Point{0.5, 0.0} : Point{0.5, 0.5};
    const EffectivePoint eff = effective_at(med, x0, std::max(c.ycells, 256));
    const Mat2 abar = eff.D_bar + eff.G_bar;
    const double p[2] = {dc.slope[0], dc.slope[1]};
    const double limit = abar.quad(std::span<const double>(p, dim), dim);
    std::vector<double> energy(dc.eps.size());
    parallel_for(dc.eps.size(), run.threads(), [&](std::size_t k) {
      const double e = dc.eps[k];
      DirichletProblem prob;
      prob.dim = dim;
      prob.n = dc.cells;
      prob.weight = [&med, e](const Point& x) { return med.conductance(x, {x.c1 / e, x.c2 / e}); };
      prob.boundary = [p](const Point& x) { return p[0] * x.c1 + p[1] * x.c2; };
      energy[k] = minimize_dirichlet(prob).energy;
    });
    Csv csv({"eps", "F_eps", "F_limit", "error"});
    std::vector<double> err;
    for (std::size_t k = 0; k < dc.eps.size(); ++k) {
      err.push_back(std::fabs(energy[k] - limit));
      csv.row({dc.eps[k], energy[k], limit, err.back()});
    }
    run.write("gamma_dirichlet.csv", csv.text());
    run.check("dirichlet_error_decreasing", detail::strictly_decreasing(err), "|F_eps - F| " + detail::list(err));
    const LiminfReport lr = gamma_liminf_check(dc.eps, energy, limit);
    run.check("dirichlet_liminf", lr.lower_bound_holds, "delta(eps) = " + detail::list(lr.delta));
  }
}

// ---------------------------------------------------------------------------------------------
// plot scripts

inline std::string plot_script(Kind k, int dim) {
  std::string s = "set datafile separator ','\nset key autotitle columnhead\nset terminal pngcairo size 900,600\n";
  switch (k) {
    case Kind::effective:
      s += "set output 'effective.png'\nset xlabel 'x'\n";
      s += dim == 1 ? "plot 'effective.csv' using 1:4 with linespoints, '' using 1:5 with linespoints\n"
                    : "plot 'effective.csv' using 1:11 with points, '' using 1:14 with points\n";
      break;
    case Kind::solve:
      s += "set output 'solve.png'\nset xlabel 'x'\n";
      s += dim == 1 ? "plot for [f in system('ls snapshot_*.csv')] f using 1:2 with lines title f\n"
                    : "set view map\nsplot 'snapshot_e00_t00.csv' using 1:2:3 with image\n";
      break;
    case Kind::edi:
      s += "set output 'edi.png'\nset xlabel 't'\n"
           "plot 'edi.csv' using 2:3 with lines title 'E_eps', '' using 2:6 with lines title 'E_bar', "
           "'' using 2:9 with lines title 'residual'\n"
           "set output 'edi_refinement.png'\nset logscale xy\nset xlabel 'cells'\n"
           "plot 'edi_refinement.csv' using 2:4 with linespoints\n";
      break;
    case Kind::sweep:
      s += "set output 'sweep.png'\nset logscale x\nset xlabel 'eps'\n"
           "plot 'sweep.csv' using 1:10 with points, '' using 1:11 with points, '' using 1:12 with points\n"
           "set output 'sweep_error.png'\nset logscale xy\n"
           "plot 'sweep_error.csv' using 1:2 with linespoints\n";
      break;
    case Kind::metric:
      s += "set output 'metric.png'\nset logscale x\nset xlabel 'eps'\n"
           "plot 'metric.csv' using 1:5 with linespoints, '' using 1:6 with lines, '' using 1:7 with lines\n";
      break;
    case Kind::gamma:
      s += "set output 'gamma.png'\nset logscale xy\nset xlabel 'eps'\n"
           "plot 'gamma.csv' using 1:4 with linespoints\n";
      break;
    case Kind::checkerboard:
      s += "set output 'checkerboard.png'\nset logscale x\nset xlabel 'eps'\n"
           "plot 'checkerboard.csv' using 1:4 with linespoints, '' using 1:5 with lines, '' using 1:7 with lines\n";
      break;
  }
  return s;
}

// ---------------------------------------------------------------------------------------------
// entry points

struct RunOptions {
  std::optional<fs::path> out;
  int threads = 1;
  std::string config_path;
};

/// Runs an experiment of the given kind and writes CSVs, the plot script and manifest.json.
inline RunManifest run_experiment(const ExperimentConfig& c, Kind kind, const RunOptions& opt) {
  if (c.kind && *c.kind != kind)
    throw ConfigError("config declares kind '" + std::string(kind_name(*c.kind)) + "' but '" + std::string(kind_name(kind)) +
                          "' was requested",
                      "/kind");
  const fs::path dir = opt.out ? *opt.out : fs::path(c.out.empty() ? "out/" + c.name : c.out);
  RunManifest m;
  m.name = c.name;
  m.kind = std::string(kind_name(kind));
  m.config_path = opt.config_path;
  m.config_hash = hex64(fnv1a64(c.source));
  m.seed = c.seed;
  m.threads = std::max(1, opt.threads);
  m.started = utc_now();
  m.directory = dir;
  Run run(dir, m.threads);
  const std::string context = "experiment '" + c.name + "' (" + m.kind + "): ";
  try {
    switch (kind) {
      case Kind::effective: run_effective(c, run); break;
      case Kind::solve: run_solve(c, run); break;
      case Kind::edi: run_edi(c, run); break;
      case Kind::sweep: run_sweep(c, run); break;
      case Kind::metric: run_metric(c, run); break;
      case Kind::gamma: run_gamma(c, run); break;
      case Kind::checkerboard: run_checkerboard(c, run); break;
    }
  } catch (const ConfigError& e) {
    throw ConfigError(context + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(context + e.what());
  } catch (const EvalError& e) {
    throw NumericalError(context + e.what());
  }
  run.write("plot_" + m.kind + ".gp", plot_script(kind, c.dim));
  m.artifacts = run.artifacts();
  m.checks = run.checks();
  m.finished = utc_now();
  std::ofstream out(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  out << m.to_json().dump(2) << '\n';
  if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
  return m;
}

inline RunManifest run(const fs::path& config_path, Kind kind, RunOptions opt = {}) {
  const ExperimentConfig c = load_config_file(config_path);
  if (opt.config_path.empty()) opt.config_path = config_path.string();
  return run_experiment(c, kind, opt);
}

struct Report {
  std::vector<std::string> lines;
  int passed = 0, total = 0;

  bool ok() const noexcept { return passed == total; }
  std::string text() const {
    std::string s;
    for (const auto& l : lines) s += l + '\n';
    return s;
  }
};

/// Pass/fail summary of a run directory's manifest. Re-verifies artifact checksums and the sign
/// of every EDI residual column; throws on an empty manifest or missing artifacts.
inline Report report(const fs::path& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw Error("cannot read manifest " + manifest_path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json j;
  try {
    j = json::parse(text.empty() ? std::string("null") : text);
  } catch (const json::parse_error& e) {
    throw Error(std::string("malformed manifest: ") + e.what());
  }
  const json* checks = detail::member(j, "checks");
  const json* artifacts = detail::member(j, "artifacts");
  if (!checks || !artifacts || !checks->is_array() || !artifacts->is_array() || (checks->empty() && artifacts->empty()))
    throw Error("manifest is empty: " + manifest_path.string());

  const fs::path dir = manifest_path.parent_path();
  Report r;
  auto line = [&](bool ok, const std::string& name, const std::string& detail) {
    ++r.total;
    if (ok) ++r.passed;
    r.lines.push_back(std::string(ok ? "PASS " : "FAIL ") + name + ": " + detail);
  };

  for (const auto& c : *checks)
    line(c.value("passed", false), c.value("name", std::string("?")), c.value("detail", std::string()));

  std::size_t intact = 0;
  std::vector<std::string> altered;
  for (const auto& a : *artifacts) {
    const std::string file = a.value("file", std::string());
    std::ifstream f(dir / file, std::ios::binary);
    if (!f) throw Error("missing artifact " + (dir / file).string());
    std::ostringstream buf;
    buf << f.rdbuf();
    const std::string body = buf.str();
    if (hex64(fnv1a64(body)) == a.value("fnv1a64", std::string())) ++intact;
    else altered.push_back(file);

    if (file.size() > 4 && file.substr(file.size() - 4) == ".csv") {
      const CsvTable t = parse_csv(body);
      const int res = t.column("residual"), te = t.column("t"), ee = t.column("eps");
      if (res < 0) continue;
      double worst = 0.0, at_t = 0.0, at_eps = 0.0;
      for (const auto& row : t.rows)
        if (row[res] < worst) {
          worst = row[res];
          at_t = te >= 0 ? row[te] : 0.0;
          at_eps = ee >= 0 ? row[ee] : 0.0;
        }
      const bool ok = worst >= -kEdiSignTol;
      line(ok, "edi_residual_sign (" + file + ")",
           ok ? "every residual >= " + fmt_short(-kEdiSignTol)
              : "residual " + fmt_short(worst) + " at eps=" + fmt_short(at_eps) + ", t=" + fmt_short(at_t) +
                    " violates the energy dissipation inequality E(rho_t) + int (psi + psi*) <= E(rho_0)");
    }
  }
  std::string alt;
  for (const auto& f : altered) alt += (alt.empty() ? "" : ", ") + f;
  line(altered.empty(), "artifact_checksums",
       altered.empty() ? std::to_string(intact) + " artifacts match the manifest" : "checksum mismatch: " + alt);

  r.lines.push_back(std::string(r.ok() ? "PASS " : "FAIL ") + std::to_string(r.passed) + "/" + std::to_string(r.total));
  return r;
}

}  // namespace wgfh::experiments

#endif  // WGFH_EXPERIMENTS_HPP
