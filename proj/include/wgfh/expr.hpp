#ifndef WGFH_EXPR_HPP
#define WGFH_EXPR_HPP

// Minimal arithmetic expression language used to describe media and initial data.
//
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?          (right-associative)
//   primary := number | name | name '(' expr [',' expr] ')' | '(' expr ')'
//
// Names: variables x x1 x2 y y1 y2 t, the constant pi, and the functions
// sin cos exp log sqrt abs (one argument) and min max (two arguments).

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>

#include "wgfh/error.hpp"

namespace wgfh::expr {

enum class Var : std::uint8_t { x, x1, x2, y, y1, y2, t };
inline constexpr int kVarCount = 7;
inline constexpr std::array<std::string_view, kVarCount> kVarNames = {"x", "x1", "x2", "y", "y1", "y2", "t"};

enum class Op : std::uint8_t { add, sub, mul, div, pow };
enum class Func : std::uint8_t { sin, cos, exp, log, sqrt, abs, min, max };
inline constexpr std::array<std::string_view, 8> kFuncNames = {"sin", "cos", "exp", "log", "sqrt", "abs", "min", "max"};

inline constexpr int arity(Func f) noexcept { return (f == Func::min || f == Func::max) ? 2 : 1; }

inline std::optional<Var> var_from_name(std::string_view name) {
  for (int i = 0; i < kVarCount; ++i)
    if (kVarNames[i] == name) return static_cast<Var>(i);
  return std::nullopt;
}

inline std::optional<Func> func_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kFuncNames.size(); ++i)
    if (kFuncNames[i] == name) return static_cast<Func>(i);
  return std::nullopt;
}

inline std::string permitted_names() {
  std::string out;
  for (auto v : kVarNames) out.append(v).append(", ");
  out.append("pi");
  for (auto f : kFuncNames) out.append(", ").append(f);
  return out;
}

/// Fixed-slot variable bindings; a slot is either bound or not.
class Bindings {
public:
  Bindings() = default;

  Bindings& set(Var v, double value) {
    values_[index(v)] = value;
    mask_ |= bit(v);
    return *this;
  }

  Bindings& set(std::string_view name, double value) {
    auto v = var_from_name(name);
    if (!v) throw EvalError(EvalError::Kind::unbound_variable, "unknown variable '" + std::string(name) + "'");
    return set(*v, value);
  }

  void unset(Var v) { mask_ &= static_cast<std::uint8_t>(~bit(v)); }
  bool has(Var v) const noexcept { return (mask_ & bit(v)) != 0; }
  double get(Var v) const noexcept { return values_[index(v)]; }

  static Bindings from_map(const std::map<std::string, double>& m) {
    Bindings b;
    for (const auto& [k, v] : m) b.set(k, v);
    return b;
  }

private:
  static constexpr std::size_t index(Var v) noexcept { return static_cast<std::size_t>(v); }
  static constexpr std::uint8_t bit(Var v) noexcept { return static_cast<std::uint8_t>(1u << index(v)); }

  std::array<double, kVarCount> values_{};
  std::uint8_t mask_ = 0;
};

/// Immutable expression tree. Copies share structure.
class Expr {
public:
  enum class Kind : std::uint8_t { constant, pi, variable, negate, binary, call };

  struct Node {
    Kind kind = Kind::constant;
    double value = 0.0;
    Var var = Var::x;
    Op op = Op::add;
    Func func = Func::sin;
    std::shared_ptr<const Node> lhs;
    std::shared_ptr<const Node> rhs;
  };

  Expr() : Expr(constant(0.0)) {}

  static Node blank(Kind k) {
    Node n;
    n.kind = k;
    return n;
  }

  static Expr constant(double v) {
    Node n = blank(Kind::constant);
    n.value = v;
    return Expr(make(std::move(n)));
  }
  static Expr pi() { return Expr(make(blank(Kind::pi))); }
  static Expr variable(Var v) {
    Node n = blank(Kind::variable);
    n.var = v;
    return Expr(make(std::move(n)));
  }
  static Expr negate(const Expr& a) {
    Node n = blank(Kind::negate);
    n.lhs = a.root_;
    return Expr(make(std::move(n)));
  }
  static Expr binary(Op op, const Expr& a, const Expr& b) {
    Node n = blank(Kind::binary);
    n.op = op;
    n.lhs = a.root_;
    n.rhs = b.root_;
    return Expr(make(std::move(n)));
  }
  static Expr call(Func f, const Expr& a) {
    Node n = blank(Kind::call);
    n.func = f;
    n.lhs = a.root_;
    return Expr(make(std::move(n)));
  }
  static Expr call(Func f, const Expr& a, const Expr& b) {
    Node n = blank(Kind::call);
    n.func = f;
    n.lhs = a.root_;
    n.rhs = b.root_;
    return Expr(make(std::move(n)));
  }

  double evaluate(const Bindings& b) const { return eval(*root_, b); }
  double evaluate(const std::map<std::string, double>& m) const { return evaluate(Bindings::from_map(m)); }

  /// Bitmask of free variables (bit i <=> Var(i)).
  std::uint8_t free_variables() const noexcept { return collect(*root_); }
  bool depends_on(Var v) const noexcept { return (free_variables() >> static_cast<int>(v)) & 1u; }

  /// Fully parenthesised text; parse(to_string()) rebuilds an identical tree.
  std::string to_string() const {
    std::string out;
    print(*root_, out);
    return out;
  }

  const Node& root() const noexcept { return *root_; }

private:
  explicit Expr(std::shared_ptr<const Node> n) : root_(std::move(n)) {}
  static std::shared_ptr<const Node> make(Node n) { return std::make_shared<const Node>(std::move(n)); }

  static double domain_error(const char* what, double arg) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "domain error: %s(%.17g)", what, arg);
    throw EvalError(EvalError::Kind::domain, buf);
  }

  static double eval(const Node& n, const Bindings& b) {
    switch (n.kind) {
      case Kind::constant:
        return n.value;
      case Kind::pi:
        return std::numbers::pi;
      case Kind::variable:
        if (!b.has(n.var))
          throw EvalError(EvalError::Kind::unbound_variable,
                          "unbound variable '" + std::string(kVarNames[static_cast<int>(n.var)]) + "'");
        return b.get(n.var);
      case Kind::negate:
        return -eval(*n.lhs, b);
      case Kind::binary: {
        const double l = eval(*n.lhs, b);
        const double r = eval(*n.rhs, b);
        switch (n.op) {
          case Op::add: return l + r;
          case Op::sub: return l - r;
          case Op::mul: return l * r;
          case Op::div:
            if (r == 0.0) throw EvalError(EvalError::Kind::domain, "domain error: division by zero");
            return l / r;
          case Op::pow: {
            const double p = std::pow(l, r);
            if (std::isnan(p) && !std::isnan(l) && !std::isnan(r)) domain_error("pow", l);
            return p;
          }
        }
        break;
      }
      case Kind::call: {
        const double a = eval(*n.lhs, b);
        switch (n.func) {
          case Func::sin: return std::sin(a);
          case Func::cos: return std::cos(a);
          case Func::exp: return std::exp(a);
          case Func::log:
            if (!(a > 0.0)) domain_error("log", a);
            return std::log(a);
          case Func::sqrt:
            if (a < 0.0) domain_error("sqrt", a);
            return std::sqrt(a);
          case Func::abs: return std::fabs(a);
          case Func::min: return std::fmin(a, eval(*n.rhs, b));
          case Func::max: return std::fmax(a, eval(*n.rhs, b));
        }
        break;
      }
    }
    return 0.0;  // unreachable
  }

  static std::uint8_t collect(const Node& n) noexcept {
    std::uint8_t m = 0;
    if (n.kind == Kind::variable) m = static_cast<std::uint8_t>(1u << static_cast<int>(n.var));
    if (n.lhs) m |= collect(*n.lhs);
    if (n.rhs) m |= collect(*n.rhs);
    return m;
  }

  static void print(const Node& n, std::string& out) {
    switch (n.kind) {
      case Kind::constant: {
        char buf[40];
        if (n.value < 0.0 || (n.value == 0.0 && std::signbit(n.value))) {
          std::snprintf(buf, sizeof buf, "(-%.17g)", -n.value);
        } else {
          std::snprintf(buf, sizeof buf, "%.17g", n.value);
        }
        out += buf;
        return;
      }
      case Kind::pi:
        out += "pi";
        return;
      case Kind::variable:
        out += kVarNames[static_cast<int>(n.var)];
        return;
      case Kind::negate:
        out += "(-";
        print(*n.lhs, out);
        out += ')';
        return;
      case Kind::binary: {
        static constexpr char sym[] = {'+', '-', '*', '/', '^'};
        out += '(';
        print(*n.lhs, out);
        out += sym[static_cast<int>(n.op)];
        print(*n.rhs, out);
        out += ')';
        return;
      }
      case Kind::call:
        out += kFuncNames[static_cast<int>(n.func)];
        out += '(';
        print(*n.lhs, out);
        if (n.rhs) {
          out += ',';
          print(*n.rhs, out);
        }
        out += ')';
        return;
    }
  }

  std::shared_ptr<const Node> root_;
};

namespace detail {

class Parser {
public:
  explicit Parser(std::string_view src) : src_(src) {}

  Expr parse_all() {
    Expr e = parse_expr();
    skip_ws();
    if (pos_ < src_.size()) fail("expected operator or end of input");
    return e;
  }

private:
  static constexpr int kMaxDepth = 200;

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(pos_, what); }

  void skip_ws() {
    while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\n' || src_[pos_] == '\r'))
      ++pos_;
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < src_.size() && src_[pos_] == c;
  }

  void expect(char c, const char* what) {
    if (!peek(c)) fail(std::string("expected ") + what);
    ++pos_;
  }

  struct DepthGuard {
    Parser& p;
    explicit DepthGuard(Parser& parser) : p(parser) {
      if (++p.depth_ > kMaxDepth) p.fail("expression nested too deeply");
    }
    ~DepthGuard() { --p.depth_; }
  };

  Expr parse_expr() {
    DepthGuard guard(*this);
    Expr lhs = parse_term();
    for (;;) {
      if (peek('+')) {
        ++pos_;
        lhs = Expr::binary(Op::add, lhs, parse_term());
      } else if (peek('-')) {
        ++pos_;
        lhs = Expr::binary(Op::sub, lhs, parse_term());
      } else {
        return lhs;
      }
    }
  }

  Expr parse_term() {
    Expr lhs = parse_unary();
    for (;;) {
      if (peek('*')) {
        ++pos_;
        lhs = Expr::binary(Op::mul, lhs, parse_unary());
      } else if (peek('/')) {
        ++pos_;
        lhs = Expr::binary(Op::div, lhs, parse_unary());
      } else {
        return lhs;
      }
    }
  }

  Expr parse_unary() {
    DepthGuard guard(*this);
    if (peek('-')) {
      ++pos_;
      return Expr::negate(parse_unary());
    }
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_primary();
    if (peek('^')) {
      ++pos_;
      return Expr::binary(Op::pow, base, parse_unary());
    }
    return base;
  }

  static bool is_digit(char c) { return c >= '0' && c <= '9'; }
  static bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_'; }

  Expr parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) fail("expected expression");
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      Expr inner = parse_expr();
      expect(')', "')'");
      return inner;
    }
    if (is_digit(c) || c == '.') return parse_number();
    if (is_alpha(c)) return parse_name();
    fail(std::string("expected expression, found '") + printable(c) + "'");
  }

  static std::string printable(char c) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x20 && u < 0x7f) return std::string(1, c);
    char buf[8];
    std::snprintf(buf, sizeof buf, "\\x%02x", u);
    return buf;
  }

  Expr parse_number() {
    const std::size_t start = pos_;
    std::size_t end = pos_;
    while (end < src_.size() && is_digit(src_[end])) ++end;
    if (end < src_.size() && src_[end] == '.') {
      ++end;
      while (end < src_.size() && is_digit(src_[end])) ++end;
    }
    if (end == start + 1 && src_[start] == '.') fail("malformed number");
    if (end < src_.size() && (src_[end] == 'e' || src_[end] == 'E')) {
      std::size_t e = end + 1;
      if (e < src_.size() && (src_[e] == '+' || src_[e] == '-')) ++e;
      if (e >= src_.size() || !is_digit(src_[e])) {
        pos_ = e;
        fail("malformed exponent");
      }
      while (e < src_.size() && is_digit(src_[e])) ++e;
      end = e;
    }
    double value = 0.0;
    const auto res = std::from_chars(src_.data() + start, src_.data() + end, value);
    if (res.ec != std::errc() || res.ptr != src_.data() + end) fail("malformed number");
    pos_ = end;
    return Expr::constant(value);
  }

  Expr parse_name() {
    const std::size_t start = pos_;
    while (pos_ < src_.size() && (is_alpha(src_[pos_]) || is_digit(src_[pos_]))) ++pos_;
    const std::string_view name = src_.substr(start, pos_ - start);
    if (name == "pi") return Expr::pi();
    if (auto v = var_from_name(name)) return Expr::variable(*v);
    if (auto f = func_from_name(name)) {
      expect('(', "'(' after function name");
      Expr a = parse_expr();
      if (arity(*f) == 2) {
        expect(',', "',' (function takes two arguments)");
        Expr b = parse_expr();
        expect(')', "')'");
        return Expr::call(*f, a, b);
      }
      expect(')', "')'");
      return Expr::call(*f, a);
    }
    throw ParseError(start, "unknown identifier '" + std::string(name) + "'; permitted names: " + permitted_names());
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

}  // namespace detail

/// Parses `source`; throws ParseError with a byte offset on failure.
inline Expr parse(std::string_view source) { return detail::Parser(source).parse_all(); }

}  // namespace wgfh::expr

#endif  // WGFH_EXPR_HPP
