#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "wgfh/expr.hpp"

using namespace wgfh;
using expr::Expr;
using expr::Func;
using expr::Op;
using expr::Var;

namespace {

double eval_at(const std::string& s, std::map<std::string, double> b = {}) { return expr::parse(s).evaluate(b); }

Expr random_tree(std::mt19937_64& rng, int depth) {
  std::uniform_int_distribution<int> pick(0, 9);
  std::uniform_real_distribution<double> val(-5.0, 5.0);
  const int k = depth <= 0 ? pick(rng) % 3 : pick(rng);
  switch (k) {
    case 0: return Expr::constant(val(rng));
    case 1: return Expr::variable(Var(std::uniform_int_distribution<int>(0, expr::kVarCount - 1)(rng)));
    case 2: return Expr::pi();
    case 3: return Expr::negate(random_tree(rng, depth - 1));
    case 4:
    case 5:
    case 6: {
      const Op op = Op(std::uniform_int_distribution<int>(0, 4)(rng));
      return Expr::binary(op, random_tree(rng, depth - 1), random_tree(rng, depth - 1));
    }
    case 7: {
      // total functions only, so every sample point evaluates
      static const Func total[] = {Func::sin, Func::cos, Func::abs};
      return Expr::call(total[std::uniform_int_distribution<int>(0, 2)(rng)], random_tree(rng, depth - 1));
    }
    default: {
      const Func f = pick(rng) % 2 ? Func::min : Func::max;
      return Expr::call(f, random_tree(rng, depth - 1), random_tree(rng, depth - 1));
    }
  }
}

}  // namespace

TEST(ExprParse, Precedence) {
  EXPECT_EQ(eval_at("1+2*3"), 7.0);
  EXPECT_EQ(eval_at("(1+2)*3"), 9.0);
  EXPECT_EQ(eval_at("8-3-2"), 3.0);
  EXPECT_EQ(eval_at("8/4/2"), 1.0);
  EXPECT_EQ(eval_at("2^3^2"), 512.0);
  EXPECT_EQ(eval_at("-2^2"), -4.0);
  EXPECT_EQ(eval_at("2^-1"), 0.5);
  EXPECT_EQ(eval_at("- -3"), 3.0);
}

TEST(ExprParse, FunctionsAndConstants) {
  EXPECT_DOUBLE_EQ(eval_at("2+sin(2*pi*y)", {{"y", 0.25}}), 3.0);
  EXPECT_EQ(eval_at("3.5"), 3.5);
  EXPECT_EQ(eval_at("sqrt(y)", {{"y", 4.0}}), 2.0);
  EXPECT_EQ(eval_at("min(x, y)", {{"x", 1.0}, {"y", -2.0}}), -2.0);
  EXPECT_EQ(eval_at("max(x, y)", {{"x", 1.0}, {"y", -2.0}}), 1.0);
  EXPECT_EQ(eval_at("abs(-4.25)"), 4.25);
  EXPECT_DOUBLE_EQ(eval_at("exp(log(7))"), 7.0);
  EXPECT_EQ(eval_at("1e-3*1E3"), 1.0);
  EXPECT_EQ(eval_at("pi"), std::numbers::pi);
}

TEST(ExprParse, SyntaxErrorOffsets) {
  try {
    expr::parse("sin(");
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  try {
    expr::parse("1 + * 2");
    FAIL() << "no error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
  EXPECT_THROW(expr::parse(""), ParseError);
  EXPECT_THROW(expr::parse("(1+2"), ParseError);
  EXPECT_THROW(expr::parse("1 2"), ParseError);
  EXPECT_THROW(expr::parse("min(1)"), ParseError);
  EXPECT_THROW(expr::parse("sin(1,2)"), ParseError);
}

TEST(ExprParse, UnknownIdentifierListsPermittedNames) {
  try {
    expr::parse("2*z + 1");
    FAIL() << "no error";
  } catch (const ParseError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("z"), std::string::npos);
    for (const char* name : {"x1", "y2", "sin", "max", "pi"}) EXPECT_NE(m.find(name), std::string::npos) << name;
  }
}

TEST(ExprEval, Errors) {
  EXPECT_THROW(eval_at("log(y)", {{"y", -1.0}}), EvalError);
  EXPECT_THROW(eval_at("sqrt(y)", {{"y", -1.0}}), EvalError);
  EXPECT_THROW(eval_at("1/y", {{"y", 0.0}}), EvalError);
  try {
    eval_at("x + y", {{"x", 1.0}});
    FAIL() << "no error";
  } catch (const EvalError& e) {
    EXPECT_EQ(e.kind(), EvalError::Kind::unbound_variable);
  }
}

TEST(ExprEval, FreeVariables) {
  const Expr e = expr::parse("x1 + sin(y2) * t");
  EXPECT_TRUE(e.depends_on(Var::x1));
  EXPECT_TRUE(e.depends_on(Var::y2));
  EXPECT_TRUE(e.depends_on(Var::t));
  EXPECT_FALSE(e.depends_on(Var::x));
  EXPECT_EQ(expr::parse("2*pi").free_variables(), 0);
}

TEST(ExprRoundTrip, ThousandRandomTreesBitExact) {
  std::mt19937_64 rng(20240611);
  std::uniform_real_distribution<double> pt(-2.0, 2.0);
  int compared = 0;
  for (int n = 0; n < 1000; ++n) {
    const Expr e = random_tree(rng, 5);
    const Expr back = expr::parse(e.to_string());
    EXPECT_EQ(back.to_string(), e.to_string());
    for (int k = 0; k < 10; ++k) {
      expr::Bindings b;
      for (int v = 0; v < expr::kVarCount; ++v) b.set(Var(v), pt(rng));
      double a = 0.0, c = 0.0;
      bool ea = false, ec = false;
      try {
        a = e.evaluate(b);
      } catch (const EvalError&) {
        ea = true;
      }
      try {
        c = back.evaluate(b);
      } catch (const EvalError&) {
        ec = true;
      }
      ASSERT_EQ(ea, ec) << e.to_string();
      if (!ea) {
        ASSERT_EQ(std::bit_cast<std::uint64_t>(a), std::bit_cast<std::uint64_t>(c)) << e.to_string();
        ++compared;
      }
    }
  }
  EXPECT_GT(compared, 5000);
}

TEST(ExprFuzz, ArbitraryBytesGiveStructuredErrors) {
  std::mt19937_64 rng(7);
  const std::string alphabet = "0123456789.+-*/^(),eEpisncoxyt12 _\t\n\xff\x80";
  for (int n = 0; n < 20000; ++n) {
    const int len = std::uniform_int_distribution<int>(0, 24)(rng);
    std::string s;
    for (int k = 0; k < len; ++k) {
      if (rng() % 4 == 0) s += char(rng() & 0xff);
      else s += alphabet[rng() % alphabet.size()];
    }
    try {
      const Expr e = expr::parse(s);
      (void)e.to_string();
    } catch (const ParseError& e) {
      EXPECT_LE(e.offset(), s.size());
    }
  }
}

TEST(ExprFuzz, DeepNestingIsRejectedNotCrashed) {
  std::string s(100000, '(');
  EXPECT_THROW(expr::parse(s), ParseError);
  std::string m;
  for (int k = 0; k < 100000; ++k) m += '-';
  m += "1";
  EXPECT_THROW(expr::parse(m), ParseError);
}
