#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "pivlab/error.hpp"

namespace pivlab {

// Variables an expression may reference.
struct ExprVars {
  double S = 0.0;   // price (left limit)
  double t = 0.0;   // time
  double z = 0.0;   // jump mark
  double X = 0.0;   // wealth
  double pi = 0.0;  // filter probability of the high-drift state
};

// Small arithmetic grammar for user coefficients:
//   expr   := term (('+'|'-') term)*
//   term   := unary (('*'|'/') unary)*
//   unary  := '-' unary | power
//   power  := atom ('^' unary)?
//   atom   := number | S | t | z | X | pi | min(expr, expr) | max(expr, expr) | '(' expr ')'
class Expr {
 public:
  Expr() : Expr("0") {}
  explicit Expr(std::string_view source) : source_(source) {
    Parser parser{source, 0, nodes_};
    root_ = parser.parse_expr();
    parser.skip_space();
    if (parser.pos != source.size()) parser.fail("unexpected trailing input");
  }

  double operator()(const ExprVars& v) const { return eval(root_, v); }
  const std::string& source() const noexcept { return source_; }

  // True when the expression reads the given variable.
  bool uses(char var) const {
    for (const auto& n : nodes_)
      if (n.op == Op::kVar && n.var == var) return true;
    return false;
  }

 private:
  enum class Op { kConst, kVar, kAdd, kSub, kMul, kDiv, kPow, kNeg, kMin, kMax };
  struct Node {
    Op op;
    double value = 0.0;
    char var = 0;  // 'S', 't', 'z', 'X', 'p'
    int lhs = -1;
    int rhs = -1;
  };

  struct Parser {
    std::string_view src;
    std::size_t pos;
    std::vector<Node>& nodes;

    [[noreturn]] void fail(const std::string& what) const {
      throw Error("expression '" + std::string(src) + "': " + what + " at offset " +
                  std::to_string(pos));
    }
    void skip_space() {
      while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
    }
    bool accept(char c) {
      skip_space();
      if (pos < src.size() && src[pos] == c) {
        ++pos;
        return true;
      }
      return false;
    }
    int push(Node n) {
      nodes.push_back(n);
      return static_cast<int>(nodes.size()) - 1;
    }
    int parse_expr() {
      int lhs = parse_term();
      for (;;) {
        if (accept('+')) lhs = push({Op::kAdd, 0, 0, lhs, parse_term()});
        else if (accept('-')) lhs = push({Op::kSub, 0, 0, lhs, parse_term()});
        else return lhs;
      }
    }
    int parse_term() {
      int lhs = parse_unary();
      for (;;) {
        if (accept('*')) lhs = push({Op::kMul, 0, 0, lhs, parse_unary()});
        else if (accept('/')) lhs = push({Op::kDiv, 0, 0, lhs, parse_unary()});
        else return lhs;
      }
    }
    int parse_unary() {
      if (accept('-')) return push({Op::kNeg, 0, 0, parse_unary(), -1});
      if (accept('+')) return parse_unary();
      return parse_power();
    }
    int parse_power() {
      const int base = parse_atom();
      if (accept('^')) return push({Op::kPow, 0, 0, base, parse_unary()});
      return base;
    }
    int parse_atom() {
      skip_space();
      if (pos >= src.size()) fail("unexpected end");
      const char c = src[pos];
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        std::size_t used = 0;
        double v = 0.0;
        try {
          v = std::stod(std::string(src.substr(pos)), &used);
        } catch (...) {
          fail("bad number");
        }
        pos += used;
        return push({Op::kConst, v});
      }
      if (accept('(')) {
        const int inner = parse_expr();
        if (!accept(')')) fail("expected ')'");
        return inner;
      }
      std::size_t end = pos;
      while (end < src.size() && std::isalpha(static_cast<unsigned char>(src[end]))) ++end;
      const std::string_view name = src.substr(pos, end - pos);
      if (name.empty()) fail("unexpected character");
      pos = end;
      if (name == "min" || name == "max") {
        if (!accept('(')) fail("expected '(' after " + std::string(name));
        const int a = parse_expr();
        if (!accept(',')) fail("expected ','");
        const int b = parse_expr();
        if (!accept(')')) fail("expected ')'");
        return push({name == "min" ? Op::kMin : Op::kMax, 0, 0, a, b});
      }
      if (name == "S" || name == "t" || name == "z" || name == "X")
        return push({Op::kVar, 0, name[0]});
      if (name == "pi") return push({Op::kVar, 0, 'p'});
      pos -= name.size();
      fail("unknown name '" + std::string(name) + "'");
    }
  };

  double eval(int i, const ExprVars& v) const {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    switch (n.op) {
      case Op::kConst: return n.value;
      case Op::kVar:
        switch (n.var) {
          case 'S': return v.S;
          case 't': return v.t;
          case 'z': return v.z;
          case 'X': return v.X;
          default: return v.pi;
        }
      case Op::kAdd: return eval(n.lhs, v) + eval(n.rhs, v);
      case Op::kSub: return eval(n.lhs, v) - eval(n.rhs, v);
      case Op::kMul: return eval(n.lhs, v) * eval(n.rhs, v);
      case Op::kDiv: return eval(n.lhs, v) / eval(n.rhs, v);
      case Op::kPow: return std::pow(eval(n.lhs, v), eval(n.rhs, v));
      case Op::kNeg: return -eval(n.lhs, v);
      case Op::kMin: return std::min(eval(n.lhs, v), eval(n.rhs, v));
      case Op::kMax: return std::max(eval(n.lhs, v), eval(n.rhs, v));
    }
    return 0.0;
  }

  std::string source_;
  std::vector<Node> nodes_;
  int root_ = 0;
};

}  // namespace pivlab
