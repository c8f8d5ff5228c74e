#include "simplexfit/formula.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>

#include "simplexfit/errors.hpp"

namespace simplexfit::formula {

namespace {

NodePtr leaf(Node::Kind kind, std::string name) {
  auto n = std::make_shared<Node>();
  n->kind = kind;
  n->name = std::move(name);
  return n;
}

bool is_const(const NodePtr& n, double v) {
  return n->kind == Node::Kind::Constant && n->value == v;
}

double fold_binary(BinaryOp op, double a, double b, bool& ok) {
  ok = true;
  switch (op) {
    case BinaryOp::Add: return a + b;
    case BinaryOp::Sub: return a - b;
    case BinaryOp::Mul: return a * b;
    case BinaryOp::Div:
      if (b == 0.0) { ok = false; return 0.0; }
      return a / b;
    case BinaryOp::Pow:
      if (a == 0.0 && b == 0.0) return 1.0;
      if (a < 0.0 || (a == 0.0 && b < 0.0)) { ok = false; return 0.0; }
      return std::pow(a, b);
  }
  ok = false;
  return 0.0;
}

}  // namespace

NodePtr make_constant(double v) {
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Constant;
  n->value = v;
  return n;
}

NodePtr make_parameter(std::string name) { return leaf(Node::Kind::Parameter, std::move(name)); }
NodePtr make_covariate(std::string name) { return leaf(Node::Kind::Covariate, std::move(name)); }

NodePtr make_binary(BinaryOp op, NodePtr lhs, NodePtr rhs) {
  if (lhs->kind == Node::Kind::Constant && rhs->kind == Node::Kind::Constant) {
    bool ok = false;
    const double v = fold_binary(op, lhs->value, rhs->value, ok);
    if (ok && std::isfinite(v)) return make_constant(v);
  }
  switch (op) {
    case BinaryOp::Add:
      if (is_const(lhs, 0.0)) return rhs;
      if (is_const(rhs, 0.0)) return lhs;
      break;
    case BinaryOp::Sub:
      if (is_const(rhs, 0.0)) return lhs;
      if (is_const(lhs, 0.0)) return make_unary(UnaryOp::Neg, rhs);
      break;
    case BinaryOp::Mul:
      if (is_const(lhs, 0.0) || is_const(rhs, 0.0)) return make_constant(0.0);
      if (is_const(lhs, 1.0)) return rhs;
      if (is_const(rhs, 1.0)) return lhs;
      break;
    case BinaryOp::Div:
      if (is_const(lhs, 0.0)) return make_constant(0.0);
      if (is_const(rhs, 1.0)) return lhs;
      break;
    case BinaryOp::Pow:
      if (is_const(rhs, 1.0)) return lhs;
      if (is_const(rhs, 0.0)) return make_constant(1.0);  // 0^0 = 1 by convention
      if (is_const(lhs, 1.0)) return make_constant(1.0);
      break;
  }
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Binary;
  n->bop = op;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  return n;
}

NodePtr make_unary(UnaryOp op, NodePtr operand) {
  if (operand->kind == Node::Kind::Constant) {
    const double v = operand->value;
    switch (op) {
      case UnaryOp::Neg: return make_constant(-v);
      case UnaryOp::Exp: return make_constant(std::exp(v));
      case UnaryOp::Sqrt:
        if (v >= 0.0) return make_constant(std::sqrt(v));
        break;
      case UnaryOp::Log:
        if (v > 0.0) return make_constant(std::log(v));
        break;
    }
  }
  if (op == UnaryOp::Neg && operand->kind == Node::Kind::Unary && operand->uop == UnaryOp::Neg)
    return operand->lhs;
  auto n = std::make_shared<Node>();
  n->kind = Node::Kind::Unary;
  n->uop = op;
  n->lhs = std::move(operand);
  return n;
}

bool structurally_equal(const NodePtr& a, const NodePtr& b) {
  if (a == b) return true;
  if (a->kind != b->kind) return false;
  switch (a->kind) {
    case Node::Kind::Constant: return a->value == b->value;
    case Node::Kind::Parameter:
    case Node::Kind::Covariate: return a->name == b->name;
    case Node::Kind::Binary:
      return a->bop == b->bop && structurally_equal(a->lhs, b->lhs) &&
             structurally_equal(a->rhs, b->rhs);
    case Node::Kind::Unary:
      return a->uop == b->uop && structurally_equal(a->lhs, b->lhs);
  }
  return false;
}

double evaluate(const NodePtr& node, const Bindings& b) {
  switch (node->kind) {
    case Node::Kind::Constant: return node->value;
    case Node::Kind::Parameter: {
      if (!b.params || !b.params->count(node->name))
        throw DomainError("unbound parameter '" + node->name + "'");
      return b.params->at(node->name);
    }
    case Node::Kind::Covariate: {
      if (!b.covariates || !b.covariates->count(node->name))
        throw DomainError("unbound covariate '" + node->name + "'");
      return b.covariates->at(node->name);
    }
    case Node::Kind::Unary: {
      const double x = evaluate(node->lhs, b);
      switch (node->uop) {
        case UnaryOp::Neg: return -x;
        case UnaryOp::Exp: {
          const double v = std::exp(x);
          if (!std::isfinite(v)) throw DomainError("exp overflow");
          return v;
        }
        case UnaryOp::Sqrt:
          if (x < 0.0) throw DomainError("sqrt of negative value");
          return std::sqrt(x);
        case UnaryOp::Log:
          if (x <= 0.0) throw DomainError("log of non-positive value");
          return std::log(x);
      }
      break;
    }
    case Node::Kind::Binary: {
      const double l = evaluate(node->lhs, b);
      const double r = evaluate(node->rhs, b);
      double v = 0.0;
      switch (node->bop) {
        case BinaryOp::Add: v = l + r; break;
        case BinaryOp::Sub: v = l - r; break;
        case BinaryOp::Mul: v = l * r; break;
        case BinaryOp::Div:
          if (r == 0.0) throw DomainError("division by zero");
          v = l / r;
          break;
        case BinaryOp::Pow:
          if (l == 0.0 && r == 0.0) return 1.0;
          if (l < 0.0) throw DomainError("power with negative base");
          if (l == 0.0 && r < 0.0) throw DomainError("0 raised to a negative power");
          v = std::pow(l, r);
          break;
      }
      if (!std::isfinite(v)) throw DomainError("evaluation produced a non-finite value");
      return v;
    }
  }
  throw DomainError("corrupt expression node");
}

NodePtr derivative(const NodePtr& node, const std::string& name, Node::Kind kind) {
  switch (node->kind) {
    case Node::Kind::Constant: return make_constant(0.0);
    case Node::Kind::Parameter:
    case Node::Kind::Covariate:
      return make_constant(node->kind == kind && node->name == name ? 1.0 : 0.0);
    case Node::Kind::Unary: {
      NodePtr f = node->lhs;
      NodePtr df = derivative(f, name, kind);
      switch (node->uop) {
        case UnaryOp::Neg: return make_unary(UnaryOp::Neg, df);
        case UnaryOp::Exp: return make_binary(BinaryOp::Mul, make_unary(UnaryOp::Exp, f), df);
        case UnaryOp::Sqrt:
          return make_binary(BinaryOp::Div, df,
                             make_binary(BinaryOp::Mul, make_constant(2.0),
                                         make_unary(UnaryOp::Sqrt, f)));
        case UnaryOp::Log: return make_binary(BinaryOp::Div, df, f);
      }
      break;
    }
    case Node::Kind::Binary: {
      const NodePtr& f = node->lhs;
      const NodePtr& g = node->rhs;
      NodePtr df = derivative(f, name, kind);
      NodePtr dg = derivative(g, name, kind);
      switch (node->bop) {
        case BinaryOp::Add: return make_binary(BinaryOp::Add, df, dg);
        case BinaryOp::Sub: return make_binary(BinaryOp::Sub, df, dg);
        case BinaryOp::Mul:
          return make_binary(BinaryOp::Add, make_binary(BinaryOp::Mul, df, g),
                             make_binary(BinaryOp::Mul, f, dg));
        case BinaryOp::Div:
          return make_binary(
              BinaryOp::Div,
              make_binary(BinaryOp::Sub, make_binary(BinaryOp::Mul, df, g),
                          make_binary(BinaryOp::Mul, f, dg)),
              make_binary(BinaryOp::Mul, g, g));
        case BinaryOp::Pow: {
          if (is_const(dg, 0.0)) {
            // d/dx f^c = c f^(c-1) f'
            NodePtr cm1 = make_binary(BinaryOp::Sub, g, make_constant(1.0));
            return make_binary(BinaryOp::Mul, g,
                               make_binary(BinaryOp::Mul,
                                           make_binary(BinaryOp::Pow, f, cm1), df));
          }
          if (is_const(df, 0.0)) {
            // d/dx c^g = c^g log(c) g'
            return make_binary(BinaryOp::Mul, node,
                               make_binary(BinaryOp::Mul, make_unary(UnaryOp::Log, f), dg));
          }
          // general: f^g (g' log f + g f'/f)
          NodePtr inner = make_binary(
              BinaryOp::Add, make_binary(BinaryOp::Mul, dg, make_unary(UnaryOp::Log, f)),
              make_binary(BinaryOp::Mul, g, make_binary(BinaryOp::Div, df, f)));
          return make_binary(BinaryOp::Mul, node, inner);
        }
      }
      break;
    }
  }
  throw DomainError("corrupt expression node");
}

NodePtr substitute_parameters(const NodePtr& node, const std::map<std::string, double>& values) {
  switch (node->kind) {
    case Node::Kind::Constant: return node;
    case Node::Kind::Parameter: {
      auto it = values.find(node->name);
      return it == values.end() ? node : make_constant(it->second);
    }
    case Node::Kind::Covariate: return node;
    case Node::Kind::Unary:
      return make_unary(node->uop, substitute_parameters(node->lhs, values));
    case Node::Kind::Binary:
      return make_binary(node->bop, substitute_parameters(node->lhs, values),
                         substitute_parameters(node->rhs, values));
  }
  throw DomainError("corrupt expression node");
}

bool references_any(const NodePtr& node, const std::set<std::string>& names, Node::Kind kind) {
  switch (node->kind) {
    case Node::Kind::Constant: return false;
    case Node::Kind::Parameter:
    case Node::Kind::Covariate: return node->kind == kind && names.count(node->name) > 0;
    case Node::Kind::Unary: return references_any(node->lhs, names, kind);
    case Node::Kind::Binary:
      return references_any(node->lhs, names, kind) || references_any(node->rhs, names, kind);
  }
  return false;
}

namespace {

int precedence(const NodePtr& n) {
  if (n->kind == Node::Kind::Binary) {
    switch (n->bop) {
      case BinaryOp::Add:
      case BinaryOp::Sub: return 1;
      case BinaryOp::Mul:
      case BinaryOp::Div: return 2;
      case BinaryOp::Pow: return 4;
    }
  }
  if (n->kind == Node::Kind::Unary && n->uop == UnaryOp::Neg) return 3;
  return 5;  // leaves, function calls
}

void print(const NodePtr& n, std::string& out) {
  switch (n->kind) {
    case Node::Kind::Constant: {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", n->value);
      if (n->value < 0.0) {
        out += '(';
        out += buf;
        out += ')';
      } else {
        out += buf;
      }
      return;
    }
    case Node::Kind::Parameter:
    case Node::Kind::Covariate: out += n->name; return;
    case Node::Kind::Unary: {
      const char* fn = nullptr;
      switch (n->uop) {
        case UnaryOp::Neg: {
          out += '-';
          // '-' binds looser than '^' in the grammar's atom rule, so any
          // binary operand (including pow) needs parentheses to round-trip
          const bool paren = n->lhs->kind == Node::Kind::Binary;
          if (paren) out += '(';
          print(n->lhs, out);
          if (paren) out += ')';
          return;
        }
        case UnaryOp::Sqrt: fn = "sqrt"; break;
        case UnaryOp::Log: fn = "log"; break;
        case UnaryOp::Exp: fn = "exp"; break;
      }
      out += fn;
      out += '(';
      print(n->lhs, out);
      out += ')';
      return;
    }
    case Node::Kind::Binary: {
      const int prec = precedence(n);
      const char* op = nullptr;
      switch (n->bop) {
        case BinaryOp::Add: op = " + "; break;
        case BinaryOp::Sub: op = " - "; break;
        case BinaryOp::Mul: op = "*"; break;
        case BinaryOp::Div: op = "/"; break;
        case BinaryOp::Pow: op = "^"; break;
      }
      // left child: parenthesize on lower precedence; right child also on
      // equal precedence for the left-associative ops (and the left operand
      // of the right-associative '^')
      const bool lparen =
          n->bop == BinaryOp::Pow ? precedence(n->lhs) <= prec : precedence(n->lhs) < prec;
      const bool rparen =
          n->bop == BinaryOp::Pow ? precedence(n->rhs) < prec : precedence(n->rhs) <= prec;
      if (lparen) out += '(';
      print(n->lhs, out);
      if (lparen) out += ')';
      out += op;
      if (rparen) out += '(';
      print(n->rhs, out);
      if (rparen) out += ')';
      return;
    }
  }
}

// ---- tokenizer / recursive descent parser ----

struct Token {
  enum class Type { Number, Ident, Op, LParen, RParen, End } type;
  double number = 0.0;
  std::string text;
  char op = 0;
  std::size_t pos = 0;
};

class Lexer {
 public:
  explicit Lexer(std::string_view text) : text_(text) {}

  Token next() {
    while (i_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[i_]))) ++i_;
    Token t;
    t.pos = i_;
    if (i_ >= text_.size()) {
      t.type = Token::Type::End;
      return t;
    }
    const char c = text_[i_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      const char* begin = text_.data() + i_;
      char* end = nullptr;
      t.number = std::strtod(begin, &end);
      if (end == begin) throw ParseError("malformed number", i_);
      i_ += static_cast<std::size_t>(end - begin);
      t.type = Token::Type::Number;
      return t;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i_;
      while (j < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[j])) || text_[j] == '_'))
        ++j;
      t.type = Token::Type::Ident;
      t.text = std::string(text_.substr(i_, j - i_));
      i_ = j;
      return t;
    }
    switch (c) {
      case '+': case '-': case '*': case '/': case '^':
        t.type = Token::Type::Op;
        t.op = c;
        ++i_;
        return t;
      case '(': t.type = Token::Type::LParen; ++i_; return t;
      case ')': t.type = Token::Type::RParen; ++i_; return t;
      default: throw ParseError(std::string("unexpected character '") + c + "'", i_);
    }
  }

 private:
  std::string_view text_;
  std::size_t i_ = 0;
};

class Parser {
 public:
  Parser(std::string_view text, const std::set<std::string>& parameters)
      : lex_(text), params_(parameters) {
    advance();
  }

  NodePtr parse() {
    NodePtr e = expr();
    if (cur_.type != Token::Type::End) throw ParseError("trailing input", cur_.pos);
    return e;
  }

 private:
  void advance() { cur_ = lex_.next(); }

  bool is_op(char c) const { return cur_.type == Token::Type::Op && cur_.op == c; }

  NodePtr expr() {
    NodePtr e = term();
    while (is_op('+') || is_op('-')) {
      const BinaryOp op = is_op('+') ? BinaryOp::Add : BinaryOp::Sub;
      advance();
      e = make_binary(op, e, term());
    }
    return e;
  }

  NodePtr term() {
    NodePtr e = factor();
    while (is_op('*') || is_op('/')) {
      const BinaryOp op = is_op('*') ? BinaryOp::Mul : BinaryOp::Div;
      advance();
      e = make_binary(op, e, factor());
    }
    return e;
  }

  NodePtr factor() {
    NodePtr base = atom();
    if (is_op('^')) {
      advance();
      return make_binary(BinaryOp::Pow, base, factor());  // right associative
    }
    return base;
  }

  NodePtr atom() {
    switch (cur_.type) {
      case Token::Type::Number: {
        const double v = cur_.number;
        advance();
        return make_constant(v);
      }
      case Token::Type::Ident: {
        const std::string name = cur_.text;
        const std::size_t pos = cur_.pos;
        advance();
        if (cur_.type == Token::Type::LParen) {
          UnaryOp op;
          if (name == "sqrt") op = UnaryOp::Sqrt;
          else if (name == "log") op = UnaryOp::Log;
          else if (name == "exp") op = UnaryOp::Exp;
          else throw ParseError("unknown function '" + name + "'", pos);
          advance();
          NodePtr arg = expr();
          expect_rparen();
          return make_unary(op, arg);
        }
        return params_.count(name) ? make_parameter(name) : make_covariate(name);
      }
      case Token::Type::LParen: {
        advance();
        NodePtr e = expr();
        expect_rparen();
        return e;
      }
      case Token::Type::Op:
        if (cur_.op == '-') {
          advance();
          return make_unary(UnaryOp::Neg, atom());
        }
        throw ParseError(std::string("unexpected operator '") + cur_.op + "'", cur_.pos);
      case Token::Type::RParen: throw ParseError("unexpected ')'", cur_.pos);
      case Token::Type::End: throw ParseError("unexpected end of formula", cur_.pos);
    }
    throw ParseError("unexpected token", cur_.pos);
  }

  void expect_rparen() {
    if (cur_.type != Token::Type::RParen) throw ParseError("expected ')'", cur_.pos);
    advance();
  }

  Lexer lex_;
  Token cur_;
  const std::set<std::string>& params_;
};

void collect_symbols(const NodePtr& n, std::set<std::string>& params,
                     std::set<std::string>& covs) {
  switch (n->kind) {
    case Node::Kind::Parameter: params.insert(n->name); break;
    case Node::Kind::Covariate: covs.insert(n->name); break;
    case Node::Kind::Unary: collect_symbols(n->lhs, params, covs); break;
    case Node::Kind::Binary:
      collect_symbols(n->lhs, params, covs);
      collect_symbols(n->rhs, params, covs);
      break;
    default: break;
  }
}

}  // namespace

std::string to_string(const NodePtr& node) {
  std::string out;
  print(node, out);
  return out;
}

ExpressionTree ExpressionTree::parse(std::string_view text,
                                     const std::set<std::string>& parameters) {
  if (text.empty()) throw ParseError("empty formula", 0);
  NodePtr root = Parser(text, parameters).parse();
  std::set<std::string> params, covs;
  collect_symbols(root, params, covs);
  return ExpressionTree(std::move(root), std::move(params), std::move(covs));
}

ExpressionTree ExpressionTree::parse_with_prefix(std::string_view text, std::string_view prefix) {
  // two-pass: collect identifiers as covariates first, then classify
  ExpressionTree raw = parse(text, {});
  std::set<std::string> params;
  for (const auto& name : raw.covariates())
    if (!prefix.empty() && name.rfind(prefix, 0) == 0) params.insert(name);
  return parse(text, params);
}

double ExpressionTree::eval(const std::map<std::string, double>& params,
                            const std::map<std::string, double>& row) const {
  return evaluate(root_, Bindings{&params, &row});
}

ExpressionTree ExpressionTree::with_pinned(const std::map<std::string, double>& pins) const {
  NodePtr root = substitute_parameters(root_, pins);
  std::set<std::string> params, covs;
  collect_symbols(root, params, covs);
  return ExpressionTree(std::move(root), std::move(params), std::move(covs));
}

CompiledFormula::CompiledFormula(const ExpressionTree& tree, std::vector<std::string> param_order,
                                 std::optional<std::string> perturbed_covariate)
    : params_(std::move(param_order)), value_(tree.root()) {
  const std::size_t k = params_.size();
  grad_.reserve(k);
  for (const auto& name : params_)
    grad_.push_back(derivative(value_, name, Node::Kind::Parameter));
  hess_.resize(k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t p = i; p < k; ++p)
      hess_[i].push_back(derivative(grad_[i], params_[p], Node::Kind::Parameter));
  if (perturbed_covariate) {
    has_cov_ = true;
    dcov_ = derivative(value_, *perturbed_covariate, Node::Kind::Covariate);
    mixed_.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
      mixed_.push_back(derivative(grad_[i], *perturbed_covariate, Node::Kind::Covariate));
  }
}

DerivativeBundle CompiledFormula::eval(const std::map<std::string, double>& params,
                                       const std::map<std::string, double>& row) const {
  const Bindings b{&params, &row};
  const auto k = static_cast<Eigen::Index>(params_.size());
  DerivativeBundle out;
  out.value = evaluate(value_, b);
  out.grad_params.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) out.grad_params[i] = evaluate(grad_[i], b);
  out.hess_params.resize(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index p = i; p < k; ++p) {
      const double h = evaluate(hess_[i][p - i], b);  // one evaluation, mirrored
      out.hess_params(i, p) = h;
      out.hess_params(p, i) = h;
    }
  if (has_cov_) {
    out.d_covariate = evaluate(dcov_, b);
    out.mixed_param_covariate.resize(k);
    for (Eigen::Index i = 0; i < k; ++i)
      out.mixed_param_covariate[i] = evaluate(mixed_[i], b);
  } else {
    out.mixed_param_covariate = Eigen::VectorXd::Zero(k);
  }
  return out;
}

double CompiledFormula::value(const std::map<std::string, double>& params,
                              const std::map<std::string, double>& row) const {
  return evaluate(value_, Bindings{&params, &row});
}

DerivativeBundle differentiate(const ExpressionTree& tree,
                               const std::map<std::string, double>& params,
                               const std::map<std::string, double>& row,
                               const std::optional<std::string>& perturbed_covariate) {
  std::vector<std::string> order;
  order.reserve(params.size());
  for (const auto& [name, _] : params) order.push_back(name);
  return CompiledFormula(tree, std::move(order), perturbed_covariate).eval(params, row);
}

}  // namespace simplexfit::formula
