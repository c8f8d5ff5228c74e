#ifndef SIMPLEXFIT_FORMULA_HPP
#define SIMPLEXFIT_FORMULA_HPP

#include <Eigen/Core>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace simplexfit::formula {

enum class BinaryOp { Add, Sub, Mul, Div, Pow };
enum class UnaryOp { Neg, Sqrt, Log, Exp };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  enum class Kind { Constant, Parameter, Covariate, Binary, Unary };
  Kind kind;
  double value = 0.0;    // Constant
  std::string name;      // Parameter / Covariate
  BinaryOp bop{};        // Binary
  UnaryOp uop{};         // Unary
  NodePtr lhs, rhs;      // Binary: both; Unary: lhs only
};

// Simplifying constructors (constant folding, x*0 -> 0, x^0 -> 1 with the
// 0^0 = 1 convention, ...). All trees in this module are built through these.
NodePtr make_constant(double v);
NodePtr make_parameter(std::string name);
NodePtr make_covariate(std::string name);
NodePtr make_binary(BinaryOp op, NodePtr lhs, NodePtr rhs);
NodePtr make_unary(UnaryOp op, NodePtr operand);

bool structurally_equal(const NodePtr& a, const NodePtr& b);

// Name -> value bindings for evaluation. Parameters and covariates are looked
// up in separate tables, mirroring the node kinds.
struct Bindings {
  const std::map<std::string, double>* params = nullptr;
  const std::map<std::string, double>* covariates = nullptr;
};

double evaluate(const NodePtr& node, const Bindings& b);

// Exact symbolic derivative with respect to the named symbol of the given
// kind (Parameter or Covariate). Symbols of the other kind are constants.
NodePtr derivative(const NodePtr& node, const std::string& name, Node::Kind kind);

// Substitute the named parameters by numeric constants (used by the
// starting-value machinery to pin unidentifiable parameters).
NodePtr substitute_parameters(const NodePtr& node, const std::map<std::string, double>& values);

bool references_any(const NodePtr& node, const std::set<std::string>& names, Node::Kind kind);

std::string to_string(const NodePtr& node);

// A parsed predictor formula plus its symbol tables. Immutable after parsing.
class ExpressionTree {
 public:
  // Grammar:  expr   := term (('+'|'-') term)*
  //           term   := factor (('*'|'/') factor)*
  //           factor := atom ('^' factor)?
  //           atom   := number | ident | func '(' expr ')' | '(' expr ')' | '-' atom
  // func is one of sqrt, log, exp. Identifiers in `parameters` become
  // parameter references; every other identifier is a covariate.
  static ExpressionTree parse(std::string_view text, const std::set<std::string>& parameters);

  // CLI convenience: identifiers starting with `prefix` are parameters.
  static ExpressionTree parse_with_prefix(std::string_view text, std::string_view prefix);

  // Default: the zero formula (placeholder for default-constructed specs).
  ExpressionTree() : root_(make_constant(0.0)) {}

  ExpressionTree(NodePtr root, std::set<std::string> params, std::set<std::string> covs)
      : root_(std::move(root)), params_(std::move(params)), covs_(std::move(covs)) {}

  const NodePtr& root() const { return root_; }
  const std::set<std::string>& parameters() const { return params_; }
  const std::set<std::string>& covariates() const { return covs_; }
  std::string str() const { return to_string(root_); }

  double eval(const std::map<std::string, double>& params,
              const std::map<std::string, double>& row) const;

  ExpressionTree with_pinned(const std::map<std::string, double>& pins) const;

 private:
  NodePtr root_;
  std::set<std::string> params_, covs_;
};

// All derivatives of one formula at one observation row: value, parameter
// gradient and (exactly symmetric) Hessian, and, when a perturbed covariate
// was requested, d/dx_p and the mixed d2/(dbeta dx_p) vector.
struct DerivativeBundle {
  double value = 0.0;
  Eigen::VectorXd grad_params;
  Eigen::MatrixXd hess_params;
  double d_covariate = 0.0;
  Eigen::VectorXd mixed_param_covariate;
};

// Symbolic derivative trees built once per (formula, parameter order,
// perturbed covariate); evaluation is then a pure tree walk per row.
class CompiledFormula {
 public:
  CompiledFormula(const ExpressionTree& tree, std::vector<std::string> param_order,
                  std::optional<std::string> perturbed_covariate = std::nullopt);

  DerivativeBundle eval(const std::map<std::string, double>& params,
                        const std::map<std::string, double>& row) const;

  double value(const std::map<std::string, double>& params,
               const std::map<std::string, double>& row) const;

  const std::vector<std::string>& param_order() const { return params_; }

 private:
  std::vector<std::string> params_;
  bool has_cov_ = false;
  NodePtr value_;
  std::vector<NodePtr> grad_;                // k
  std::vector<std::vector<NodePtr>> hess_;   // upper triangle, hess_[i][p-i]
  NodePtr dcov_;
  std::vector<NodePtr> mixed_;               // k
};

DerivativeBundle differentiate(const ExpressionTree& tree,
                               const std::map<std::string, double>& params,
                               const std::map<std::string, double>& row,
                               const std::optional<std::string>& perturbed_covariate = std::nullopt);

}  // namespace simplexfit::formula

#endif
