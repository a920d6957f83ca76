#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctesret {

enum class ErrorCode {
  NonMonotonicTimes,
  EventBeyondHorizon,
  UnknownMark,
  NonFiniteValue,
  NegativeTime,
  NonPositiveGap,
  NonPositiveSigma,
  EmptySequence,
  EmptyQuery,
  EmptyCorpus,
  EmptySide,
  NoPositives,
  DivergedLoss,
  ZeroGradient,
  DimensionMismatch,
  HorizonTooSmall,
  TooFewBits,
  BadWeights,
  DegenerateRange,
  NoTestQueries,
  InvalidConfig,
  UnknownCommand,
  IoError,
};

const char* error_name(ErrorCode code);

struct Error : std::runtime_error {
  Error(ErrorCode c, const std::string& what)
      : std::runtime_error(std::string(error_name(c)) + ": " + what), code(c) {}
  ErrorCode code;
};

class Tape;

// Handle to a scalar node on a tape. Cheap to copy; arithmetic on Vars
// appends nodes to the owning tape.
struct Var {
  Tape* tape = nullptr;
  int32_t idx = -1;

  double value() const;
  explicit operator bool() const { return tape != nullptr; }
};

enum class Op : uint8_t {
  Const,
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Exp,
  Log,
  Tanh,
  Softplus,
  Relu,
  Sqrt,
  Abs,
  Max,
  Sum,  // n-ary sum, operands in args_
  Dot,  // n-ary dot product, args_ holds x0..xn-1 then y0..yn-1
};

struct Node {
  double val;
  int32_t a;
  int32_t b;
  Op op;
};

// Record-and-replay reverse-mode tape over scalar nodes.
//
// Two backward modes:
//  * backward()/grad_of(): numeric adjoint sweep, no new nodes.
//  * gradient_vars(): emits the adjoint computation as ordinary nodes, so the
//    returned gradients are themselves differentiable. The sweep is pruned to
//    nodes that can reach one of the requested leaves, which keeps the cost
//    proportional to the wrt-dependent subgraph rather than the whole tape.
class Tape {
 public:
  explicit Tape(std::size_t reserve_nodes = 1 << 16);

  Var constant(double v);
  Var leaf(double v);
  std::size_t size() const { return nodes_.size(); }
  void clear();

  double val(Var x) const { return nodes_[static_cast<std::size_t>(x.idx)].val; }

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);
  Var neg(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var tanh(Var a);
  Var softplus(Var a);
  Var relu(Var a);
  Var sqrt(Var a);
  Var abs(Var a);
  Var max(Var a, Var b);
  Var sum(std::span<const Var> xs);
  Var dot(std::span<const Var> xs, std::span<const Var> ys);

  // Numeric adjoints of `wrt` for scalar f. Throws NonFiniteValue if the
  // forward value or any requested adjoint is not finite.
  std::vector<double> grad_of(Var f, std::span<const Var> wrt);

  // Adjoints of every node in [0, f]; used by grad_of and tests.
  void backward(Var f, std::vector<double>& adj) const;

  // Graph-emitting backward: returns d f / d wrt[i] as Vars on this tape.
  // A zero derivative is returned as a constant-zero node.
  std::vector<Var> gradient_vars(Var f, std::span<const Var> wrt);

  const Node& node(int32_t i) const { return nodes_[static_cast<std::size_t>(i)]; }

 private:
  Var push(Op op, double val, int32_t a = -1, int32_t b = -1);
  Var binary(Op op, Var a, Var b);
  Var unary(Op op, Var a);

  std::vector<Node> nodes_;
  std::vector<int32_t> args_;
  std::vector<double> adj_buf_;
};

inline double Var::value() const { return tape->val(*this); }

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var softplus(Var a);
Var relu(Var a);
Var sqrt(Var a);
Var abs(Var a);
Var max(Var a, Var b);

// Flat named parameter vector; the unit of autodiff and of checkpointing.
class ParamStore {
 public:
  struct Segment {
    std::string name;
    std::size_t offset;
    std::size_t size;
  };

  // Appends a named segment; returns its offset. Layout is frozen once a
  // model starts using the store.
  std::size_t add(const std::string& name, std::size_t size);

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }

  const Segment& segment(const std::string& name) const;
  bool has(const std::string& name) const;
  std::span<double> segment_values(const std::string& name);
  std::span<const double> segment_values(const std::string& name) const;
  const std::vector<Segment>& segments() const { return segments_; }

 private:
  std::vector<double> values_;
  std::vector<Segment> segments_;
};

// Creates one leaf per parameter, in store order. Convention: these are the
// first size() nodes of a fresh tape.
std::vector<Var> bind_params(Tape& tape, const ParamStore& params);

using DiffProgram = std::function<Var(Tape&, std::span<const Var>)>;

// d f / d params via the tape. Throws NonFiniteValue on NaN/Inf anywhere in
// the forward value or the gradient.
std::vector<double> gradient(const DiffProgram& f, const ParamStore& params);

double evaluate(const DiffProgram& f, const ParamStore& params);

// Central-difference oracle, perturbing one coordinate at a time.
std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                const ParamStore& params, double step);
std::vector<double> finite_diff(const DiffProgram& f, const ParamStore& params, double step);

// ||a - b|| / max(||b||, floor); the comparison metric used by gradient checks.
double rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace ctesret
