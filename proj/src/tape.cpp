#include "ctesret/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ctesret {

const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonMonotonicTimes: return "NonMonotonicTimes";
    case ErrorCode::EventBeyondHorizon: return "EventBeyondHorizon";
    case ErrorCode::UnknownMark: return "UnknownMark";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::NegativeTime: return "NegativeTime";
    case ErrorCode::NonPositiveGap: return "NonPositiveGap";
    case ErrorCode::NonPositiveSigma: return "NonPositiveSigma";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::EmptyQuery: return "EmptyQuery";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::EmptySide: return "EmptySide";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::ZeroGradient: return "ZeroGradient";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::HorizonTooSmall: return "HorizonTooSmall";
    case ErrorCode::TooFewBits: return "TooFewBits";
    case ErrorCode::BadWeights: return "BadWeights";
    case ErrorCode::DegenerateRange: return "DegenerateRange";
    case ErrorCode::NoTestQueries: return "NoTestQueries";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::IoError: return "IoError";
  }
  return "UnknownError";
}

namespace {

double softplus_val(double x) {
  // log(1 + e^x) without overflow for large |x|.
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace

Tape::Tape(std::size_t reserve_nodes) {
  nodes_.reserve(reserve_nodes);
  args_.reserve(reserve_nodes);
}

void Tape::clear() {
  nodes_.clear();
  args_.clear();
}

Var Tape::push(Op op, double val, int32_t a, int32_t b) {
  nodes_.push_back(Node{val, a, b, op});
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::constant(double v) { return push(Op::Const, v); }
Var Tape::leaf(double v) { return push(Op::Leaf, v); }

Var Tape::binary(Op op, Var a, Var b) {
  double va = val(a), vb = val(b), r = 0.0;
  switch (op) {
    case Op::Add: r = va + vb; break;
    case Op::Sub: r = va - vb; break;
    case Op::Mul: r = va * vb; break;
    case Op::Div: r = va / vb; break;
    case Op::Max: r = std::max(va, vb); break;
    default: r = 0.0; break;
  }
  return push(op, r, a.idx, b.idx);
}

Var Tape::unary(Op op, Var a) {
  double va = val(a), r = 0.0;
  switch (op) {
    case Op::Neg: r = -va; break;
    case Op::Exp: r = std::exp(va); break;
    case Op::Log: r = std::log(va); break;
    case Op::Tanh: r = std::tanh(va); break;
    case Op::Softplus: r = softplus_val(va); break;
    case Op::Relu: r = va > 0.0 ? va : 0.0; break;
    case Op::Sqrt: r = std::sqrt(va); break;
    case Op::Abs: r = std::fabs(va); break;
    default: r = 0.0; break;
  }
  return push(op, r, a.idx);
}

Var Tape::add(Var a, Var b) { return binary(Op::Add, a, b); }
Var Tape::sub(Var a, Var b) { return binary(Op::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return binary(Op::Mul, a, b); }
Var Tape::div(Var a, Var b) { return binary(Op::Div, a, b); }
Var Tape::neg(Var a) { return unary(Op::Neg, a); }
Var Tape::exp(Var a) { return unary(Op::Exp, a); }
Var Tape::log(Var a) { return unary(Op::Log, a); }
Var Tape::tanh(Var a) { return unary(Op::Tanh, a); }
Var Tape::softplus(Var a) { return unary(Op::Softplus, a); }
Var Tape::relu(Var a) { return unary(Op::Relu, a); }
Var Tape::sqrt(Var a) { return unary(Op::Sqrt, a); }
Var Tape::abs(Var a) { return unary(Op::Abs, a); }
Var Tape::max(Var a, Var b) { return binary(Op::Max, a, b); }

Var Tape::sum(std::span<const Var> xs) {
  if (xs.empty()) return constant(0.0);
  double total = 0.0;
  const int32_t off = static_cast<int32_t>(args_.size());
  for (Var x : xs) {
    args_.push_back(x.idx);
    total += val(x);
  }
  return push(Op::Sum, total, off, static_cast<int32_t>(xs.size()));
}

Var Tape::dot(std::span<const Var> xs, std::span<const Var> ys) {
  if (xs.size() != ys.size())
    throw Error(ErrorCode::DimensionMismatch, "dot operand lengths differ");
  if (xs.empty()) return constant(0.0);
  const int32_t off = static_cast<int32_t>(args_.size());
  double total = 0.0;
  for (Var x : xs) args_.push_back(x.idx);
  for (Var y : ys) args_.push_back(y.idx);
  for (std::size_t i = 0; i < xs.size(); ++i) total += val(xs[i]) * val(ys[i]);
  return push(Op::Dot, total, off, static_cast<int32_t>(xs.size()));
}

void Tape::backward(Var f, std::vector<double>& adj) const {
  const std::size_t n = static_cast<std::size_t>(f.idx) + 1;
  adj.assign(nodes_.size(), 0.0);
  adj[static_cast<std::size_t>(f.idx)] = 1.0;
  for (std::size_t ii = n; ii-- > 0;) {
    const double g = adj[ii];
    if (g == 0.0) continue;
    const Node& nd = nodes_[ii];
    switch (nd.op) {
      case Op::Const:
      case Op::Leaf:
        break;
      case Op::Add:
        adj[static_cast<std::size_t>(nd.a)] += g;
        adj[static_cast<std::size_t>(nd.b)] += g;
        break;
      case Op::Sub:
        adj[static_cast<std::size_t>(nd.a)] += g;
        adj[static_cast<std::size_t>(nd.b)] -= g;
        break;
      case Op::Mul:
        adj[static_cast<std::size_t>(nd.a)] += g * nodes_[static_cast<std::size_t>(nd.b)].val;
        adj[static_cast<std::size_t>(nd.b)] += g * nodes_[static_cast<std::size_t>(nd.a)].val;
        break;
      case Op::Div: {
        const double vb = nodes_[static_cast<std::size_t>(nd.b)].val;
        adj[static_cast<std::size_t>(nd.a)] += g / vb;
        adj[static_cast<std::size_t>(nd.b)] -= g * nd.val / vb;
        break;
      }
      case Op::Neg:
        adj[static_cast<std::size_t>(nd.a)] -= g;
        break;
      case Op::Exp:
        adj[static_cast<std::size_t>(nd.a)] += g * nd.val;
        break;
      case Op::Log:
        adj[static_cast<std::size_t>(nd.a)] += g / nodes_[static_cast<std::size_t>(nd.a)].val;
        break;
      case Op::Tanh:
        adj[static_cast<std::size_t>(nd.a)] += g * (1.0 - nd.val * nd.val);
        break;
      case Op::Softplus: {
        const double x = nodes_[static_cast<std::size_t>(nd.a)].val;
        adj[static_cast<std::size_t>(nd.a)] += g / (1.0 + std::exp(-x));
        break;
      }
      case Op::Relu:
        if (nodes_[static_cast<std::size_t>(nd.a)].val > 0.0)
          adj[static_cast<std::size_t>(nd.a)] += g;
        break;
      case Op::Sqrt:
        adj[static_cast<std::size_t>(nd.a)] += g * 0.5 / nd.val;
        break;
      case Op::Abs: {
        const double x = nodes_[static_cast<std::size_t>(nd.a)].val;
        if (x > 0.0)
          adj[static_cast<std::size_t>(nd.a)] += g;
        else if (x < 0.0)
          adj[static_cast<std::size_t>(nd.a)] -= g;
        break;
      }
      case Op::Max: {
        // Subgradient to the argmax; ties resolve to the first operand.
        const double va = nodes_[static_cast<std::size_t>(nd.a)].val;
        const double vb = nodes_[static_cast<std::size_t>(nd.b)].val;
        if (va >= vb)
          adj[static_cast<std::size_t>(nd.a)] += g;
        else
          adj[static_cast<std::size_t>(nd.b)] += g;
        break;
      }
      case Op::Sum: {
        const int32_t off = nd.a, cnt = nd.b;
        for (int32_t k = 0; k < cnt; ++k)
          adj[static_cast<std::size_t>(args_[static_cast<std::size_t>(off + k)])] += g;
        break;
      }
      case Op::Dot: {
        const int32_t off = nd.a, cnt = nd.b;
        for (int32_t k = 0; k < cnt; ++k) {
          const int32_t xi = args_[static_cast<std::size_t>(off + k)];
          const int32_t yi = args_[static_cast<std::size_t>(off + cnt + k)];
          adj[static_cast<std::size_t>(xi)] += g * nodes_[static_cast<std::size_t>(yi)].val;
          adj[static_cast<std::size_t>(yi)] += g * nodes_[static_cast<std::size_t>(xi)].val;
        }
        break;
      }
    }
  }
}

std::vector<double> Tape::grad_of(Var f, std::span<const Var> wrt) {
  if (!std::isfinite(val(f)))
    throw Error(ErrorCode::NonFiniteValue, "forward value is not finite");
  backward(f, adj_buf_);
  std::vector<double> out(wrt.size());
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    out[i] = adj_buf_[static_cast<std::size_t>(wrt[i].idx)];
    if (!std::isfinite(out[i]))
      throw Error(ErrorCode::NonFiniteValue, "gradient entry is not finite");
  }
  return out;
}

std::vector<Var> Tape::gradient_vars(Var f, std::span<const Var> wrt) {
  const std::size_t n = static_cast<std::size_t>(f.idx) + 1;

  // relevant[i]: some wrt-leaf is an ancestor of node i, so its adjoint can
  // contribute to the requested gradients.
  std::vector<uint8_t> relevant(n, 0);
  for (Var w : wrt)
    if (static_cast<std::size_t>(w.idx) < n) relevant[static_cast<std::size_t>(w.idx)] = 1;
  for (std::size_t i = 0; i < n; ++i) {
    if (relevant[i]) continue;
    const Node& nd = nodes_[i];
    switch (nd.op) {
      case Op::Const:
      case Op::Leaf:
        break;
      case Op::Sum: {
        for (int32_t k = 0; k < nd.b && !relevant[i]; ++k)
          if (relevant[static_cast<std::size_t>(args_[static_cast<std::size_t>(nd.a + k)])])
            relevant[i] = 1;
        break;
      }
      case Op::Dot: {
        for (int32_t k = 0; k < 2 * nd.b && !relevant[i]; ++k)
          if (relevant[static_cast<std::size_t>(args_[static_cast<std::size_t>(nd.a + k)])])
            relevant[i] = 1;
        break;
      }
      default: {
        if (nd.a >= 0 && relevant[static_cast<std::size_t>(nd.a)]) relevant[i] = 1;
        if (!relevant[i] && nd.b >= 0 && relevant[static_cast<std::size_t>(nd.b)]) relevant[i] = 1;
        break;
      }
    }
  }

  std::vector<int32_t> adjvar(n, -1);
  const Var zero = constant(0.0);
  if (!relevant[static_cast<std::size_t>(f.idx)]) {
    return std::vector<Var>(wrt.size(), zero);
  }
  adjvar[static_cast<std::size_t>(f.idx)] = constant(1.0).idx;

  auto get = [&](int32_t i) { return Var{this, i}; };
  auto add_to = [&](int32_t p, Var v) {
    if (!relevant[static_cast<std::size_t>(p)]) return;
    if (adjvar[static_cast<std::size_t>(p)] < 0)
      adjvar[static_cast<std::size_t>(p)] = v.idx;
    else
      adjvar[static_cast<std::size_t>(p)] = add(get(adjvar[static_cast<std::size_t>(p)]), v).idx;
  };

  for (std::size_t ii = n; ii-- > 0;) {
    if (!relevant[ii] || adjvar[ii] < 0) continue;
    const Var g = get(adjvar[ii]);
    const Node nd = nodes_[ii];  // copy: nodes_ may reallocate while emitting
    switch (nd.op) {
      case Op::Const:
      case Op::Leaf:
        break;
      case Op::Add:
        add_to(nd.a, g);
        add_to(nd.b, g);
        break;
      case Op::Sub:
        add_to(nd.a, g);
        add_to(nd.b, neg(g));
        break;
      case Op::Mul:
        if (relevant[static_cast<std::size_t>(nd.a)]) add_to(nd.a, mul(g, get(nd.b)));
        if (relevant[static_cast<std::size_t>(nd.b)]) add_to(nd.b, mul(g, get(nd.a)));
        break;
      case Op::Div: {
        if (relevant[static_cast<std::size_t>(nd.a)]) add_to(nd.a, div(g, get(nd.b)));
        if (relevant[static_cast<std::size_t>(nd.b)]) {
          Var q = div(Var{this, static_cast<int32_t>(ii)}, get(nd.b));
          add_to(nd.b, neg(mul(g, q)));
        }
        break;
      }
      case Op::Neg:
        add_to(nd.a, neg(g));
        break;
      case Op::Exp:
        add_to(nd.a, mul(g, Var{this, static_cast<int32_t>(ii)}));
        break;
      case Op::Log:
        add_to(nd.a, div(g, get(nd.a)));
        break;
      case Op::Tanh: {
        Var t = Var{this, static_cast<int32_t>(ii)};
        add_to(nd.a, mul(g, sub(constant(1.0), mul(t, t))));
        break;
      }
      case Op::Softplus: {
        // d softplus(x)/dx = sigmoid(x) = 1 / (1 + e^{-x})
        Var s = div(constant(1.0), add(constant(1.0), exp(neg(get(nd.a)))));
        add_to(nd.a, mul(g, s));
        break;
      }
      case Op::Relu:
        if (nodes_[static_cast<std::size_t>(nd.a)].val > 0.0) add_to(nd.a, g);
        break;
      case Op::Sqrt: {
        Var r = Var{this, static_cast<int32_t>(ii)};
        add_to(nd.a, div(mul(g, constant(0.5)), r));
        break;
      }
      case Op::Abs: {
        const double x = nodes_[static_cast<std::size_t>(nd.a)].val;
        if (x > 0.0)
          add_to(nd.a, g);
        else if (x < 0.0)
          add_to(nd.a, neg(g));
        break;
      }
      case Op::Max: {
        const double va = nodes_[static_cast<std::size_t>(nd.a)].val;
        const double vb = nodes_[static_cast<std::size_t>(nd.b)].val;
        if (va >= vb)
          add_to(nd.a, g);
        else
          add_to(nd.b, g);
        break;
      }
      case Op::Sum: {
        for (int32_t k = 0; k < nd.b; ++k)
          add_to(args_[static_cast<std::size_t>(nd.a + k)], g);
        break;
      }
      case Op::Dot: {
        for (int32_t k = 0; k < nd.b; ++k) {
          const int32_t xi = args_[static_cast<std::size_t>(nd.a + k)];
          const int32_t yi = args_[static_cast<std::size_t>(nd.a + nd.b + k)];
          if (relevant[static_cast<std::size_t>(xi)]) add_to(xi, mul(g, get(yi)));
          if (relevant[static_cast<std::size_t>(yi)]) add_to(yi, mul(g, get(xi)));
        }
        break;
      }
    }
  }

  std::vector<Var> out(wrt.size());
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    const int32_t a = adjvar[static_cast<std::size_t>(wrt[i].idx)];
    out[i] = a < 0 ? zero : get(a);
  }
  return out;
}

#define CTESRET_SAME_TAPE(a, b) \
  if ((a).tape != (b).tape) throw Error(ErrorCode::DimensionMismatch, "vars from different tapes")

Var operator+(Var a, Var b) { CTESRET_SAME_TAPE(a, b); return a.tape->add(a, b); }
Var operator-(Var a, Var b) { CTESRET_SAME_TAPE(a, b); return a.tape->sub(a, b); }
Var operator*(Var a, Var b) { CTESRET_SAME_TAPE(a, b); return a.tape->mul(a, b); }
Var operator/(Var a, Var b) { CTESRET_SAME_TAPE(a, b); return a.tape->div(a, b); }
Var operator-(Var a) { return a.tape->neg(a); }
Var operator+(Var a, double b) { return a.tape->add(a, a.tape->constant(b)); }
Var operator+(double a, Var b) { return b.tape->add(b.tape->constant(a), b); }
Var operator-(Var a, double b) { return a.tape->sub(a, a.tape->constant(b)); }
Var operator-(double a, Var b) { return b.tape->sub(b.tape->constant(a), b); }
Var operator*(Var a, double b) { return a.tape->mul(a, a.tape->constant(b)); }
Var operator*(double a, Var b) { return b.tape->mul(b.tape->constant(a), b); }
Var operator/(Var a, double b) { return a.tape->div(a, a.tape->constant(b)); }
Var operator/(double a, Var b) { return b.tape->div(b.tape->constant(a), b); }

Var exp(Var a) { return a.tape->exp(a); }
Var log(Var a) { return a.tape->log(a); }
Var tanh(Var a) { return a.tape->tanh(a); }
Var softplus(Var a) { return a.tape->softplus(a); }
Var relu(Var a) { return a.tape->relu(a); }
Var sqrt(Var a) { return a.tape->sqrt(a); }
Var abs(Var a) { return a.tape->abs(a); }
Var max(Var a, Var b) { return a.tape->max(a, b); }

std::size_t ParamStore::add(const std::string& name, std::size_t size) {
  const std::size_t offset = values_.size();
  segments_.push_back(Segment{name, offset, size});
  values_.resize(offset + size, 0.0);
  return offset;
}

const ParamStore::Segment& ParamStore::segment(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return s;
  throw Error(ErrorCode::InvalidConfig, "unknown parameter segment " + name);
}

bool ParamStore::has(const std::string& name) const {
  for (const auto& s : segments_)
    if (s.name == name) return true;
  return false;
}

std::span<double> ParamStore::segment_values(const std::string& name) {
  const Segment& s = segment(name);
  return std::span<double>(values_).subspan(s.offset, s.size);
}

std::span<const double> ParamStore::segment_values(const std::string& name) const {
  const Segment& s = segment(name);
  return std::span<const double>(values_).subspan(s.offset, s.size);
}

std::vector<Var> bind_params(Tape& tape, const ParamStore& params) {
  std::vector<Var> out;
  out.reserve(params.size());
  for (double v : params.values()) out.push_back(tape.leaf(v));
  return out;
}

std::vector<double> gradient(const DiffProgram& f, const ParamStore& params) {
  Tape tape;
  std::vector<Var> leaves = bind_params(tape, params);
  Var out = f(tape, leaves);
  return tape.grad_of(out, leaves);
}

double evaluate(const DiffProgram& f, const ParamStore& params) {
  Tape tape;
  std::vector<Var> leaves = bind_params(tape, params);
  return tape.val(f(tape, leaves));
}

std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                const ParamStore& params, double step) {
  if (step <= 0.0) throw Error(ErrorCode::InvalidConfig, "finite_diff step must be positive");
  std::vector<double> x(params.values().begin(), params.values().end());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f(x);
    x[i] = keep - step;
    const double dn = f(x);
    x[i] = keep;
    out[i] = (up - dn) / (2.0 * step);
    if (!std::isfinite(out[i]))
      throw Error(ErrorCode::NonFiniteValue, "finite difference is not finite");
  }
  return out;
}

std::vector<double> finite_diff(const DiffProgram& f, const ParamStore& params, double step) {
  auto value_fn = [&](std::span<const double> x) {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(x.size());
    for (double v : x) leaves.push_back(tape.leaf(v));
    return tape.val(f(tape, leaves));
  };
  return finite_diff(value_fn, params, step);
}

double rel_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size())
    throw Error(ErrorCode::DimensionMismatch, "rel_error length mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

}  // namespace ctesret
