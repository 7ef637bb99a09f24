#include "rmlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "rmlab/errors.hpp"

namespace rmlab {

namespace {

Var make_node(Array value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->grad = Array::zeros(n->value.shape());
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  n->parents = std::move(parents);
  n->requires_grad = rg;
  if (rg) n->backward_fn = std::move(bw);
  return n;
}

// Adds g into parent.grad, collapsing to a scalar sum when the parent was
// broadcast. Skips parents that do not require gradient so their grads stay
// exactly zero.
void accumulate(Node& parent, const Array& g) {
  if (!parent.requires_grad) return;
  if (parent.grad.same_shape(g)) {
    for (std::int64_t i = 0; i < g.size(); ++i) parent.grad[i] += g[i];
  } else if (parent.grad.size() == 1) {
    double s = 0.0;
    for (std::int64_t i = 0; i < g.size(); ++i) s += g[i];
    parent.grad[0] += s;
  } else {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " incompatible with parent " +
                     shape_str(parent.grad.shape()));
  }
}

// Shape of a binary elementwise result, enforcing the broadcast contract.
const Shape& binary_shape(const Var& a, const Var& b, const char* opname) {
  if (a->value.same_shape(b->value)) return a->value.shape();
  if (b->value.is_scalar()) return a->value.shape();
  if (a->value.is_scalar()) return b->value.shape();
  throw ShapeError(std::string(opname) + ": shapes " + shape_str(a->value.shape()) + " and " +
                   shape_str(b->value.shape()) + " are neither equal nor scalar-with-array");
}

double read_bc(const Array& x, std::int64_t i) { return x.size() == 1 ? x[0] : x[i]; }

double stable_sigmoid(double x) {
  double y;
  if (x >= 0) {
    y = 1.0 / (1.0 + std::exp(-x));
  } else {
    double e = std::exp(x);
    y = e / (1.0 + e);
  }
  // keep the output strictly inside (0,1) even past double saturation
  if (y <= 0.0) y = std::numeric_limits<double>::denorm_min();
  if (y >= 1.0) y = 1.0 - 0x1.0p-53;
  return y;
}

}  // namespace

Var constant(Array v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->grad = Array::zeros(n->value.shape());
  return n;
}

Var constant(double v) { return constant(Array::scalar(v)); }

Var parameter(Array v) {
  auto n = constant(std::move(v));
  n->requires_grad = true;
  return n;
}

Var add(const Var& a, const Var& b) {
  const Shape& shp = binary_shape(a, b, "add");
  Array out(shp);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = read_bc(a->value, i) + read_bc(b->value, i);
  return make_node(std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  const Shape& shp = binary_shape(a, b, "sub");
  Array out(shp);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = read_bc(a->value, i) - read_bc(b->value, i);
  return make_node(std::move(out), {a, b}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    Array ng(self.grad.shape());
    for (std::int64_t i = 0; i < ng.size(); ++i) ng[i] = -self.grad[i];
    accumulate(*self.parents[1], ng);
  });
}

Var mul(const Var& a, const Var& b) {
  const Shape& shp = binary_shape(a, b, "mul");
  Array out(shp);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = read_bc(a->value, i) * read_bc(b->value, i);
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Array& av = self.parents[0]->value;
    const Array& bv = self.parents[1]->value;
    Array ga(self.grad.shape()), gb(self.grad.shape());
    for (std::int64_t i = 0; i < self.grad.size(); ++i) {
      ga[i] = self.grad[i] * read_bc(bv, i);
      gb[i] = self.grad[i] * read_bc(av, i);
    }
    accumulate(*self.parents[0], ga);
    accumulate(*self.parents[1], gb);
  });
}

Var neg(const Var& a) {
  Array out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = -a->value[i];
  return make_node(std::move(out), {a}, [](Node& self) {
    Array g(self.grad.shape());
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
    accumulate(*self.parents[0], g);
  });
}

Var sigmoid(const Var& a) {
  Array out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(a->value[i]);
  return make_node(std::move(out), {a}, [](Node& self) {
    Array g(self.grad.shape());
    for (std::int64_t i = 0; i < g.size(); ++i) {
      double y = self.value[i];
      g[i] = self.grad[i] * y * (1.0 - y);
    }
    accumulate(*self.parents[0], g);
  });
}

Var log(const Var& a) {
  Array out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) {
    if (a->value[i] <= 0.0) throw DomainError("log of non-positive value " + std::to_string(a->value[i]));
    out[i] = std::log(a->value[i]);
  }
  return make_node(std::move(out), {a}, [](Node& self) {
    const Array& x = self.parents[0]->value;
    Array g(self.grad.shape());
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] / x[i];
    accumulate(*self.parents[0], g);
  });
}

Var exp(const Var& a) {
  Array out(a->value.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->value[i]);
  return make_node(std::move(out), {a}, [](Node& self) {
    Array g(self.grad.shape());
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = self.grad[i] * self.value[i];
    accumulate(*self.parents[0], g);
  });
}

Var elementwise(EwKind kind, const Var& a, const Var& b) {
  bool binary = kind == EwKind::add || kind == EwKind::sub || kind == EwKind::mul;
  if (binary && !b) throw InvalidInputError("elementwise: binary op-kind requires two operands");
  if (!binary && b) throw InvalidInputError("elementwise: unary op-kind takes one operand");
  switch (kind) {
    case EwKind::add: return add(a, b);
    case EwKind::sub: return sub(a, b);
    case EwKind::mul: return mul(a, b);
    case EwKind::sigmoid: return sigmoid(a);
    case EwKind::log: return log(a);
    case EwKind::exp: return exp(a);
    case EwKind::negate: return neg(a);
  }
  throw InvalidInputError("elementwise: unknown op-kind");
}

Var clamp_min(const Var& a, double floor, long* clamp_count) {
  Array out(a->value.shape());
  long clamped = 0;
  for (std::int64_t i = 0; i < out.size(); ++i) {
    if (a->value[i] < floor) {
      out[i] = floor;
      ++clamped;
    } else {
      out[i] = a->value[i];
    }
  }
  if (clamp_count) *clamp_count += clamped;
  return make_node(std::move(out), {a}, [floor](Node& self) {
    const Array& x = self.parents[0]->value;
    Array g(self.grad.shape());
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = x[i] > floor ? self.grad[i] : 0.0;
    accumulate(*self.parents[0], g);
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->value.rank() != 2 || b->value.rank() != 2)
    throw ShapeError("matmul requires rank-2 operands, have " + shape_str(a->value.shape()) + " and " +
                     shape_str(b->value.shape()));
  int m = a->value.rows(), k = a->value.cols(), k2 = b->value.rows(), n = b->value.cols();
  if (k != k2)
    throw ShapeError("matmul inner extents differ: " + shape_str(a->value.shape()) + " vs " +
                     shape_str(b->value.shape()));
  Array out(Shape{m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += a->value.at(i, t) * b->value.at(t, j);
      out.at(i, j) = s;
    }
  return make_node(std::move(out), {a, b}, [m, k, n](Node& self) {
    const Array& av = self.parents[0]->value;
    const Array& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Array ga(Shape{m, k});
      for (int i = 0; i < m; ++i)
        for (int t = 0; t < k; ++t) {
          double s = 0.0;
          for (int j = 0; j < n; ++j) s += self.grad.at(i, j) * bv.at(t, j);
          ga.at(i, t) = s;
        }
      accumulate(*self.parents[0], ga);
    }
    if (self.parents[1]->requires_grad) {
      Array gb(Shape{k, n});
      for (int t = 0; t < k; ++t)
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int i = 0; i < m; ++i) s += av.at(i, t) * self.grad.at(i, j);
          gb.at(t, j) = s;
        }
      accumulate(*self.parents[1], gb);
    }
  });
}

namespace {

Var reduce_all(ReduceKind kind, const Var& a) {
  if (a->value.size() == 0) throw EmptyReductionError("reduce over zero elements");
  double s = 0.0;
  for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
  double scale = kind == ReduceKind::mean ? 1.0 / static_cast<double>(a->value.size()) : 1.0;
  return make_node(Array::scalar(s * scale), {a}, [scale](Node& self) {
    Array g(self.parents[0]->value.shape());
    for (std::int64_t i = 0; i < g.size(); ++i) g[i] = self.grad[0] * scale;
    accumulate(*self.parents[0], g);
  });
}

}  // namespace

Var reduce(ReduceKind kind, const Var& a) { return reduce_all(kind, a); }

Var reduce(ReduceKind kind, const Var& a, int axis) {
  const Array& v = a->value;
  if (v.rank() == 0) throw ShapeError("axis reduce on rank-0 array");
  if (axis < 0 || axis >= v.rank()) throw ShapeError("reduce axis " + std::to_string(axis) + " out of range");
  if (v.shape()[axis] == 0) throw EmptyReductionError("reduce over empty axis extent");
  if (v.rank() == 1) return reduce_all(kind, a);

  int r = v.rows(), c = v.cols();
  int out_len = axis == 0 ? c : r;
  int extent = axis == 0 ? r : c;
  double scale = kind == ReduceKind::mean ? 1.0 / extent : 1.0;
  Array out(Shape{out_len});
  for (int o = 0; o < out_len; ++o) {
    double s = 0.0;
    for (int e = 0; e < extent; ++e) s += axis == 0 ? v.at(e, o) : v.at(o, e);
    out[o] = s * scale;
  }
  return make_node(std::move(out), {a}, [axis, r, c, scale](Node& self) {
    Array g(Shape{r, c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g.at(i, j) = self.grad[axis == 0 ? j : i] * scale;
    accumulate(*self.parents[0], g);
  });
}

Var sum(const Var& a) { return reduce(ReduceKind::sum, a); }
Var sum(const Var& a, int axis) { return reduce(ReduceKind::sum, a, axis); }
Var mean(const Var& a) { return reduce(ReduceKind::mean, a); }
Var mean(const Var& a, int axis) { return reduce(ReduceKind::mean, a, axis); }

int max_index(const Array& a) {
  if (a.size() == 0) throw EmptyReductionError("max_index of empty array");
  int best = 0;
  for (std::int64_t i = 1; i < a.size(); ++i)
    if (a[i] > a[best]) best = static_cast<int>(i);
  return best;
}

int min_index(const Array& a) {
  if (a.size() == 0) throw EmptyReductionError("min_index of empty array");
  int best = 0;
  for (std::int64_t i = 1; i < a.size(); ++i)
    if (a[i] < a[best]) best = static_cast<int>(i);
  return best;
}

std::vector<int> max_index(const Array& a, int axis) {
  if (a.rank() != 2) throw ShapeError("axis max_index requires rank 2");
  if (axis < 0 || axis > 1) throw ShapeError("max_index axis out of range");
  int r = a.rows(), c = a.cols();
  int out_len = axis == 0 ? c : r;
  int extent = axis == 0 ? r : c;
  if (extent == 0) throw EmptyReductionError("max_index over empty axis extent");
  std::vector<int> out(static_cast<size_t>(out_len));
  for (int o = 0; o < out_len; ++o) {
    int best = 0;
    for (int e = 1; e < extent; ++e) {
      double cur = axis == 0 ? a.at(e, o) : a.at(o, e);
      double bst = axis == 0 ? a.at(best, o) : a.at(o, best);
      if (cur > bst) best = e;
    }
    out[static_cast<size_t>(o)] = best;
  }
  return out;
}

Var log_softmax(const Var& a, int axis) {
  const Array& v = a->value;
  if (v.rank() == 0) throw ShapeError("log_softmax on rank-0 array");
  if (axis < 0 || axis >= v.rank()) throw ShapeError("log_softmax axis out of range");
  if (v.shape()[axis] == 0) throw EmptyReductionError("log_softmax over empty axis extent");

  Array out(v.shape());
  auto run_lane = [&](auto get, auto set, int extent) {
    double mx = get(0);
    for (int e = 1; e < extent; ++e) mx = std::max(mx, get(e));
    double lse = 0.0;
    for (int e = 0; e < extent; ++e) lse += std::exp(get(e) - mx);
    lse = mx + std::log(lse);
    for (int e = 0; e < extent; ++e) set(e, get(e) - lse);
  };
  if (v.rank() == 1) {
    run_lane([&](int e) { return v[e]; }, [&](int e, double x) { out[e] = x; }, static_cast<int>(v.size()));
  } else {
    int r = v.rows(), c = v.cols();
    int lanes = axis == 0 ? c : r;
    int extent = axis == 0 ? r : c;
    for (int l = 0; l < lanes; ++l) {
      auto get = [&](int e) { return axis == 0 ? v.at(e, l) : v.at(l, e); };
      auto set = [&](int e, double x) { (axis == 0 ? out.at(e, l) : out.at(l, e)) = x; };
      run_lane(get, set, extent);
    }
  }
  return make_node(std::move(out), {a}, [axis](Node& self) {
    // d/dx = g - softmax(x) * sum(g) per lane; softmax recovered as exp(out)
    const Array& y = self.value;
    Array g(y.shape());
    auto lane_bw = [&](auto gety, auto getg, auto setg, int extent) {
      double gs = 0.0;
      for (int e = 0; e < extent; ++e) gs += getg(e);
      for (int e = 0; e < extent; ++e) setg(e, getg(e) - std::exp(gety(e)) * gs);
    };
    if (y.rank() == 1) {
      lane_bw([&](int e) { return y[e]; }, [&](int e) { return self.grad[e]; },
              [&](int e, double x) { g[e] = x; }, static_cast<int>(y.size()));
    } else {
      int r = y.rows(), c = y.cols();
      int lanes = axis == 0 ? c : r;
      int extent = axis == 0 ? r : c;
      for (int l = 0; l < lanes; ++l) {
        lane_bw([&](int e) { return axis == 0 ? y.at(e, l) : y.at(l, e); },
                [&](int e) { return axis == 0 ? self.grad.at(e, l) : self.grad.at(l, e); },
                [&](int e, double x) { (axis == 0 ? g.at(e, l) : g.at(l, e)) = x; }, extent);
      }
    }
    accumulate(*self.parents[0], g);
  });
}

Var stop_gradient(const Var& a) {
  auto n = std::make_shared<Node>();
  n->value = a->value;  // plain copy: forward output is bit-identical
  n->grad = Array::zeros(a->value.shape());
  return n;
}

void backward(const Var& loss) {
  if (!loss) throw InvalidInputError("backward: null node");
  if (loss->value.rank() != 0) throw ShapeError("backward: loss must be rank 0, have " + shape_str(loss->value.shape()));

  if (!loss->requires_grad) {
    loss->grad[0] += 1.0;
    return;
  }

  // Iterative post-order DFS restricted to the grad-requiring subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.get(), 0});
  seen.insert(loss.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  // Interior adjoints are scratch state for this call; only leaves (nodes
  // without a backward_fn, i.e. parameters) accumulate across calls.
  for (Node* n : order)
    if (n->backward_fn) n->grad = Array::zeros(n->grad.shape());
  loss->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

Var add_all(const std::vector<Var>& xs) {
  if (xs.empty()) throw InvalidInputError("add_all of empty list");
  Var acc = xs[0];
  for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

void ParameterSet::add(const std::string& name, Var v) {
  if (!v || !v->requires_grad) throw InvalidInputError("ParameterSet::add: '" + name + "' is not a parameter leaf");
  if (!map_.emplace(name, std::move(v)).second) throw InvalidInputError("duplicate parameter name '" + name + "'");
}

const Var& ParameterSet::at(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw InvalidInputError("unknown parameter '" + name + "'");
  return it->second;
}

void ParameterSet::zero_grad() {
  for (auto& [name, v] : map_) v->grad = Array::zeros(v->value.shape());
}

double ParameterSet::grad_norm() const {
  double s = 0.0;
  for (const auto& [name, v] : map_)
    for (std::int64_t i = 0; i < v->grad.size(); ++i) s += v->grad[i] * v->grad[i];
  return std::sqrt(s);
}

GradCheckReport grad_check(const std::function<Var()>& f, ParameterSet& params, double eps) {
  params.zero_grad();
  backward(f());

  GradCheckReport report;
  for (auto& [name, p] : params) {
    GradCheckEntry entry;
    entry.name = name;
    for (std::int64_t i = 0; i < p->value.size(); ++i) {
      double orig = p->value[i];
      p->value[i] = orig + eps;
      double fp = f()->item();
      p->value[i] = orig - eps;
      double fm = f()->item();
      p->value[i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double analytic = p->grad[i];
      double rel = std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
      if (rel >= entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = i;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace rmlab
