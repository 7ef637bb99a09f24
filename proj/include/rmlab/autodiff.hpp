#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rmlab/array.hpp"

// Define-by-run reverse-mode automatic differentiation over dense double
// arrays. Every op allocates a fresh Node holding its forward value and a
// closure that scatters the incoming gradient to its parents. backward()
// walks the graph once in reverse topological order.
//
// Broadcasting is restricted to scalar-with-array and exact shape equality;
// anything else is a ShapeError.

namespace rmlab {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Array value;
  Array grad;  // same shape as value, zero until backward touches it
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;  // null on leaves

  double item() const { return value.item(); }
};

// Leaf constructors. Constants never receive gradient; parameters do.
Var constant(Array v);
Var constant(double v);
Var parameter(Array v);

enum class EwKind { add, sub, mul, sigmoid, log, exp, negate };

// Dispatching form of the elementwise ops; binary kinds require b, unary
// kinds require its absence.
Var elementwise(EwKind kind, const Var& a, const Var& b = nullptr);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var sigmoid(const Var& a);  // output clamped into the open interval (0,1)
Var log(const Var& a);      // value <= 0 anywhere -> DomainError
Var exp(const Var& a);

// max(x, floor) elementwise with pass-through gradient where x > floor and
// zero where clamped. Increments *clamp_count by the number of clamped
// entries when given; used to guard log arguments against saturation.
Var clamp_min(const Var& a, double floor, long* clamp_count = nullptr);

Var matmul(const Var& a, const Var& b);

enum class ReduceKind { sum, mean };
Var reduce(ReduceKind kind, const Var& a);            // over all elements -> rank 0
Var reduce(ReduceKind kind, const Var& a, int axis);  // along one axis
Var sum(const Var& a);
Var sum(const Var& a, int axis);
Var mean(const Var& a);
Var mean(const Var& a, int axis);

// Index of the maximum along an axis (or the flat array); ties resolve to the
// lowest index. Pure value computation, participates in no gradient.
int max_index(const Array& a);
std::vector<int> max_index(const Array& a, int axis);
int min_index(const Array& a);

Var log_softmax(const Var& a, int axis);

// Identity on the value (bit-exact copy) that blocks all gradient flow.
Var stop_gradient(const Var& a);

// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
// grad-requiring node. Loss must be rank 0. Repeated calls accumulate unless
// grads are zeroed in between.
void backward(const Var& loss);

// Sequential left fold; fixed association order keeps runs bit-reproducible.
Var add_all(const std::vector<Var>& xs);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }

// Named trainable leaves with deterministic (lexicographic) iteration order.
// Checkpoint serialization and the optimizer both walk this order.
class ParameterSet {
 public:
  void add(const std::string& name, Var v);
  const Var& at(const std::string& name) const;
  bool contains(const std::string& name) const { return map_.count(name) > 0; }
  size_t size() const { return map_.size(); }
  void zero_grad();
  double grad_norm() const;  // global L2 over all entries

  auto begin() { return map_.begin(); }
  auto end() { return map_.end(); }
  auto begin() const { return map_.begin(); }
  auto end() const { return map_.end(); }

 private:
  std::map<std::string, Var> map_;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_err = 0.0;
  bool pass(double tol) const { return max_rel_err < tol; }
};

// Central-difference check of d f / d params. f() must rebuild the loss graph
// from the current parameter values on every call. The error measure is
// |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport grad_check(const std::function<Var()>& f, ParameterSet& params, double eps = 1e-5);

}  // namespace rmlab
