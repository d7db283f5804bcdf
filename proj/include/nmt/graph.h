#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nmt/rng.h"
#include "nmt/tensor.h"
#include "nmt/types.h"

namespace nmt {

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  static constexpr std::size_t kInvalid = static_cast<std::size_t>(-1);
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

enum class Axis { kRows, kCols };

// Define-by-run computation graph with reverse-mode differentiation.
//
// Every primitive computes its value when it is added, and the node keeps
// its forward rule so the whole graph can be re-evaluated in topological
// (insertion) order after leaf values change. Leaves are inputs (named,
// replaceable, no gradient), constants, and parameters. Parameters are bound
// to caller-owned tensors and are the only leaves that receive gradients.
//
// Binary elementwise primitives broadcast the second operand: its column
// count must equal the first operand's or be 1, and its row count must
// divide the first operand's row count. Row i of the first operand pairs with
// row i / (rows_a / rows_b) of the second, so a 1-row operand is broadcast to
// every row and a B-row operand against B*T rows repeats each row T times.
template <typename T>
class Graph {
 public:
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool records_gradients() const { return record_; }

  Var input(std::string name, Tensor<T> value);
  Var constant(Tensor<T> value);
  Var parameter(std::string name, Tensor<T>& storage);

  const Tensor<T>& value(Var v) const;
  // Gradient of the last backward() call; a zero tensor if none reached v.
  Tensor<T> grad(Var v) const;
  bool has_grad(Var v) const { return node(v).grad_ready; }

  const std::string& name(Var v) const { return node(v).name; }
  const std::string& kind(Var v) const { return node(v).kind; }
  void set_name(Var v, std::string name) { node(v).name = std::move(name); }
  Var find(const std::string& name) const;
  std::vector<Var> parameters() const;
  std::size_t size() const { return nodes_.size(); }

  // Replace a named input; the shape must match the placeholder.
  void set_input(const std::string& name, Tensor<T> value);
  // Recompute every non-leaf node from current leaf values.
  void forward();
  // Reverse-mode accumulation from a scalar node.
  void backward(Var loss);
  void zero_grad();

  Var matmul(Var a, Var b);
  // a: (batch*m, k), b: (batch*k, n) -> (batch*m, n), block-wise products.
  Var batch_matmul(Var a, Var b, std::size_t batch);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var multiply(Var a, Var b);
  Var scale(Var a, T factor);
  Var concat(std::span<const Var> parts, Axis axis);
  Var concat(std::initializer_list<Var> parts, Axis axis) {
    std::vector<Var> v(parts);
    return concat(std::span<const Var>(v), axis);
  }
  Var slice(Var a, Axis axis, std::size_t begin, std::size_t end);
  Var gather_rows(Var a, std::vector<std::size_t> rows);
  Var embedding_lookup(Var table, std::span<const TokenId> ids);
  Var reshape(Var a, Shape shape);
  Var sigmoid(Var a);
  Var tanh(Var a);
  // Row-wise (last axis).
  Var softmax(Var a);
  Var log_softmax(Var a);
  // Row-wise normalization; gain and bias are (1, cols).
  Var layer_norm(Var x, Var gain, Var bias, T epsilon = T(1e-6));
  // Multiplies by a fixed mask produced by make_dropout_mask.
  Var dropout(Var x, Tensor<T> mask);
  // Per-row negative log-likelihood of targets under softmax(logits): (rows, 1).
  Var cross_entropy_with_logits(Var logits, std::vector<std::size_t> targets);
  Var sum(Var a);

 private:
  struct Node {
    std::string kind;
    std::string name;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool grad_ready = false;
    bool requires_grad = false;
    bool is_input = false;
    std::function<void(Tensor<T>&)> forward;
    std::function<void(const Tensor<T>&)> backward;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  std::string describe(Var v) const;
  Tensor<T>& grad_slot(std::size_t id);
  bool needs(std::size_t id) const { return nodes_[id].requires_grad; }
  Var emit(std::string kind, std::vector<Var> inputs, std::function<void(Tensor<T>&)> forward,
           std::function<void(const Tensor<T>&)> backward);
  Var binary(std::string kind, Var a, Var b, int op);
  Var unary(std::string kind, Var a, int op);

  bool record_;
  std::deque<Node> nodes_;
};

// Inverted dropout mask: each entry is 0 with probability rate and
// 1/(1-rate) otherwise, so the masked value keeps its expectation.
template <typename T>
Tensor<T> make_dropout_mask(Shape shape, double rate, CounterRng& rng);

// Sets the named inputs and re-runs the forward pass; returns every named
// non-leaf node.
template <typename T>
std::map<std::string, Tensor<T>> evaluate(Graph<T>& graph, const std::map<std::string, Tensor<T>>& inputs);

// Runs backward from `loss` and returns the gradient of every parameter.
template <typename T>
std::map<std::string, Tensor<T>> gradients(Graph<T>& graph, Var loss);

// Central-difference gradient of `loss` for every parameter entry. The graph
// is re-evaluated in place and parameters are restored afterwards.
std::map<std::string, Tensor<double>> numeric_gradients(Graph<double>& graph, Var loss, double step);

// |a - n| / max(|a|, |n|, floor), maximized over entries.
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor);

struct GradientCheck {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::map<std::string, double> per_parameter;
};

// Compares analytic gradients against central differences with step h.
GradientCheck finite_difference_check(Graph<double>& graph, Var loss, double step, double floor = 1e-8);

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace nmt
