#include "nmt/graph.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace nmt {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ")";
  return out.str();
}

namespace {

template <typename T>
using RowMajor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMajor<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMajor<T>>;

template <typename T>
ConstMatMap<T> view(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data(), t.rows(), t.cols());
}
template <typename T>
ConstMatMap<T> view(const T* data, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(data, rows, cols);
}
template <typename T>
MatMap<T> view(T* data, std::size_t rows, std::size_t cols) {
  return MatMap<T>(data, rows, cols);
}

template <typename T>
void ensure_shape(Tensor<T>& out, const Shape& shape) {
  if (out.shape() != shape) out = Tensor<T>(shape);
}

enum BinaryOp { kAdd, kSub, kMul };
enum UnaryOp { kSigmoid, kTanh };

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw ShapeError("invalid graph variable " + std::to_string(v.id));
  return nodes_[v.id];
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw ShapeError("invalid graph variable " + std::to_string(v.id));
  return nodes_[v.id];
}

template <typename T>
std::string Graph<T>::describe(Var v) const {
  const Node& n = node(v);
  std::string s = n.kind + "#" + std::to_string(v.id);
  if (!n.name.empty()) s += " '" + n.name + "'";
  return s + " " + shape_string(value(v).shape());
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  const Node& n = node(v);
  return n.external ? *n.external : n.value;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad_ready) return n.grad;
  return Tensor<T>(value(v).shape());
}

template <typename T>
Tensor<T>& Graph<T>::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.grad_ready) {
    const Tensor<T>& val = n.external ? *n.external : n.value;
    if (n.grad.shape() != val.shape()) {
      n.grad = Tensor<T>(val.shape());
    } else {
      n.grad.fill(T(0));
    }
    n.grad_ready = true;
  }
  return n.grad;
}

template <typename T>
Var Graph<T>::input(std::string name, Tensor<T> value) {
  Node n;
  n.kind = "input";
  n.name = std::move(name);
  n.value = std::move(value);
  n.is_input = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.kind = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::parameter(std::string name, Tensor<T>& storage) {
  Node n;
  n.kind = "parameter";
  n.name = std::move(name);
  n.external = &storage;
  n.requires_grad = record_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].name == name) return Var{i};
  }
  return Var{};
}

template <typename T>
std::vector<Var> Graph<T>::parameters() const {
  std::vector<Var> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].external) out.push_back(Var{i});
  }
  return out;
}

template <typename T>
void Graph<T>::set_input(const std::string& name, Tensor<T> value) {
  Var v = find(name);
  if (!v.valid() || !nodes_[v.id].is_input) throw ShapeError("graph has no input named '" + name + "'");
  Node& n = nodes_[v.id];
  if (n.value.shape() != value.shape()) {
    throw ShapeError("input '" + name + "' expects shape " + shape_string(n.value.shape()) + ", got " +
                     shape_string(value.shape()));
  }
  n.value = std::move(value);
}

template <typename T>
void Graph<T>::forward() {
  for (Node& n : nodes_) {
    if (n.forward) n.forward(n.value);
  }
}

template <typename T>
void Graph<T>::zero_grad() {
  for (Node& n : nodes_) n.grad_ready = false;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (!record_) throw DomainError("backward() on a graph built without gradient recording");
  if (value(loss).size() != 1) {
    throw ShapeError("gradients: loss " + describe(loss) + " is not a scalar");
  }
  zero_grad();
  grad_slot(loss.id)[0] = T(1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.requires_grad && n.grad_ready && n.backward) n.backward(n.grad);
  }
}

template <typename T>
Var Graph<T>::emit(std::string kind, std::vector<Var> inputs, std::function<void(Tensor<T>&)> forward,
                   std::function<void(const Tensor<T>&)> backward) {
  Node n;
  n.kind = std::move(kind);
  for (Var v : inputs) {
    if (!v.valid() || v.id >= nodes_.size()) throw ShapeError(n.kind + ": invalid input variable");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  n.forward = std::move(forward);
  n.forward(n.value);
  if (record_ && n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ between " + describe(a) + " and " + describe(b));
  }
  const std::size_t ia = a.id, ib = b.id;
  return emit(
      "matmul", {a, b},
      [this, ia, ib](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        const Tensor<T>& y = value(Var{ib});
        ensure_shape(out, {x.rows(), y.cols()});
        view(out.data(), out.rows(), out.cols()).noalias() = view(x) * view(y);
      },
      [this, ia, ib](const Tensor<T>& g) {
        const Tensor<T>& x = value(Var{ia});
        const Tensor<T>& y = value(Var{ib});
        if (needs(ia)) {
          Tensor<T>& gx = grad_slot(ia);
          view(gx.data(), gx.rows(), gx.cols()).noalias() += view(g) * view(y).transpose();
        }
        if (needs(ib)) {
          Tensor<T>& gy = grad_slot(ib);
          view(gy.data(), gy.rows(), gy.cols()).noalias() += view(x).transpose() * view(g);
        }
      });
}

template <typename T>
Var Graph<T>::batch_matmul(Var a, Var b, std::size_t batch) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  if (batch == 0 || av.rows() % batch != 0 || bv.rows() % batch != 0 || av.cols() != bv.rows() / batch) {
    throw ShapeError("batch_matmul: " + describe(a) + " and " + describe(b) + " are not " +
                     std::to_string(batch) + " compatible blocks");
  }
  const std::size_t ia = a.id, ib = b.id;
  return emit(
      "batch_matmul", {a, b},
      [this, ia, ib, batch](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        const Tensor<T>& y = value(Var{ib});
        const std::size_t m = x.rows() / batch, k = x.cols(), n = y.cols();
        ensure_shape(out, {batch * m, n});
        for (std::size_t i = 0; i < batch; ++i) {
          view(out.data() + i * m * n, m, n).noalias() =
              view(x.data() + i * m * k, m, k) * view(y.data() + i * k * n, k, n);
        }
      },
      [this, ia, ib, batch](const Tensor<T>& g) {
        const Tensor<T>& x = value(Var{ia});
        const Tensor<T>& y = value(Var{ib});
        const std::size_t m = x.rows() / batch, k = x.cols(), n = y.cols();
        for (std::size_t i = 0; i < batch; ++i) {
          auto gi = view(g.data() + i * m * n, m, n);
          if (needs(ia)) {
            view(grad_slot(ia).data() + i * m * k, m, k).noalias() += gi * view(y.data() + i * k * n, k, n).transpose();
          }
          if (needs(ib)) {
            view(grad_slot(ib).data() + i * k * n, k, n).noalias() += view(x.data() + i * m * k, m, k).transpose() * gi;
          }
        }
      });
}

template <typename T>
Var Graph<T>::binary(std::string kind, Var a, Var b, int op) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  const bool cols_ok = bv.cols() == av.cols() || bv.cols() == 1;
  const bool rows_ok = bv.rows() > 0 && av.rows() % bv.rows() == 0;
  if (!cols_ok || !rows_ok) {
    throw ShapeError(kind + ": cannot broadcast " + describe(b) + " onto " + describe(a));
  }
  const std::size_t ia = a.id, ib = b.id;
  return emit(
      kind, {a, b},
      [this, ia, ib, op](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        const Tensor<T>& y = value(Var{ib});
        ensure_shape(out, x.shape());
        const std::size_t cols = x.cols(), repeat = x.rows() / y.rows();
        const bool col_bcast = y.cols() != cols;
        // Rows sharing one row of y form a contiguous block.
        for (std::size_t yr = 0; yr < y.rows(); ++yr) {
          auto xb = view(x.data() + yr * repeat * cols, repeat, cols).array();
          auto ob = view(out.data() + yr * repeat * cols, repeat, cols).array();
          if (col_bcast) {
            const T yv = y[yr];
            if (op == kAdd) ob = xb + yv;
            else if (op == kSub) ob = xb - yv;
            else ob = xb * yv;
          } else {
            auto yb = view(y.data() + yr * cols, 1, cols).array();
            if (op == kAdd) ob = xb.rowwise() + yb.row(0);
            else if (op == kSub) ob = xb.rowwise() - yb.row(0);
            else ob = xb.rowwise() * yb.row(0);
          }
        }
      },
      [this, ia, ib, op](const Tensor<T>& g) {
        const Tensor<T>& x = value(Var{ia});
        const Tensor<T>& y = value(Var{ib});
        const std::size_t cols = x.cols(), repeat = x.rows() / y.rows();
        const bool col_bcast = y.cols() != cols;
        const bool need_a = needs(ia), need_b = needs(ib);
        T* gx = need_a ? grad_slot(ia).data() : nullptr;
        T* gy = need_b ? grad_slot(ib).data() : nullptr;
        for (std::size_t yr = 0; yr < y.rows(); ++yr) {
          const std::size_t off = yr * repeat * cols;
          auto gb = view(g.data() + off, repeat, cols).array();
          if (need_a) {
            auto gxb = view(gx + off, repeat, cols).array();
            if (op != kMul) gxb += gb;
            else if (col_bcast) gxb += gb * y[yr];
            else gxb += gb.rowwise() * view(y.data() + yr * cols, 1, cols).array().row(0);
          }
          if (need_b) {
            if (col_bcast) {
              T sum = op == kMul ? (gb * view(x.data() + off, repeat, cols).array()).sum() : gb.sum();
              gy[yr] += op == kSub ? -sum : sum;
            } else {
              auto gyb = view(gy + yr * cols, 1, cols).array();
              if (op == kMul) gyb += (gb * view(x.data() + off, repeat, cols).array()).colwise().sum();
              else if (op == kSub) gyb -= gb.colwise().sum();
              else gyb += gb.colwise().sum();
            }
          }
        }
      });
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
  return binary("add", a, b, kAdd);
}
template <typename T>
Var Graph<T>::sub(Var a, Var b) {
  return binary("sub", a, b, kSub);
}
template <typename T>
Var Graph<T>::multiply(Var a, Var b) {
  return binary("multiply", a, b, kMul);
}

template <typename T>
Var Graph<T>::scale(Var a, T factor) {
  const std::size_t ia = a.id;
  return emit(
      "scale", {a},
      [this, ia, factor](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        ensure_shape(out, x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
      },
      [this, ia, factor](const Tensor<T>& g) {
        Tensor<T>& gx = grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
      });
}

template <typename T>
Var Graph<T>::concat(std::span<const Var> parts, Axis axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::vector<std::size_t> ids;
  for (Var p : parts) {
    const Tensor<T>& pv = value(p);
    const Tensor<T>& first = value(parts[0]);
    if ((axis == Axis::kCols && pv.rows() != first.rows()) || (axis == Axis::kRows && pv.cols() != first.cols())) {
      throw ShapeError("concat: " + describe(p) + " does not match " + describe(parts[0]));
    }
    ids.push_back(p.id);
  }
  return emit(
      "concat", std::vector<Var>(parts.begin(), parts.end()),
      [this, ids, axis](Tensor<T>& out) {
        const Tensor<T>& first = value(Var{ids[0]});
        if (axis == Axis::kCols) {
          std::size_t cols = 0;
          for (std::size_t id : ids) cols += value(Var{id}).cols();
          const std::size_t rows = first.rows();
          ensure_shape(out, {rows, cols});
          std::size_t offset = 0;
          for (std::size_t id : ids) {
            const Tensor<T>& p = value(Var{id});
            for (std::size_t r = 0; r < rows; ++r) {
              std::copy_n(p.data() + r * p.cols(), p.cols(), out.data() + r * cols + offset);
            }
            offset += p.cols();
          }
        } else {
          std::size_t rows = 0;
          for (std::size_t id : ids) rows += value(Var{id}).rows();
          ensure_shape(out, {rows, first.cols()});
          T* dst = out.data();
          for (std::size_t id : ids) {
            const Tensor<T>& p = value(Var{id});
            dst = std::copy_n(p.data(), p.size(), dst);
          }
        }
      },
      [this, ids, axis](const Tensor<T>& g) {
        const std::size_t cols = g.cols();
        std::size_t offset = 0;
        for (std::size_t id : ids) {
          const Tensor<T>& p = value(Var{id});
          if (needs(id)) {
            Tensor<T>& gp = grad_slot(id);
            if (axis == Axis::kCols) {
              for (std::size_t r = 0; r < p.rows(); ++r) {
                for (std::size_t c = 0; c < p.cols(); ++c) gp[r * p.cols() + c] += g[r * cols + offset + c];
              }
            } else {
              for (std::size_t i = 0; i < p.size(); ++i) gp[i] += g[offset + i];
            }
          }
          offset += axis == Axis::kCols ? p.cols() : p.size();
        }
      });
}

template <typename T>
Var Graph<T>::slice(Var a, Axis axis, std::size_t begin, std::size_t end) {
  const Tensor<T>& av = value(a);
  const std::size_t extent = axis == Axis::kRows ? av.rows() : av.cols();
  if (begin >= end || end > extent) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of bounds for " +
                     describe(a));
  }
  const std::size_t ia = a.id;
  return emit(
      "slice", {a},
      [this, ia, axis, begin, end](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        const std::size_t cols = x.cols();
        if (axis == Axis::kRows) {
          ensure_shape(out, {end - begin, cols});
          std::copy_n(x.data() + begin * cols, (end - begin) * cols, out.data());
        } else {
          const std::size_t w = end - begin;
          ensure_shape(out, {x.rows(), w});
          for (std::size_t r = 0; r < x.rows(); ++r) std::copy_n(x.data() + r * cols + begin, w, out.data() + r * w);
        }
      },
      [this, ia, axis, begin, end](const Tensor<T>& g) {
        Tensor<T>& gx = grad_slot(ia);
        const std::size_t cols = gx.cols();
        if (axis == Axis::kRows) {
          for (std::size_t i = 0; i < g.size(); ++i) gx[begin * cols + i] += g[i];
        } else {
          const std::size_t w = end - begin;
          for (std::size_t r = 0; r < gx.rows(); ++r) {
            for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += g[r * w + c];
          }
        }
      });
}

template <typename T>
Var Graph<T>::gather_rows(Var a, std::vector<std::size_t> rows) {
  const Tensor<T>& av = value(a);
  for (std::size_t r : rows) {
    if (r >= av.rows()) throw ShapeError("gather_rows: row " + std::to_string(r) + " out of range for " + describe(a));
  }
  const std::size_t ia = a.id;
  auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(rows));
  return emit(
      "gather_rows", {a},
      [this, ia, idx](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        const std::size_t cols = x.cols();
        ensure_shape(out, {idx->size(), cols});
        for (std::size_t i = 0; i < idx->size(); ++i) std::copy_n(x.data() + (*idx)[i] * cols, cols, out.data() + i * cols);
      },
      [this, ia, idx](const Tensor<T>& g) {
        Tensor<T>& gx = grad_slot(ia);
        const std::size_t cols = gx.cols();
        for (std::size_t i = 0; i < idx->size(); ++i) {
          T* dst = gx.data() + (*idx)[i] * cols;
          const T* src = g.data() + i * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
      });
}

template <typename T>
Var Graph<T>::embedding_lookup(Var table, std::span<const TokenId> ids) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (TokenId id : ids) {
    if (id < 0) throw ShapeError("embedding_lookup: negative token id");
    rows.push_back(static_cast<std::size_t>(id));
  }
  Var v = gather_rows(table, std::move(rows));
  node(v).kind = "embedding_lookup";
  return v;
}

template <typename T>
Var Graph<T>::reshape(Var a, Shape shape) {
  if (shape_size(shape) != value(a).size()) {
    throw ShapeError("reshape: " + describe(a) + " cannot become " + shape_string(shape));
  }
  const std::size_t ia = a.id;
  return emit(
      "reshape", {a},
      [this, ia, shape](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        out = Tensor<T>(shape, x.storage());
      },
      [this, ia](const Tensor<T>& g) {
        Tensor<T>& gx = grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      });
}

template <typename T>
Var Graph<T>::unary(std::string kind, Var a, int op) {
  const std::size_t ia = a.id;
  // Backward uses the output value, which is stable under replay since the
  // node's own value is recomputed before any later use.
  auto self = std::make_shared<std::size_t>(0);
  Var v = emit(
      std::move(kind), {a},
      [this, ia, op](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        ensure_shape(out, x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) {
          out[i] = op == kSigmoid ? stable_sigmoid(x[i]) : std::tanh(x[i]);
        }
      },
      [this, ia, op, self](const Tensor<T>& g) {
        const Tensor<T>& y = nodes_[*self].value;
        Tensor<T>& gx = grad_slot(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
          gx[i] += op == kSigmoid ? g[i] * y[i] * (T(1) - y[i]) : g[i] * (T(1) - y[i] * y[i]);
        }
      });
  *self = v.id;
  return v;
}

template <typename T>
Var Graph<T>::sigmoid(Var a) {
  return unary("sigmoid", a, kSigmoid);
}
template <typename T>
Var Graph<T>::tanh(Var a) {
  return unary("tanh", a, kTanh);
}

template <typename T>
Var Graph<T>::softmax(Var a) {
  const std::size_t ia = a.id;
  auto self = std::make_shared<std::size_t>(0);
  Var v = emit(
      "softmax", {a},
      [this, ia](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        ensure_shape(out, x.shape());
        const std::size_t cols = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const T* xr = x.data() + r * cols;
          T* o = out.data() + r * cols;
          const T mx = *std::max_element(xr, xr + cols);
          T total = 0;
          for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(xr[c] - mx));
          for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
        }
      },
      [this, ia, self](const Tensor<T>& g) {
        const Tensor<T>& y = nodes_[*self].value;
        Tensor<T>& gx = grad_slot(ia);
        const std::size_t cols = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          T dot = 0;
          for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
      });
  *self = v.id;
  return v;
}

template <typename T>
Var Graph<T>::log_softmax(Var a) {
  const std::size_t ia = a.id;
  auto self = std::make_shared<std::size_t>(0);
  Var v = emit(
      "log_softmax", {a},
      [this, ia](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        ensure_shape(out, x.shape());
        const std::size_t cols = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r) {
          const T* xr = x.data() + r * cols;
          T* o = out.data() + r * cols;
          const T mx = *std::max_element(xr, xr + cols);
          T total = 0;
          for (std::size_t c = 0; c < cols; ++c) total += std::exp(xr[c] - mx);
          const T lse = mx + std::log(total);
          for (std::size_t c = 0; c < cols; ++c) o[c] = xr[c] - lse;
        }
      },
      [this, ia, self](const Tensor<T>& g) {
        const Tensor<T>& y = nodes_[*self].value;
        Tensor<T>& gx = grad_slot(ia);
        const std::size_t cols = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
          T total = 0;
          for (std::size_t c = 0; c < cols; ++c) total += g[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r * cols + c] - std::exp(y[r * cols + c]) * total;
        }
      });
  *self = v.id;
  return v;
}

template <typename T>
Var Graph<T>::layer_norm(Var x, Var gain, Var bias, T epsilon) {
  const Tensor<T>& xv = value(x);
  if (value(gain).size() != xv.cols() || value(bias).size() != xv.cols()) {
    throw ShapeError("layer_norm: gain " + describe(gain) + " / bias " + describe(bias) + " do not match " +
                     describe(x));
  }
  const std::size_t ix = x.id, ig = gain.id, ib = bias.id;
  // Normalized input and inverse standard deviation per row, shared with backward.
  struct Cache {
    Tensor<T> normalized;
    std::vector<T> inv_std;
  };
  auto cache = std::make_shared<Cache>();
  return emit(
      "layer_norm", {x, gain, bias},
      [this, ix, ig, ib, epsilon, cache](Tensor<T>& out) {
        const Tensor<T>& in = value(Var{ix});
        const Tensor<T>& g = value(Var{ig});
        const Tensor<T>& b = value(Var{ib});
        const std::size_t rows = in.rows(), cols = in.cols();
        ensure_shape(out, in.shape());
        ensure_shape(cache->normalized, in.shape());
        cache->inv_std.assign(rows, T(0));
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xr = in.data() + r * cols;
          T mean = 0;
          for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
          mean /= T(cols);
          T var = 0;
          for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
          var /= T(cols);
          const T inv = T(1) / std::sqrt(var + epsilon);
          cache->inv_std[r] = inv;
          for (std::size_t c = 0; c < cols; ++c) {
            const T n = (xr[c] - mean) * inv;
            cache->normalized[r * cols + c] = n;
            out[r * cols + c] = g[c] * n + b[c];
          }
        }
      },
      [this, ix, ig, ib, cache](const Tensor<T>& grad) {
        const Tensor<T>& g = value(Var{ig});
        const Tensor<T>& n = cache->normalized;
        const std::size_t rows = n.rows(), cols = n.cols();
        if (needs(ig)) {
          Tensor<T>& gg = grad_slot(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gg[c] += grad[r * cols + c] * n[r * cols + c];
        }
        if (needs(ib)) {
          Tensor<T>& gb = grad_slot(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += grad[r * cols + c];
        }
        if (needs(ix)) {
          Tensor<T>& gx = grad_slot(ix);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = 0, mean_dn = 0;
            for (std::size_t c = 0; c < cols; ++c) {
              const T d = grad[r * cols + c] * g[c];
              mean_d += d;
              mean_dn += d * n[r * cols + c];
            }
            mean_d /= T(cols);
            mean_dn /= T(cols);
            const T inv = cache->inv_std[r];
            for (std::size_t c = 0; c < cols; ++c) {
              const T d = grad[r * cols + c] * g[c];
              gx[r * cols + c] += inv * (d - mean_d - n[r * cols + c] * mean_dn);
            }
          }
        }
      });
}

template <typename T>
Var Graph<T>::dropout(Var x, Tensor<T> mask) {
  const Tensor<T>& xv = value(x);
  if (mask.size() != xv.size()) {
    throw ShapeError("dropout: mask " + shape_string(mask.shape()) + " does not match " + describe(x));
  }
  mask.reshape(xv.shape());
  Var m = constant(std::move(mask));
  Var v = multiply(x, m);
  node(v).kind = "dropout";
  return v;
}

template <typename T>
Var Graph<T>::cross_entropy_with_logits(Var logits, std::vector<std::size_t> targets) {
  const Tensor<T>& lv = value(logits);
  if (targets.size() != lv.rows()) {
    throw ShapeError("cross_entropy_with_logits: " + std::to_string(targets.size()) + " targets for " +
                     describe(logits));
  }
  for (std::size_t t : targets) {
    if (t >= lv.cols()) throw ShapeError("cross_entropy_with_logits: target " + std::to_string(t) + " out of range");
  }
  const std::size_t il = logits.id;
  auto probs = std::make_shared<Tensor<T>>();
  auto tgt = std::make_shared<const std::vector<std::size_t>>(std::move(targets));
  return emit(
      "cross_entropy_with_logits", {logits},
      [this, il, probs, tgt](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{il});
        const std::size_t rows = x.rows(), cols = x.cols();
        ensure_shape(out, {rows, 1});
        ensure_shape(*probs, x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xr = x.data() + r * cols;
          T* p = probs->data() + r * cols;
          const T mx = *std::max_element(xr, xr + cols);
          T total = 0;
          for (std::size_t c = 0; c < cols; ++c) total += (p[c] = std::exp(xr[c] - mx));
          for (std::size_t c = 0; c < cols; ++c) p[c] /= total;
          out[r] = mx + std::log(total) - xr[(*tgt)[r]];
        }
      },
      [this, il, probs, tgt](const Tensor<T>& g) {
        Tensor<T>& gx = grad_slot(il);
        const std::size_t cols = gx.cols();
        for (std::size_t r = 0; r < gx.rows(); ++r) {
          const T gr = g[r];
          if (gr == T(0)) continue;
          for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += gr * (*probs)[r * cols + c];
          gx[r * cols + (*tgt)[r]] -= gr;
        }
      });
}

template <typename T>
Var Graph<T>::sum(Var a) {
  const std::size_t ia = a.id;
  return emit(
      "sum", {a},
      [this, ia](Tensor<T>& out) {
        const Tensor<T>& x = value(Var{ia});
        ensure_shape(out, {1, 1});
        T total = 0;
        for (T v : x.values()) total += v;
        out[0] = total;
      },
      [this, ia](const Tensor<T>& g) {
        Tensor<T>& gx = grad_slot(ia);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
      });
}

template <typename T>
Tensor<T> make_dropout_mask(Shape shape, double rate, CounterRng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  Tensor<T> mask(std::move(shape));
  const T keep = T(1.0 / (1.0 - rate));
  for (T& v : mask.values()) v = rng.uniform() < rate ? T(0) : keep;
  return mask;
}

template <typename T>
std::map<std::string, Tensor<T>> evaluate(Graph<T>& graph, const std::map<std::string, Tensor<T>>& inputs) {
  for (const auto& [name, value] : inputs) graph.set_input(name, value);
  graph.forward();
  std::map<std::string, Tensor<T>> out;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    Var v{i};
    const std::string& kind = graph.kind(v);
    if (!graph.name(v).empty() && kind != "input" && kind != "parameter" && kind != "constant") {
      out[graph.name(v)] = graph.value(v);
    }
  }
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> gradients(Graph<T>& graph, Var loss) {
  graph.backward(loss);
  std::map<std::string, Tensor<T>> out;
  for (Var p : graph.parameters()) {
    auto it = out.find(graph.name(p));
    if (it == out.end()) {
      out.emplace(graph.name(p), graph.grad(p));
    } else {
      // Same tensor bound twice: gradients add.
      Tensor<T> g = graph.grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  return out;
}

std::map<std::string, Tensor<double>> numeric_gradients(Graph<double>& graph, Var loss, double step) {
  std::map<std::string, Tensor<double>> out;
  std::map<const Tensor<double>*, bool> seen;
  for (Var p : graph.parameters()) {
    auto& storage = const_cast<Tensor<double>&>(graph.value(p));
    if (seen[&storage]) continue;
    seen[&storage] = true;
    Tensor<double> numeric(storage.shape());
    for (std::size_t i = 0; i < storage.size(); ++i) {
      const double original = storage[i];
      storage[i] = original + step;
      graph.forward();
      const double up = graph.value(loss)[0];
      storage[i] = original - step;
      graph.forward();
      const double down = graph.value(loss)[0];
      storage[i] = original;
      numeric[i] = (up - down) / (2.0 * step);
    }
    out.emplace(graph.name(p), std::move(numeric));
  }
  graph.forward();
  return out;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

GradientCheck finite_difference_check(Graph<double>& graph, Var loss, double step, double floor) {
  auto analytic = gradients(graph, loss);
  auto numeric = numeric_gradients(graph, loss, step);
  GradientCheck report;
  for (const auto& [name, n] : numeric) {
    const double err = max_relative_error(analytic.at(name).values(), n.values(), floor);
    report.per_parameter[name] = err;
    if (err >= report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_parameter = name;
    }
  }
  return report;
}

template class Graph<float>;
template class Graph<double>;
template Tensor<float> make_dropout_mask<float>(Shape, double, CounterRng&);
template Tensor<double> make_dropout_mask<double>(Shape, double, CounterRng&);
template std::map<std::string, Tensor<float>> evaluate(Graph<float>&, const std::map<std::string, Tensor<float>>&);
template std::map<std::string, Tensor<double>> evaluate(Graph<double>&, const std::map<std::string, Tensor<double>>&);
template std::map<std::string, Tensor<float>> gradients(Graph<float>&, Var);
template std::map<std::string, Tensor<double>> gradients(Graph<double>&, Var);

}  // namespace nmt
