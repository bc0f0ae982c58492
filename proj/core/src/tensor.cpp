#include "masdt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace masdt {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
  }
}

void check_finite_buf(const std::vector<double>& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite value");
  }
}

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

std::shared_ptr<Node> make_op(const char* op, Shape shape, std::vector<double> values,
                              std::vector<std::shared_ptr<Node>> parents,
                              std::function<void(const std::vector<double>&, Gradients&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->parents = std::move(parents);
  n->op = op;
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backward = std::move(backward);
  return n;
}

const std::vector<double>& vals(const Tensor& t) { return t.values(); }

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + shape_str(t.shape()));
}

// Treat 1-D tensors as a single row for the row-wise ops.
std::pair<std::size_t, std::size_t> rows_cols(const Tensor& t, const char* op) {
  if (t.ndim() == 1) return {1, t.dim(0)};
  if (t.ndim() == 2) return {t.dim(0), t.dim(1)};
  throw std::invalid_argument(std::string(op) + ": expected 1-D or 2-D tensor, got " + shape_str(t.shape()));
}

}  // namespace

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  if (!std::isfinite(value)) throw std::invalid_argument("Tensor::full: non-finite value");
  std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  check_finite_buf(values, "Tensor::from_data");
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->values.size() : 0; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw std::invalid_argument("axis out of range");
  return s[axis];
}

std::size_t Tensor::ndim() const { return shape().size(); }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_) throw std::logic_error("undefined tensor");
  if (!node_->parents.empty()) throw std::logic_error("requires_grad is settable on leaves only");
  node_->requires_grad = value;
}

const std::vector<double>& Tensor::values() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->values;
}

std::vector<double>& Tensor::values_mut() {
  if (!node_) throw std::logic_error("undefined tensor");
  if (!node_->parents.empty()) throw std::logic_error("op outputs are immutable");
  return node_->values;
}

double Tensor::at(std::size_t i) const {
  const auto& v = values();
  if (i >= v.size()) throw std::out_of_range("tensor index out of range");
  return v[i];
}

double Tensor::at2(std::size_t r, std::size_t c) const {
  require_2d(*this, "at2");
  if (r >= dim(0) || c >= dim(1)) throw std::out_of_range("tensor index out of range");
  return values()[r * dim(1) + c];
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " elements");
  const double v = values()[0];
  if (!std::isfinite(v)) throw std::runtime_error("item(): non-finite value");
  return v;
}

void Tensor::assert_finite(const std::string& what) const {
  for (double x : values()) {
    if (!std::isfinite(x)) throw std::runtime_error(what + ": non-finite value in tensor " + shape_str(shape()));
  }
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(shape(), values(), false));
}

Tensor Tensor::wrap(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

// ---- Gradients -----------------------------------------------------------

std::vector<double>& Gradients::buffer(const std::shared_ptr<Node>& node) {
  auto it = bufs_.find(node.get());
  if (it == bufs_.end()) {
    it = bufs_.emplace(node.get(), std::vector<double>(node->values.size(), 0.0)).first;
  }
  return it->second;
}

const std::vector<double>* Gradients::find(const Node* node) const {
  auto it = bufs_.find(node);
  return it == bufs_.end() ? nullptr : &it->second;
}

bool Gradients::contains(const Tensor& t) const { return find(t.node().get()) != nullptr; }

Tensor Gradients::wrt(const Tensor& t) const {
  const auto* buf = find(t.node().get());
  if (!buf) return Tensor::zeros(t.shape());
  return Tensor::from_data(t.shape(), *buf);
}

void Gradients::retain(const std::vector<Tensor>& keep) {
  std::unordered_set<const Node*> keep_set;
  keep_set.reserve(keep.size());
  for (const auto& t : keep) keep_set.insert(t.node().get());
  for (auto it = bufs_.begin(); it != bufs_.end();) {
    it = keep_set.count(it->first) ? std::next(it) : bufs_.erase(it);
  }
}

// ---- backward ------------------------------------------------------------

Gradients backward(const Tensor& loss) {
  Gradients grads;
  backward_into(loss, grads);
  return grads;
}

void backward_into(const Tensor& loss, Gradients& grads) {
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS over grad-requiring parents; the result is a
  // topological order with each node visited exactly once.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  grads.buffer(loss.node())[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    const auto* g = grads.find(n);
    if (!g) continue;
    n->backward(*g, grads);
  }
}

// ---- elementwise ops -------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& av = vals(a);
  const auto& bv = vals(b);
  auto an = a.node();
  auto bn = b.node();

  if (a.shape() == b.shape()) {
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    return Tensor::wrap(make_op("add", a.shape(), std::move(out), {an, bn},
                                [an, bn](const std::vector<double>& g, Gradients& grads) {
                                  if (an->requires_grad) {
                                    auto& ga = grads.buffer(an);
                                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                  }
                                  if (bn->requires_grad) {
                                    auto& gb = grads.buffer(bn);
                                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                                  }
                                }));
  }

  // b broadcast across a's rows: [N x D] + [1 x D] or [N x D] + [D].
  auto [rows, cols] = rows_cols(a, "add");
  std::size_t bcols = b.numel();
  bool b_is_row = (b.ndim() == 1 && bcols == cols) ||
                  (b.ndim() == 2 && b.dim(0) == 1 && b.dim(1) == cols);
  if (b_is_row && rows >= 1) {
    std::vector<double> out(av.size());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = av[r * cols + c] + bv[c];
    return Tensor::wrap(make_op("add_rowb", a.shape(), std::move(out), {an, bn},
                                [an, bn, rows = rows, cols = cols](const std::vector<double>& g, Gradients& grads) {
                                  if (an->requires_grad) {
                                    auto& ga = grads.buffer(an);
                                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                  }
                                  if (bn->requires_grad) {
                                    auto& gb = grads.buffer(bn);
                                    for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
                                  }
                                }));
  }
  if (b.numel() == 1) {
    const double s = bv[0];
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + s;
    return Tensor::wrap(make_op("add_scalar", a.shape(), std::move(out), {an, bn},
                                [an, bn](const std::vector<double>& g, Gradients& grads) {
                                  if (an->requires_grad) {
                                    auto& ga = grads.buffer(an);
                                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                  }
                                  if (bn->requires_grad) {
                                    auto& gb = grads.buffer(bn);
                                    for (double gi : g) gb[0] += gi;
                                  }
                                }));
  }
  throw std::invalid_argument("add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, double b) {
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + b;
  return Tensor::wrap(make_op("add_const", a.shape(), std::move(out), {an},
                              [an](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                              }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto& av = vals(a);
  const auto& bv = vals(b);
  auto an = a.node();
  auto bn = b.node();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return Tensor::wrap(make_op("sub", a.shape(), std::move(out), {an, bn},
                              [an, bn](const std::vector<double>& g, Gradients& grads) {
                                if (an->requires_grad) {
                                  auto& ga = grads.buffer(an);
                                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                }
                                if (bn->requires_grad) {
                                  auto& gb = grads.buffer(bn);
                                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                                }
                              }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const auto& av = vals(a);
  const auto& bv = vals(b);
  auto an = a.node();
  auto bn = b.node();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return Tensor::wrap(make_op("mul", a.shape(), std::move(out), {an, bn},
                              [an, bn](const std::vector<double>& g, Gradients& grads) {
                                if (an->requires_grad) {
                                  auto& ga = grads.buffer(an);
                                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->values[i];
                                }
                                if (bn->requires_grad) {
                                  auto& gb = grads.buffer(bn);
                                  for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->values[i];
                                }
                              }));
}

Tensor mul(const Tensor& a, double s) {
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * s;
  return Tensor::wrap(make_op("scale", a.shape(), std::move(out), {an},
                              [an, s](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
                              }));
}

// ---- matrix ops ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto& av = vals(a);
  const auto& bv = vals(b);
  auto an = a.node();
  auto bn = b.node();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = av.data() + i * k;
    double* crow = out.data() + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double aval = arow[l];
      const double* brow = bv.data() + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aval * brow[j];
    }
  }
  return Tensor::wrap(make_op("matmul", {m, n}, std::move(out), {an, bn},
                              [an, bn, m, k, n](const std::vector<double>& g, Gradients& grads) {
                                if (an->requires_grad) {
                                  // dA = dC * B^T
                                  auto& ga = grads.buffer(an);
                                  const auto& bvv = bn->values;
                                  for (std::size_t i = 0; i < m; ++i) {
                                    const double* grow = g.data() + i * n;
                                    double* garow = ga.data() + i * k;
                                    for (std::size_t l = 0; l < k; ++l) {
                                      const double* brow = bvv.data() + l * n;
                                      double acc = 0.0;
                                      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                                      garow[l] += acc;
                                    }
                                  }
                                }
                                if (bn->requires_grad) {
                                  // dB = A^T * dC
                                  auto& gb = grads.buffer(bn);
                                  const auto& avv = an->values;
                                  for (std::size_t i = 0; i < m; ++i) {
                                    const double* arow = avv.data() + i * k;
                                    const double* grow = g.data() + i * n;
                                    for (std::size_t l = 0; l < k; ++l) {
                                      const double aval = arow[l];
                                      double* gbrow = gb.data() + l * n;
                                      for (std::size_t j = 0; j < n; ++j) gbrow[j] += aval * grow[j];
                                    }
                                  }
                                }
                              }));
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return Tensor::wrap(make_op("transpose", {c, r}, std::move(out), {an},
                              [an, r, c](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < r; ++i)
                                  for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                              }));
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != a.numel()) {
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto an = a.node();
  return Tensor::wrap(make_op("reshape", std::move(shape), vals(a), {an},
                              [an](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                              }));
}

// ---- unary ops -------------------------------------------------------------

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& a) {
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  }
  return Tensor::wrap(make_op("gelu", a.shape(), std::move(out), {an},
                              [an](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                  const double x = an->values[i];
                                  const double u = kGeluC * (x + kGeluA * x * x * x);
                                  const double t = std::tanh(u);
                                  const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
                                  const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
                                  ga[i] += g[i] * d;
                                }
                              }));
}

Tensor sigmoid(const Tensor& a) {
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double x = av[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  auto on = make_op("sigmoid", a.shape(), std::move(out), {an}, nullptr);
  if (on->requires_grad) {
    auto self = on.get();
    on->backward = [an, self](const std::vector<double>& g, Gradients& grads) {
      auto& ga = grads.buffer(an);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = self->values[i];
        ga[i] += g[i] * s * (1.0 - s);
      }
    };
  }
  return Tensor::wrap(std::move(on));
}

Tensor log_op(const Tensor& a) {
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] <= 0.0) throw std::invalid_argument("log: non-positive input");
    out[i] = std::log(av[i]);
  }
  return Tensor::wrap(make_op("log", a.shape(), std::move(out), {an},
                              [an](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / an->values[i];
                              }));
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::min(hi, std::max(lo, av[i]));
  return Tensor::wrap(make_op("clamp", a.shape(), std::move(out), {an},
                              [an, lo, hi](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < g.size(); ++i) {
                                  const double x = an->values[i];
                                  if (x > lo && x < hi) ga[i] += g[i];
                                }
                              }));
}

// ---- row-wise ops ------------------------------------------------------------

namespace {

Tensor softmax_rows(const Tensor& a) {
  auto [rows, cols] = rows_cols(a, "softmax");
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(av.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = out.data() + r * cols;
    double mx = x[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      sum += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= sum;
  }
  auto on = make_op("softmax", a.shape(), std::move(out), {an}, nullptr);
  if (on->requires_grad) {
    auto self = on.get();
    on->backward = [an, self, rows = rows, cols = cols](const std::vector<double>& g, Gradients& grads) {
      auto& ga = grads.buffer(an);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self->values.data() + r * cols;
        const double* gr = g.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * y[c];
        double* gar = ga.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) gar[c] += y[c] * (gr[c] - dot);
      }
    };
  }
  return Tensor::wrap(std::move(on));
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  if (a.ndim() == 1) {
    if (axis != 0) throw std::invalid_argument("softmax: axis out of range for 1-D tensor");
    return softmax_rows(a);
  }
  require_2d(a, "softmax");
  if (axis == 1) return softmax_rows(a);
  if (axis == 0) return transpose(softmax_rows(transpose(a)));
  throw std::invalid_argument("softmax: axis out of range");
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  auto [rows, cols] = rows_cols(x, "layer_norm");
  if (gamma.numel() != cols || beta.numel() != cols) {
    throw std::invalid_argument("layer_norm: gamma/beta must match last axis extent " + std::to_string(cols));
  }
  if (eps < 0) throw std::invalid_argument("layer_norm: eps must be nonnegative");
  const auto& xv = vals(x);
  const auto& gv = vals(gamma);
  const auto& bv = vals(beta);
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();

  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xr[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[r] = istd;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mean) * istd;
      xhat[r * cols + c] = h;
      out[r * cols + c] = gv[c] * h + bv[c];
    }
  }
  return Tensor::wrap(make_op(
      "layer_norm", x.shape(), std::move(out), {xn, gn, bn},
      [xn, gn, bn, rows = rows, cols = cols, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const std::vector<double>& g, Gradients& grads) {
        const auto& gv = gn->values;
        if (gn->requires_grad) {
          auto& gg = grads.buffer(gn);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gg[c] += g[r * cols + c] * xhat[r * cols + c];
        }
        if (bn->requires_grad) {
          auto& gb = grads.buffer(bn);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
        }
        if (xn->requires_grad) {
          auto& gx = grads.buffer(xn);
          const double inv_cols = 1.0 / static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            const double* gr = g.data() + r * cols;
            const double* hr = xhat.data() + r * cols;
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double dh = gr[c] * gv[c];
              mean_dh += dh;
              mean_dh_h += dh * hr[c];
            }
            mean_dh *= inv_cols;
            mean_dh_h *= inv_cols;
            for (std::size_t c = 0; c < cols; ++c) {
              const double dh = gr[c] * gv[c];
              gx[r * cols + c] += inv_std[r] * (dh - mean_dh - hr[c] * mean_dh_h);
            }
          }
        }
      }));
}

// ---- reductions ------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  const auto& av = vals(a);
  auto an = a.node();
  double s = 0.0;
  for (double x : av) s += x;
  return Tensor::wrap(make_op("sum", {1}, {s}, {an},
                              [an](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (double& x : ga) x += g[0];
                              }));
}

Tensor mean_all(const Tensor& a) {
  const auto& av = vals(a);
  auto an = a.node();
  double s = 0.0;
  for (double x : av) s += x;
  const double inv = 1.0 / static_cast<double>(av.size());
  return Tensor::wrap(make_op("mean", {1}, {s * inv}, {an},
                              [an, inv](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                const double gi = g[0] * inv;
                                for (double& x : ga) x += gi;
                              }));
}

// ---- structure ops -----------------------------------------------------------

Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  require_2d(a, "gather_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  for (std::size_t i : idx) {
    if (i >= rows) throw std::invalid_argument("gather_rows: index " + std::to_string(i) + " out of range");
  }
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(idx.size() * cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(av.data() + idx[r] * cols, cols, out.data() + r * cols);
  }
  return Tensor::wrap(make_op("gather_rows", {idx.size(), cols}, std::move(out), {an},
                              [an, idx, cols](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t r = 0; r < idx.size(); ++r)
                                  for (std::size_t c = 0; c < cols; ++c) ga[idx[r] * cols + c] += g[r * cols + c];
                              }));
}

Tensor slice_rows(const Tensor& a, std::size_t first, std::size_t count) {
  require_2d(a, "slice_rows");
  if (first + count > a.dim(0)) throw std::invalid_argument("slice_rows: range out of bounds");
  const std::size_t cols = a.dim(1);
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(av.begin() + first * cols, av.begin() + (first + count) * cols);
  return Tensor::wrap(make_op("slice_rows", {count, cols}, std::move(out), {an},
                              [an, first, cols](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[first * cols + i] += g[i];
                              }));
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_rows");
  require_2d(b, "concat_rows");
  if (a.dim(1) != b.dim(1)) throw std::invalid_argument("concat_rows: column counts differ");
  const std::size_t cols = a.dim(1);
  const auto& av = vals(a);
  const auto& bv = vals(b);
  auto an = a.node();
  auto bn = b.node();
  std::vector<double> out;
  out.reserve(av.size() + bv.size());
  out.insert(out.end(), av.begin(), av.end());
  out.insert(out.end(), bv.begin(), bv.end());
  const std::size_t asize = av.size();
  return Tensor::wrap(make_op("concat_rows", {a.dim(0) + b.dim(0), cols}, std::move(out), {an, bn},
                              [an, bn, asize](const std::vector<double>& g, Gradients& grads) {
                                if (an->requires_grad) {
                                  auto& ga = grads.buffer(an);
                                  for (std::size_t i = 0; i < asize; ++i) ga[i] += g[i];
                                }
                                if (bn->requires_grad) {
                                  auto& gb = grads.buffer(bn);
                                  for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[asize + i];
                                }
                              }));
}

Tensor slice_cols(const Tensor& a, std::size_t first, std::size_t count) {
  require_2d(a, "slice_cols");
  if (first + count > a.dim(1)) throw std::invalid_argument("slice_cols: range out of bounds");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> out(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(av.data() + r * cols + first, count, out.data() + r * count);
  return Tensor::wrap(make_op("slice_cols", {rows, count}, std::move(out), {an},
                              [an, first, count, rows, cols](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < count; ++c)
                                    ga[r * cols + first + c] += g[r * count + c];
                              }));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_cols");
  require_2d(b, "concat_cols");
  if (a.dim(0) != b.dim(0)) throw std::invalid_argument("concat_cols: row counts differ");
  const std::size_t rows = a.dim(0), ac = a.dim(1), bc = b.dim(1);
  const auto& av = vals(a);
  const auto& bv = vals(b);
  auto an = a.node();
  auto bn = b.node();
  std::vector<double> out(rows * (ac + bc));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data() + r * ac, ac, out.data() + r * (ac + bc));
    std::copy_n(bv.data() + r * bc, bc, out.data() + r * (ac + bc) + ac);
  }
  return Tensor::wrap(make_op("concat_cols", {rows, ac + bc}, std::move(out), {an, bn},
                              [an, bn, rows, ac, bc](const std::vector<double>& g, Gradients& grads) {
                                if (an->requires_grad) {
                                  auto& ga = grads.buffer(an);
                                  for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t c = 0; c < ac; ++c) ga[r * ac + c] += g[r * (ac + bc) + c];
                                }
                                if (bn->requires_grad) {
                                  auto& gb = grads.buffer(bn);
                                  for (std::size_t r = 0; r < rows; ++r)
                                    for (std::size_t c = 0; c < bc; ++c) gb[r * bc + c] += g[r * (ac + bc) + ac + c];
                                }
                              }));
}

Tensor assemble_rows(const Tensor& visible, const std::vector<std::size_t>& visible_idx,
                     const Tensor& fill_row, std::size_t total_rows) {
  require_2d(visible, "assemble_rows");
  const std::size_t cols = visible.dim(1);
  if (visible.dim(0) != visible_idx.size()) {
    throw std::invalid_argument("assemble_rows: row count does not match index count");
  }
  if (fill_row.numel() != cols) throw std::invalid_argument("assemble_rows: fill row width mismatch");
  std::vector<char> taken(total_rows, 0);
  for (std::size_t i : visible_idx) {
    if (i >= total_rows) throw std::invalid_argument("assemble_rows: index out of range");
    if (taken[i]) throw std::invalid_argument("assemble_rows: duplicate index " + std::to_string(i));
    taken[i] = 1;
  }
  const auto& vv = vals(visible);
  const auto& fv = vals(fill_row);
  auto vn = visible.node();
  auto fn = fill_row.node();
  std::vector<double> out(total_rows * cols);
  for (std::size_t r = 0; r < total_rows; ++r) std::copy_n(fv.data(), cols, out.data() + r * cols);
  for (std::size_t i = 0; i < visible_idx.size(); ++i) {
    std::copy_n(vv.data() + i * cols, cols, out.data() + visible_idx[i] * cols);
  }
  return Tensor::wrap(make_op("assemble_rows", {total_rows, cols}, std::move(out), {vn, fn},
                              [vn, fn, visible_idx, cols, taken = std::move(taken),
                               total_rows](const std::vector<double>& g, Gradients& grads) {
                                if (vn->requires_grad) {
                                  auto& gv = grads.buffer(vn);
                                  for (std::size_t i = 0; i < visible_idx.size(); ++i)
                                    for (std::size_t c = 0; c < cols; ++c)
                                      gv[i * cols + c] += g[visible_idx[i] * cols + c];
                                }
                                if (fn->requires_grad) {
                                  auto& gf = grads.buffer(fn);
                                  for (std::size_t r = 0; r < total_rows; ++r) {
                                    if (taken[r]) continue;
                                    for (std::size_t c = 0; c < cols; ++c) gf[c] += g[r * cols + c];
                                  }
                                }
                              }));
}

Tensor gather_elements(const Tensor& a, const std::vector<std::size_t>& index_map, Shape out_shape) {
  check_shape(out_shape);
  if (shape_numel(out_shape) != index_map.size()) {
    throw std::invalid_argument("gather_elements: index map size does not match output shape");
  }
  const auto& av = vals(a);
  for (std::size_t i : index_map) {
    if (i >= av.size()) throw std::invalid_argument("gather_elements: index out of range");
  }
  auto an = a.node();
  std::vector<double> out(index_map.size());
  for (std::size_t i = 0; i < index_map.size(); ++i) out[i] = av[index_map[i]];
  return Tensor::wrap(make_op("gather_elements", std::move(out_shape), std::move(out), {an},
                              [an, index_map](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < index_map.size(); ++i) ga[index_map[i]] += g[i];
                              }));
}

// ---- stochastic ops ----------------------------------------------------------

Tensor dropout(const Tensor& a, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) return mul(a, 1.0);
  const double scale = 1.0 / (1.0 - rate);
  const auto& av = vals(a);
  auto an = a.node();
  std::vector<double> mask(av.size());
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    mask[i] = rng.uniform() < rate ? 0.0 : scale;
    out[i] = av[i] * mask[i];
  }
  return Tensor::wrap(make_op("dropout", a.shape(), std::move(out), {an},
                              [an, mask = std::move(mask)](const std::vector<double>& g, Gradients& grads) {
                                auto& ga = grads.buffer(an);
                                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
                              }));
}

Tensor drop_path(const Tensor& a, double rate, Mode mode, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("drop_path: rate must be in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) return mul(a, 1.0);
  const bool drop = rng.uniform() < rate;
  return mul(a, drop ? 0.0 : 1.0 / (1.0 - rate));
}

// ---- grad_check ----------------------------------------------------------------

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double eps) {
  for (auto& t : inputs) t.set_requires_grad(true);
  Tensor loss = f(inputs);
  if (loss.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  Gradients grads = backward(loss);

  double worst = 0.0;
  for (auto& t : inputs) {
    Tensor analytic = grads.wrt(t);
    auto& storage = t.values_mut();
    for (std::size_t i = 0; i < storage.size(); ++i) {
      const double saved = storage[i];
      storage[i] = saved + eps;
      const double fp = f(inputs).item();
      storage[i] = saved - eps;
      const double fm = f(inputs).item();
      storage[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic.at(i);
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace masdt
