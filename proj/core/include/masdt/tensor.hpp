#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "masdt/rng.hpp"

namespace masdt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Gradients;

// One node of the recorded computation graph. Nodes are created in forward
// order; `parents` are the op inputs and `backward` scatters this node's
// output gradient into the parents' buffers.
struct Node {
  Shape shape;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const std::vector<double>& grad_out, Gradients& grads)> backward;
  const char* op = "leaf";
};

// Dense n-dimensional array of 64-bit floats with value semantics over a
// shared graph node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const;
  bool requires_grad() const;
  void set_requires_grad(bool value);

  const std::vector<double>& values() const;
  // Mutable access to a leaf's storage (parameter updates). Throws on
  // non-leaf nodes: op outputs are immutable once recorded.
  std::vector<double>& values_mut();

  double at(std::size_t i) const;
  double at2(std::size_t r, std::size_t c) const;
  // Scalar extraction; throws if not a 1-element tensor or not finite.
  double item() const;
  void assert_finite(const std::string& what) const;

  // Copies values into a fresh leaf, cutting the graph.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> node);

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

// Gradient map produced by backward(): node -> gradient buffer. Leaves that
// did not participate in the loss read back as zeros.
class Gradients {
 public:
  Tensor wrt(const Tensor& t) const;
  bool contains(const Tensor& t) const;

  std::vector<double>& buffer(const std::shared_ptr<Node>& node);
  const std::vector<double>* find(const Node* node) const;

  // Drops every buffer except those of `keep`. Call after each accumulating
  // sweep so buffers never outlive their graph (freed node addresses recycle).
  void retain(const std::vector<Tensor>& keep);

 private:
  std::unordered_map<const Node*, std::vector<double>> bufs_;
};

// Reverse-mode sweep from a scalar loss. Visits each reachable node exactly
// once in reverse topological order.
Gradients backward(const Tensor& loss);

// Same sweep, accumulating into an existing map. Lets a training loop sum
// per-sample gradients without keeping every sample graph alive.
void backward_into(const Tensor& loss, Gradients& grads);

// ---- Differentiable ops ------------------------------------------------

// add: same shape, or b broadcast as a single row over a's rows, or b scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor mul(const Tensor& a, double s);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor gelu(const Tensor& a);          // tanh approximation
Tensor sigmoid(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-6);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// Row selection / assembly on 2-D tensors.
Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx);
Tensor slice_rows(const Tensor& a, std::size_t first, std::size_t count);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& a, std::size_t first, std::size_t count);
Tensor concat_cols(const Tensor& a, const Tensor& b);

// Full-length sequence from visible rows: output row r = visible[i] where
// visible_idx[i] == r, and fill_row (1 x D) everywhere else.
Tensor assemble_rows(const Tensor& visible, const std::vector<std::size_t>& visible_idx,
                     const Tensor& fill_row, std::size_t total_rows);

// Element permutation/selection: out.values[i] = a.values[index_map[i]].
Tensor gather_elements(const Tensor& a, const std::vector<std::size_t>& index_map, Shape out_shape);

enum class Mode { kTrain, kEval };

// Inverted dropout; identity in eval mode.
Tensor dropout(const Tensor& a, double rate, Mode mode, Rng& rng);
// Stochastic depth on a whole residual branch: zero with probability `rate`
// in train mode, else scaled by 1/(1-rate); identity in eval mode.
Tensor drop_path(const Tensor& a, double rate, Mode mode, Rng& rng);

// ---- Gradient checking ---------------------------------------------------

// Central-difference check of d f(inputs) / d inputs against backward().
// f must return a scalar tensor. Returns the worst relative error over all
// coordinates of all inputs.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double eps = 1e-5);

}  // namespace masdt
