#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "anyglyph/tensor.hpp"

namespace anyglyph {

/// A named trainable (or frozen) tensor. Gradients from Tape::backward are
/// accumulated into `grad` for trainable parameters only.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  const std::vector<int>& dims() const;
  int dim(std::size_t i) const { return dims().at(i); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order; backward() walks
/// them in reverse, so the recorded program is always topologically sorted.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf that collects a gradient (used for input-gradient checks).
  Var input(Tensor value);
  /// Parameter leaf. Frozen parameters become constants. Reusing the same
  /// parameter within one tape returns the same node.
  Var param(Parameter& p);

  Var record(Tensor value, bool requires_grad, Backward backward);

  /// Seeds d(out)/d(out) = 1 for a single-element output, back-propagates, and
  /// adds leaf gradients into the trainable parameters' `grad` tensors.
  void backward(const Var& out);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Tensor& grad(int id) const;
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Adds `g` into the gradient of node `id` (no-op for nodes without grad).
  void accumulate(int id, const Tensor& g);
  void accumulate(int id, const Eigen::Ref<const Tensor::Vector>& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<Parameter*, int> param_nodes_;
  Tensor empty_;
};

/// Differentiable operations over Var. All tensors are double precision.
namespace ag {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var sum(const Var& a);
Var mean(const Var& a);
Var square(const Var& a);
Var abs(const Var& a);
Var silu(const Var& a);
Var tanh(const Var& a);
Var clamp(const Var& a, double lo, double hi);

/// Mean squared error over all elements.
Var mse(const Var& a, const Var& b);
/// Mean absolute error over all elements.
Var l1(const Var& a, const Var& b);

Var reshape(const Var& a, std::vector<int> dims);
/// {m, n} -> {n, m}.
Var transpose(const Var& a);
/// out = op(a) * op(b) for rank-2 operands.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

/// Adds b[c] to every element of channel c (b has dims {C}, a has C as dims[0]).
Var add_channel_bias(const Var& a, const Var& b);
/// Adds b (dims {d}) to every row of a (dims {N, d}).
Var add_row_bias(const Var& a, const Var& b);

/// 2-D convolution, x {Cin, H, W}, w {Cout, Cin, k, k}, optional bias {Cout}.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2x(const Var& x);
Var avg_pool2x(const Var& x);
/// Concatenates along dims[0].
Var concat(const Var& a, const Var& b);

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Normalises each row of x {N, d}.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& x);

/// Row lookup: table {V, d}, ids -> {ids.size(), d}.
Var embedding(const Var& table, const std::vector<int>& ids);
/// out[i] = a[index[i]] with the given output dims; gradient scatters back.
Var gather(const Var& a, std::vector<Eigen::Index> index, std::vector<int> dims);

}  // namespace ag

inline Var operator+(const Var& a, const Var& b) { return ag::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ag::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ag::mul(a, b); }
inline Var operator*(double s, const Var& a) { return ag::scale(a, s); }

}  // namespace anyglyph
