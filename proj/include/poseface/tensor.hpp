#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "poseface/errors.hpp"

namespace poseface {

class Tape;

using Shape = std::vector<std::size_t>;

// Dense row-major tensor of doubles.  Copies are shallow: they share the
// value buffer and, when gradients are enabled, the gradient buffer, so a
// parameter handed to an optimizer and to a forward pass is one object.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }
  bool is_matrix() const { return shape_.size() == 2; }

  std::size_t rows() const;
  std::size_t cols() const;

  // Scalar access; throws ShapeError unless the tensor holds exactly one value.
  double value() const;

  double operator()(std::size_t r, std::size_t c) const;
  double& at(std::size_t r, std::size_t c);

  const std::vector<double>& data() const;
  std::vector<double>& data();

  bool requires_grad() const { return requires_grad_; }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Deep copy of the values; the copy tracks gradients only when asked.
  Tensor clone(bool requires_grad = false) const;

  // Stable identity of the underlying buffer, used to recognize repeated
  // uses of one parameter on a tape.
  const void* id() const { return data_.get(); }

 private:
  friend class Tape;

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  bool requires_grad_ = false;

  const Tape* tape_ = nullptr;  // tape that produced this tensor, if any
  int node_ = -1;
};

// Gradients keyed by the tensors that received them in a backward pass.
class GradientMap {
 public:
  const std::vector<double>* find(const Tensor& t) const;
  const std::vector<double>& at(const Tensor& t) const;

 private:
  friend class Tape;
  std::unordered_map<const void*, std::vector<double>> by_id_;
};

// Reverse-mode tape.  Operations record a node whenever an input is being
// tracked; backward() walks the nodes last-to-first and accumulates
// d(loss)/d(tensor) into every tensor that requires gradients.  A tape must
// only be used from one thread.
class Tape {
 public:
  explicit Tape(bool check_finite = true);

  // Argument clamp applied inside acos_clamped; its derivative is taken
  // through the clamp, which is the one deliberate gradient bias here.
  static constexpr double kAcosClamp = 1e-7;
  // Norm below which a row or column cannot be normalized.
  static constexpr double kNormFloor = 1e-12;

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  // Adds v to every row of m (explicit bias primitive, not a broadcast rule).
  Tensor add_row_vector(const Tensor& m, const Tensor& v);
  Tensor relu(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor exp(const Tensor& a);
  Tensor log(const Tensor& a);
  Tensor cos(const Tensor& a);
  Tensor acos_clamped(const Tensor& a);
  Tensor sum(const Tensor& a);
  // Frobenius norm of a matrix / Euclidean norm of a vector.  The gradient
  // at an exactly zero input is defined as zero.
  Tensor norm(const Tensor& a);
  Tensor row_norms(const Tensor& m);
  Tensor l2_normalize_rows(const Tensor& m);
  Tensor l2_normalize_cols(const Tensor& m);
  // out[i] = m[i, idx[i]]
  Tensor gather_columns(const Tensor& m, const std::vector<std::size_t>& idx);
  // copy of m with m[i, idx[i]] replaced by v[i]
  Tensor scatter_replace(const Tensor& m, const std::vector<std::size_t>& idx, const Tensor& v);
  // Row-wise log(sum(exp(x))) with max subtraction.
  Tensor logsumexp_rows(const Tensor& m);

  // Backpropagates from a scalar loss recorded on this tape.  Gradients
  // accumulate additively across fan-out and across repeated backward calls;
  // callers zero parameter gradients between optimizer steps.
  GradientMap backward(const Tensor& loss);

  std::size_t node_count() const { return nodes_.size(); }

 private:
  using GradBuffers = std::vector<std::vector<double>>;
  using PullFn = std::function<void(const std::vector<double>&, GradBuffers&)>;

  struct Node {
    std::size_t size = 0;
    std::shared_ptr<std::vector<double>> sink;
    PullFn pull;
  };

  int track(const Tensor& t);
  Tensor record(Shape shape, std::vector<double> values, PullFn pull);
  void check_input(const char* op, const Tensor& t) const;
  void check_output(const char* op, const std::vector<double>& v) const;

  bool check_finite_;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> leaves_;
};

// Central-difference gradient check.  `f` must build a scalar loss from `x`
// on the tape it is given.  Returns the maximum relative error over all
// coordinates, with denominator max(1, |analytic|, |numeric|).
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                  double step = 1e-6);

// SGD with classical momentum and decoupled-from-nothing weight decay:
//   v <- grad + weight_decay * p + momentum * v
//   p <- p - lr(epoch) * v
// The schedule lists (epoch, learning_rate) drop points; lr(e) is the rate of
// the last point with epoch <= e, or `learning_rate` before the first point.
struct SgdConfig {
  double learning_rate = 0.1;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::vector<std::pair<int, double>> schedule;

  void validate() const;
  double lr_at(int epoch) const;
};

class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, SgdConfig config);

  void step(int epoch);
  void zero_grad();
  const SgdConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  SgdConfig config_;
};

}  // namespace poseface
