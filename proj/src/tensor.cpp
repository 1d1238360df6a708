#include "poseface/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

namespace poseface {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return s.empty() ? 0 : n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor operand");
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_matrix(const char* op, const Tensor& t) {
  if (!t.is_matrix()) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

// Accumulates g into dst, allocating it zero-filled on first touch.
void accum(std::vector<double>& dst, std::size_t n, const std::vector<double>& g) {
  if (dst.empty()) dst.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

std::vector<double>& ensure(std::vector<double>& dst, std::size_t n) {
  if (dst.empty()) dst.assign(n, 0.0);
  return dst;
}

}  // namespace

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(values))),
      requires_grad_(requires_grad) {
  if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
  if (shape_numel(shape_) != data_->size()) {
    throw ShapeError("value count " + std::to_string(data_->size()) + " does not match shape " +
                     shape_str(shape_));
  }
  if (requires_grad_) grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  std::size_t n = values.size();
  return Tensor({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({rows, cols}, std::move(values), requires_grad);
}

std::size_t Tensor::rows() const {
  if (!is_matrix()) throw ShapeError("rows(): tensor is not a matrix");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix()) throw ShapeError("cols(): tensor is not a matrix");
  return shape_[1];
}

double Tensor::value() const {
  if (size() != 1) throw ShapeError("value(): tensor is not scalar, shape " + shape_str(shape_));
  return (*data_)[0];
}

double Tensor::operator()(std::size_t r, std::size_t c) const {
  if (!is_matrix() || r >= shape_[0] || c >= shape_[1]) {
    throw ShapeError("matrix index out of range");
  }
  return (*data_)[r * shape_[1] + c];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  if (!is_matrix() || r >= shape_[0] || c >= shape_[1]) {
    throw ShapeError("matrix index out of range");
  }
  return (*data_)[r * shape_[1] + c];
}

const std::vector<double>& Tensor::data() const {
  if (!data_) throw ShapeError("undefined tensor");
  return *data_;
}

std::vector<double>& Tensor::data() {
  if (!data_) throw ShapeError("undefined tensor");
  return *data_;
}

const std::vector<double>& Tensor::grad() const {
  if (!grad_) throw ShapeError("tensor does not track gradients");
  return *grad_;
}

void Tensor::zero_grad() {
  if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  if (!data_) return Tensor();
  return Tensor(shape_, *data_, requires_grad);
}

const std::vector<double>* GradientMap::find(const Tensor& t) const {
  auto it = by_id_.find(t.id());
  return it == by_id_.end() ? nullptr : &it->second;
}

const std::vector<double>& GradientMap::at(const Tensor& t) const {
  const auto* g = find(t);
  if (!g) throw ShapeError("no gradient recorded for this tensor");
  return *g;
}

Tape::Tape(bool check_finite) : check_finite_(check_finite) {}

void Tape::check_input(const char* op, const Tensor& t) const {
  require_defined(op, t);
  if (!check_finite_) return;
  for (double x : t.data()) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite input value");
  }
}

void Tape::check_output(const char* op, const std::vector<double>& v) const {
  if (!check_finite_) return;
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite result");
  }
}

int Tape::track(const Tensor& t) {
  if (t.tape_ == this && t.node_ >= 0) return t.node_;
  if (!t.requires_grad_) return -1;
  auto it = leaves_.find(t.id());
  if (it != leaves_.end()) return it->second;
  int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{t.size(), t.grad_, nullptr});
  leaves_.emplace(t.id(), id);
  return id;
}

Tensor Tape::record(Shape shape, std::vector<double> values, PullFn pull) {
  Tensor out(std::move(shape), std::move(values), /*requires_grad=*/true);
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{out.size(), out.grad_, std::move(pull)});
  return out;
}

GradientMap Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, shape " + shape_str(loss.shape()));
  }
  if (loss.tape_ != this || loss.node_ < 0) {
    throw ShapeError("backward: loss was not produced on this tape");
  }
  GradBuffers grads(nodes_.size());
  grads[static_cast<std::size_t>(loss.node_)] = {1.0};
  for (int i = loss.node_; i >= 0; --i) {
    auto& g = grads[static_cast<std::size_t>(i)];
    if (g.empty()) continue;
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.pull) node.pull(g, grads);
    if (node.sink) {
      auto& sink = *node.sink;
      for (std::size_t k = 0; k < node.size; ++k) sink[k] += g[k];
    }
  }
  GradientMap map;
  for (const auto& [id, node] : leaves_) {
    auto& g = grads[static_cast<std::size_t>(node)];
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(node)].size, 0.0);
    map.by_id_[id] = std::move(g);
  }
  return map;
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  check_input("matmul", a);
  check_input("matmul", b);
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  }
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  std::vector<double> out(r * c);
  {
    ConstMapMat ma(a.data().data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
    ConstMapMat mb(b.data().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
    MapMat mo(out.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    mo.noalias() = ma * mb;
  }
  check_output("matmul", out);
  int pa = track(a), pb = track(b);
  if (pa < 0 && pb < 0) return Tensor({r, c}, std::move(out));
  auto ad = a.data_;
  auto bd = b.data_;
  return record({r, c}, std::move(out), [pa, pb, ad, bd, r, k, c](const std::vector<double>& g,
                                                                  GradBuffers& grads) {
    ConstMapMat mg(g.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    if (pa >= 0) {
      ConstMapMat mb(bd->data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
      MapMat da(ensure(grads[static_cast<std::size_t>(pa)], r * k).data(),
                static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
      da.noalias() += mg * mb.transpose();
    }
    if (pb >= 0) {
      ConstMapMat ma(ad->data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
      MapMat db(ensure(grads[static_cast<std::size_t>(pb)], k * c).data(),
                static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(c));
      db.noalias() += ma.transpose() * mg;
    }
  });
}

Tensor Tape::transpose(const Tensor& a) {
  check_input("transpose", a);
  require_matrix("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  const auto& src = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  }
  int pa = track(a);
  if (pa < 0) return Tensor({c, r}, std::move(out));
  return record({c, r}, std::move(out), [pa, r, c](const std::vector<double>& g, GradBuffers& grads) {
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], r * c);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) da[i * c + j] += g[j * r + i];
    }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  check_input("add", a);
  check_input("add", b);
  require_same_shape("add", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] + b.data()[i];
  int pa = track(a), pb = track(b);
  if (pa < 0 && pb < 0) return Tensor(a.shape(), std::move(out));
  return record(a.shape(), std::move(out), [pa, pb, n](const std::vector<double>& g, GradBuffers& grads) {
    if (pa >= 0) accum(grads[static_cast<std::size_t>(pa)], n, g);
    if (pb >= 0) accum(grads[static_cast<std::size_t>(pb)], n, g);
  });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  check_input("sub", a);
  check_input("sub", b);
  require_same_shape("sub", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] - b.data()[i];
  int pa = track(a), pb = track(b);
  if (pa < 0 && pb < 0) return Tensor(a.shape(), std::move(out));
  return record(a.shape(), std::move(out), [pa, pb, n](const std::vector<double>& g, GradBuffers& grads) {
    if (pa >= 0) accum(grads[static_cast<std::size_t>(pa)], n, g);
    if (pb >= 0) {
      auto& db = ensure(grads[static_cast<std::size_t>(pb)], n);
      for (std::size_t i = 0; i < n; ++i) db[i] -= g[i];
    }
  });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  check_input("mul", a);
  check_input("mul", b);
  require_same_shape("mul", a, b);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * b.data()[i];
  int pa = track(a), pb = track(b);
  if (pa < 0 && pb < 0) return Tensor(a.shape(), std::move(out));
  auto ad = a.data_;
  auto bd = b.data_;
  return record(a.shape(), std::move(out),
                [pa, pb, n, ad, bd](const std::vector<double>& g, GradBuffers& grads) {
    if (pa >= 0) {
      auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
      for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * (*bd)[i];
    }
    if (pb >= 0) {
      auto& db = ensure(grads[static_cast<std::size_t>(pb)], n);
      for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * (*ad)[i];
    }
  });
}

Tensor Tape::scale(const Tensor& a, double factor) {
  check_input("scale", a);
  if (check_finite_ && !std::isfinite(factor)) throw NumericError("scale: non-finite factor");
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] * factor;
  int pa = track(a);
  if (pa < 0) return Tensor(a.shape(), std::move(out));
  return record(a.shape(), std::move(out),
                [pa, n, factor](const std::vector<double>& g, GradBuffers& grads) {
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
    for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * factor;
  });
}

Tensor Tape::add_row_vector(const Tensor& m, const Tensor& v) {
  check_input("add_row_vector", m);
  check_input("add_row_vector", v);
  require_matrix("add_row_vector", m);
  if (v.shape().size() != 1 || v.size() != m.cols()) {
    throw ShapeError("add_row_vector: vector length " + std::to_string(v.size()) +
                     " does not match matrix columns " + std::to_string(m.cols()));
  }
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] + v.data()[j];
  }
  int pm = track(m), pv = track(v);
  if (pm < 0 && pv < 0) return Tensor({r, c}, std::move(out));
  return record({r, c}, std::move(out),
                [pm, pv, r, c](const std::vector<double>& g, GradBuffers& grads) {
    if (pm >= 0) accum(grads[static_cast<std::size_t>(pm)], r * c, g);
    if (pv >= 0) {
      auto& dv = ensure(grads[static_cast<std::size_t>(pv)], c);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) dv[j] += g[i * c + j];
      }
    }
  });
}

Tensor Tape::relu(const Tensor& a) {
  check_input("relu", a);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
  int pa = track(a);
  if (pa < 0) return Tensor(a.shape(), std::move(out));
  auto ad = a.data_;
  return record(a.shape(), std::move(out), [pa, n, ad](const std::vector<double>& g, GradBuffers& grads) {
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
    for (std::size_t i = 0; i < n; ++i) {
      if ((*ad)[i] > 0.0) da[i] += g[i];
    }
  });
}

Tensor Tape::sigmoid(const Tensor& a) {
  check_input("sigmoid", a);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = a.data()[i];
    if (x >= 0.0) {
      out[i] = 1.0 / (1.0 + std::exp(-x));
    } else {
      double e = std::exp(x);
      out[i] = e / (1.0 + e);
    }
  }
  int pa = track(a);
  if (pa < 0) return Tensor(a.shape(), std::move(out));
  auto y = std::make_shared<std::vector<double>>(out);
  return record(a.shape(), std::move(out), [pa, n, y](const std::vector<double>& g, GradBuffers& grads) {
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
    for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * (*y)[i] * (1.0 - (*y)[i]);
  });
}

Tensor Tape::exp(const Tensor& a) {
  check_input("exp", a);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a.data()[i]);
  check_output("exp", out);
  int pa = track(a);
  if (pa < 0) return Tensor(a.shape(), std::move(out));
  auto y = std::make_shared<std::vector<double>>(out);
  return record(a.shape(), std::move(out), [pa, n, y](const std::vector<double>& g, GradBuffers& grads) {
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
    for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * (*y)[i];
  });
}

Tensor Tape::log(const Tensor& a) {
  check_input("log", a);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::log(a.data()[i]);
  check_output("log", out);
  int pa = track(a);
  if (pa < 0) return Tensor(a.shape(), std::move(out));
  auto ad = a.data_;
  return record(a.shape(), std::move(out), [pa, n, ad](const std::vector<double>& g, GradBuffers& grads) {
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
    for (std::size_t i = 0; i < n; ++i) da[i] += g[i] / (*ad)[i];
  });
}

Tensor Tape::cos(const Tensor& a) {
  check_input("cos", a);
  const std::size_t n = a.size();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = std::cos(a.data()[i]);
  int pa = track(a);
  if (pa < 0) return Tensor(a.shape(), std::move(out));
  auto ad = a.data_;
  return record(a.shape(), std::move(out), [pa, n, ad](const std::vector<double>& g, GradBuffers& grads) {
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
    for (std::size_t i = 0; i < n; ++i) da[i] -= g[i] * std::sin((*ad)[i]);
  });
}

Tensor Tape::acos_clamped(const Tensor& a) {
  check_input("acos_clamped", a);
  const std::size_t n = a.size();
  const double lo = -1.0 + kAcosClamp, hi = 1.0 - kAcosClamp;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = std::clamp(a.data()[i], lo, hi);
    out[i] = std::acos(u);
  }
  int pa = track(a);
  if (pa < 0) return Tensor(a.shape(), std::move(out));
  auto ad = a.data_;
  return record(a.shape(), std::move(out),
                [pa, n, ad, lo, hi](const std::vector<double>& g, GradBuffers& grads) {
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
    for (std::size_t i = 0; i < n; ++i) {
      double u = (*ad)[i];
      // Differentiate through the clamp: saturated inputs get zero slope.
      if (u > lo && u < hi) da[i] -= g[i] / std::sqrt(1.0 - u * u);
    }
  });
}

Tensor Tape::sum(const Tensor& a) {
  check_input("sum", a);
  const std::size_t n = a.size();
  double total = 0.0;
  for (double x : a.data()) total += x;
  int pa = track(a);
  if (pa < 0) return Tensor::scalar(total);
  return record({1}, {total}, [pa, n](const std::vector<double>& g, GradBuffers& grads) {
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
    for (std::size_t i = 0; i < n; ++i) da[i] += g[0];
  });
}

Tensor Tape::norm(const Tensor& a) {
  check_input("norm", a);
  const std::size_t n = a.size();
  double sq = 0.0;
  for (double x : a.data()) sq += x * x;
  double nrm = std::sqrt(sq);
  int pa = track(a);
  if (pa < 0) return Tensor::scalar(nrm);
  auto ad = a.data_;
  return record({1}, {nrm}, [pa, n, ad, nrm](const std::vector<double>& g, GradBuffers& grads) {
    if (nrm == 0.0) return;  // gradient at an exact zero is defined as zero
    auto& da = ensure(grads[static_cast<std::size_t>(pa)], n);
    for (std::size_t i = 0; i < n; ++i) da[i] += g[0] * (*ad)[i] / nrm;
  });
}

Tensor Tape::row_norms(const Tensor& m) {
  check_input("row_norms", m);
  require_matrix("row_norms", m);
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double x = m.data()[i * c + j];
      sq += x * x;
    }
    out[i] = std::sqrt(sq);
  }
  int pm = track(m);
  if (pm < 0) return Tensor({r}, std::move(out));
  auto md = m.data_;
  auto y = std::make_shared<std::vector<double>>(out);
  return record({r}, std::move(out), [pm, r, c, md, y](const std::vector<double>& g, GradBuffers& grads) {
    auto& dm = ensure(grads[static_cast<std::size_t>(pm)], r * c);
    for (std::size_t i = 0; i < r; ++i) {
      double nrm = (*y)[i];
      if (nrm == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) dm[i * c + j] += g[i] * (*md)[i * c + j] / nrm;
    }
  });
}

Tensor Tape::l2_normalize_rows(const Tensor& m) {
  check_input("l2_normalize_rows", m);
  require_matrix("l2_normalize_rows", m);
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double x = m.data()[i * c + j];
      sq += x * x;
    }
    double nrm = std::sqrt(sq);
    if (nrm < kNormFloor) {
      throw DegenerateEmbeddingError("l2_normalize_rows: row " + std::to_string(i) +
                                     " has norm below " + std::to_string(kNormFloor));
    }
    norms[i] = nrm;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = m.data()[i * c + j] / nrm;
  }
  int pm = track(m);
  if (pm < 0) return Tensor({r, c}, std::move(out));
  auto y = std::make_shared<std::vector<double>>(out);
  auto nn = std::make_shared<std::vector<double>>(std::move(norms));
  return record({r, c}, std::move(out),
                [pm, r, c, y, nn](const std::vector<double>& g, GradBuffers& grads) {
    auto& dm = ensure(grads[static_cast<std::size_t>(pm)], r * c);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * (*y)[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        dm[i * c + j] += (g[i * c + j] - (*y)[i * c + j] * dot) / (*nn)[i];
      }
    }
  });
}

Tensor Tape::l2_normalize_cols(const Tensor& m) {
  check_input("l2_normalize_cols", m);
  require_matrix("l2_normalize_cols", m);
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  std::vector<double> norms(c);
  for (std::size_t j = 0; j < c; ++j) {
    double sq = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      double x = m.data()[i * c + j];
      sq += x * x;
    }
    double nrm = std::sqrt(sq);
    if (nrm < kNormFloor) {
      throw DegenerateColumnError("l2_normalize_cols: column " + std::to_string(j) +
                                  " has norm below " + std::to_string(kNormFloor));
    }
    norms[j] = nrm;
    for (std::size_t i = 0; i < r; ++i) out[i * c + j] = m.data()[i * c + j] / nrm;
  }
  int pm = track(m);
  if (pm < 0) return Tensor({r, c}, std::move(out));
  auto y = std::make_shared<std::vector<double>>(out);
  auto nn = std::make_shared<std::vector<double>>(std::move(norms));
  return record({r, c}, std::move(out),
                [pm, r, c, y, nn](const std::vector<double>& g, GradBuffers& grads) {
    auto& dm = ensure(grads[static_cast<std::size_t>(pm)], r * c);
    for (std::size_t j = 0; j < c; ++j) {
      double dot = 0.0;
      for (std::size_t i = 0; i < r; ++i) dot += g[i * c + j] * (*y)[i * c + j];
      for (std::size_t i = 0; i < r; ++i) {
        dm[i * c + j] += (g[i * c + j] - (*y)[i * c + j] * dot) / (*nn)[j];
      }
    }
  });
}

Tensor Tape::gather_columns(const Tensor& m, const std::vector<std::size_t>& idx) {
  check_input("gather_columns", m);
  require_matrix("gather_columns", m);
  const std::size_t r = m.rows(), c = m.cols();
  if (idx.size() != r) {
    throw ShapeError("gather_columns: need one index per row, got " + std::to_string(idx.size()) +
                     " for " + std::to_string(r) + " rows");
  }
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] >= c) throw ShapeError("gather_columns: column index out of range");
    out[i] = m.data()[i * c + idx[i]];
  }
  int pm = track(m);
  if (pm < 0) return Tensor({r}, std::move(out));
  auto ix = std::make_shared<std::vector<std::size_t>>(idx);
  return record({r}, std::move(out), [pm, r, c, ix](const std::vector<double>& g, GradBuffers& grads) {
    auto& dm = ensure(grads[static_cast<std::size_t>(pm)], r * c);
    for (std::size_t i = 0; i < r; ++i) dm[i * c + (*ix)[i]] += g[i];
  });
}

Tensor Tape::scatter_replace(const Tensor& m, const std::vector<std::size_t>& idx, const Tensor& v) {
  check_input("scatter_replace", m);
  check_input("scatter_replace", v);
  require_matrix("scatter_replace", m);
  const std::size_t r = m.rows(), c = m.cols();
  if (idx.size() != r || v.shape().size() != 1 || v.size() != r) {
    throw ShapeError("scatter_replace: need one index and one value per row");
  }
  std::vector<double> out = m.data();
  for (std::size_t i = 0; i < r; ++i) {
    if (idx[i] >= c) throw ShapeError("scatter_replace: column index out of range");
    out[i * c + idx[i]] = v.data()[i];
  }
  int pm = track(m), pv = track(v);
  if (pm < 0 && pv < 0) return Tensor({r, c}, std::move(out));
  auto ix = std::make_shared<std::vector<std::size_t>>(idx);
  return record({r, c}, std::move(out),
                [pm, pv, r, c, ix](const std::vector<double>& g, GradBuffers& grads) {
    if (pm >= 0) {
      auto& dm = ensure(grads[static_cast<std::size_t>(pm)], r * c);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          if (j != (*ix)[i]) dm[i * c + j] += g[i * c + j];
        }
      }
    }
    if (pv >= 0) {
      auto& dv = ensure(grads[static_cast<std::size_t>(pv)], r);
      for (std::size_t i = 0; i < r; ++i) dv[i] += g[i * c + (*ix)[i]];
    }
  });
}

Tensor Tape::logsumexp_rows(const Tensor& m) {
  check_input("logsumexp_rows", m);
  require_matrix("logsumexp_rows", m);
  const std::size_t r = m.rows(), c = m.cols();
  if (c == 0) throw ShapeError("logsumexp_rows: matrix has no columns");
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = m.data()[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, m.data()[i * c + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(m.data()[i * c + j] - mx);
    out[i] = mx + std::log(s);
  }
  int pm = track(m);
  if (pm < 0) return Tensor({r}, std::move(out));
  auto md = m.data_;
  auto y = std::make_shared<std::vector<double>>(out);
  return record({r}, std::move(out), [pm, r, c, md, y](const std::vector<double>& g, GradBuffers& grads) {
    auto& dm = ensure(grads[static_cast<std::size_t>(pm)], r * c);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        dm[i * c + j] += g[i] * std::exp((*md)[i * c + j] - (*y)[i]);
      }
    }
  });
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Tensor& x,
                  double step) {
  if (!(step > 0.0)) throw NumericError("grad_check: step must be positive");
  Tensor probe = x.clone(/*requires_grad=*/true);
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor loss = f(tape, probe);
    if (loss.size() != 1) throw ShapeError("grad_check: f must return a scalar");
    tape.backward(loss);
    analytic = probe.grad();
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor plus = x.clone();
    Tensor minus = x.clone();
    plus.data()[i] += step;
    minus.data()[i] -= step;
    Tape tp, tm;
    double fp = f(tp, plus).value();
    double fm = f(tm, minus).value();
    double numeric = (fp - fm) / (2.0 * step);
    double denom = std::max({1.0, std::fabs(analytic[i]), std::fabs(numeric)});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("sgd: learning_rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd: momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("sgd: weight_decay must be non-negative");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (schedule[i].first < 0 || !(schedule[i].second > 0.0)) {
      throw ConfigError("sgd: schedule entries need epoch >= 0 and a positive rate");
    }
    if (i > 0 && schedule[i].first <= schedule[i - 1].first) {
      throw ConfigError("sgd: schedule epochs must be strictly increasing");
    }
  }
}

double SgdConfig::lr_at(int epoch) const {
  double lr = learning_rate;
  for (const auto& [e, rate] : schedule) {
    if (e <= epoch) lr = rate;
  }
  return lr;
}

SgdOptimizer::SgdOptimizer(std::vector<Tensor> params, SgdConfig config)
    : params_(std::move(params)), config_(std::move(config)) {
  config_.validate();
  if (params_.empty()) throw ConfigError("sgd: no parameters to optimize");
  velocity_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw ConfigError("sgd: every parameter must track gradients");
    velocity_.emplace_back(p.size(), 0.0);
  }
}

void SgdOptimizer::step(int epoch) {
  const double lr = config_.lr_at(epoch);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k].data();
    const auto& g = params_[k].grad();
    auto& v = velocity_[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = g[i] + config_.weight_decay * p[i] + config_.momentum * v[i];
      p[i] -= lr * v[i];
    }
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace poseface
