#pragma once

// Define-by-run reverse-mode differentiation over dense double matrices.
//
// A Tape records every primitive applied to DiffValue handles. Scalars are
// 1x1 matrices. Nodes are appended in evaluation order, so operand indices
// always precede their consumers and a single reverse sweep suffices.
//
//   ad::Tape tape;
//   auto x = tape.variable(2.0);
//   auto y = tape.variable(3.0);
//   auto f = ad::mul(x, y);
//   auto grads = tape.backward(f);
//   grads.scalar(x);  // 3
//
// A tape is single-threaded. Build a fresh one per objective evaluation.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tgp/linalg.hpp"

namespace tgp::ad {

class Tape;

class DiffValue {
 public:
  DiffValue() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  // Value of a 1x1 node.
  double scalar() const;

  // True for constants and for anything computed only from constants.
  bool is_constant() const;
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t index() const { return index_; }

 private:
  friend class Tape;
  DiffValue(Tape* tape, std::size_t index) : tape_(tape), index_(index) {}

  Tape* tape_ = nullptr;
  std::size_t index_ = 0;
};

class Gradients {
 public:
  // Adjoint of any node on the tape; zero for constants and for nodes the
  // output does not depend on.
  const Matrix& wrt(const DiffValue& v) const;
  double scalar(const DiffValue& v) const;

 private:
  friend class Tape;
  std::vector<Matrix> adjoints_;
  const Tape* tape_ = nullptr;
};

class Tape {
 public:
  // Receives the adjoint and forward value of the node plus one slot per
  // operand. A slot is null when that operand is constant.
  using Backward = std::function<void(const Matrix& adjoint, const Matrix& value,
                                      std::span<Matrix* const> operand_adjoints)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  DiffValue variable(Matrix value);
  DiffValue variable(double value);
  DiffValue constant(Matrix value);
  DiffValue constant(double value);

  // Appends a node whose forward value was computed by the caller. This is how
  // composite kernels (covariance assembly, Cholesky) join the tape.
  DiffValue record(const char* op, Matrix value, std::vector<DiffValue> operands, Backward backward);

  Gradients backward(const DiffValue& output) const;

  std::size_t size() const { return nodes_.size(); }
  const Matrix& value(std::size_t index) const { return nodes_[index].value; }
  bool is_constant(std::size_t index) const { return !nodes_[index].requires_grad; }

 private:
  struct Node {
    const char* op = "";
    Matrix value;
    std::vector<std::size_t> operands;
    Backward backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
};

// Elementwise and structural primitives.
DiffValue add(const DiffValue& a, const DiffValue& b);
DiffValue sub(const DiffValue& a, const DiffValue& b);
DiffValue mul(const DiffValue& a, const DiffValue& b);  // elementwise
DiffValue matmul(const DiffValue& a, const DiffValue& b);
DiffValue transpose(const DiffValue& a);
DiffValue neg(const DiffValue& a);
DiffValue exp(const DiffValue& a);
DiffValue log(const DiffValue& a);
DiffValue sqrt(const DiffValue& a);
DiffValue tanh(const DiffValue& a);
DiffValue positive_part(const DiffValue& a);  // max(0, a) elementwise
DiffValue sum(const DiffValue& a);            // 1x1 total
DiffValue scale(const DiffValue& s, const DiffValue& a);  // s is 1x1
DiffValue scale(double s, const DiffValue& a);
DiffValue diag(const DiffValue& a);                       // n x 1
DiffValue add_diagonal(const DiffValue& a, const DiffValue& s);  // a + s*I, s is 1x1

// Linear algebra.
DiffValue cholesky(const DiffValue& a);
DiffValue triangular_solve(const DiffValue& lower, const DiffValue& b);
// Largest singular value, 1x1. Gradient is u v^T for the top singular pair.
DiffValue spectral_norm(const DiffValue& w);

inline DiffValue operator+(const DiffValue& a, const DiffValue& b) { return add(a, b); }
inline DiffValue operator-(const DiffValue& a, const DiffValue& b) { return sub(a, b); }
inline DiffValue operator-(const DiffValue& a) { return neg(a); }
inline DiffValue operator*(double s, const DiffValue& a) { return scale(s, a); }

// Plain-double kernels shared with non-differentiated callers.
Matrix cholesky_lower(const Matrix& a);
// Top singular triple by power iteration on W^T W. Deterministic start vector.
struct SingularPair {
  double sigma = 0.0;
  Vector u;
  Vector v;
};
SingularPair top_singular_pair(const Matrix& w, int iters, double rel_tol = 0.0);

}  // namespace tgp::ad
