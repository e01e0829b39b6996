#include "tgp/autodiff.hpp"

#include <cmath>
#include <utility>

#include "tgp/errors.hpp"

namespace tgp::ad {

namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& tape_of(const DiffValue& a) {
  if (!a.valid()) throw ContractError("operation on an unbound DiffValue");
  return *a.tape();
}

Tape& tape_of(const DiffValue& a, const DiffValue& b) {
  Tape& t = tape_of(a);
  if (&tape_of(b) != &t) throw ContractError("operands live on different tapes");
  return t;
}

void require_same_shape(const char* op, const DiffValue& a, const DiffValue& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape(a.value()) + " vs " +
                         shape(b.value()));
  }
}

void require_scalar(const char* op, const DiffValue& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw DimensionError(std::string(op) + ": expected 1x1 operand, got " + shape(s.value()));
  }
}

void require_square(const char* op, const DiffValue& a) {
  if (a.rows() != a.cols()) {
    throw DimensionError(std::string(op) + ": expected square matrix, got " + shape(a.value()));
  }
}

}  // namespace

const Matrix& DiffValue::value() const {
  if (!tape_) throw ContractError("value() on an unbound DiffValue");
  return tape_->value(index_);
}

double DiffValue::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw DimensionError("scalar() on a " + shape(v) + " value");
  return v(0, 0);
}

bool DiffValue::is_constant() const { return tape_ && tape_->is_constant(index_); }

const Matrix& Gradients::wrt(const DiffValue& v) const {
  if (v.tape() != tape_) throw ContractError("gradient requested for a value from another tape");
  return adjoints_[v.index()];
}

double Gradients::scalar(const DiffValue& v) const {
  const Matrix& g = wrt(v);
  if (g.size() != 1) throw DimensionError("scalar gradient of a " + shape(g) + " value");
  return g(0, 0);
}

DiffValue Tape::variable(Matrix value) {
  nodes_.push_back(Node{"variable", std::move(value), {}, {}, true});
  return DiffValue(this, nodes_.size() - 1);
}

DiffValue Tape::variable(double value) { return variable(Matrix::Constant(1, 1, value)); }

DiffValue Tape::constant(Matrix value) {
  nodes_.push_back(Node{"constant", std::move(value), {}, {}, false});
  return DiffValue(this, nodes_.size() - 1);
}

DiffValue Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

DiffValue Tape::record(const char* op, Matrix value, std::vector<DiffValue> operands, Backward backward) {
  if (!value.allFinite()) throw DomainError(std::string(op) + " produced a non-finite value");
  Node node;
  node.op = op;
  node.value = std::move(value);
  node.operands.reserve(operands.size());
  for (const auto& o : operands) {
    if (o.tape() != this) throw ContractError(std::string(op) + ": operand from another tape");
    node.operands.push_back(o.index());
    node.requires_grad = node.requires_grad || nodes_[o.index()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return DiffValue(this, nodes_.size() - 1);
}

Gradients Tape::backward(const DiffValue& output) const {
  if (output.tape() != this) throw ContractError("backward: output is not on this tape");
  if (output.rows() != 1 || output.cols() != 1) {
    throw ContractError("backward: output must be a scalar, got " + shape(output.value()));
  }
  Gradients grads;
  grads.tape_ = this;
  grads.adjoints_.reserve(nodes_.size());
  for (const auto& n : nodes_) grads.adjoints_.push_back(Matrix::Zero(n.value.rows(), n.value.cols()));

  const std::size_t out = output.index();
  if (!nodes_[out].requires_grad) return grads;
  grads.adjoints_[out](0, 0) = 1.0;

  // Nodes after the output cannot influence it.
  std::vector<char> live(out + 1, 0);
  live[out] = 1;
  std::vector<Matrix*> slots;
  for (std::size_t i = out + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!live[i] || !n.requires_grad || !n.backward) continue;
    slots.clear();
    for (std::size_t o : n.operands) {
      if (nodes_[o].requires_grad) {
        slots.push_back(&grads.adjoints_[o]);
        live[o] = 1;
      } else {
        slots.push_back(nullptr);
      }
    }
    n.backward(grads.adjoints_[i], n.value, slots);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Elementwise primitives

DiffValue add(const DiffValue& a, const DiffValue& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a, b);
  return t.record("add", a.value() + b.value(), {a, b}, [](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] += g;
  });
}

DiffValue sub(const DiffValue& a, const DiffValue& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a, b);
  return t.record("sub", a.value() - b.value(), {a, b}, [](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) *in[1] -= g;
  });
}

DiffValue mul(const DiffValue& a, const DiffValue& b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a, b);
  return t.record("mul", a.value().cwiseProduct(b.value()), {a, b},
                  [&t, ia = a.index(), ib = b.index()](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) *in[0] += g.cwiseProduct(t.value(ib));
                    if (in[1]) *in[1] += g.cwiseProduct(t.value(ia));
                  });
}

DiffValue neg(const DiffValue& a) {
  Tape& t = tape_of(a);
  return t.record("neg", -a.value(), {a}, [](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
    if (in[0]) *in[0] -= g;
  });
}

DiffValue exp(const DiffValue& a) {
  Tape& t = tape_of(a);
  return t.record("exp", a.value().array().exp().matrix(), {a},
                  [](const Matrix& g, const Matrix& value, std::span<Matrix* const> in) {
                    if (in[0]) *in[0] += g.cwiseProduct(value);
                  });
}

DiffValue log(const DiffValue& a) {
  Tape& t = tape_of(a);
  if ((a.value().array() <= 0.0).any()) throw DomainError("log of a non-positive entry");
  return t.record("log", a.value().array().log().matrix(), {a},
                  [&t, ia = a.index()](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) *in[0] += g.cwiseQuotient(t.value(ia));
                  });
}

DiffValue sqrt(const DiffValue& a) {
  Tape& t = tape_of(a);
  if ((a.value().array() <= 0.0).any()) throw DomainError("sqrt of a non-positive entry");
  Matrix r = a.value().array().sqrt().matrix();
  Matrix half_inv = (0.5 / r.array()).matrix();
  return t.record("sqrt", std::move(r), {a},
                  [half_inv = std::move(half_inv)](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) *in[0] += g.cwiseProduct(half_inv);
                  });
}

DiffValue tanh(const DiffValue& a) {
  Tape& t = tape_of(a);
  Matrix r = a.value().array().tanh().matrix();
  Matrix slope = (1.0 - r.array().square()).matrix();
  return t.record("tanh", std::move(r), {a},
                  [slope = std::move(slope)](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) *in[0] += g.cwiseProduct(slope);
                  });
}

DiffValue positive_part(const DiffValue& a) {
  Tape& t = tape_of(a);
  Matrix mask = (a.value().array() > 0.0).cast<double>().matrix();
  return t.record("positive_part", a.value().cwiseMax(0.0), {a},
                  [mask = std::move(mask)](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) *in[0] += g.cwiseProduct(mask);
                  });
}

DiffValue sum(const DiffValue& a) {
  Tape& t = tape_of(a);
  return t.record("sum", Matrix::Constant(1, 1, a.value().sum()), {a},
                  [](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) in[0]->array() += g(0, 0);
                  });
}

DiffValue scale(const DiffValue& s, const DiffValue& a) {
  Tape& t = tape_of(s, a);
  require_scalar("scale", s);
  return t.record("scale", s.scalar() * a.value(), {s, a},
                  [&t, is = s.index(), ia = a.index()](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) (*in[0])(0, 0) += g.cwiseProduct(t.value(ia)).sum();
                    if (in[1]) *in[1] += t.value(is)(0, 0) * g;
                  });
}

DiffValue scale(double s, const DiffValue& a) {
  Tape& t = tape_of(a);
  return t.record("scale", s * a.value(), {a}, [s](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += s * g;
  });
}

DiffValue diag(const DiffValue& a) {
  Tape& t = tape_of(a);
  require_square("diag", a);
  return t.record("diag", Matrix(a.value().diagonal()), {a}, [](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
    if (in[0]) in[0]->diagonal() += g.col(0);
  });
}

DiffValue add_diagonal(const DiffValue& a, const DiffValue& s) {
  Tape& t = tape_of(a, s);
  require_square("add_diagonal", a);
  require_scalar("add_diagonal", s);
  Matrix r = a.value();
  r.diagonal().array() += s.scalar();
  return t.record("add_diagonal", std::move(r), {a, s}, [](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
    if (in[0]) *in[0] += g;
    if (in[1]) (*in[1])(0, 0) += g.trace();
  });
}

// ---------------------------------------------------------------------------
// Structural and linear-algebra primitives

DiffValue matmul(const DiffValue& a, const DiffValue& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape(a.value()) + " * " + shape(b.value()));
  }
  return t.record("matmul", a.value() * b.value(), {a, b},
                  [&t, ia = a.index(), ib = b.index()](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) in[0]->noalias() += g * t.value(ib).transpose();
                    if (in[1]) in[1]->noalias() += t.value(ia).transpose() * g;
                  });
}

DiffValue transpose(const DiffValue& a) {
  Tape& t = tape_of(a);
  return t.record("transpose", Matrix(a.value().transpose()), {a},
                  [](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) *in[0] += g.transpose();
                  });
}

Matrix cholesky_lower(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("cholesky: expected square matrix, got " + shape(a));
  const Eigen::Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double pivot = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > 0.0)) throw NotPositiveDefiniteError(static_cast<std::size_t>(j), pivot);
    const double d = std::sqrt(pivot);
    l(j, j) = d;
    const Eigen::Index rest = n - j - 1;
    if (rest > 0) {
      l.col(j).tail(rest) =
          (a.col(j).tail(rest) - l.block(j + 1, 0, rest, j) * l.row(j).head(j).transpose()) / d;
    }
  }
  return l;
}

DiffValue cholesky(const DiffValue& a) {
  Tape& t = tape_of(a);
  // Reverse rule for A = L L^T with symmetric perturbations:
  //   A_bar = L^-T sym(Phi(L^T L_bar)) L^-1,
  // Phi keeping the lower triangle with the diagonal halved.
  return t.record("cholesky", cholesky_lower(a.value()), {a},
                  [](const Matrix& g, const Matrix& l, std::span<Matrix* const> in) {
                    if (!in[0]) return;
                    Matrix p = l.transpose() * Matrix(g.triangularView<Eigen::Lower>());
                    p = p.triangularView<Eigen::Lower>();
                    p.diagonal() *= 0.5;
                    const auto lt = l.triangularView<Eigen::Lower>().transpose();
                    Matrix x = lt.solve(p);                        // L^-T P
                    Matrix s = lt.solve(Matrix(x.transpose()));     // (L^-T P L^-1)^T
                    *in[0] += 0.5 * (s + s.transpose());
                  });
}

DiffValue triangular_solve(const DiffValue& lower, const DiffValue& b) {
  Tape& t = tape_of(lower, b);
  require_square("triangular_solve", lower);
  if (lower.rows() != b.rows()) {
    throw DimensionError("triangular_solve: " + shape(lower.value()) + " vs rhs " + shape(b.value()));
  }
  const Matrix& l = lower.value();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (l(i, i) == 0.0) throw SingularError("triangular_solve: zero diagonal entry at " + std::to_string(i));
  }
  return t.record("triangular_solve", l.triangularView<Eigen::Lower>().solve(b.value()), {lower, b},
                  [&t, il = lower.index()](const Matrix& g, const Matrix& z, std::span<Matrix* const> in) {
                    const Matrix& l = t.value(il);
                    Matrix b_bar = l.triangularView<Eigen::Lower>().transpose().solve(g);
                    if (in[0]) *in[0] -= Matrix(b_bar * z.transpose()).triangularView<Eigen::Lower>();
                    if (in[1]) *in[1] += b_bar;
                  });
}

SingularPair top_singular_pair(const Matrix& w, int iters, double rel_tol) {
  if (iters < 1) throw ContractError("spectral norm needs at least one iteration");
  SingularPair r;
  const Eigen::Index n = w.cols();
  r.v.resize(n);
  // Fixed, non-symmetric start so no common structure sits orthogonal to it.
  for (Eigen::Index i = 0; i < n; ++i) r.v(i) = 1.0 + 0.5 * std::sin(1.0 + 1.7 * static_cast<double>(i));
  r.v.normalize();
  for (int k = 0; k < iters; ++k) {
    Vector next = w.transpose() * (w * r.v);
    const double norm = next.norm();
    if (norm == 0.0) break;
    next /= norm;
    const double change = (next - r.v).norm();
    r.v = std::move(next);
    if (rel_tol > 0.0 && change <= rel_tol) break;
  }
  Vector wv = w * r.v;
  r.sigma = wv.norm();
  r.u = r.sigma > 0.0 ? Vector(wv / r.sigma) : Vector::Zero(w.rows());
  return r;
}

DiffValue spectral_norm(const DiffValue& w) {
  Tape& t = tape_of(w);
  SingularPair sp = top_singular_pair(w.value(), 5000, 1e-13);
  Matrix outer = sp.u * sp.v.transpose();
  return t.record("spectral_norm", Matrix::Constant(1, 1, sp.sigma), {w},
                  [outer = std::move(outer)](const Matrix& g, const Matrix&, std::span<Matrix* const> in) {
                    if (in[0]) *in[0] += g(0, 0) * outer;
                  });
}

}  // namespace tgp::ad
