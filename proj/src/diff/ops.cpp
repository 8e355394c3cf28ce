#include "ate/diff/ops.hpp"

#include <cmath>
#include <memory>

namespace ate::diff {
namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void same_shape(Var a, Var b, std::string_view op) {
  check_dims(a.rows() == b.rows() && a.cols() == b.cols(), op,
             "shapes " + shape(a.value()) + " and " + shape(b.value()) + " differ");
}

bool needs(Tape& t, Var v) { return t.requires_grad(v.id); }

// Elementwise unary op; df maps (x, y) to dy/dx.
template <typename F, typename DF>
Var unary(Var a, std::string_view op, F f, DF df) {
  Tape& t = *a.tape;
  Matrix y = a.value().unaryExpr(f);
  return t.push(std::move(y), op, {a}, [a, df](Tape& tp, int self) {
    const Matrix& x = tp.value(a.id);
    const Matrix& y = tp.value(self);
    Matrix local(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) local.data()[i] = df(x.data()[i], y.data()[i]);
    tp.grad_ref(a.id).array() += tp.grad_ref(self).array() * local.array();
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  check_dims(a.cols() == b.rows(), "matmul",
             "inner dimensions " + shape(a.value()) + " * " + shape(b.value()));
  Tape& t = *a.tape;
  Matrix y = a.value() * b.value();
  return t.push(std::move(y), "matmul", {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (needs(tp, a)) tp.grad_ref(a.id).noalias() += g * tp.value(b.id).transpose();
    if (needs(tp, b)) tp.grad_ref(b.id).noalias() += tp.value(a.id).transpose() * g;
  });
}

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  Tape& t = *a.tape;
  return t.push(a.value() + b.value(), "add", {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (needs(tp, a)) tp.grad_ref(a.id) += g;
    if (needs(tp, b)) tp.grad_ref(b.id) += g;
  });
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  Tape& t = *a.tape;
  return t.push(a.value() - b.value(), "sub", {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (needs(tp, a)) tp.grad_ref(a.id) += g;
    if (needs(tp, b)) tp.grad_ref(b.id) -= g;
  });
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  Tape& t = *a.tape;
  Matrix y = a.value().cwiseProduct(b.value());
  return t.push(std::move(y), "mul", {a, b}, [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (needs(tp, a)) tp.grad_ref(a.id) += g.cwiseProduct(tp.value(b.id));
    if (needs(tp, b)) tp.grad_ref(b.id) += g.cwiseProduct(tp.value(a.id));
  });
}

Var add_row(Var a, Var row) {
  check_dims(row.rows() == 1 && row.cols() == a.cols(), "add_row",
             "row " + shape(row.value()) + " does not broadcast over " + shape(a.value()));
  Tape& t = *a.tape;
  Matrix y = a.value().rowwise() + row.value().row(0);
  return t.push(std::move(y), "add_row", {a, row}, [a, row](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (needs(tp, a)) tp.grad_ref(a.id) += g;
    if (needs(tp, row)) tp.grad_ref(row.id) += g.colwise().sum();
  });
}

Var mul_col(Var a, Var col) {
  check_dims(col.cols() == 1 && col.rows() == a.rows(), "mul_col",
             "column " + shape(col.value()) + " does not broadcast over " + shape(a.value()));
  Tape& t = *a.tape;
  Matrix y = a.value().array().colwise() * col.value().col(0).array();
  return t.push(std::move(y), "mul_col", {a, col}, [a, col](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    if (needs(tp, a)) {
      tp.grad_ref(a.id).array() += g.array().colwise() * tp.value(col.id).col(0).array();
    }
    if (needs(tp, col)) {
      tp.grad_ref(col.id) += g.cwiseProduct(tp.value(a.id)).rowwise().sum();
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.push(a.value() * s, "scale", {a}, [a, s](Tape& tp, int self) {
    tp.grad_ref(a.id) += s * tp.grad_ref(self);
  });
}

Var add_scalar(Var a, double s) {
  Tape& t = *a.tape;
  Matrix y = a.value().array() + s;
  return t.push(std::move(y), "add_scalar", {a}, [a](Tape& tp, int self) {
    tp.grad_ref(a.id) += tp.grad_ref(self);
  });
}

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var silu(Var a) {
  return unary(
      a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Var tanh(Var a) {
  return unary(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(Var a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  Matrix y(1, 1);
  y(0, 0) = a.value().sum();
  return t.push(std::move(y), "sum", {a}, [a](Tape& tp, int self) {
    tp.grad_ref(a.id).array() += tp.grad_ref(self)(0, 0);
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  check_dims(n > 0, "mean", "empty input");
  return scale(sum(a), 1.0 / n);
}

Var row_sum(Var a) {
  Tape& t = *a.tape;
  Matrix y = a.value().rowwise().sum();
  return t.push(std::move(y), "row_sum", {a}, [a](Tape& tp, int self) {
    tp.grad_ref(a.id).colwise() += tp.grad_ref(self).col(0);
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Eigen::Index n = x.cols();
  check_dims(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
             "layer_norm", "affine parameters must be 1x" + std::to_string(n));
  Tape& t = *x.tape;
  const Matrix& xv = x.value();
  Matrix xhat(xv.rows(), n);
  auto inv_std = std::make_shared<Eigen::VectorXd>(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)(r) = is;
    xhat.row(r) = (xv.row(r).array() - mu) * is;
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
             beta.value().row(0).array();
  auto xhat_ptr = std::make_shared<Matrix>(std::move(xhat));
  return t.push(std::move(y), "layer_norm", {x, gamma, beta},
                [x, gamma, beta, xhat_ptr, inv_std](Tape& tp, int self) {
                  const Matrix& g = tp.grad_ref(self);
                  const Matrix& xh = *xhat_ptr;
                  if (needs(tp, gamma)) tp.grad_ref(gamma.id) += g.cwiseProduct(xh).colwise().sum();
                  if (needs(tp, beta)) tp.grad_ref(beta.id) += g.colwise().sum();
                  if (needs(tp, x)) {
                    Matrix dxh = g.array().rowwise() * tp.value(gamma.id).row(0).array();
                    Matrix& gx = tp.grad_ref(x.id);
                    for (Eigen::Index r = 0; r < dxh.rows(); ++r) {
                      const double m1 = dxh.row(r).mean();
                      const double m2 = dxh.row(r).dot(xh.row(r)) / static_cast<double>(xh.cols());
                      gx.row(r).array() +=
                          (*inv_std)(r) * (dxh.row(r).array() - m1 - xh.row(r).array() * m2);
                    }
                  }
                });
}

Var attention(Var q, Var k, Var v, int groups, int heads) {
  check_dims(groups > 0 && heads > 0, "attention", "groups and heads must be positive");
  check_dims(q.cols() == k.cols() && k.cols() == v.cols(), "attention",
             "q/k/v widths differ");
  check_dims(k.rows() == v.rows(), "attention", "k and v row counts differ");
  check_dims(q.rows() % groups == 0 && k.rows() % groups == 0, "attention",
             "row counts not divisible by group count");
  check_dims(q.cols() % heads == 0, "attention", "width not divisible by head count");
  const Eigen::Index tq = q.rows() / groups;
  const Eigen::Index tk = k.rows() / groups;
  const Eigen::Index hd = q.cols() / heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(hd));

  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  Matrix out(Q.rows(), Q.cols());
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(static_cast<std::size_t>(groups * heads));
  for (int gi = 0; gi < groups; ++gi) {
    for (int h = 0; h < heads; ++h) {
      auto qb = Q.block(gi * tq, h * hd, tq, hd);
      auto kb = K.block(gi * tk, h * hd, tk, hd);
      auto vb = V.block(gi * tk, h * hd, tk, hd);
      Matrix scores = (qb * kb.transpose()) * s;
      for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        const double mx = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - mx).exp();
        scores.row(r) /= scores.row(r).sum();
      }
      out.block(gi * tq, h * hd, tq, hd).noalias() = scores * vb;
      probs->push_back(std::move(scores));
    }
  }
  Tape& t = *q.tape;
  return t.push(std::move(out), "attention", {q, k, v},
                [q, k, v, groups, heads, tq, tk, hd, s, probs](Tape& tp, int self) {
                  const Matrix& G = tp.grad_ref(self);
                  const Matrix& Qv = tp.value(q.id);
                  const Matrix& Kv = tp.value(k.id);
                  const Matrix& Vv = tp.value(v.id);
                  const bool nq = needs(tp, q), nk = needs(tp, k), nv = needs(tp, v);
                  for (int gi = 0; gi < groups; ++gi) {
                    for (int h = 0; h < heads; ++h) {
                      const Matrix& P = (*probs)[static_cast<std::size_t>(gi * heads + h)];
                      auto gb = G.block(gi * tq, h * hd, tq, hd);
                      auto vb = Vv.block(gi * tk, h * hd, tk, hd);
                      if (nv) tp.grad_ref(v.id).block(gi * tk, h * hd, tk, hd).noalias() += P.transpose() * gb;
                      if (!nq && !nk) continue;
                      Matrix dP = gb * vb.transpose();
                      Eigen::VectorXd rs = dP.cwiseProduct(P).rowwise().sum();
                      Matrix dS = P.cwiseProduct(dP.colwise() - rs) * s;
                      if (nq) {
                        tp.grad_ref(q.id).block(gi * tq, h * hd, tq, hd).noalias() +=
                            dS * Kv.block(gi * tk, h * hd, tk, hd);
                      }
                      if (nk) {
                        tp.grad_ref(k.id).block(gi * tk, h * hd, tk, hd).noalias() +=
                            dS.transpose() * Qv.block(gi * tq, h * hd, tq, hd);
                      }
                    }
                  }
                });
}

Var concat_cols(std::span<const Var> parts) {
  check_dims(!parts.empty(), "concat_cols", "no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    check_dims(p.rows() == rows, "concat_cols", "row counts differ");
    cols += p.cols();
  }
  Matrix y(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    y.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  Tape& t = *parts[0].tape;
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(std::move(y), "concat_cols", std::span<const Var>(ins), [ins](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    Eigen::Index off = 0;
    for (const Var& p : ins) {
      if (needs(tp, p)) tp.grad_ref(p.id) += g.middleCols(off, p.cols());
      off += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  check_dims(!parts.empty(), "concat_rows", "no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    check_dims(p.cols() == cols, "concat_rows", "column counts differ");
    rows += p.rows();
  }
  Matrix y(rows, cols);
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    y.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  Tape& t = *parts[0].tape;
  std::vector<Var> ins(parts.begin(), parts.end());
  return t.push(std::move(y), "concat_rows", std::span<const Var>(ins), [ins](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    Eigen::Index off = 0;
    for (const Var& p : ins) {
      if (needs(tp, p)) tp.grad_ref(p.id) += g.middleRows(off, p.rows());
      off += p.rows();
    }
  });
}

Var select_rows(Var x, std::vector<int> indices) {
  const Eigen::Index n = x.rows();
  Matrix y(static_cast<Eigen::Index>(indices.size()), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    check_dims(indices[i] >= 0 && indices[i] < n, "select_rows", "row index out of range");
    y.row(static_cast<Eigen::Index>(i)) = x.value().row(indices[i]);
  }
  Tape& t = *x.tape;
  return t.push(std::move(y), "select_rows", {x},
                [x, idx = std::move(indices)](Tape& tp, int self) {
                  const Matrix& g = tp.grad_ref(self);
                  Matrix& gx = tp.grad_ref(x.id);
                  for (std::size_t i = 0; i < idx.size(); ++i) {
                    gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                  }
                });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  check_dims(start >= 0 && count >= 0 && start + count <= x.cols(), "slice_cols",
             "column range out of bounds");
  Tape& t = *x.tape;
  Matrix y = x.value().middleCols(start, count);
  return t.push(std::move(y), "slice_cols", {x}, [x, start, count](Tape& tp, int self) {
    tp.grad_ref(x.id).middleCols(start, count) += tp.grad_ref(self);
  });
}

Var reshape(Var x, Eigen::Index rows, Eigen::Index cols) {
  check_dims(rows * cols == x.value().size(), "reshape",
             "cannot reshape " + shape(x.value()) + " to " + std::to_string(rows) + "x" +
                 std::to_string(cols));
  Tape& t = *x.tape;
  Matrix y = MatrixMap(const_cast<double*>(x.value().data()), rows, cols);
  return t.push(std::move(y), "reshape", {x}, [x](Tape& tp, int self) {
    const Matrix& g = tp.grad_ref(self);
    Matrix& gx = tp.grad_ref(x.id);
    gx += MatrixMap(const_cast<double*>(g.data()), gx.rows(), gx.cols());
  });
}

}  // namespace ate::diff
