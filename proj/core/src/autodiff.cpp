#include "zstc/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace zstc::ad {

Var Tape::push(Matrix value, std::function<void(Tape&, std::size_t)> backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::param(const Matrix& p) {
  Var v = push(Matrix(), nullptr);
  nodes_[v.index].param = &p;
  return v;
}

Matrix& Tape::grad_mut(Var v) {
  Node& n = nodes_[v.index];
  if (n.grad.size() == 0) {
    const Matrix& val = value(v);
    n.grad = Matrix::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) throw std::invalid_argument("backward: root must be a scalar");
  grad_mut(root)(0, 0) = 1.0;
  for (std::size_t i = root.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, i);
  }
}

Var add(Tape& t, Var a, Var b) {
  return t.push(t.value(a) + t.value(b), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{self});
    tp.grad_mut(a) += g;
    tp.grad_mut(b) += g;
  });
}

Var sub(Tape& t, Var a, Var b) {
  return t.push(t.value(a) - t.value(b), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{self});
    tp.grad_mut(a) += g;
    tp.grad_mut(b) -= g;
  });
}

Var add_row(Tape& t, Var a, Var b) {
  Matrix out = t.value(a).rowwise() + t.value(b).row(0);
  return t.push(std::move(out), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{self});
    tp.grad_mut(a) += g;
    tp.grad_mut(b) += g.colwise().sum();
  });
}

Var matmul(Tape& t, Var a, Var b) {
  return t.push(t.value(a) * t.value(b), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{self});
    tp.grad_mut(a).noalias() += g * tp.value(b).transpose();
    tp.grad_mut(b).noalias() += tp.value(a).transpose() * g;
  });
}

Var matmul_bt(Tape& t, Var a, Var b) {
  return t.push(t.value(a) * t.value(b).transpose(), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{self});
    tp.grad_mut(a).noalias() += g * tp.value(b);
    tp.grad_mut(b).noalias() += g.transpose() * tp.value(a);
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.push(t.value(a) * s, [a, s](Tape& tp, std::size_t self) {
    tp.grad_mut(a) += tp.grad(Var{self}) * s;
  });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var gelu(Tape& t, Var a) {
  Matrix out = t.value(a).unaryExpr([](double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
  });
  return t.push(std::move(out), [a](Tape& tp, std::size_t self) {
    const Matrix& x = tp.value(a);
    const Matrix& g = tp.grad(Var{self});
    Matrix& ga = tp.grad_mut(a);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double v = x(i);
      const double u = kGeluC * (v + kGeluA * v * v * v);
      const double th = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      ga(i) += g(i) * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
    }
  });
}

Var gather_rows(Tape& t, Var table, std::span<const std::size_t> rows) {
  const Matrix& tab = t.value(table);
  Matrix out(static_cast<Eigen::Index>(rows.size()), tab.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= static_cast<std::size_t>(tab.rows())) throw std::out_of_range("gather_rows: row index");
    out.row(static_cast<Eigen::Index>(i)) = tab.row(static_cast<Eigen::Index>(rows[i]));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return t.push(std::move(out), [table, idx = std::move(idx)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{self});
    Matrix& gt = tp.grad_mut(table);
    for (std::size_t i = 0; i < idx.size(); ++i)
      gt.row(static_cast<Eigen::Index>(idx[i])) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var slice_rows(Tape& t, Var a, std::size_t begin, std::size_t count) {
  const auto b = static_cast<Eigen::Index>(begin);
  const auto n = static_cast<Eigen::Index>(count);
  if (b + n > t.value(a).rows()) throw std::out_of_range("slice_rows");
  return t.push(t.value(a).middleRows(b, n), [a, b, n](Tape& tp, std::size_t self) {
    tp.grad_mut(a).middleRows(b, n) += tp.grad(Var{self});
  });
}

Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t count) {
  const auto b = static_cast<Eigen::Index>(begin);
  const auto n = static_cast<Eigen::Index>(count);
  if (b + n > t.value(a).cols()) throw std::out_of_range("slice_cols");
  return t.push(t.value(a).middleCols(b, n), [a, b, n](Tape& tp, std::size_t self) {
    tp.grad_mut(a).middleCols(b, n) += tp.grad(Var{self});
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) cols += t.value(p).cols();
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, t.value(p).cols()) = t.value(p);
    at += t.value(p).cols();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), [ps = std::move(ps)](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{self});
    Eigen::Index off = 0;
    for (Var p : ps) {
      const Eigen::Index c = tp.value(p).cols();
      tp.grad_mut(p) += g.middleCols(off, c);
      off += c;
    }
  });
}

Var softmax_rows(Tape& t, Var a, bool causal) {
  const Matrix& x = t.value(a);
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::Index width = causal ? std::min<Eigen::Index>(i + 1, x.cols()) : x.cols();
    const double mx = x.row(i).head(width).maxCoeff();
    double z = 0.0;
    for (Eigen::Index j = 0; j < width; ++j) {
      y(i, j) = std::exp(x(i, j) - mx);
      z += y(i, j);
    }
    y.row(i).head(width) /= z;
  }
  return t.push(std::move(y), [a](Tape& tp, std::size_t self) {
    const Matrix& s = tp.value(Var{self});
    const Matrix& g = tp.grad(Var{self});
    // Masked entries have s = 0, so they receive no gradient.
    Matrix& ga = tp.grad_mut(a);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double dot = s.row(i).dot(g.row(i));
      ga.row(i).array() += s.row(i).array() * (g.row(i).array() - dot);
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Matrix& in = t.value(x);
  const Eigen::Index n = in.cols();
  Matrix xhat(in.rows(), n);
  Eigen::VectorXd inv_std(in.rows());
  for (Eigen::Index i = 0; i < in.rows(); ++i) {
    const double mean = in.row(i).mean();
    const double var = (in.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (in.row(i).array() - mean) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * t.value(gamma).row(0).array()).rowwise() +
               t.value(beta).row(0).array();
  return t.push(std::move(out), [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                                    Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{self});
    tp.grad_mut(beta) += g.colwise().sum();
    tp.grad_mut(gamma) += (g.array() * xhat.array()).matrix().colwise().sum();
    const auto& gam = tp.value(gamma).row(0).array();
    Matrix& gx = tp.grad_mut(x);
    for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
      const Eigen::ArrayXd dxhat = (g.row(i).array() * gam).transpose();
      const Eigen::ArrayXd xh = xhat.row(i).array().transpose();
      const double m1 = dxhat.mean();
      const double m2 = (dxhat * xh).mean();
      gx.row(i).array() += (inv_std(i) * (dxhat - m1 - xh * m2)).transpose();
    }
  });
}

Var masked_mean_rows(Tape& t, Var x, std::span<const double> weights) {
  const Matrix& in = t.value(x);
  if (static_cast<Eigen::Index>(weights.size()) != in.rows())
    throw std::invalid_argument("masked_mean_rows: weight count must equal row count");
  double total = 0.0;
  for (double w : weights) total += w;
  if (total <= 0.0) throw std::invalid_argument("masked_mean_rows: fully masked input");
  Eigen::RowVectorXd w(in.rows());
  for (std::size_t i = 0; i < weights.size(); ++i) w(static_cast<Eigen::Index>(i)) = weights[i] / total;
  Matrix out = w * in;
  return t.push(std::move(out), [x, w](Tape& tp, std::size_t self) {
    tp.grad_mut(x).noalias() += w.transpose() * tp.grad(Var{self});
  });
}

Var row(Tape& t, Var x, std::size_t i) { return slice_rows(t, x, i, 1); }

Var cross_entropy(Tape& t, Var logits, std::span<const std::size_t> targets) {
  const Matrix& z = t.value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != z.rows())
    throw std::invalid_argument("cross_entropy: one target per row required");
  Matrix probs(z.rows(), z.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const auto tgt = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(i)]);
    if (tgt >= z.cols()) throw std::out_of_range("cross_entropy: target index");
    const double mx = z.row(i).maxCoeff();
    const Eigen::ArrayXd e = (z.row(i).array() - mx).exp().transpose();
    const double sum = e.sum();
    probs.row(i) = (e / sum).transpose();
    loss += -(z(i, tgt) - mx - std::log(sum));
  }
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  Matrix out(1, 1);
  out(0, 0) = loss;
  return t.push(std::move(out), [logits, probs = std::move(probs), tg = std::move(tg)](Tape& tp, std::size_t self) {
    const double g = tp.grad(Var{self})(0, 0);
    Matrix d = probs;
    for (std::size_t i = 0; i < tg.size(); ++i) d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(tg[i])) -= 1.0;
    tp.grad_mut(logits) += g * d;
  });
}

Var cosine(Tape& t, Var a, Var b) {
  const Matrix& u = t.value(a);
  const Matrix& v = t.value(b);
  const double nu = u.norm();
  const double nv = v.norm();
  Matrix out(1, 1);
  if (nu == 0.0 || nv == 0.0) {
    out(0, 0) = 0.0;
    return t.push(std::move(out), nullptr);
  }
  const double c = u.cwiseProduct(v).sum() / (nu * nv);
  out(0, 0) = c;
  return t.push(std::move(out), [a, b, nu, nv, c](Tape& tp, std::size_t self) {
    const double g = tp.grad(Var{self})(0, 0);
    const Matrix& x = tp.value(a);
    const Matrix& y = tp.value(b);
    tp.grad_mut(a) += g * (y / (nu * nv) - c * x / (nu * nu));
    tp.grad_mut(b) += g * (x / (nu * nv) - c * y / (nv * nv));
  });
}

Var squared_error(Tape& t, Var a, double target) {
  const double d = t.scalar(a) - target;
  Matrix out(1, 1);
  out(0, 0) = d * d;
  return t.push(std::move(out), [a, d](Tape& tp, std::size_t self) {
    tp.grad_mut(a)(0, 0) += 2.0 * d * tp.grad(Var{self})(0, 0);
  });
}

Var sum_scalars(Tape& t, std::span<const Var> parts) {
  Matrix out = Matrix::Zero(1, 1);
  for (Var p : parts) out(0, 0) += t.scalar(p);
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(out), [ps = std::move(ps)](Tape& tp, std::size_t self) {
    const double g = tp.grad(Var{self})(0, 0);
    for (Var p : ps) tp.grad_mut(p)(0, 0) += g;
  });
}

}  // namespace zstc::ad
