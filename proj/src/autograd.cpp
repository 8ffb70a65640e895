#include "macdiff/autograd.hpp"

#include <cmath>
#include <memory>

#include <Eigen/Dense>

namespace macdiff::ag {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

CMap emap(const Mat& m) { return CMap(m.d.data(), m.rows, m.cols); }
Map emap(Mat& m) { return Map(m.d.data(), m.rows, m.cols); }

void require_same_shape(const Mat& a, const Mat& b, const char* ctx) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(ctx) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + ")");
}

}  // namespace

Var Tape::make(Mat value, std::initializer_list<Var> parents,
               std::function<void(Node&)>&& bw) {
  Node n;
  n.value = std::move(value);
  for (Var p : parents) n.requires_grad |= p->requires_grad;
  n.requires_grad &= grad_enabled_;
  if (n.requires_grad) {
    n.grad = Mat(n.value.rows, n.value.cols);
    n.backward = std::move(bw);
  }
  nodes_.push_back(std::move(n));
  return &nodes_.back();
}

Var Tape::leaf(const Mat& value, bool requires_grad) {
  Node n;
  n.value = value;
  n.requires_grad = requires_grad && grad_enabled_;
  if (n.requires_grad) n.grad = Mat(value.rows, value.cols);
  nodes_.push_back(std::move(n));
  return &nodes_.back();
}

void Tape::backward(Var loss) {
  if (!grad_enabled_) throw ValueError("Tape::backward: gradients disabled on this tape");
  if (backward_done_) throw ValueError("Tape::backward: tape already differentiated");
  backward_done_ = true;
  if (loss->value.rows != 1 || loss->value.cols != 1)
    throw ShapeError("Tape::backward: loss must be a 1x1 scalar");
  if (!loss->requires_grad)
    throw ValueError("Tape::backward: loss does not depend on any parameter");
  loss->grad.at(0, 0) = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->requires_grad && it->backward) it->backward(*it);
  }
}

Var Tape::add(Var a, Var b) {
  require_same_shape(a->value, b->value, "add");
  Mat out = a->value;
  emap(out) += emap(b->value);
  return make(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) emap(a->grad) += emap(self.grad);
    if (b->requires_grad) emap(b->grad) += emap(self.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  require_same_shape(a->value, b->value, "sub");
  Mat out = a->value;
  emap(out) -= emap(b->value);
  return make(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) emap(a->grad) += emap(self.grad);
    if (b->requires_grad) emap(b->grad) -= emap(self.grad);
  });
}

Var Tape::hadamard(Var a, Var b) {
  require_same_shape(a->value, b->value, "hadamard");
  Mat out(a->value.rows, a->value.cols);
  emap(out) = emap(a->value).cwiseProduct(emap(b->value));
  return make(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) emap(a->grad) += emap(self.grad).cwiseProduct(emap(b->value));
    if (b->requires_grad) emap(b->grad) += emap(self.grad).cwiseProduct(emap(a->value));
  });
}

Var Tape::scale(Var a, double c) {
  Mat out = a->value;
  emap(out) *= c;
  return make(std::move(out), {a}, [a, c](Node& self) {
    if (a->requires_grad) emap(a->grad) += c * emap(self.grad);
  });
}

Var Tape::add_rowvec(Var x, Var r) {
  if (r->value.rows != 1 || r->value.cols != x->value.cols)
    throw ShapeError("add_rowvec: r must be 1 x cols(x)");
  Mat out = x->value;
  emap(out).rowwise() += emap(r->value).row(0);
  return make(std::move(out), {x, r}, [x, r](Node& self) {
    if (x->requires_grad) emap(x->grad) += emap(self.grad);
    if (r->requires_grad) emap(r->grad).row(0) += emap(self.grad).colwise().sum();
  });
}

Var Tape::mul_rowvec(Var x, Var r) {
  if (r->value.rows != 1 || r->value.cols != x->value.cols)
    throw ShapeError("mul_rowvec: r must be 1 x cols(x)");
  Mat out(x->value.rows, x->value.cols);
  emap(out) = emap(x->value).array().rowwise() * emap(r->value).row(0).array();
  return make(std::move(out), {x, r}, [x, r](Node& self) {
    if (x->requires_grad)
      emap(x->grad).array() += emap(self.grad).array().rowwise() * emap(r->value).row(0).array();
    if (r->requires_grad)
      emap(r->grad).row(0) +=
          emap(self.grad).cwiseProduct(emap(x->value)).colwise().sum();
  });
}

Var Tape::gelu(Var x) {
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
  Mat out(x->value.rows, x->value.cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x->value.d[i];
    out.d[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  return make(std::move(out), {x}, [x, inv_sqrt2, inv_sqrt2pi](Node& self) {
    if (!x->requires_grad) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double v = x->value.d[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      x->grad.d[i] += self.grad.d[i] * (cdf + v * pdf);
    }
  });
}

Var Tape::matmul(Var a, Var b) {
  if (a->value.cols != b->value.rows) throw ShapeError("matmul: inner dimensions differ");
  Mat out(a->value.rows, b->value.cols);
  emap(out).noalias() = emap(a->value) * emap(b->value);
  return make(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) emap(a->grad).noalias() += emap(self.grad) * emap(b->value).transpose();
    if (b->requires_grad) emap(b->grad).noalias() += emap(a->value).transpose() * emap(self.grad);
  });
}

Var Tape::linear(Var x, Var w, Var b) {
  if (x->value.cols != w->value.rows) throw ShapeError("linear: inner dimensions differ");
  if (b->value.rows != 1 || b->value.cols != w->value.cols)
    throw ShapeError("linear: bias must be 1 x cols(w)");
  Mat out(x->value.rows, w->value.cols);
  emap(out).noalias() = emap(x->value) * emap(w->value);
  emap(out).rowwise() += emap(b->value).row(0);
  return make(std::move(out), {x, w, b}, [x, w, b](Node& self) {
    if (x->requires_grad) emap(x->grad).noalias() += emap(self.grad) * emap(w->value).transpose();
    if (w->requires_grad) emap(w->grad).noalias() += emap(x->value).transpose() * emap(self.grad);
    if (b->requires_grad) emap(b->grad).row(0) += emap(self.grad).colwise().sum();
  });
}

Var Tape::layernorm(Var x) {
  const int n = x->value.rows, c = x->value.cols;
  Mat out(n, c);
  Mat invstd(n, 1);
  for (int i = 0; i < n; ++i) {
    const double* row = &x->value.at(i, 0);
    double mean = 0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= c;
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    invstd.at(i, 0) = is;
    for (int j = 0; j < c; ++j) out.at(i, j) = (row[j] - mean) * is;
  }
  Mat normed = out;  // cached for backward
  return make(std::move(out), {x},
              [x, normed = std::move(normed), invstd = std::move(invstd), c](Node& self) {
                if (!x->requires_grad) return;
                for (int i = 0; i < self.grad.rows; ++i) {
                  const double* dy = &self.grad.at(i, 0);
                  const double* y = &normed.at(i, 0);
                  double mean_dy = 0, mean_dyy = 0;
                  for (int j = 0; j < c; ++j) {
                    mean_dy += dy[j];
                    mean_dyy += dy[j] * y[j];
                  }
                  mean_dy /= c;
                  mean_dyy /= c;
                  const double is = invstd.at(i, 0);
                  double* dx = &x->grad.at(i, 0);
                  for (int j = 0; j < c; ++j)
                    dx[j] += is * (dy[j] - mean_dy - y[j] * mean_dyy);
                }
              });
}

Var Tape::layernorm_affine(Var x, Var g, Var b) {
  return add_rowvec(mul_rowvec(layernorm(x), g), b);
}

Var Tape::attention(Var q, Var k, Var v, int heads) {
  const int n = q->value.rows, c = q->value.cols;
  require_same_shape(q->value, k->value, "attention");
  require_same_shape(q->value, v->value, "attention");
  if (heads < 1 || c % heads != 0)
    throw ShapeError("attention: embed dim must be divisible by heads");
  const int d = c / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(d));

  Mat out(n, c);
  // per-head softmax matrices cached for the backward pass
  auto probs = std::make_shared<std::vector<EMat>>();
  probs->reserve(heads);
  for (int h = 0; h < heads; ++h) {
    auto qh = emap(q->value).middleCols(h * d, d);
    auto kh = emap(k->value).middleCols(h * d, d);
    auto vh = emap(v->value).middleCols(h * d, d);
    EMat scores = scl * (qh * kh.transpose());
    for (int i = 0; i < n; ++i) {
      const double m = scores.row(i).maxCoeff();
      scores.row(i) = (scores.row(i).array() - m).exp();
      scores.row(i) /= scores.row(i).sum();
    }
    emap(out).middleCols(h * d, d).noalias() = scores * vh;
    probs->push_back(std::move(scores));
  }
  return make(std::move(out), {q, k, v}, [q, k, v, heads, d, scl, probs](Node& self) {
    for (int h = 0; h < heads; ++h) {
      const EMat& a = (*probs)[h];
      auto dout = emap(self.grad).middleCols(h * d, d);
      auto qh = emap(q->value).middleCols(h * d, d);
      auto kh = emap(k->value).middleCols(h * d, d);
      auto vh = emap(v->value).middleCols(h * d, d);
      if (v->requires_grad)
        emap(v->grad).middleCols(h * d, d).noalias() += a.transpose() * dout;
      if (q->requires_grad || k->requires_grad) {
        EMat da = dout * vh.transpose();
        Eigen::VectorXd rowdot = (da.cwiseProduct(a)).rowwise().sum();
        EMat ds = a.cwiseProduct(da.colwise() - rowdot);
        if (q->requires_grad)
          emap(q->grad).middleCols(h * d, d).noalias() += scl * (ds * kh);
        if (k->requires_grad)
          emap(k->grad).middleCols(h * d, d).noalias() += scl * (ds.transpose() * qh);
      }
    }
  });
}

Var Tape::slice_cols(Var x, int c0, int c1) {
  if (c0 < 0 || c1 > x->value.cols || c0 >= c1) throw ShapeError("slice_cols: bad range");
  Mat out(x->value.rows, c1 - c0);
  emap(out) = emap(x->value).middleCols(c0, c1 - c0);
  return make(std::move(out), {x}, [x, c0, c1](Node& self) {
    if (x->requires_grad)
      emap(x->grad).middleCols(c0, c1 - c0) += emap(self.grad);
  });
}

Var Tape::gather_rows(Var x, const std::vector<int>& indices) {
  Mat out(static_cast<int>(indices.size()), x->value.cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= x->value.rows)
      throw ShapeError("gather_rows: index out of range");
    emap(out).row(static_cast<int>(i)) = emap(x->value).row(indices[i]);
  }
  return make(std::move(out), {x}, [x, indices](Node& self) {
    if (!x->requires_grad) return;
    for (std::size_t i = 0; i < indices.size(); ++i)
      emap(x->grad).row(indices[i]) += emap(self.grad).row(static_cast<int>(i));
  });
}

Var Tape::broadcast_row(Var r, int rows) {
  if (r->value.rows != 1) throw ShapeError("broadcast_row: input must be 1 x C");
  Mat out(rows, r->value.cols);
  emap(out).rowwise() = emap(r->value).row(0);
  return make(std::move(out), {r}, [r](Node& self) {
    if (r->requires_grad) emap(r->grad).row(0) += emap(self.grad).colwise().sum();
  });
}

Var Tape::mean_rows(Var x) {
  const int n = x->value.rows;
  if (n < 1) throw ShapeError("mean_rows: empty input");
  Mat out(1, x->value.cols);
  emap(out).row(0) = emap(x->value).colwise().mean();
  return make(std::move(out), {x}, [x, n](Node& self) {
    if (x->requires_grad)
      emap(x->grad).rowwise() += emap(self.grad).row(0) / n;
  });
}

Var Tape::assemble_rows(Var z_local, Var z_global, const Mask& mask) {
  if (z_local->value.rows != mask.kept_count())
    throw ShapeError("assemble_rows: local token count does not match mask");
  if (z_global->value.rows != 1 || z_global->value.cols != z_local->value.cols)
    throw ShapeError("assemble_rows: global token must be 1 x C");
  Mat out(mask.total(), z_local->value.cols);
  emap(out).rowwise() = emap(z_global->value).row(0);
  for (int i = 0; i < mask.kept_count(); ++i)
    emap(out).row(mask.kept_indices[i]) = emap(z_local->value).row(i);
  return make(std::move(out), {z_local, z_global}, [z_local, z_global, mask](Node& self) {
    if (z_local->requires_grad) {
      for (int i = 0; i < mask.kept_count(); ++i)
        emap(z_local->grad).row(i) += emap(self.grad).row(mask.kept_indices[i]);
    }
    if (z_global->requires_grad) {
      for (int i = 0; i < mask.total(); ++i) {
        if (!mask.kept[i]) emap(z_global->grad).row(0) += emap(self.grad).row(i);
      }
    }
  });
}

Var Tape::sum(Var x) {
  Mat out(1, 1);
  out.at(0, 0) = emap(x->value).sum();
  return make(std::move(out), {x}, [x](Node& self) {
    if (x->requires_grad)
      emap(x->grad).array() += self.grad.at(0, 0);
  });
}

Var Tape::mse(Var pred, const Mat& target) {
  require_same_shape(pred->value, target, "mse");
  const double inv_n = 1.0 / static_cast<double>(pred->value.size());
  Mat diff(pred->value.rows, pred->value.cols);
  emap(diff) = emap(pred->value) - emap(target);
  Mat out(1, 1);
  out.at(0, 0) = emap(diff).squaredNorm() * inv_n;
  return make(std::move(out), {pred}, [pred, diff = std::move(diff), inv_n](Node& self) {
    if (pred->requires_grad)
      emap(pred->grad) += (2.0 * inv_n * self.grad.at(0, 0)) * emap(diff);
  });
}

Var Tape::cross_entropy(Var logits, const std::vector<int>& labels) {
  const int n = logits->value.rows, k = logits->value.cols;
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("cross_entropy: label count does not match rows");
  Mat probs(n, k);
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw ValueError("cross_entropy: label out of range");
    const double* row = &logits->value.at(i, 0);
    double m = row[0];
    for (int j = 1; j < k; ++j) m = std::max(m, row[j]);
    double z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - m);
    const double logz = std::log(z) + m;
    for (int j = 0; j < k; ++j) probs.at(i, j) = std::exp(row[j] - logz);
    loss -= row[labels[i]] - logz;
  }
  Mat out(1, 1);
  out.at(0, 0) = loss / n;
  return make(std::move(out), {logits},
              [logits, probs = std::move(probs), labels, n](Node& self) {
                if (!logits->requires_grad) return;
                const double w = self.grad.at(0, 0) / n;
                for (int i = 0; i < n; ++i) {
                  double* dl = &logits->grad.at(i, 0);
                  const double* p = &probs.at(i, 0);
                  for (int j = 0; j < logits->value.cols; ++j) dl[j] += w * p[j];
                  dl[labels[i]] -= w;
                }
              });
}

}  // namespace macdiff::ag
