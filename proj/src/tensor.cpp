// SPDX-License-Identifier: Apache-2.0
#include "kdrl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace kdrl::nn {

namespace {

using NodePtr = std::shared_ptr<Tensor::Node>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

Tensor make_output(Shape shape, bool requires_grad) { return Tensor::zeros(shape, requires_grad); }

// Unary elementwise op: out = f(x), dx += g * df(x, out).
template <typename F, typename DF>
Tensor unary(Tape& tape, const Tensor& x, F f, DF df) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < xv.size(); ++i) ov[i] = f(xv[i]);
  if (out.requires_grad()) {
    NodePtr xn = x.node();
    NodePtr on = out.node();
    tape.record(out, [xn, on, df] {
      auto& xg = xn->ensure_grad();
      for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += on->grad[i] * df(xn->values[i], on->values[i]);
    });
  }
  return out;
}

void row_log_softmax(const double* z, double* out, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) m = std::max(m, z[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) s += std::exp(z[j] - m);
  const double lse = m + std::log(s);
  for (std::size_t j = 0; j < n; ++j) out[j] = z[j] - lse;
}

}  // namespace

std::string Shape::str() const {
  std::ostringstream s;
  s << "[" << rows << "x" << cols << "]";
  return s.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->values.assign(shape.size(), 0.0);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != shape.size()) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape.str());
  }
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->values = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1, 1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("Tensor::item on non-scalar " + shape().str());
  return node_->values[0];
}

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

void Tape::record(const Tensor& output, std::function<void()> backward_rule) {
  entries_.push_back({output.node(), std::move(backward_rule)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("Tape::backward needs a scalar loss");
  }
  for (auto& e : entries_) {
    if (!e.output->grad.empty()) std::fill(e.output->grad.begin(), e.output->grad.end(), 0.0);
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->output->ensure_grad();
    it->rule();
  }
}

Tensor affine(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("affine: x" + x.shape().str() + " W" + w.shape().str() + " b" + b.shape().str());
  }
  const std::size_t batch = x.rows(), in = w.rows(), out_dim = w.cols();
  Tensor out = make_output({batch, out_dim}, x.requires_grad() || w.requires_grad() || b.requires_grad());
  auto xv = x.values();
  auto wv = w.values();
  auto bv = b.values();
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < batch; ++i) {
    double* row = ov.data() + i * out_dim;
    std::copy(bv.begin(), bv.end(), row);
    for (std::size_t k = 0; k < in; ++k) {
      const double xik = xv[i * in + k];
      if (xik == 0.0) continue;
      const double* wrow = wv.data() + k * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) row[j] += xik * wrow[j];
    }
  }
  if (out.requires_grad()) {
    NodePtr xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    tape.record(out, [xn, wn, bn, on, batch, in, out_dim] {
      const auto& g = on->grad;
      if (wn->requires_grad) {
        auto& wg = wn->ensure_grad();
        for (std::size_t i = 0; i < batch; ++i) {
          const double* grow = g.data() + i * out_dim;
          for (std::size_t k = 0; k < in; ++k) {
            const double xik = xn->values[i * in + k];
            if (xik == 0.0) continue;
            double* wgrow = wg.data() + k * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j) wgrow[j] += xik * grow[j];
          }
        }
      }
      if (bn->requires_grad) {
        auto& bg = bn->ensure_grad();
        for (std::size_t i = 0; i < batch; ++i) {
          for (std::size_t j = 0; j < out_dim; ++j) bg[j] += g[i * out_dim + j];
        }
      }
      if (xn->requires_grad) {
        auto& xg = xn->ensure_grad();
        for (std::size_t i = 0; i < batch; ++i) {
          const double* grow = g.data() + i * out_dim;
          for (std::size_t k = 0; k < in; ++k) {
            const double* wrow = wn->values.data() + k * out_dim;
            double acc = 0.0;
            for (std::size_t j = 0; j < out_dim; ++j) acc += grow[j] * wrow[j];
            xg[i * in + k] += acc;
          }
        }
      }
    });
  }
  return out;
}

Tensor tanh(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary(
      tape, x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(Tape& tape, const Tensor& a) {
  return unary(
      tape, a, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor square(Tape& tape, const Tensor& a) {
  return unary(
      tape, a, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor scale(Tape& tape, const Tensor& a, double s) {
  return unary(
      tape, a, [s](double v) { return s * v; }, [s](double, double) { return s; });
}

Tensor clamp(Tape& tape, const Tensor& a, double lo, double hi) {
  return unary(
      tape, a, [lo, hi](double v) { return std::clamp(v, lo, hi); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor softmax(Tape& tape, const Tensor& z) {
  const std::size_t rows = z.rows(), n = z.cols();
  Tensor out = make_output(z.shape(), z.requires_grad());
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < rows; ++i) {
    row_log_softmax(z.values().data() + i * n, ov.data() + i * n, n);
    for (std::size_t j = 0; j < n; ++j) ov[i * n + j] = std::exp(ov[i * n + j]);
  }
  if (out.requires_grad()) {
    NodePtr zn = z.node(), on = out.node();
    tape.record(out, [zn, on, rows, n] {
      auto& zg = zn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        const double* s = on->values.data() + i * n;
        const double* g = on->grad.data() + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[j] * s[j];
        for (std::size_t j = 0; j < n; ++j) zg[i * n + j] += s[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

Tensor log_softmax(Tape& tape, const Tensor& z) {
  const std::size_t rows = z.rows(), n = z.cols();
  Tensor out = make_output(z.shape(), z.requires_grad());
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < rows; ++i) row_log_softmax(z.values().data() + i * n, ov.data() + i * n, n);
  if (out.requires_grad()) {
    NodePtr zn = z.node(), on = out.node();
    tape.record(out, [zn, on, rows, n] {
      auto& zg = zn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        const double* l = on->values.data() + i * n;
        const double* g = on->grad.data() + i * n;
        double gsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) gsum += g[j];
        for (std::size_t j = 0; j < n; ++j) zg[i * n + j] += g[j] - std::exp(l[j]) * gsum;
      }
    });
  }
  return out;
}

Tensor gather(Tape& tape, const Tensor& x, std::span<const int> index) {
  const std::size_t rows = x.rows(), n = x.cols();
  if (index.size() != rows) {
    throw ShapeError("gather: " + std::to_string(index.size()) + " indices for " + x.shape().str());
  }
  for (int idx : index) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= n) {
      throw ShapeError("gather: index " + std::to_string(idx) + " outside " + std::to_string(n) + " columns");
    }
  }
  Tensor out = make_output({rows, 1}, x.requires_grad());
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < rows; ++i) ov[i] = x.values()[i * n + static_cast<std::size_t>(index[i])];
  if (out.requires_grad()) {
    NodePtr xn = x.node(), on = out.node();
    std::vector<int> idx(index.begin(), index.end());
    tape.record(out, [xn, on, idx = std::move(idx), n] {
      auto& xg = xn->ensure_grad();
      for (std::size_t i = 0; i < idx.size(); ++i) xg[i * n + static_cast<std::size_t>(idx[i])] += on->grad[i];
    });
  }
  return out;
}

Tensor gather_log_prob(Tape& tape, const Tensor& logits, std::span<const int> actions) {
  return gather(tape, log_softmax(tape, logits), actions);
}

Tensor entropy(Tape& tape, const Tensor& logits) {
  const std::size_t rows = logits.rows(), n = logits.cols();
  Tensor out = make_output({rows, 1}, logits.requires_grad());
  std::vector<double> logp(rows * n);
  for (std::size_t i = 0; i < rows; ++i) {
    row_log_softmax(logits.values().data() + i * n, logp.data() + i * n, n);
    double h = 0.0;
    for (std::size_t j = 0; j < n; ++j) h -= std::exp(logp[i * n + j]) * logp[i * n + j];
    out.mutable_values()[i] = h;
  }
  if (out.requires_grad()) {
    NodePtr zn = logits.node(), on = out.node();
    tape.record(out, [zn, on, logp = std::move(logp), rows, n] {
      auto& zg = zn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        const double h = on->values[i];
        const double g = on->grad[i];
        for (std::size_t j = 0; j < n; ++j) {
          const double lp = logp[i * n + j];
          zg[i * n + j] += -g * std::exp(lp) * (lp + h);
        }
      }
    });
  }
  return out;
}

void check_simplex_rows(std::span<const double> p, std::size_t n) {
  if (n == 0 || p.size() % n != 0) throw ShapeError("distribution matrix does not divide into rows of " + std::to_string(n));
  for (std::size_t i = 0; i < p.size() / n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = p[i * n + j];
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("row " + std::to_string(i) + " has a negative or non-finite probability");
      }
      s += v;
    }
    if (std::abs(s - 1.0) > kSimplexTolerance) {
      throw std::invalid_argument("row " + std::to_string(i) + " sums to " + std::to_string(s) + ", not 1");
    }
  }
}

Tensor kl_categorical(Tape& tape, std::span<const double> p, const Tensor& logits_q) {
  const std::size_t rows = logits_q.rows(), n = logits_q.cols();
  if (p.size() != rows * n) {
    throw ShapeError("kl_categorical: " + std::to_string(p.size()) + " probabilities for logits " +
                     logits_q.shape().str());
  }
  check_simplex_rows(p, n);
  Tensor out = make_output({rows, 1}, logits_q.requires_grad());
  std::vector<double> q(rows * n);
  std::vector<double> psum(rows, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double* lq = q.data() + i * n;
    row_log_softmax(logits_q.values().data() + i * n, lq, n);
    double kl = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double pj = p[i * n + j];
      psum[i] += pj;
      if (pj > 0.0) kl += pj * (std::log(pj) - lq[j]);
    }
    out.mutable_values()[i] = kl;
    for (std::size_t j = 0; j < n; ++j) lq[j] = std::exp(lq[j]);
  }
  if (out.requires_grad()) {
    NodePtr zn = logits_q.node(), on = out.node();
    std::vector<double> pc(p.begin(), p.end());
    tape.record(out, [zn, on, q = std::move(q), pc = std::move(pc), psum = std::move(psum), rows, n] {
      auto& zg = zn->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        const double g = on->grad[i];
        for (std::size_t j = 0; j < n; ++j) zg[i * n + j] += g * (q[i * n + j] * psum[i] - pc[i * n + j]);
      }
    });
  }
  return out;
}

namespace {

template <typename F, typename DA, typename DB>
Tensor binary(Tape& tape, const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  require_same_shape(a, b, name);
  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  auto ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = f(a.values()[i], b.values()[i]);
  if (out.requires_grad()) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    tape.record(out, [an, bn, on, da, db] {
      const std::size_t size = on->values.size();
      if (an->requires_grad) {
        auto& ag = an->ensure_grad();
        for (std::size_t i = 0; i < size; ++i) ag[i] += on->grad[i] * da(an->values[i], bn->values[i]);
      }
      if (bn->requires_grad) {
        auto& bg = bn->ensure_grad();
        for (std::size_t i = 0; i < size; ++i) bg[i] += on->grad[i] * db(an->values[i], bn->values[i]);
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

// Ties route the gradient to `a`.
Tensor minimum(Tape& tape, const Tensor& a, const Tensor& b) {
  return binary(
      tape, a, b, "minimum", [](double x, double y) { return std::min(x, y); },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor sum(Tape& tape, const Tensor& a) {
  Tensor out = make_output({1, 1}, a.requires_grad());
  double s = 0.0;
  for (double v : a.values()) s += v;
  out.mutable_values()[0] = s;
  if (out.requires_grad()) {
    NodePtr an = a.node(), on = out.node();
    tape.record(out, [an, on] {
      auto& ag = an->ensure_grad();
      for (double& g : ag) g += on->grad[0];
    });
  }
  return out;
}

Tensor mean(Tape& tape, const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty tensor");
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

Tensor column(Tape& tape, const Tensor& a, std::size_t j) {
  if (j >= a.cols()) throw ShapeError("column: index " + std::to_string(j) + " outside " + a.shape().str());
  const std::size_t rows = a.rows(), n = a.cols();
  Tensor out = make_output({rows, 1}, a.requires_grad());
  for (std::size_t i = 0; i < rows; ++i) out.mutable_values()[i] = a.values()[i * n + j];
  if (out.requires_grad()) {
    NodePtr an = a.node(), on = out.node();
    tape.record(out, [an, on, rows, n, j] {
      auto& ag = an->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) ag[i * n + j] += on->grad[i];
    });
  }
  return out;
}

std::vector<double> softmax_row(std::span<const double> z) {
  std::vector<double> out(z.size());
  row_log_softmax(z.data(), out.data(), z.size());
  for (double& v : out) v = std::exp(v);
  return out;
}

std::vector<double> log_softmax_row(std::span<const double> z) {
  std::vector<double> out(z.size());
  row_log_softmax(z.data(), out.data(), z.size());
  return out;
}

}  // namespace kdrl::nn
