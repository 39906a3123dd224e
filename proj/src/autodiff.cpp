#include "mindcine/autodiff.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace mindcine::ad {

const Matrix& Var::value() const { return graph_->value(id_); }
const Matrix& Var::grad() const { return graph_->grad(id_); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar() on a " + shape_str(v) + " node");
  return v(0, 0);
}

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
  Node n;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Matrix value, const std::vector<Var>& parents, Backward back) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (p.graph() != this) throw Error("autodiff: mixing nodes from different graphs");
    n.needs_grad = n.needs_grad || needs_grad(p.id());
  }
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Graph::grad(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  if (n.param) return n.param->grad;
  if (!n.has_grad) {
    // Lazily report zeros of the right shape for untouched nodes.
    auto& mut = const_cast<Node&>(n);
    mut.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    mut.has_grad = true;
  }
  return n.grad;
}

void Graph::accumulate(int id, const Matrix& delta) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.needs_grad) return;
  if (n.param) {
    n.param->grad += delta;
    return;
  }
  if (!n.has_grad) {
    n.grad = delta;
    n.has_grad = true;
  } else {
    n.grad += delta;
  }
}

void Graph::accumulate_block(int id, Index row, Index col, const Matrix& delta) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (!n.needs_grad) return;
  if (n.param) {
    n.param->grad.block(row, col, delta.rows(), delta.cols()) += delta;
    return;
  }
  if (!n.has_grad) {
    n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  n.grad.block(row, col, delta.rows(), delta.cols()) += delta;
}

void Graph::backward(const Var& loss) {
  if (loss.graph() != this) throw Error("autodiff: loss belongs to another graph");
  const Matrix& v = value(loss.id());
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("backward() needs a 1x1 loss, got " + shape_str(v));
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || !n.has_grad || !n.back) continue;
    n.back(*this, n.grad);
  }
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a.value()) + " * " + shape_str(b.value()));
  }
  Graph& g = *a.graph();
  Matrix out = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& gr, const Matrix& up) {
    if (gr.needs_grad(ia)) gr.accumulate(ia, up * gr.value(ib).transpose());
    if (gr.needs_grad(ib)) gr.accumulate(ib, gr.value(ia).transpose() * up);
  });
}

Var transpose(const Var& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.record(a.value().transpose(), {a},
                  [ia](Graph& gr, const Matrix& up) { gr.accumulate(ia, up.transpose()); });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Graph& g = *a.graph();
  const int ia = a.id(), ib = b.id();
  return g.record(a.value() + b.value(), {a, b}, [ia, ib](Graph& gr, const Matrix& up) {
    gr.accumulate(ia, up);
    gr.accumulate(ib, up);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Graph& g = *a.graph();
  const int ia = a.id(), ib = b.id();
  return g.record(a.value() - b.value(), {a, b}, [ia, ib](Graph& gr, const Matrix& up) {
    gr.accumulate(ia, up);
    if (gr.needs_grad(ib)) gr.accumulate(ib, -up);
  });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_shape(a, b, "hadamard");
  Graph& g = *a.graph();
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& gr, const Matrix& up) {
    if (gr.needs_grad(ia)) gr.accumulate(ia, up.cwiseProduct(gr.value(ib)));
    if (gr.needs_grad(ib)) gr.accumulate(ib, up.cwiseProduct(gr.value(ia)));
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: " + shape_str(a.value()) + " + " + shape_str(row.value()));
  }
  Graph& g = *a.graph();
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return g.record(std::move(out), {a, row}, [ia, ir](Graph& gr, const Matrix& up) {
    gr.accumulate(ia, up);
    if (gr.needs_grad(ir)) gr.accumulate(ir, up.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("mul_row: " + shape_str(a.value()) + " * " + shape_str(row.value()));
  }
  Graph& g = *a.graph();
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return g.record(std::move(out), {a, row}, [ia, ir](Graph& gr, const Matrix& up) {
    if (gr.needs_grad(ia)) {
      Matrix d = up.array().rowwise() * gr.value(ir).row(0).array();
      gr.accumulate(ia, d);
    }
    if (gr.needs_grad(ir)) gr.accumulate(ir, up.cwiseProduct(gr.value(ia)).colwise().sum());
  });
}

Var add_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) {
    throw ShapeError("add_col: " + shape_str(a.value()) + " + " + shape_str(col.value()));
  }
  Graph& g = *a.graph();
  const int ia = a.id(), ic = col.id();
  Matrix out = a.value().colwise() + col.value().col(0);
  return g.record(std::move(out), {a, col}, [ia, ic](Graph& gr, const Matrix& up) {
    gr.accumulate(ia, up);
    if (gr.needs_grad(ic)) gr.accumulate(ic, up.rowwise().sum());
  });
}

Var scale(const Var& a, double s) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.record(a.value() * s, {a}, [ia, s](Graph& gr, const Matrix& up) { gr.accumulate(ia, up * s); });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("scale_by: factor must be 1x1");
  Graph& g = *a.graph();
  const int ia = a.id(), is = s.id();
  Matrix out = a.value() * s.value()(0, 0);
  return g.record(std::move(out), {a, s}, [ia, is](Graph& gr, const Matrix& up) {
    if (gr.needs_grad(ia)) gr.accumulate(ia, up * gr.value(is)(0, 0));
    if (gr.needs_grad(is)) {
      Matrix d(1, 1);
      d(0, 0) = up.cwiseProduct(gr.value(ia)).sum();
      gr.accumulate(is, d);
    }
  });
}

Var add_const(const Var& a, const Matrix& c) {
  if (c.rows() != a.rows() || c.cols() != a.cols()) {
    throw ShapeError("add_const: " + shape_str(a.value()) + " + " + shape_str(c));
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.record(a.value() + c, {a}, [ia](Graph& gr, const Matrix& up) { gr.accumulate(ia, up); });
}

Var exp(const Var& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out = a.value().array().exp().matrix();
  Matrix saved = out;
  return g.record(std::move(out), {a}, [ia, saved = std::move(saved)](Graph& gr, const Matrix& up) {
    gr.accumulate(ia, up.cwiseProduct(saved));
  });
}

Var gelu(const Var& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
  }
  return g.record(std::move(out), {a}, [ia](Graph& gr, const Matrix& up) {
    const Matrix& xv = gr.value(ia);
    Matrix d(xv.rows(), xv.cols());
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (Index i = 0; i < xv.size(); ++i) {
      const double v = xv.data()[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      d.data()[i] = up.data()[i] * (cdf + v * pdf);
    }
    gr.accumulate(ia, d);
  });
}

Var tanh(const Var& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out = a.value().array().tanh().matrix();
  Matrix saved = out;
  return g.record(std::move(out), {a}, [ia, saved = std::move(saved)](Graph& gr, const Matrix& up) {
    Matrix d = up.array() * (1.0 - saved.array().square());
    gr.accumulate(ia, d);
  });
}

Var sum(const Var& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return g.record(std::move(out), {a}, [ia, r, c](Graph& gr, const Matrix& up) {
    gr.accumulate(ia, Matrix::Constant(r, c, up(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw EmptyInputError("mean of an empty matrix");
  return scale(sum(a), 1.0 / n);
}

Var sum_squares(const Var& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().squaredNorm();
  return g.record(std::move(out), {a}, [ia](Graph& gr, const Matrix& up) {
    gr.accumulate(ia, gr.value(ia) * (2.0 * up(0, 0)));
  });
}

Var row_softmax(const Var& a, const Mask* mask) {
  const Matrix& x = a.value();
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
    throw ShapeError("row_softmax: mask " + shape_str(mask->rows(), mask->cols()) + " vs logits " + shape_str(x));
  }
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (Index j = 0; j < x.cols(); ++j) {
      if (mask && !(*mask)(i, j)) continue;
      any = true;
      mx = std::max(mx, x(i, j));
    }
    if (!any) throw NumericError("row_softmax: row " + std::to_string(i) + " is fully masked");
    if (!std::isfinite(mx)) throw NumericError("row_softmax: non-finite logit in row " + std::to_string(i));
    double total = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      if (mask && !(*mask)(i, j)) continue;
      const double e = std::exp(x(i, j) - mx);
      out(i, j) = e;
      total += e;
    }
    out.row(i) /= total;
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix saved = out;
  return g.record(std::move(out), {a}, [ia, saved = std::move(saved)](Graph& gr, const Matrix& up) {
    Vector dots = up.cwiseProduct(saved).rowwise().sum();
    Matrix d = saved.cwiseProduct(up.colwise() - dots);
    gr.accumulate(ia, d);
  });
}

Var row_log_softmax(const Var& a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  Matrix soft(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mx = x.row(i).maxCoeff();
    if (!std::isfinite(mx)) throw NumericError("row_log_softmax: non-finite logit in row " + std::to_string(i));
    const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
    out.row(i) = x.row(i).array() - lse;
    soft.row(i) = out.row(i).array().exp();
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.record(std::move(out), {a}, [ia, soft = std::move(soft)](Graph& gr, const Matrix& up) {
    Vector totals = up.rowwise().sum();
    Matrix d = up - (soft.array().colwise() * totals.array()).matrix();
    gr.accumulate(ia, d);
  });
}

Var layer_norm_rows(const Var& a, double eps) {
  const Matrix& x = a.value();
  const double n = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Vector inv_std(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().sum() / n;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix saved = xhat;
  return g.record(std::move(xhat), {a},
                  [ia, saved = std::move(saved), inv_std = std::move(inv_std), n](Graph& gr, const Matrix& up) {
                    Matrix d(up.rows(), up.cols());
                    for (Index i = 0; i < up.rows(); ++i) {
                      const double mg = up.row(i).mean();
                      const double mgx = up.row(i).dot(saved.row(i)) / n;
                      d.row(i) = (up.row(i).array() - mg - saved.row(i).array() * mgx) * inv_std(i);
                    }
                    gr.accumulate(ia, d);
                  });
}

Var l2_normalize_rows(const Var& a, double eps) {
  const Matrix& x = a.value();
  Vector norms(x.rows());
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    norms(i) = std::sqrt(x.row(i).squaredNorm() + eps);
    out.row(i) = x.row(i) / norms(i);
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.record(std::move(out), {a}, [ia, norms = std::move(norms)](Graph& gr, const Matrix& up) {
    const Matrix& xv = gr.value(ia);
    Matrix d(up.rows(), up.cols());
    for (Index i = 0; i < up.rows(); ++i) {
      const double nrm = norms(i);
      const double xg = xv.row(i).dot(up.row(i));
      d.row(i) = up.row(i) / nrm - xv.row(i) * (xg / (nrm * nrm * nrm));
    }
    gr.accumulate(ia, d);
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                     shape_str(a.value()));
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out = a.value().middleCols(start, count);
  return g.record(std::move(out), {a},
                  [ia, start](Graph& gr, const Matrix& up) { gr.accumulate_block(ia, 0, start, up); });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                     shape_str(a.value()));
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out = a.value().middleRows(start, count);
  return g.record(std::move(out), {a},
                  [ia, start](Graph& gr, const Matrix& up) { gr.accumulate_block(ia, start, 0, up); });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_cols: no parts");
  Graph& g = *parts.front().graph();
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> spans;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id(), p.cols());
    at += p.cols();
  }
  return g.record(std::move(out), parts, [spans](Graph& gr, const Matrix& up) {
    Index off = 0;
    for (const auto& [id, n] : spans) {
      if (gr.needs_grad(id)) gr.accumulate(id, up.middleCols(off, n));
      off += n;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw EmptyInputError("concat_rows: no parts");
  Graph& g = *parts.front().graph();
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> spans;
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    spans.emplace_back(p.id(), p.rows());
    at += p.rows();
  }
  return g.record(std::move(out), parts, [spans](Graph& gr, const Matrix& up) {
    Index off = 0;
    for (const auto& [id, n] : spans) {
      if (gr.needs_grad(id)) gr.accumulate(id, up.middleRows(off, n));
      off += n;
    }
  });
}

Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape: " + shape_str(a.value()) + " -> " + shape_str(rows, cols));
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  return g.record(std::move(out), {a}, [ia, r, c](Graph& gr, const Matrix& up) {
    gr.accumulate(ia, Eigen::Map<const Matrix>(up.data(), r, c));
  });
}

Var repeat_rows(const Var& a, Index times) {
  if (times < 1) throw ShapeError("repeat_rows: times must be >= 1");
  Graph& g = *a.graph();
  const int ia = a.id();
  const Index r = a.rows(), c = a.cols();
  Matrix out(r * times, c);
  for (Index i = 0; i < r; ++i) {
    for (Index k = 0; k < times; ++k) out.row(i * times + k) = a.value().row(i);
  }
  return g.record(std::move(out), {a}, [ia, r, c, times](Graph& gr, const Matrix& up) {
    Matrix d = Matrix::Zero(r, c);
    for (Index i = 0; i < r; ++i) {
      for (Index k = 0; k < times; ++k) d.row(i) += up.row(i * times + k);
    }
    gr.accumulate(ia, d);
  });
}

Var temporal_spatial_conv(const Var& x, const Var& temporal, const Var& spatial, Index channels) {
  const Matrix& xv = x.value();
  const Matrix& kv = temporal.value();
  const Matrix& sv = spatial.value();
  if (channels < 1 || xv.rows() % channels != 0) {
    throw ShapeError("temporal_spatial_conv: " + std::to_string(xv.rows()) + " rows not divisible into " +
                     std::to_string(channels) + " channels");
  }
  const Index windows = xv.rows() / channels;
  const Index width = xv.cols();
  const Index filters = kv.rows();
  const Index k = kv.cols();
  const Index maps = sv.rows();
  if (k > width) throw ShapeError("temporal_spatial_conv: kernel longer than window");
  if (sv.cols() != filters * channels) {
    throw ShapeError("temporal_spatial_conv: spatial weights " + shape_str(sv) + " need " +
                     std::to_string(filters * channels) + " columns");
  }
  const Index len = width - k + 1;

  // xr: channels x (windows*width); wr: (maps*filters) x channels.
  Matrix xr(channels, windows * width);
  for (Index n = 0; n < windows; ++n) xr.middleCols(n * width, width) = xv.middleRows(n * channels, channels);
  Matrix wr(maps * filters, channels);
  for (Index g = 0; g < maps; ++g)
    for (Index f = 0; f < filters; ++f) wr.row(g * filters + f) = sv.row(g).segment(f * channels, channels);
  Matrix mixed = wr * xr;  // (maps*filters) x (windows*width)

  Matrix out = Matrix::Zero(maps, windows * len);
  for (Index g = 0; g < maps; ++g)
    for (Index f = 0; f < filters; ++f)
      for (Index n = 0; n < windows; ++n) {
        auto dst = out.row(g).segment(n * len, len);
        const auto src = mixed.row(g * filters + f).segment(n * width, width);
        for (Index j = 0; j < k; ++j) dst += kv(f, j) * src.segment(j, len);
      }

  Graph& gph = *x.graph();
  const int ix = x.id(), ik = temporal.id(), is = spatial.id();
  return gph.record(
      std::move(out), {x, temporal, spatial},
      [ix, ik, is, channels, windows, width, filters, k, maps, len, xr = std::move(xr), wr = std::move(wr),
       mixed = std::move(mixed)](Graph& gr, const Matrix& up) {
        const Matrix& kv2 = gr.value(ik);
        if (gr.needs_grad(ik)) {
          Matrix dk = Matrix::Zero(filters, k);
          for (Index g = 0; g < maps; ++g)
            for (Index f = 0; f < filters; ++f)
              for (Index n = 0; n < windows; ++n) {
                const auto u = up.row(g).segment(n * len, len);
                const auto src = mixed.row(g * filters + f).segment(n * width, width);
                for (Index j = 0; j < k; ++j) dk(f, j) += u.dot(src.segment(j, len));
              }
          gr.accumulate(ik, dk);
        }
        if (!gr.needs_grad(ix) && !gr.needs_grad(is)) return;
        Matrix dmixed = Matrix::Zero(maps * filters, windows * width);
        for (Index g = 0; g < maps; ++g)
          for (Index f = 0; f < filters; ++f)
            for (Index n = 0; n < windows; ++n) {
              const auto u = up.row(g).segment(n * len, len);
              auto dst = dmixed.row(g * filters + f).segment(n * width, width);
              for (Index j = 0; j < k; ++j) dst.segment(j, len) += kv2(f, j) * u;
            }
        if (gr.needs_grad(is)) {
          Matrix dwr = dmixed * xr.transpose();
          Matrix ds(maps, filters * channels);
          for (Index g = 0; g < maps; ++g)
            for (Index f = 0; f < filters; ++f) ds.row(g).segment(f * channels, channels) = dwr.row(g * filters + f);
          gr.accumulate(is, ds);
        }
        if (gr.needs_grad(ix)) {
          Matrix dxr = wr.transpose() * dmixed;
          Matrix dx(windows * channels, width);
          for (Index n = 0; n < windows; ++n) dx.middleRows(n * channels, channels) = dxr.middleCols(n * width, width);
          gr.accumulate(ix, dx);
        }
      });
}

Var avg_pool_cols(const Var& a, Index group, Index pool) {
  const Matrix& x = a.value();
  if (group < 1 || pool < 1 || pool > group || x.cols() % group != 0) {
    throw ShapeError("avg_pool_cols: group " + std::to_string(group) + ", pool " + std::to_string(pool) +
                     " on " + shape_str(x));
  }
  const Index groups = x.cols() / group;
  const Index per = group / pool;
  Matrix out(x.rows(), groups * per);
  for (Index gi = 0; gi < groups; ++gi) {
    for (Index p = 0; p < per; ++p) {
      out.col(gi * per + p) = x.middleCols(gi * group + p * pool, pool).rowwise().mean();
    }
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  const Index r = x.rows(), c = x.cols();
  return g.record(std::move(out), {a}, [ia, r, c, groups, group, per, pool](Graph& gr, const Matrix& up) {
    Matrix d = Matrix::Zero(r, c);
    const double inv = 1.0 / static_cast<double>(pool);
    for (Index gi = 0; gi < groups; ++gi) {
      for (Index p = 0; p < per; ++p) {
        for (Index j = 0; j < pool; ++j) d.col(gi * group + p * pool + j) = up.col(gi * per + p) * inv;
      }
    }
    gr.accumulate(ia, d);
  });
}

}  // namespace mindcine::ad
