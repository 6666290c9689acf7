#include "gtree/ad/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "gtree/errors.hpp"

namespace gtree::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

namespace {

MapC view(const Tensor& t) {
  return MapC(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
Map view(Tensor& t) { return Map(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())); }

Tensor like(const Tensor& t, double fill = 0.0) { return Tensor(t.shape(), fill); }

Graph& graph_of(Var a) {
  if (!a.valid()) throw ContractError("invalid graph variable");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("variables belong to different graphs");
  return graph_of(a);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch");
}

// Elementwise op with derivative expressed through input x and output y.
template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
  Graph& g = graph_of(a);
  const Tensor& x = g.value(a);
  Tensor y = like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const int in = a.id;
  return g.record(std::move(y), {a}, [in, dfdx](Graph& gr, int self) {
    if (!gr.requires_grad(in)) return;
    const Tensor& xv = gr.value_of(in);
    const Tensor& yv = gr.value_of(self);
    const Tensor& gy = gr.grad_ref(self);
    Tensor& gx = gr.grad_ref(in);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += gy[i] * dfdx(xv[i], yv[i]);
  });
}

void note_bits(Graph& g, const Tensor& x, auto predicate) {
  if (!g.tracking_kinks()) return;
  std::uint64_t word = 0;
  int nbits = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    word = (word << 1) | (predicate(x[i]) ? 1u : 0u);
    if (++nbits == 64) {
      g.note_branch(word);
      word = 0;
      nbits = 0;
    }
  }
  g.note_branch(word ^ (static_cast<std::uint64_t>(nbits) << 56));
}

}  // namespace

const Tensor& Var::value() const { return graph_of(*this).value(*this); }

Var Graph::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(const std::string& name, const Tensor& value) {
  Node n;
  n.value = value;
  n.param_name = name;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.graph != this) throw ContractError("input from a different graph");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(v.id)].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Tensor& Graph::value(Var v) const {
  if (v.graph != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw ContractError("variable does not belong to this graph");
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

Tensor& Graph::grad_ref(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

const Tensor& Graph::grad(Var v) const {
  value(v);
  return const_cast<Graph*>(this)->grad_ref(v.id);
}

void Graph::backward(Var loss) {
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw ContractError("backward() needs a scalar loss");
  for (auto& n : nodes_) n.grad = Tensor();
  grad_ref(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, id);
  }
}

GradSet Graph::parameter_grads() const {
  GradSet out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const auto& n = nodes_[id];
    if (n.param_name.empty()) continue;
    Tensor g = n.grad.size() == n.value.size() ? n.grad : Tensor(n.value.shape(), 0.0);
    auto it = out.find(n.param_name);
    if (it == out.end()) {
      out.emplace(n.param_name, std::move(g));
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
  return out;
}

void Graph::note_branch(std::uint64_t bits) {
  kink_hash_ ^= bits + 0x9e3779b97f4a7c15ULL + (kink_hash_ << 6) + (kink_hash_ >> 2);
}

// ---- arithmetic ---------------------------------------------------------

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(g.value(a), g.value(b), "add");
  Tensor y = g.value(a);
  view(y) += view(g.value(b));
  const int ia = a.id, ib = b.id;
  return g.record(std::move(y), {a, b}, [ia, ib](Graph& gr, int self) {
    const Tensor& gy = gr.grad_ref(self);
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)) += view(gy);
    if (gr.requires_grad(ib)) view(gr.grad_ref(ib)) += view(gy);
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(g.value(a), g.value(b), "sub");
  Tensor y = g.value(a);
  view(y) -= view(g.value(b));
  const int ia = a.id, ib = b.id;
  return g.record(std::move(y), {a, b}, [ia, ib](Graph& gr, int self) {
    const Tensor& gy = gr.grad_ref(self);
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)) += view(gy);
    if (gr.requires_grad(ib)) view(gr.grad_ref(ib)) -= view(gy);
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same_shape(g.value(a), g.value(b), "mul");
  Tensor y = g.value(a);
  view(y).array() *= view(g.value(b)).array();
  const int ia = a.id, ib = b.id;
  return g.record(std::move(y), {a, b}, [ia, ib](Graph& gr, int self) {
    const Tensor& gy = gr.grad_ref(self);
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)).array() += view(gy).array() * view(gr.value_of(ib)).array();
    if (gr.requires_grad(ib)) view(gr.grad_ref(ib)).array() += view(gy).array() * view(gr.value_of(ia)).array();
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor y = g.value(a);
  view(y) *= s;
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia, s](Graph& gr, int self) {
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)) += s * view(gr.grad_ref(self));
  });
}

Var add_const(Var a, const Tensor& c) {
  Graph& g = graph_of(a);
  require_same_shape(g.value(a), c, "add_const");
  Tensor y = g.value(a);
  view(y) += view(c);
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia](Graph& gr, int self) {
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)) += view(gr.grad_ref(self));
  });
}

Var mul_const(Var a, const Tensor& c) {
  Graph& g = graph_of(a);
  require_same_shape(g.value(a), c, "mul_const");
  Tensor y = g.value(a);
  view(y).array() *= view(c).array();
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia, c](Graph& gr, int self) {
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)).array() += view(gr.grad_ref(self)).array() * view(c).array();
  });
}

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  const Tensor& x = g.value(a);
  const Tensor& r = g.value(row);
  if (r.rows() != 1 || r.cols() != x.cols()) throw ShapeError("add_row: bias width mismatch");
  Tensor y = x;
  view(y).rowwise() += view(r).row(0);
  const int ia = a.id, ir = row.id;
  return g.record(std::move(y), {a, row}, [ia, ir](Graph& gr, int self) {
    const Tensor& gy = gr.grad_ref(self);
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)) += view(gy);
    if (gr.requires_grad(ir)) view(gr.grad_ref(ir)).row(0) += view(gy).colwise().sum();
  });
}

Var broadcast_rows(Var row, std::size_t n) {
  Graph& g = graph_of(row);
  const Tensor& r = g.value(row);
  if (r.rows() != 1) throw ShapeError("broadcast_rows needs a single row");
  Tensor y = Tensor::matrix(n, r.cols());
  view(y).rowwise() = view(r).row(0);
  const int ir = row.id;
  return g.record(std::move(y), {row}, [ir](Graph& gr, int self) {
    if (gr.requires_grad(ir)) view(gr.grad_ref(ir)).row(0) += view(gr.grad_ref(self)).colwise().sum();
  });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& x = g.value(a);
  const Tensor& w = g.value(b);
  if (x.cols() != w.rows()) throw ShapeError("matmul: inner dimensions differ");
  Tensor y = Tensor::matrix(x.rows(), w.cols());
  view(y).noalias() = view(x) * view(w);
  const int ia = a.id, ib = b.id;
  return g.record(std::move(y), {a, b}, [ia, ib](Graph& gr, int self) {
    const Tensor& gy = gr.grad_ref(self);
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)).noalias() += view(gy) * view(gr.value_of(ib)).transpose();
    if (gr.requires_grad(ib)) view(gr.grad_ref(ib)).noalias() += view(gr.value_of(ia)).transpose() * view(gy);
  });
}

// ---- elementwise --------------------------------------------------------

Var relu(Var a) {
  note_bits(graph_of(a), graph_of(a).value(a), [](double v) { return v > 0.0; });
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(Var a) {
  note_bits(graph_of(a), graph_of(a).value(a), [](double v) { return v >= 0.0; });
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var clamp(Var a, double lo, double hi) {
  Graph& g = graph_of(a);
  if (g.tracking_kinks()) {
    note_bits(g, g.value(a), [lo](double v) { return v < lo; });
    note_bits(g, g.value(a), [hi](double v) { return v > hi; });
  }
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- reductions ---------------------------------------------------------

Var sum(Var a) {
  Graph& g = graph_of(a);
  const Tensor y = Tensor::scalar(view(g.value(a)).sum());
  const int ia = a.id;
  return g.record(y, {a}, [ia](Graph& gr, int self) {
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)).array() += gr.grad_ref(self)[0];
  });
}

Var mean(Var a) {
  Graph& g = graph_of(a);
  const auto n = static_cast<double>(g.value(a).size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = g.value(a);
  Tensor y = Tensor::matrix(1, x.cols());
  view(y).row(0) = view(x).colwise().sum();
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia](Graph& gr, int self) {
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)).rowwise() += view(gr.grad_ref(self)).row(0);
  });
}

Var mean_rows(Var a) {
  const auto n = graph_of(a).value(a).rows();
  if (n == 0) throw ShapeError("mean_rows of empty tensor");
  return scale(sum_rows(a), 1.0 / static_cast<double>(n));
}

Var sum_cols(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = g.value(a);
  Tensor y = Tensor::matrix(x.rows(), 1);
  view(y).col(0) = view(x).rowwise().sum();
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia](Graph& gr, int self) {
    if (gr.requires_grad(ia)) view(gr.grad_ref(ia)).colwise() += view(gr.grad_ref(self)).col(0);
  });
}

// ---- indexing -----------------------------------------------------------

Var gather_rows(Var a, const std::vector<int>& idx) {
  Graph& g = graph_of(a);
  const Tensor& x = g.value(a);
  const auto cols = x.cols();
  Tensor y = Tensor::matrix(idx.size(), cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0) continue;
    if (static_cast<std::size_t>(idx[r]) >= x.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(x.data() + static_cast<std::size_t>(idx[r]) * cols, cols, y.data() + r * cols);
  }
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia, idx, cols](Graph& gr, int self) {
    if (!gr.requires_grad(ia)) return;
    const Tensor& gy = gr.grad_ref(self);
    Tensor& gx = gr.grad_ref(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      double* dst = gx.data() + static_cast<std::size_t>(idx[r]) * cols;
      const double* src = gy.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

Var segment_reduce(Var a, const std::vector<int>& seg, std::size_t segments, SegmentReduce kind) {
  Graph& g = graph_of(a);
  const Tensor& x = g.value(a);
  if (seg.size() != x.rows()) throw ShapeError("segment_reduce: one segment id per row required");
  const auto cols = x.cols();
  Tensor y = Tensor::matrix(segments, cols);
  std::vector<double> counts(segments, 0.0);
  for (int s : seg) {
    if (s < 0 || static_cast<std::size_t>(s) >= segments) throw ShapeError("segment_reduce: bad segment id");
    counts[static_cast<std::size_t>(s)] += 1.0;
  }
  // For Max: index of the winning row per (segment, col); -1 for empty segments.
  std::vector<int> argmax;
  if (kind == SegmentReduce::Max) {
    argmax.assign(segments * cols, -1);
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const auto s = static_cast<std::size_t>(seg[r]);
      for (std::size_t c = 0; c < cols; ++c) {
        int& am = argmax[s * cols + c];
        if (am < 0 || x.at(r, c) > x.at(static_cast<std::size_t>(am), c)) am = static_cast<int>(r);
      }
    }
    for (std::size_t k = 0; k < argmax.size(); ++k)
      if (argmax[k] >= 0) y[k] = x.at(static_cast<std::size_t>(argmax[k]), k % cols);
    if (g.tracking_kinks())
      for (int am : argmax) g.note_branch(static_cast<std::uint64_t>(am + 1));
  } else {
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const auto s = static_cast<std::size_t>(seg[r]);
      for (std::size_t c = 0; c < cols; ++c) y.at(s, c) += x.at(r, c);
    }
    if (kind == SegmentReduce::Mean)
      for (std::size_t s = 0; s < segments; ++s)
        if (counts[s] > 0)
          for (std::size_t c = 0; c < cols; ++c) y.at(s, c) /= counts[s];
  }
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia, seg, counts, argmax, cols, kind](Graph& gr, int self) {
    if (!gr.requires_grad(ia)) return;
    const Tensor& gy = gr.grad_ref(self);
    Tensor& gx = gr.grad_ref(ia);
    if (kind == SegmentReduce::Max) {
      for (std::size_t k = 0; k < argmax.size(); ++k)
        if (argmax[k] >= 0) gx.at(static_cast<std::size_t>(argmax[k]), k % cols) += gy[k];
      return;
    }
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const auto s = static_cast<std::size_t>(seg[r]);
      const double w = kind == SegmentReduce::Mean ? 1.0 / counts[s] : 1.0;
      for (std::size_t c = 0; c < cols; ++c) gx.at(r, c) += w * gy.at(s, c);
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols needs at least one input");
  Graph& g = graph_of(parts.front());
  const auto rows = g.value(parts.front()).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    graph_of(parts.front(), p);
    const Tensor& t = g.value(p);
    if (t.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(t.cols());
    total += t.cols();
  }
  Tensor y = Tensor::matrix(rows, total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    view(y).middleCols(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(widths[k])) = view(g.value(parts[k]));
    off += widths[k];
  }
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return g.record(std::move(y), parts, [ids, widths](Graph& gr, int self) {
    const Tensor& gy = gr.grad_ref(self);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (gr.requires_grad(ids[k]))
        view(gr.grad_ref(ids[k])) += view(gy).middleCols(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(widths[k]));
      o += widths[k];
    }
  });
}

Var softmax_rows(Var a) {
  Graph& g = graph_of(a);
  Tensor y = g.value(a);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = view(y).row(static_cast<Eigen::Index>(r));
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia](Graph& gr, int self) {
    if (!gr.requires_grad(ia)) return;
    const auto s = view(gr.value_of(self));
    const auto gy = view(gr.grad_ref(self));
    auto gx = view(gr.grad_ref(ia));
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
      const double d = s.row(r).dot(gy.row(r));
      gx.row(r).array() += s.row(r).array() * (gy.row(r).array() - d);
    }
  });
}

Var log_softmax_rows(Var a) {
  Graph& g = graph_of(a);
  Tensor y = g.value(a);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = view(y).row(static_cast<Eigen::Index>(r));
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    row.array() -= lse;
  }
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia](Graph& gr, int self) {
    if (!gr.requires_grad(ia)) return;
    const auto ly = view(gr.value_of(self));
    const auto gy = view(gr.grad_ref(self));
    auto gx = view(gr.grad_ref(ia));
    for (Eigen::Index r = 0; r < ly.rows(); ++r) {
      const double total = gy.row(r).sum();
      gx.row(r).array() += gy.row(r).array() - ly.row(r).array().exp() * total;
    }
  });
}

Var cumsum_cols(Var a) {
  Graph& g = graph_of(a);
  Tensor y = g.value(a);
  const auto rows = y.rows(), cols = y.cols();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 1; c < cols; ++c) y.at(r, c) += y.at(r, c - 1);
  const int ia = a.id;
  return g.record(std::move(y), {a}, [ia, rows, cols](Graph& gr, int self) {
    if (!gr.requires_grad(ia)) return;
    const Tensor& gy = gr.grad_ref(self);
    Tensor& gx = gr.grad_ref(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = cols; c-- > 0;) {
        acc += gy.at(r, c);
        gx.at(r, c) += acc;
      }
    }
  });
}

}  // namespace gtree::ad
