#include "vedit/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>

namespace vedit::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local MemoryStats g_memory;

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

using Needs = std::vector<char>;

}  // namespace

Node::Node(Matrix v) : value(std::move(v)) {
  tracked_bytes = static_cast<std::size_t>(value.size()) * sizeof(double);
  g_memory.live_bytes += static_cast<std::int64_t>(tracked_bytes);
  if (g_memory.live_bytes > g_memory.peak_bytes) g_memory.peak_bytes = g_memory.live_bytes;
}

Node::~Node() { g_memory.live_bytes -= static_cast<std::int64_t>(tracked_bytes); }

MemoryStats memory_stats() { return g_memory; }
void reset_peak_memory() { g_memory.peak_bytes = g_memory.live_bytes; }

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set(bool on) { g_grad_enabled = on; }

Var Var::constant(Matrix m) { return Var(std::make_shared<Node>(std::move(m))); }

Var Var::leaf(Matrix m) {
  auto n = std::make_shared<Node>(std::move(m));
  n->requires_grad = true;
  return Var(std::move(n));
}

Var Var::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

Var Var::zeros(Index rows, Index cols) { return constant(Matrix::Zero(rows, cols)); }

double Var::item() const {
  if (size() != 1) throw std::invalid_argument("item: not a scalar");
  return value()(0, 0);
}

Var make_op(Matrix value, std::vector<Var> inputs, BackwardFn backward) {
  auto n = std::make_shared<Node>(std::move(value));
  if (GradMode::enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->inputs = std::move(inputs);
      n->backward = std::move(backward);
    }
  }
  return Var(std::move(n));
}

std::vector<Var> grad(const Var& output, const std::vector<Var>& wrt, bool create_graph) {
  if (!output.defined() || output.size() != 1) throw std::invalid_argument("grad: output must be 1x1");

  std::vector<Var> result(wrt.size());
  auto fill_zeros = [&] {
    for (std::size_t i = 0; i < wrt.size(); ++i) {
      if (!result[i].defined()) result[i] = Var::zeros(wrt[i].rows(), wrt[i].cols());
    }
  };
  if (!output.requires_grad()) {
    fill_zeros();
    return result;
  }

  std::unordered_map<const Node*, bool> targets;
  for (const auto& w : wrt) targets[w.id()] = true;

  // Iterative post-order DFS; `reaches` marks nodes with a path to a target.
  std::unordered_map<const Node*, bool> reaches;
  std::vector<std::shared_ptr<Node>> order;
  struct Frame {
    std::shared_ptr<Node> node;
    std::size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({output.node(), 0});
  reaches[output.id()] = false;
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->inputs.size()) {
      const Var& in = f.node->inputs[f.next++];
      if (!in.requires_grad() || reaches.count(in.id())) continue;
      reaches[in.id()] = false;
      stack.push_back({in.node(), 0});
      continue;
    }
    bool r = targets.count(f.node.get()) > 0;
    for (const auto& in : f.node->inputs) {
      if (in.requires_grad() && reaches[in.id()]) r = true;
    }
    reaches[f.node.get()] = r;
    order.push_back(f.node);
    stack.pop_back();
  }

  GradModeGuard mode(create_graph);
  std::unordered_map<const Node*, Var> grads;
  grads[output.id()] = Var::scalar(1.0);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const std::shared_ptr<Node>& node = *it;
    auto g_it = grads.find(node.get());
    if (g_it == grads.end()) continue;
    if (node->backward && !node->inputs.empty()) {
      Needs needs(node->inputs.size(), 0);
      bool any = false;
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        const Var& in = node->inputs[i];
        needs[i] = in.requires_grad() && reaches[in.id()];
        any = any || needs[i];
      }
      if (any) {
        Var g = g_it->second;
        std::vector<Var> in_grads = node->backward(g, Var(node), needs);
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
          if (!needs[i] || !in_grads[i].defined()) continue;
          const Node* key = node->inputs[i].id();
          auto existing = grads.find(key);
          if (existing == grads.end()) {
            grads.emplace(key, in_grads[i]);
          } else {
            existing->second = add(existing->second, in_grads[i]);
          }
        }
      }
    }
    if (!targets.count(node.get())) grads.erase(node.get());
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    auto g_it = grads.find(wrt[i].id());
    if (g_it != grads.end()) result[i] = g_it->second;
  }
  fill_zeros();
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_op(a.value() + b.value(), {a, b}, [](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? g : Var(), n[1] ? g : Var()};
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_op(a.value() - b.value(), {a, b}, [](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? g : Var(), n[1] ? neg(g) : Var()};
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_op(a.value().cwiseProduct(b.value()), {a, b}, [a, b](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? mul(g, b) : Var(), n[1] ? mul(g, a) : Var()};
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  return make_op(a.value().cwiseQuotient(b.value()), {a, b}, [b](const Var& g, const Var& y, const Needs& n) {
    return std::vector<Var>{n[0] ? div(g, b) : Var(), n[1] ? neg(div(mul(g, y), b)) : Var()};
  });
}

Var neg(const Var& a) {
  return make_op(-a.value(), {a}, [](const Var& g, const Var&, const Needs&) { return std::vector<Var>{neg(g)}; });
}

Var scale(const Var& a, double s) {
  return make_op(a.value() * s, {a}, [s](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{scale(g, s)};
  });
}

Var add_scalar(const Var& a, double s) {
  return make_op(a.value().array() + s, {a}, [](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{g};
  });
}

Var exp(const Var& a) {
  return make_op(a.value().array().exp().matrix(), {a}, [](const Var& g, const Var& y, const Needs&) {
    return std::vector<Var>{mul(g, y)};
  });
}

Var log(const Var& a) {
  return make_op(a.value().array().log().matrix(), {a}, [a](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{div(g, a)};
  });
}

Var tanh(const Var& a) {
  return make_op(a.value().array().tanh().matrix(), {a}, [](const Var& g, const Var& y, const Needs&) {
    return std::vector<Var>{mul(g, add_scalar(neg(mul(y, y)), 1.0))};
  });
}

Var sigmoid(const Var& a) {
  Matrix v = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return make_op(std::move(v), {a}, [](const Var& g, const Var& y, const Needs&) {
    return std::vector<Var>{mul(g, mul(y, add_scalar(neg(y), 1.0)))};
  });
}

Var rsqrt(const Var& a) {
  return make_op(a.value().array().rsqrt().matrix(), {a}, [](const Var& g, const Var& y, const Needs&) {
    return std::vector<Var>{scale(mul(g, mul(y, mul(y, y))), -0.5)};
  });
}

Var square(const Var& a) { return mul(a, a); }

// ---------------------------------------------------------------------------
// Products

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [a, b](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? matmul_nt(g, b) : Var(), n[1] ? matmul_tn(a, g) : Var()};
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Matrix out(a.rows(), b.rows());
  out.noalias() = a.value() * b.value().transpose();
  return make_op(std::move(out), {a, b}, [a, b](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? matmul(g, b) : Var(), n[1] ? matmul_tn(g, a) : Var()};
  });
}

Var matmul_tn(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("matmul_tn: inner dimension mismatch");
  Matrix out(a.cols(), b.cols());
  out.noalias() = a.value().transpose() * b.value();
  return make_op(std::move(out), {a, b}, [a, b](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? matmul_nt(b, g) : Var(), n[1] ? matmul(a, g) : Var()};
  });
}

Var transpose(const Var& a) {
  return make_op(a.value().transpose(), {a}, [](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{transpose(g)};
  });
}

Var reshape(const Var& a, Index rows, Index cols) {
  if (rows * cols != a.size()) throw std::invalid_argument("reshape: element count mismatch");
  Matrix out = Eigen::Map<const Matrix>(a.value().data(), rows, cols);
  const Index r0 = a.rows(), c0 = a.cols();
  return make_op(std::move(out), {a}, [r0, c0](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{reshape(g, r0, c0)};
  });
}

// ---------------------------------------------------------------------------
// Broadcasting

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: bad row shape");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_op(std::move(out), {a, row}, [](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? g : Var(), n[1] ? col_sum(g) : Var()};
  });
}

Var mul_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("mul_row: bad row shape");
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_op(std::move(out), {a, row}, [a, row](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? mul_row(g, row) : Var(), n[1] ? col_sum(mul(g, a)) : Var()};
  });
}

Var add_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("add_col: bad column shape");
  Matrix out = a.value().colwise() + col.value().col(0);
  return make_op(std::move(out), {a, col}, [](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? g : Var(), n[1] ? row_sum(g) : Var()};
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("mul_col: bad column shape");
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  return make_op(std::move(out), {a, col}, [a, col](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? mul_col(g, col) : Var(), n[1] ? row_sum(mul(g, a)) : Var()};
  });
}

Var broadcast_cols(const Var& col, Index cols) {
  if (col.cols() != 1) throw std::invalid_argument("broadcast_cols: expects a column");
  Matrix out = col.value().col(0).replicate(1, cols);
  return make_op(std::move(out), {col}, [](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{row_sum(g)};
  });
}

Var broadcast_rows(const Var& row, Index rows) {
  if (row.rows() != 1) throw std::invalid_argument("broadcast_rows: expects a row");
  Matrix out = row.value().row(0).replicate(rows, 1);
  return make_op(std::move(out), {row}, [](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{col_sum(g)};
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var row_sum(const Var& a) {
  Matrix out = a.value().rowwise().sum();
  const Index c = a.cols();
  return make_op(std::move(out), {a}, [c](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{broadcast_cols(g, c)};
  });
}

Var col_sum(const Var& a) {
  Matrix out = a.value().colwise().sum();
  const Index r = a.rows();
  return make_op(std::move(out), {a}, [r](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{broadcast_rows(g, r)};
  });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Index r = a.rows(), c = a.cols();
  return make_op(std::move(out), {a}, [r, c](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{broadcast_rows(broadcast_cols(g, c), r)};
  });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return make_op(std::move(out), {a}, [](const Var& g, const Var& y, const Needs&) {
    return std::vector<Var>{mul(y, add_col(g, neg(row_sum(mul(g, y)))))};
  });
}

Var log_softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Index i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    row.array() -= row.maxCoeff();
    const double lse = std::log(row.array().exp().sum());
    row.array() -= lse;
  }
  return make_op(std::move(out), {a}, [](const Var& g, const Var& y, const Needs&) {
    return std::vector<Var>{sub(g, mul_col(exp(y), row_sum(g)))};
  });
}

// ---------------------------------------------------------------------------
// Slicing

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::invalid_argument("slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  const Index total = a.rows();
  return make_op(std::move(out), {a}, [start, total](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{pad_rows(g, start, total)};
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  const Index total = a.cols();
  return make_op(std::move(out), {a}, [start, total](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{pad_cols(g, start, total)};
  });
}

Var pad_rows(const Var& a, Index start, Index total) {
  if (start < 0 || start + a.rows() > total) throw std::invalid_argument("pad_rows: out of range");
  Matrix out = Matrix::Zero(total, a.cols());
  out.middleRows(start, a.rows()) = a.value();
  const Index count = a.rows();
  return make_op(std::move(out), {a}, [start, count](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{slice_rows(g, start, count)};
  });
}

Var pad_cols(const Var& a, Index start, Index total) {
  if (start < 0 || start + a.cols() > total) throw std::invalid_argument("pad_cols: out of range");
  Matrix out = Matrix::Zero(a.rows(), total);
  out.middleCols(start, a.cols()) = a.value();
  const Index count = a.cols();
  return make_op(std::move(out), {a}, [start, count](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{slice_cols(g, start, count)};
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Index rows = 0;
  const Index cols = parts.front().cols();
  std::vector<Index> sizes;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    sizes.push_back(p.rows());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_op(std::move(out), parts, [sizes](const Var& g, const Var&, const Needs& n) {
    std::vector<Var> gs(sizes.size());
    Index off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (n[i]) gs[i] = slice_rows(g, off, sizes[i]);
      off += sizes[i];
    }
    return gs;
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  Index cols = 0;
  const Index rows = parts.front().rows();
  std::vector<Index> sizes;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    sizes.push_back(p.cols());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_op(std::move(out), parts, [sizes](const Var& g, const Var&, const Needs& n) {
    std::vector<Var> gs(sizes.size());
    Index off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      if (n[i]) gs[i] = slice_cols(g, off, sizes[i]);
      off += sizes[i];
    }
    return gs;
  });
}

Var gather_rows(const Var& a, std::vector<Index> idx) {
  Matrix out(Index(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.rows()) throw std::invalid_argument("gather_rows: index out of range");
    out.row(Index(i)) = a.value().row(idx[i]);
  }
  const Index total = a.rows();
  return make_op(std::move(out), {a}, [idx = std::move(idx), total](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{scatter_rows(g, idx, total)};
  });
}

Var scatter_rows(const Var& a, std::vector<Index> idx, Index total) {
  if (Index(idx.size()) != a.rows()) throw std::invalid_argument("scatter_rows: index count");
  Matrix out = Matrix::Zero(total, a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= total) throw std::invalid_argument("scatter_rows: index out of range");
    out.row(idx[i]) += a.value().row(Index(i));
  }
  return make_op(std::move(out), {a}, [idx = std::move(idx)](const Var& g, const Var&, const Needs&) {
    return std::vector<Var>{gather_rows(g, idx)};
  });
}

namespace {

void check_blocks(const Var& a, const Var& b, Index blocks, const char* what) {
  if (blocks < 1 || a.rows() % blocks != 0 || b.rows() % blocks != 0) {
    throw std::invalid_argument(std::string(what) + ": rows not divisible into blocks");
  }
}

}  // namespace

Var bmm(const Var& a, const Var& b, Index blocks) {
  check_blocks(a, b, blocks, "bmm");
  const Index ra = a.rows() / blocks, rb = b.rows() / blocks;
  if (a.cols() != rb) throw std::invalid_argument("bmm: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (Index s = 0; s < blocks; ++s) {
    out.middleRows(s * ra, ra).noalias() = a.value().middleRows(s * ra, ra) * b.value().middleRows(s * rb, rb);
  }
  return make_op(std::move(out), {a, b}, [a, b, blocks](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? bmm_nt(g, b, blocks) : Var(), n[1] ? bmm_tn(a, g, blocks) : Var()};
  });
}

Var bmm_nt(const Var& a, const Var& b, Index blocks) {
  check_blocks(a, b, blocks, "bmm_nt");
  const Index ra = a.rows() / blocks, rb = b.rows() / blocks;
  if (a.cols() != b.cols()) throw std::invalid_argument("bmm_nt: inner dimension mismatch");
  Matrix out(a.rows(), rb);
  for (Index s = 0; s < blocks; ++s) {
    out.middleRows(s * ra, ra).noalias() =
        a.value().middleRows(s * ra, ra) * b.value().middleRows(s * rb, rb).transpose();
  }
  return make_op(std::move(out), {a, b}, [a, b, blocks](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? bmm(g, b, blocks) : Var(), n[1] ? bmm_tn(g, a, blocks) : Var()};
  });
}

Var bmm_tn(const Var& a, const Var& b, Index blocks) {
  check_blocks(a, b, blocks, "bmm_tn");
  const Index r = a.rows() / blocks;
  if (b.rows() / blocks != r) throw std::invalid_argument("bmm_tn: block heights differ");
  const Index ca = a.cols();
  Matrix out(ca * blocks, b.cols());
  for (Index s = 0; s < blocks; ++s) {
    out.middleRows(s * ca, ca).noalias() =
        a.value().middleRows(s * r, r).transpose() * b.value().middleRows(s * r, r);
  }
  return make_op(std::move(out), {a, b}, [a, b, blocks](const Var& g, const Var&, const Needs& n) {
    return std::vector<Var>{n[0] ? bmm_nt(b, g, blocks) : Var(), n[1] ? bmm(a, g, blocks) : Var()};
  });
}

}  // namespace vedit::ad
