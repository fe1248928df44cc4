#include "fhs/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fhs/kernels.hpp"

namespace fhs {

namespace {

bool dims_compatible(int decl, int actual) { return decl == -1 || decl == actual; }

int merge_dim(int x, int y) { return x == -1 ? y : x; }

// strict integer read of an index-carrying tensor entry
int as_index(double v, int limit, const char* what) {
  double r = std::nearbyint(v);
  if (std::abs(v - r) > 1e-9 || r < 0 || r >= static_cast<double>(limit))
    throw std::runtime_error(std::string(what) + " out of range: " + std::to_string(v) +
                             " (limit " + std::to_string(limit) + ")");
  return static_cast<int>(r);
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::constant: return "constant";
    case Op::param: return "param";
    case Op::matmul: return "matmul";
    case Op::add: return "add";
    case Op::mul: return "mul";
    case Op::relu: return "relu";
    case Op::softmax: return "softmax";
    case Op::log_softmax: return "log_softmax";
    case Op::log: return "log";
    case Op::exp: return "exp";
    case Op::sum: return "sum";
    case Op::row_sum: return "row_sum";
    case Op::mean: return "mean";
    case Op::negate: return "negate";
    case Op::scale: return "scale";
    case Op::add_const: return "add_const";
    case Op::concat: return "concat";
    case Op::reparameterize: return "reparameterize";
    case Op::gather_rows: return "gather_rows";
    case Op::select_label: return "select_label";
    case Op::clamp: return "clamp";
    case Op::grl: return "grl";
  }
  return "?";
}

void Tape::check_id(NodeId id) const {
  if (id < 0 || id >= static_cast<NodeId>(nodes_.size()))
    throw std::invalid_argument("tape: unknown node id " + std::to_string(id));
}

const Tape::Node& Tape::node(NodeId id) const {
  check_id(id);
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::Node& Tape::node(NodeId id) {
  check_id(id);
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  forward_done_ = false;
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::input(std::string name, std::vector<int> shape) {
  if (shape.empty() || shape.size() > 2)
    throw std::invalid_argument("input " + name + ": rank must be 1 or 2");
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (shape[i] == 0 || shape[i] < -1 || (shape[i] == -1 && i != 0))
      throw std::invalid_argument("input " + name + ": only the leading dim may be dynamic");
  Node n;
  n.op = Op::input;
  n.name = std::move(name);
  n.decl = std::move(shape);
  NodeId id = push(std::move(n));
  input_order_.push_back(id);
  return id;
}

Tape::NodeId Tape::constant(const Tensor& t) {
  Node n;
  n.op = Op::constant;
  n.decl = t.shape;
  n.value = t;
  return push(std::move(n));
}

Tape::NodeId Tape::param(Tensor& t) {
  Node n;
  n.op = Op::param;
  n.decl = t.shape;
  n.bound = &t;
  return push(std::move(n));
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  const auto& da = node(a).decl;
  const auto& db = node(b).decl;
  if (da.size() != 2 || db.size() != 2)
    throw std::invalid_argument("matmul: both operands must be rank 2");
  if (db[0] == -1 || da[1] == -1 || da[1] != db[0])
    throw std::invalid_argument("matmul: inner dims " + shape_str(da) + " vs " + shape_str(db));
  Node n;
  n.op = Op::matmul;
  n.a = a;
  n.b = b;
  n.decl = {da[0], db[1]};
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const auto& da = node(a).decl;
  const auto& db = node(b).decl;
  bool bias = da.size() == 2 && db.size() == 1 && dims_compatible(db[0], da[1]) && db[0] == da[1];
  if (!bias) {
    if (da.size() != db.size())
      throw std::invalid_argument("add: rank mismatch " + shape_str(da) + " vs " + shape_str(db));
    for (std::size_t i = 0; i < da.size(); ++i)
      if (da[i] != -1 && db[i] != -1 && da[i] != db[i])
        throw std::invalid_argument("add: shape mismatch " + shape_str(da) + " vs " + shape_str(db));
  }
  Node n;
  n.op = Op::add;
  n.a = a;
  n.b = b;
  if (bias) {
    n.decl = da;
  } else {
    n.decl = da;
    for (std::size_t i = 0; i < da.size(); ++i) n.decl[i] = merge_dim(da[i], db[i]);
  }
  return push(std::move(n));
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  const auto& da = node(a).decl;
  const auto& db = node(b).decl;
  if (da.size() != db.size())
    throw std::invalid_argument("mul: rank mismatch");
  for (std::size_t i = 0; i < da.size(); ++i)
    if (da[i] != -1 && db[i] != -1 && da[i] != db[i])
      throw std::invalid_argument("mul: shape mismatch " + shape_str(da) + " vs " + shape_str(db));
  Node n;
  n.op = Op::mul;
  n.a = a;
  n.b = b;
  n.decl = da;
  for (std::size_t i = 0; i < da.size(); ++i) n.decl[i] = merge_dim(da[i], db[i]);
  return push(std::move(n));
}

#define FHS_UNARY(fname, opk)                       \
  Tape::NodeId Tape::fname(NodeId a) {              \
    Node n;                                         \
    n.op = opk;                                     \
    n.a = a;                                        \
    n.decl = node(a).decl;                          \
    return push(std::move(n));                      \
  }

FHS_UNARY(relu, Op::relu)
FHS_UNARY(log, Op::log)
FHS_UNARY(exp, Op::exp)
FHS_UNARY(negate, Op::negate)
#undef FHS_UNARY

Tape::NodeId Tape::softmax(NodeId a) {
  Node n;
  n.op = Op::softmax;
  n.a = a;
  n.decl = node(a).decl;
  return push(std::move(n));
}

Tape::NodeId Tape::log_softmax(NodeId a) {
  Node n;
  n.op = Op::log_softmax;
  n.a = a;
  n.decl = node(a).decl;
  return push(std::move(n));
}

Tape::NodeId Tape::sum(NodeId a) {
  Node n;
  n.op = Op::sum;
  n.a = a;
  n.decl = {1};
  return push(std::move(n));
}

Tape::NodeId Tape::row_sum(NodeId a) {
  const auto& da = node(a).decl;
  Node n;
  n.op = Op::row_sum;
  n.a = a;
  n.decl = {da.size() == 2 ? da[0] : 1};
  return push(std::move(n));
}

Tape::NodeId Tape::mean(NodeId a) {
  Node n;
  n.op = Op::mean;
  n.a = a;
  n.decl = {1};
  return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  Node n;
  n.op = Op::scale;
  n.a = a;
  n.c0 = c;
  n.decl = node(a).decl;
  return push(std::move(n));
}

Tape::NodeId Tape::add_const(NodeId a, double c) {
  Node n;
  n.op = Op::add_const;
  n.a = a;
  n.c0 = c;
  n.decl = node(a).decl;
  return push(std::move(n));
}

Tape::NodeId Tape::concat(NodeId a, NodeId b) {
  const auto& da = node(a).decl;
  const auto& db = node(b).decl;
  if (da.size() != 2 || db.size() != 2)
    throw std::invalid_argument("concat: both operands must be rank 2");
  if (da[0] != -1 && db[0] != -1 && da[0] != db[0])
    throw std::invalid_argument("concat: row counts differ");
  if (da[1] == -1 || db[1] == -1)
    throw std::invalid_argument("concat: column counts must be static");
  Node n;
  n.op = Op::concat;
  n.a = a;
  n.b = b;
  n.decl = {merge_dim(da[0], db[0]), da[1] + db[1]};
  return push(std::move(n));
}

Tape::NodeId Tape::reparameterize(NodeId mean, NodeId logvar, NodeId noise) {
  const auto& dm = node(mean).decl;
  for (NodeId other : {logvar, noise}) {
    const auto& d = node(other).decl;
    if (d.size() != dm.size())
      throw std::invalid_argument("reparameterize: rank mismatch");
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d[i] != -1 && dm[i] != -1 && d[i] != dm[i])
        throw std::invalid_argument("reparameterize: shape mismatch");
  }
  Node n;
  n.op = Op::reparameterize;
  n.a = mean;
  n.b = logvar;
  n.c = noise;
  n.decl = dm;
  return push(std::move(n));
}

Tape::NodeId Tape::gather_rows(NodeId table, NodeId indices) {
  const auto& dt = node(table).decl;
  const auto& di = node(indices).decl;
  if (dt.size() != 2 || dt[0] == -1 || dt[1] == -1)
    throw std::invalid_argument("gather_rows: table must be a static matrix");
  if (di.size() != 1)
    throw std::invalid_argument("gather_rows: indices must be rank 1");
  Node n;
  n.op = Op::gather_rows;
  n.a = table;
  n.b = indices;
  n.decl = {di[0], dt[1]};
  return push(std::move(n));
}

Tape::NodeId Tape::select_label(NodeId mat, NodeId labels) {
  const auto& dm = node(mat).decl;
  const auto& dl = node(labels).decl;
  if (dm.size() != 2)
    throw std::invalid_argument("select_label: matrix must be rank 2");
  if (dl.size() != 1)
    throw std::invalid_argument("select_label: labels must be rank 1");
  Node n;
  n.op = Op::select_label;
  n.a = mat;
  n.b = labels;
  n.decl = {merge_dim(dm[0], dl[0])};
  return push(std::move(n));
}

Tape::NodeId Tape::clamp(NodeId a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  Node n;
  n.op = Op::clamp;
  n.a = a;
  n.c0 = lo;
  n.c1 = hi;
  n.decl = node(a).decl;
  return push(std::move(n));
}

Tape::NodeId Tape::grl(NodeId a, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("grl: lambda must be >= 0");
  Node n;
  n.op = Op::grl;
  n.a = a;
  n.c0 = lambda;
  n.decl = node(a).decl;
  return push(std::move(n));
}

void Tape::set_grl_lambda(NodeId grl_node, double lambda) {
  Node& n = node(grl_node);
  if (n.op != Op::grl) throw std::invalid_argument("set_grl_lambda: node is not a grl op");
  if (lambda < 0.0) throw std::invalid_argument("grl: lambda must be >= 0");
  n.c0 = lambda;
}

void Tape::set_output(NodeId o) {
  check_id(o);
  output_ = o;
}

const Tensor& Tape::value(NodeId id) const {
  if (!forward_done_) throw std::logic_error("tape: value() before forward()");
  return node(id).value;
}

const Tensor& Tape::forward(const std::vector<Tensor>& inputs) {
  if (output_ < 0) throw std::logic_error("tape: no output set");
  if (inputs.size() != input_order_.size())
    throw std::invalid_argument("tape: expected " + std::to_string(input_order_.size()) +
                                " inputs, got " + std::to_string(inputs.size()));
  forward_done_ = false;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Node& n = nodes_[static_cast<std::size_t>(input_order_[i])];
    const Tensor& t = inputs[i];
    if (t.shape.size() != n.decl.size())
      throw std::invalid_argument("input " + n.name + ": rank mismatch, declared " +
                                  shape_str(n.decl) + " got " + shape_str(t.shape));
    for (std::size_t d = 0; d < n.decl.size(); ++d)
      if (!dims_compatible(n.decl[d], t.shape[d]))
        throw std::invalid_argument("input " + n.name + ": shape mismatch, declared " +
                                    shape_str(n.decl) + " got " + shape_str(t.shape));
    n.value = t;
  }
  for (Node& n : nodes_) {
    exec(n);
    if (!n.value.all_finite())
      throw std::runtime_error(std::string("non-finite value in ") + op_name(n.op));
  }
  forward_done_ = true;
  return nodes_[static_cast<std::size_t>(output_)].value;
}

void Tape::exec(Node& n) {
  auto& out = n.value;
  switch (n.op) {
    case Op::input:
    case Op::constant:
      return;
    case Op::param:
      out = *n.bound;
      out.grad.clear();
      return;
    default:
      break;
  }

  const Tensor& A = nodes_[static_cast<std::size_t>(n.a)].value;
  switch (n.op) {
    case Op::matmul: {
      const Tensor& B = nodes_[static_cast<std::size_t>(n.b)].value;
      int m = A.rows(), k = A.cols(), k2 = B.rows(), cn = B.cols();
      if (k != k2)
        throw std::runtime_error("matmul: inner dim mismatch " + shape_str(A.shape) + " vs " +
                                 shape_str(B.shape));
      out.shape = {m, cn};
      out.data.resize(static_cast<std::size_t>(m) * static_cast<std::size_t>(cn));
      kernels::matmul(A.data.data(), B.data.data(), out.data.data(), m, k, cn);
      break;
    }
    case Op::add: {
      const Tensor& B = nodes_[static_cast<std::size_t>(n.b)].value;
      if (A.shape.size() == 2 && B.shape.size() == 1) {
        if (A.cols() != B.cols())
          throw std::runtime_error("add: bias width mismatch");
        out.shape = A.shape;
        out.data.resize(A.data.size());
        int m = A.rows(), cn = A.cols();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < cn; ++j)
            out.data[static_cast<std::size_t>(i) * static_cast<std::size_t>(cn) + static_cast<std::size_t>(j)] =
                A.at(i, j) + B.data[static_cast<std::size_t>(j)];
      } else {
        if (!A.same_shape(B)) throw std::runtime_error("add: shape mismatch");
        out.shape = A.shape;
        out.data.resize(A.data.size());
        kernels::add(A.data.data(), B.data.data(), out.data.data(), A.size());
      }
      break;
    }
    case Op::mul: {
      const Tensor& B = nodes_[static_cast<std::size_t>(n.b)].value;
      if (!A.same_shape(B)) throw std::runtime_error("mul: shape mismatch");
      out.shape = A.shape;
      out.data.resize(A.data.size());
      kernels::mul(A.data.data(), B.data.data(), out.data.data(), A.size());
      break;
    }
    case Op::relu:
      out.shape = A.shape;
      out.data.resize(A.data.size());
      kernels::relu(A.data.data(), out.data.data(), A.size());
      break;
    case Op::softmax:
    case Op::log_softmax: {
      out.shape = A.shape;
      out.data.resize(A.data.size());
      int m = A.rows(), cn = A.cols();
      for (int i = 0; i < m; ++i) {
        const double* x = A.data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cn);
        double* y = out.data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cn);
        double mx = x[0];
        for (int j = 1; j < cn; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < cn; ++j) s += std::exp(x[j] - mx);
        if (n.op == Op::softmax) {
          for (int j = 0; j < cn; ++j) y[j] = std::exp(x[j] - mx) / s;
        } else {
          double ls = std::log(s);
          for (int j = 0; j < cn; ++j) y[j] = x[j] - mx - ls;
        }
      }
      break;
    }
    case Op::log:
      out.shape = A.shape;
      out.data.resize(A.data.size());
      for (std::size_t i = 0; i < A.data.size(); ++i) out.data[i] = std::log(A.data[i]);
      break;
    case Op::exp:
      out.shape = A.shape;
      out.data.resize(A.data.size());
      for (std::size_t i = 0; i < A.data.size(); ++i) out.data[i] = std::exp(A.data[i]);
      break;
    case Op::sum: {
      double s = 0.0;
      for (double v : A.data) s += v;
      out.shape = {1};
      out.data.assign(1, s);
      break;
    }
    case Op::row_sum: {
      int m = A.rows(), cn = A.cols();
      out.shape = {m};
      out.data.assign(static_cast<std::size_t>(m), 0.0);
      for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < cn; ++j) s += A.at(i, j);
        out.data[static_cast<std::size_t>(i)] = s;
      }
      break;
    }
    case Op::mean: {
      if (A.data.empty()) throw std::runtime_error("mean of empty tensor");
      double s = 0.0;
      for (double v : A.data) s += v;
      out.shape = {1};
      out.data.assign(1, s / static_cast<double>(A.data.size()));
      break;
    }
    case Op::negate:
      out.shape = A.shape;
      out.data.resize(A.data.size());
      for (std::size_t i = 0; i < A.data.size(); ++i) out.data[i] = -A.data[i];
      break;
    case Op::scale:
      out.shape = A.shape;
      out.data.resize(A.data.size());
      for (std::size_t i = 0; i < A.data.size(); ++i) out.data[i] = n.c0 * A.data[i];
      break;
    case Op::add_const:
      out.shape = A.shape;
      out.data.resize(A.data.size());
      for (std::size_t i = 0; i < A.data.size(); ++i) out.data[i] = A.data[i] + n.c0;
      break;
    case Op::concat: {
      const Tensor& B = nodes_[static_cast<std::size_t>(n.b)].value;
      if (A.rows() != B.rows()) throw std::runtime_error("concat: row counts differ");
      int m = A.rows(), p = A.cols(), q = B.cols();
      out.shape = {m, p + q};
      out.data.resize(static_cast<std::size_t>(m) * static_cast<std::size_t>(p + q));
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < p; ++j) out.at(i, j) = A.at(i, j);
        for (int j = 0; j < q; ++j) out.at(i, p + j) = B.at(i, j);
      }
      break;
    }
    case Op::reparameterize: {
      const Tensor& LV = nodes_[static_cast<std::size_t>(n.b)].value;
      const Tensor& E = nodes_[static_cast<std::size_t>(n.c)].value;
      if (!A.same_shape(LV) || !A.same_shape(E))
        throw std::runtime_error("reparameterize: shape mismatch");
      out.shape = A.shape;
      out.data.resize(A.data.size());
      for (std::size_t i = 0; i < A.data.size(); ++i)
        out.data[i] = A.data[i] + std::exp(0.5 * LV.data[i]) * E.data[i];
      break;
    }
    case Op::gather_rows: {
      const Tensor& I = nodes_[static_cast<std::size_t>(n.b)].value;
      int rows = I.cols(), width = A.cols(), limit = A.rows();
      out.shape = {rows, width};
      out.data.resize(static_cast<std::size_t>(rows) * static_cast<std::size_t>(width));
      for (int i = 0; i < rows; ++i) {
        int r = as_index(I.data[static_cast<std::size_t>(i)], limit, "gather_rows index");
        for (int j = 0; j < width; ++j) out.at(i, j) = A.at(r, j);
      }
      break;
    }
    case Op::select_label: {
      const Tensor& L = nodes_[static_cast<std::size_t>(n.b)].value;
      int m = A.rows(), cn = A.cols();
      if (static_cast<int>(L.data.size()) != m)
        throw std::runtime_error("select_label: label count mismatch");
      out.shape = {m};
      out.data.resize(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        int c = as_index(L.data[static_cast<std::size_t>(i)], cn, "label");
        out.data[static_cast<std::size_t>(i)] = A.at(i, c);
      }
      break;
    }
    case Op::clamp:
      out.shape = A.shape;
      out.data.resize(A.data.size());
      for (std::size_t i = 0; i < A.data.size(); ++i)
        out.data[i] = std::min(std::max(A.data[i], n.c0), n.c1);
      break;
    case Op::grl:
      out.shape = A.shape;
      out.data = A.data;
      break;
    default:
      throw std::logic_error("exec: unhandled op");
  }
}

void Tape::backward() { backward(Tensor::scalar(1.0)); }

void Tape::backward(const Tensor& output_grad) {
  if (!forward_done_) throw std::logic_error("tape: backward() before forward()");
  Node& out = nodes_[static_cast<std::size_t>(output_)];
  if (output_grad.data.size() != out.value.data.size())
    throw std::invalid_argument("backward: output grad size mismatch");
  for (Node& n : nodes_) n.grad.assign(n.value.data.size(), 0.0);
  out.grad = output_grad.data;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) backprop(*it);
}

void Tape::backprop(Node& n) {
  const auto& g = n.grad;
  if (g.empty()) return;
  switch (n.op) {
    case Op::input:
    case Op::constant:
      return;
    case Op::param:
      n.bound->ensure_grad();
      kernels::axpy(1.0, g.data(), n.bound->grad.data(), static_cast<std::int64_t>(g.size()));
      return;
    default:
      break;
  }

  Node& na = nodes_[static_cast<std::size_t>(n.a)];
  const Tensor& A = na.value;
  switch (n.op) {
    case Op::matmul: {
      Node& nb = nodes_[static_cast<std::size_t>(n.b)];
      const Tensor& B = nb.value;
      int m = A.rows(), k = A.cols(), cn = B.cols();
      kernels::matmul_acc_nt(g.data(), B.data.data(), na.grad.data(), m, k, cn);
      kernels::matmul_acc_tn(A.data.data(), g.data(), nb.grad.data(), m, k, cn);
      break;
    }
    case Op::add: {
      Node& nb = nodes_[static_cast<std::size_t>(n.b)];
      kernels::axpy(1.0, g.data(), na.grad.data(), static_cast<std::int64_t>(g.size()));
      if (A.shape.size() == 2 && nb.value.shape.size() == 1) {
        int m = A.rows(), cn = A.cols();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < cn; ++j)
            nb.grad[static_cast<std::size_t>(j)] +=
                g[static_cast<std::size_t>(i) * static_cast<std::size_t>(cn) + static_cast<std::size_t>(j)];
      } else {
        kernels::axpy(1.0, g.data(), nb.grad.data(), static_cast<std::int64_t>(g.size()));
      }
      break;
    }
    case Op::mul: {
      Node& nb = nodes_[static_cast<std::size_t>(n.b)];
      const Tensor& B = nb.value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        na.grad[i] += g[i] * B.data[i];
        nb.grad[i] += g[i] * A.data[i];
      }
      break;
    }
    case Op::relu:
      kernels::relu_backward_acc(A.data.data(), g.data(), na.grad.data(),
                                 static_cast<std::int64_t>(g.size()));
      break;
    case Op::softmax: {
      const Tensor& Y = n.value;
      int m = Y.rows(), cn = Y.cols();
      for (int i = 0; i < m; ++i) {
        const double* yi = Y.data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cn);
        const double* gi = g.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cn);
        double dot = 0.0;
        for (int j = 0; j < cn; ++j) dot += gi[j] * yi[j];
        double* dst = na.grad.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cn);
        for (int j = 0; j < cn; ++j) dst[j] += yi[j] * (gi[j] - dot);
      }
      break;
    }
    case Op::log_softmax: {
      const Tensor& L = n.value;  // log-probs; softmax = exp(L)
      int m = L.rows(), cn = L.cols();
      for (int i = 0; i < m; ++i) {
        const double* li = L.data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cn);
        const double* gi = g.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cn);
        double gsum = 0.0;
        for (int j = 0; j < cn; ++j) gsum += gi[j];
        double* dst = na.grad.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(cn);
        for (int j = 0; j < cn; ++j) dst[j] += gi[j] - std::exp(li[j]) * gsum;
      }
      break;
    }
    case Op::log:
      for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] / A.data[i];
      break;
    case Op::exp:
      for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] += g[i] * n.value.data[i];
      break;
    case Op::sum:
      for (auto& d : na.grad) d += g[0];
      break;
    case Op::row_sum: {
      int m = A.rows(), cn = A.cols();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < cn; ++j)
          na.grad[static_cast<std::size_t>(i) * static_cast<std::size_t>(cn) + static_cast<std::size_t>(j)] +=
              g[static_cast<std::size_t>(i)];
      break;
    }
    case Op::mean: {
      double inv = 1.0 / static_cast<double>(A.data.size());
      for (auto& d : na.grad) d += g[0] * inv;
      break;
    }
    case Op::negate:
      for (std::size_t i = 0; i < g.size(); ++i) na.grad[i] -= g[i];
      break;
    case Op::scale:
      kernels::axpy(n.c0, g.data(), na.grad.data(), static_cast<std::int64_t>(g.size()));
      break;
    case Op::add_const:
      kernels::axpy(1.0, g.data(), na.grad.data(), static_cast<std::int64_t>(g.size()));
      break;
    case Op::concat: {
      Node& nb = nodes_[static_cast<std::size_t>(n.b)];
      int m = A.rows(), p = A.cols(), q = nb.value.cols();
      for (int i = 0; i < m; ++i) {
        const double* gi = g.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(p + q);
        for (int j = 0; j < p; ++j)
          na.grad[static_cast<std::size_t>(i) * static_cast<std::size_t>(p) + static_cast<std::size_t>(j)] += gi[j];
        for (int j = 0; j < q; ++j)
          nb.grad[static_cast<std::size_t>(i) * static_cast<std::size_t>(q) + static_cast<std::size_t>(j)] += gi[p + j];
      }
      break;
    }
    case Op::reparameterize: {
      Node& nlv = nodes_[static_cast<std::size_t>(n.b)];
      Node& ne = nodes_[static_cast<std::size_t>(n.c)];
      const Tensor& LV = nlv.value;
      const Tensor& E = ne.value;
      for (std::size_t i = 0; i < g.size(); ++i) {
        double sd = std::exp(0.5 * LV.data[i]);
        na.grad[i] += g[i];  // exact pass-through to the mean
        nlv.grad[i] += g[i] * 0.5 * sd * E.data[i];
        ne.grad[i] += g[i] * sd;
      }
      break;
    }
    case Op::gather_rows: {
      const Tensor& I = nodes_[static_cast<std::size_t>(n.b)].value;
      int rows = I.cols(), width = A.cols(), limit = A.rows();
      for (int i = 0; i < rows; ++i) {
        int r = as_index(I.data[static_cast<std::size_t>(i)], limit, "gather_rows index");
        for (int j = 0; j < width; ++j)
          na.grad[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(j)] +=
              g[static_cast<std::size_t>(i) * static_cast<std::size_t>(width) + static_cast<std::size_t>(j)];
      }
      break;
    }
    case Op::select_label: {
      const Tensor& L = nodes_[static_cast<std::size_t>(n.b)].value;
      int m = A.rows(), cn = A.cols();
      for (int i = 0; i < m; ++i) {
        int c = as_index(L.data[static_cast<std::size_t>(i)], cn, "label");
        na.grad[static_cast<std::size_t>(i) * static_cast<std::size_t>(cn) + static_cast<std::size_t>(c)] +=
            g[static_cast<std::size_t>(i)];
      }
      break;
    }
    case Op::clamp:
      for (std::size_t i = 0; i < g.size(); ++i)
        if (A.data[i] >= n.c0 && A.data[i] <= n.c1) na.grad[i] += g[i];
      break;
    case Op::grl:
      kernels::axpy(-n.c0, g.data(), na.grad.data(), static_cast<std::int64_t>(g.size()));
      break;
    default:
      throw std::logic_error("backprop: unhandled op");
  }
}

}  // namespace fhs
