#pragma once

#include <string>
#include <vector>

#include "fhs/tensor.hpp"

namespace fhs {

// Primitive operations a tape can record. Leaves are inputs (rebound on
// every forward), constants (frozen copies, no gradient) and params
// (external tensors that receive gradients).
enum class Op {
  input,
  constant,
  param,
  matmul,
  add,        // elementwise, or bias broadcast when rhs is a row vector
  mul,
  relu,
  softmax,       // rowwise, max-subtracted
  log_softmax,   // rowwise, log-sum-exp
  log,
  exp,
  sum,        // all elements -> scalar
  row_sum,    // [m x n] -> [m]
  mean,       // all elements -> scalar
  negate,
  scale,      // * fixed constant
  add_const,  // + fixed constant
  concat,     // along columns
  reparameterize,  // mean + exp(0.5*logvar) (.) noise
  gather_rows,     // table rows picked by an integer-valued vector
  select_label,    // out[i] = mat[i, labels[i]]
  clamp,
  grl,  // identity forward; backward multiplies upstream by -lambda
};

const char* op_name(Op op);

// A reverse-mode computation tape: a program over the primitives above,
// recorded once and executed many times. Nodes are appended in topological
// order by construction (an operand must already exist), forward() runs
// them in order and keeps every intermediate, backward() walks them exactly
// once in reverse and accumulates into the bound parameter tensors.
//
// Shapes are declared at build time; the leading (batch) dimension of an
// input may be -1 and is fixed by the actual tensor at forward time.
//
// A tape owns its intermediate buffers and is a single-owner unit: it may
// move between threads but must not be shared while in use. Parameter
// binding is by pointer, so the bound tensors must outlive the tape.
class Tape {
 public:
  using NodeId = int;

  NodeId input(std::string name, std::vector<int> shape);
  NodeId constant(const Tensor& t);
  NodeId param(Tensor& t);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId relu(NodeId a);
  NodeId softmax(NodeId a);
  NodeId log_softmax(NodeId a);
  NodeId log(NodeId a);
  NodeId exp(NodeId a);
  NodeId sum(NodeId a);
  NodeId row_sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId negate(NodeId a);
  NodeId scale(NodeId a, double c);
  NodeId add_const(NodeId a, double c);
  NodeId concat(NodeId a, NodeId b);
  NodeId reparameterize(NodeId mean, NodeId logvar, NodeId noise);
  NodeId gather_rows(NodeId table, NodeId indices);
  NodeId select_label(NodeId mat, NodeId labels);
  NodeId clamp(NodeId a, double lo, double hi);
  NodeId grl(NodeId a, double lambda);

  // adversarial weight may be annealed between rounds without rebuilding
  void set_grl_lambda(NodeId grl_node, double lambda);

  void set_output(NodeId o);
  NodeId output() const { return output_; }

  // Binds `inputs` positionally to the declared input nodes (shapes are
  // checked against the declaration), executes every node and returns the
  // output value. Any non-finite intermediate raises.
  const Tensor& forward(const std::vector<Tensor>& inputs);

  // Seeds the output gradient and propagates. Parameter tensors accumulate:
  // grads add up across backward calls until explicitly zeroed.
  void backward(const Tensor& output_grad);
  void backward();  // scalar output, seed = 1

  const Tensor& value(NodeId id) const;
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t input_count() const { return input_order_.size(); }

 private:
  struct Node {
    Op op = Op::input;
    NodeId a = -1, b = -1, c = -1;
    double c0 = 0.0, c1 = 0.0;  // op constants (scale factor, clamp bounds, grl lambda)
    std::string name;           // inputs only
    std::vector<int> decl;      // declared shape, -1 = batch dim
    Tensor* bound = nullptr;    // params only
    Tensor value;
    std::vector<double> grad;
  };

  NodeId push(Node n);
  const Node& node(NodeId id) const;
  Node& node(NodeId id);
  void check_id(NodeId id) const;
  void exec(Node& n);
  void backprop(Node& n);

  std::vector<Node> nodes_;
  std::vector<NodeId> input_order_;
  NodeId output_ = -1;
  bool forward_done_ = false;
};

}  // namespace fhs
