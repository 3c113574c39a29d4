#pragma once

#include <functional>
#include <vector>

namespace nesyrs {

using NodeId = int;

/**
 * Reverse-mode tape over vector-valued nodes.  Nodes are appended in forward
 * order; backward() seeds the (scalar) loss gradient and replays the recorded
 * closures in reverse.  All values are 64-bit doubles.
 */
class Tape {
 public:
  NodeId leaf(std::vector<double> val) { return add(std::move(val), nullptr); }

  NodeId add(std::vector<double> val, std::function<void(Tape&)> back) {
    nodes_.push_back({std::move(val), {}, std::move(back)});
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  const std::vector<double>& val(NodeId id) const { return nodes_[id].val; }
  std::vector<double>& mutable_val(NodeId id) { return nodes_[id].val; }

  std::vector<double>& grad(NodeId id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.val.size()) n.grad.assign(n.val.size(), 0.0);
    return n.grad;
  }

  double scalar(NodeId id) const { return nodes_[id].val[0]; }

  /** Backpropagate from a scalar loss node. */
  void backward(NodeId loss);

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<double> val;
    std::vector<double> grad;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
};

// Primitive ops.  Each returns a new node on the tape.

NodeId op_add(Tape& t, NodeId a, NodeId b);           // elementwise
NodeId op_scale(Tape& t, NodeId a, double s);
NodeId op_mul(Tape& t, NodeId a, NodeId b);           // elementwise
NodeId op_sum(Tape& t, NodeId a);                     // -> scalar
NodeId op_add_scalars(Tape& t, const std::vector<NodeId>& xs);  // scalar sum
NodeId op_relu(Tape& t, NodeId a);
NodeId op_log_clamped(Tape& t, NodeId a);             // log(max(x, 1e-12))

/** out = W x + b, with W a rows*cols row-major vector node. */
NodeId op_affine(Tape& t, NodeId w, NodeId b, NodeId x, int rows, int cols);

/** Softmax over a slice [begin, begin+len) of the input node. */
NodeId op_softmax_slice(Tape& t, NodeId a, int begin, int len);

/** Multiply by a constant mask (dropout with inverted scaling). */
NodeId op_mask(Tape& t, NodeId a, std::vector<double> mask);

/** Pick one component of a vector node as a scalar node. */
NodeId op_index(Tape& t, NodeId a, int i);

constexpr double kProbFloor = 1e-12;

}  // namespace nesyrs
