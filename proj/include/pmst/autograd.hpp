#ifndef PMST_AUTOGRAD_HPP
#define PMST_AUTOGRAD_HPP

#include <span>
#include <vector>

#include "pmst/tensor.hpp"

namespace pmst {

using NodeId = int32_t;

enum class OpKind {
  kConstant,
  kParam,
  kMatMul,
  kAdd,
  kAddRowBroadcast,
  kScale,
  kMulConst,
  kAddConst,
  kRelu,
  kTranspose,
  kSliceCols,
  kConcatCols,
  kRowsLookup,
  kSoftmaxRows,
  kLayerNorm,
  kConv1d,
  kCrossEntropyLS,
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the record
// list is topologically sorted by construction and backward() is a single
// reverse sweep. One Graph per forward pass; parameters live outside and
// receive accumulated gradients.
class Graph {
 public:
  NodeId constant(Tensor t);
  NodeId param(Parameter& p);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  // (m x n) + row vector (n), broadcast over rows
  NodeId add_row_broadcast(NodeId a, NodeId bias);
  NodeId scale(NodeId a, double c);
  // elementwise multiply / add by a constant tensor (dropout masks,
  // positional encodings, attention masks)
  NodeId mul_const(NodeId a, Tensor mask);
  NodeId add_const(NodeId a, Tensor c);
  NodeId relu(NodeId a);
  NodeId transpose(NodeId a);
  NodeId slice_cols(NodeId a, int64_t c0, int64_t c1);
  NodeId concat_cols(std::span<const NodeId> parts);
  // embedding lookup: one output row per id
  NodeId rows_lookup(NodeId table, std::span<const int> ids);
  NodeId softmax_rows(NodeId a);
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps);
  // x: (L x C_in), w: (C_out, C_in, K), b: (C_out); 'same' padding K/2
  NodeId conv1d(NodeId x, NodeId w, NodeId b, int stride);
  // sum over rows of -sum_v q(v) log softmax(logits)_v with
  // q = (1 - eps) one_hot(target) + eps / V; returns a 1x1 node
  NodeId cross_entropy_label_smoothed(NodeId logits, std::span<const int> targets,
                                      double epsilon);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  size_t size() const { return nodes_.size(); }
  OpKind op_kind(NodeId id) const { return nodes_[id].op; }

  // Accumulates d loss / d p into every reachable Parameter with
  // requires_grad. `loss` must be scalar.
  void backward(NodeId loss);

 private:
  struct Node {
    OpKind op;
    std::vector<NodeId> inputs;
    Tensor value;
    std::vector<double> grad;
    bool needs_grad = false;
    Parameter* parameter = nullptr;
    std::vector<int> ints;  // op-specific: ids, slice bounds, stride
    double scalar = 0.0;    // op-specific: scale factor, eps
    Tensor aux;             // op-specific constant (mask / added tensor)
  };

  NodeId push(Node n);
  std::vector<double>& grad_buf(NodeId id);
  void backward_node(NodeId id);

  std::vector<Node> nodes_;
};

}  // namespace pmst

#endif
