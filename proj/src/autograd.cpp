#include "pmst/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace pmst {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace {

ECMap mat(const Tensor& t) { return ECMap(t.data.data(), t.rows(), t.cols()); }

ECMap mat(const std::vector<double>& d, int64_t r, int64_t c) {
  return ECMap(d.data(), r, c);
}

EMap mut(Tensor& t) { return EMap(t.data.data(), t.rows(), t.cols()); }

EMap mut(std::vector<double>& d, int64_t r, int64_t c) {
  return EMap(d.data(), r, c);
}

}  // namespace

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

std::vector<double>& Graph::grad_buf(NodeId id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(static_cast<size_t>(n.value.numel()), 0.0);
  return n.grad;
}

NodeId Graph::constant(Tensor t) {
  Node n;
  n.op = OpKind::kConstant;
  n.value = std::move(t);
  return push(std::move(n));
}

NodeId Graph::param(Parameter& p) {
  Node n;
  n.op = OpKind::kParam;
  n.value = p.value;
  n.parameter = &p;
  n.needs_grad = p.requires_grad;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  PMST_CHECK(ta.cols() == tb.rows(), "matmul: inner dims differ");
  Node n;
  n.op = OpKind::kMatMul;
  n.inputs = {a, b};
  n.value = Tensor(ta.rows(), tb.cols());
  mut(n.value) = mat(ta) * mat(tb);
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  PMST_CHECK(ta.same_shape(tb), "add: shape mismatch");
  Node n;
  n.op = OpKind::kAdd;
  n.inputs = {a, b};
  n.value = ta;
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += tb.data[i];
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

NodeId Graph::add_row_broadcast(NodeId a, NodeId bias) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[bias].value;
  PMST_CHECK(tb.numel() == ta.cols(), "add_row_broadcast: bias length mismatch");
  Node n;
  n.op = OpKind::kAddRowBroadcast;
  n.inputs = {a, bias};
  n.value = ta;
  int64_t c = ta.cols();
  for (int64_t r = 0; r < ta.rows(); ++r)
    for (int64_t j = 0; j < c; ++j) n.value.data[r * c + j] += tb.data[j];
  n.needs_grad = nodes_[a].needs_grad || nodes_[bias].needs_grad;
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double c) {
  Node n;
  n.op = OpKind::kScale;
  n.inputs = {a};
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v *= c;
  n.scalar = c;
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

NodeId Graph::mul_const(NodeId a, Tensor mask) {
  const Tensor& ta = nodes_[a].value;
  PMST_CHECK(ta.same_shape(mask), "mul_const: shape mismatch");
  Node n;
  n.op = OpKind::kMulConst;
  n.inputs = {a};
  n.value = ta;
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] *= mask.data[i];
  n.aux = std::move(mask);
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

NodeId Graph::add_const(NodeId a, Tensor c) {
  const Tensor& ta = nodes_[a].value;
  PMST_CHECK(ta.same_shape(c), "add_const: shape mismatch");
  Node n;
  n.op = OpKind::kAddConst;
  n.inputs = {a};
  n.value = ta;
  for (size_t i = 0; i < n.value.data.size(); ++i) n.value.data[i] += c.data[i];
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
  Node n;
  n.op = OpKind::kRelu;
  n.inputs = {a};
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = v > 0.0 ? v : 0.0;
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

NodeId Graph::transpose(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  Node n;
  n.op = OpKind::kTranspose;
  n.inputs = {a};
  n.value = Tensor(ta.cols(), ta.rows());
  mut(n.value) = mat(ta).transpose();
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId a, int64_t c0, int64_t c1) {
  const Tensor& ta = nodes_[a].value;
  PMST_CHECK(0 <= c0 && c0 < c1 && c1 <= ta.cols(), "slice_cols: bad range");
  Node n;
  n.op = OpKind::kSliceCols;
  n.inputs = {a};
  n.value = Tensor(ta.rows(), c1 - c0);
  mut(n.value) = mat(ta).middleCols(c0, c1 - c0);
  n.ints = {static_cast<int>(c0), static_cast<int>(c1)};
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

NodeId Graph::concat_cols(std::span<const NodeId> parts) {
  PMST_CHECK(!parts.empty(), "concat_cols: empty");
  int64_t rows = nodes_[parts[0]].value.rows();
  int64_t cols = 0;
  for (NodeId p : parts) {
    PMST_CHECK(nodes_[p].value.rows() == rows, "concat_cols: row mismatch");
    cols += nodes_[p].value.cols();
  }
  Node n;
  n.op = OpKind::kConcatCols;
  n.inputs.assign(parts.begin(), parts.end());
  n.value = Tensor(rows, cols);
  int64_t off = 0;
  for (NodeId p : parts) {
    const Tensor& tp = nodes_[p].value;
    mut(n.value).middleCols(off, tp.cols()) = mat(tp);
    off += tp.cols();
    n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
  }
  return push(std::move(n));
}

NodeId Graph::rows_lookup(NodeId table, std::span<const int> ids) {
  const Tensor& tt = nodes_[table].value;
  Node n;
  n.op = OpKind::kRowsLookup;
  n.inputs = {table};
  n.value = Tensor(static_cast<int64_t>(ids.size()), tt.cols());
  int64_t c = tt.cols();
  for (size_t i = 0; i < ids.size(); ++i) {
    PMST_CHECK(ids[i] >= 0 && ids[i] < tt.rows(), "rows_lookup: id out of range");
    std::copy_n(tt.data.begin() + ids[i] * c, c, n.value.data.begin() + i * c);
  }
  n.ints.assign(ids.begin(), ids.end());
  n.needs_grad = nodes_[table].needs_grad;
  return push(std::move(n));
}

NodeId Graph::softmax_rows(NodeId a) {
  const Tensor& ta = nodes_[a].value;
  Node n;
  n.op = OpKind::kSoftmaxRows;
  n.inputs = {a};
  n.value = ta;
  int64_t c = ta.cols();
  for (int64_t r = 0; r < ta.rows(); ++r) {
    double* row = n.value.data.data() + r * c;
    double mx = *std::max_element(row, row + c);
    double sum = 0.0;
    for (int64_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int64_t j = 0; j < c; ++j) row[j] /= sum;
  }
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
  PMST_CHECK(eps > 0.0, "layer_norm: eps must be positive");
  const Tensor& tx = nodes_[x].value;
  const Tensor& tg = nodes_[gain].value;
  const Tensor& tb = nodes_[bias].value;
  int64_t c = tx.cols();
  PMST_CHECK(tg.numel() == c && tb.numel() == c, "layer_norm: gain/bias length mismatch");
  Node n;
  n.op = OpKind::kLayerNorm;
  n.inputs = {x, gain, bias};
  n.value = Tensor(tx.rows(), c);
  // saved normalized activations and 1/std per row, needed by backward
  n.aux = Tensor(tx.rows(), c + 1);
  for (int64_t r = 0; r < tx.rows(); ++r) {
    const double* row = tx.data.data() + r * c;
    double mean = 0.0;
    for (int64_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (int64_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    double inv_std = 1.0 / std::sqrt(var + eps);
    n.aux.data[r * (c + 1) + c] = inv_std;
    for (int64_t j = 0; j < c; ++j) {
      double xh = (row[j] - mean) * inv_std;
      n.aux.data[r * (c + 1) + j] = xh;
      n.value.data[r * c + j] = xh * tg.data[j] + tb.data[j];
    }
  }
  n.scalar = eps;
  n.needs_grad = nodes_[x].needs_grad || nodes_[gain].needs_grad || nodes_[bias].needs_grad;
  return push(std::move(n));
}

NodeId Graph::conv1d(NodeId x, NodeId w, NodeId b, int stride) {
  const Tensor& tx = nodes_[x].value;
  const Tensor& tw = nodes_[w].value;
  const Tensor& tb = nodes_[b].value;
  PMST_CHECK(tx.rows() >= 1, "empty sequence");
  PMST_CHECK(tw.shape.size() == 3, "conv1d: kernel must be rank 3");
  int64_t len = tx.rows(), cin = tx.cols();
  int64_t cout = tw.shape[0], k = tw.shape[2];
  PMST_CHECK(tw.shape[1] == cin, "conv1d: channel mismatch");
  PMST_CHECK(tb.numel() == cout, "conv1d: bias length mismatch");
  int64_t pad = k / 2;
  int64_t out_len = (len + 2 * pad - k) / stride + 1;
  Node n;
  n.op = OpKind::kConv1d;
  n.inputs = {x, w, b};
  n.value = Tensor(out_len, cout);
  for (int64_t t = 0; t < out_len; ++t) {
    for (int64_t o = 0; o < cout; ++o) {
      double acc = tb.data[o];
      for (int64_t j = 0; j < k; ++j) {
        int64_t u = t * stride + j - pad;
        if (u < 0 || u >= len) continue;
        const double* wrow = tw.data.data() + (o * cin * k) + j;
        const double* xrow = tx.data.data() + u * cin;
        for (int64_t cc = 0; cc < cin; ++cc) acc += xrow[cc] * wrow[cc * k];
      }
      n.value.data[t * cout + o] = acc;
    }
  }
  n.ints = {stride, static_cast<int>(pad)};
  n.needs_grad = nodes_[x].needs_grad || nodes_[w].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

NodeId Graph::cross_entropy_label_smoothed(NodeId logits, std::span<const int> targets,
                                           double epsilon) {
  PMST_CHECK(epsilon >= 0.0 && epsilon < 1.0, "cross_entropy: epsilon out of range");
  const Tensor& tl = nodes_[logits].value;
  PMST_CHECK(static_cast<int64_t>(targets.size()) == tl.rows(),
             "cross_entropy: target count mismatch");
  int64_t v = tl.cols();
  Node n;
  n.op = OpKind::kCrossEntropyLS;
  n.inputs = {logits};
  n.value = Tensor(1, 1);
  double total = 0.0;
  for (int64_t r = 0; r < tl.rows(); ++r) {
    int t = targets[r];
    PMST_CHECK(t >= 0 && t < v, "cross_entropy: target id out of range");
    const double* row = tl.data.data() + r * v;
    double mx = *std::max_element(row, row + v);
    double sum_exp = 0.0, sum_z = 0.0;
    for (int64_t j = 0; j < v; ++j) {
      sum_exp += std::exp(row[j] - mx);
      sum_z += row[j];
    }
    double lse = mx + std::log(sum_exp);
    total += lse - (1.0 - epsilon) * row[t] - (epsilon / static_cast<double>(v)) * sum_z;
  }
  n.value.data[0] = total;
  n.ints.assign(targets.begin(), targets.end());
  n.scalar = epsilon;
  n.needs_grad = nodes_[logits].needs_grad;
  return push(std::move(n));
}

void Graph::backward(NodeId loss) {
  PMST_CHECK(nodes_[loss].value.numel() == 1, "backward: loss must be scalar");
  grad_buf(loss)[0] = 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    backward_node(id);
  }
}

void Graph::backward_node(NodeId id) {
  Node& n = nodes_[id];
  const std::vector<double>& g = n.grad;
  auto needs = [&](int i) { return nodes_[n.inputs[i]].needs_grad; };

  switch (n.op) {
    case OpKind::kConstant:
      break;
    case OpKind::kParam:
      n.parameter->accumulate(g);
      break;
    case OpKind::kMatMul: {
      const Tensor& ta = nodes_[n.inputs[0]].value;
      const Tensor& tb = nodes_[n.inputs[1]].value;
      auto gm = mat(g, ta.rows(), tb.cols());
      if (needs(0)) {
        auto da = mut(grad_buf(n.inputs[0]), ta.rows(), ta.cols());
        da.noalias() += gm * mat(tb).transpose();
      }
      if (needs(1)) {
        auto db = mut(grad_buf(n.inputs[1]), tb.rows(), tb.cols());
        db.noalias() += mat(ta).transpose() * gm;
      }
      break;
    }
    case OpKind::kAdd:
      for (int i = 0; i < 2; ++i) {
        if (!needs(i)) continue;
        std::vector<double>& d = grad_buf(n.inputs[i]);
        for (size_t j = 0; j < g.size(); ++j) d[j] += g[j];
      }
      break;
    case OpKind::kAddRowBroadcast: {
      int64_t c = n.value.cols();
      if (needs(0)) {
        std::vector<double>& d = grad_buf(n.inputs[0]);
        for (size_t j = 0; j < g.size(); ++j) d[j] += g[j];
      }
      if (needs(1)) {
        std::vector<double>& d = grad_buf(n.inputs[1]);
        for (int64_t r = 0; r < n.value.rows(); ++r)
          for (int64_t j = 0; j < c; ++j) d[j] += g[r * c + j];
      }
      break;
    }
    case OpKind::kScale: {
      if (!needs(0)) break;
      std::vector<double>& d = grad_buf(n.inputs[0]);
      for (size_t j = 0; j < g.size(); ++j) d[j] += g[j] * n.scalar;
      break;
    }
    case OpKind::kMulConst: {
      if (!needs(0)) break;
      std::vector<double>& d = grad_buf(n.inputs[0]);
      for (size_t j = 0; j < g.size(); ++j) d[j] += g[j] * n.aux.data[j];
      break;
    }
    case OpKind::kAddConst: {
      if (!needs(0)) break;
      std::vector<double>& d = grad_buf(n.inputs[0]);
      for (size_t j = 0; j < g.size(); ++j) d[j] += g[j];
      break;
    }
    case OpKind::kRelu: {
      if (!needs(0)) break;
      const Tensor& tx = nodes_[n.inputs[0]].value;
      std::vector<double>& d = grad_buf(n.inputs[0]);
      for (size_t j = 0; j < g.size(); ++j)
        if (tx.data[j] > 0.0) d[j] += g[j];
      break;
    }
    case OpKind::kTranspose: {
      if (!needs(0)) break;
      const Tensor& tx = nodes_[n.inputs[0]].value;
      auto d = mut(grad_buf(n.inputs[0]), tx.rows(), tx.cols());
      d += mat(g, n.value.rows(), n.value.cols()).transpose();
      break;
    }
    case OpKind::kSliceCols: {
      if (!needs(0)) break;
      const Tensor& tx = nodes_[n.inputs[0]].value;
      int64_t c0 = n.ints[0];
      auto d = mut(grad_buf(n.inputs[0]), tx.rows(), tx.cols());
      d.middleCols(c0, n.value.cols()) += mat(g, n.value.rows(), n.value.cols());
      break;
    }
    case OpKind::kConcatCols: {
      int64_t off = 0;
      for (size_t i = 0; i < n.inputs.size(); ++i) {
        const Tensor& tp = nodes_[n.inputs[i]].value;
        if (needs(static_cast<int>(i))) {
          auto d = mut(grad_buf(n.inputs[i]), tp.rows(), tp.cols());
          d += mat(g, n.value.rows(), n.value.cols()).middleCols(off, tp.cols());
        }
        off += tp.cols();
      }
      break;
    }
    case OpKind::kRowsLookup: {
      if (!needs(0)) break;
      int64_t c = n.value.cols();
      std::vector<double>& d = grad_buf(n.inputs[0]);
      for (size_t i = 0; i < n.ints.size(); ++i) {
        double* drow = d.data() + static_cast<int64_t>(n.ints[i]) * c;
        for (int64_t j = 0; j < c; ++j) drow[j] += g[i * c + j];
      }
      break;
    }
    case OpKind::kSoftmaxRows: {
      if (!needs(0)) break;
      int64_t c = n.value.cols();
      std::vector<double>& d = grad_buf(n.inputs[0]);
      for (int64_t r = 0; r < n.value.rows(); ++r) {
        const double* s = n.value.data.data() + r * c;
        const double* gr = g.data() + r * c;
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += gr[j] * s[j];
        for (int64_t j = 0; j < c; ++j) d[r * c + j] += s[j] * (gr[j] - dot);
      }
      break;
    }
    case OpKind::kLayerNorm: {
      const Tensor& tg = nodes_[n.inputs[1]].value;
      int64_t c = n.value.cols();
      for (int64_t r = 0; r < n.value.rows(); ++r) {
        const double* gy = g.data() + r * c;
        const double* xh = n.aux.data.data() + r * (c + 1);
        double inv_std = n.aux.data[r * (c + 1) + c];
        if (needs(1)) {
          std::vector<double>& dg = grad_buf(n.inputs[1]);
          for (int64_t j = 0; j < c; ++j) dg[j] += gy[j] * xh[j];
        }
        if (needs(2)) {
          std::vector<double>& db = grad_buf(n.inputs[2]);
          for (int64_t j = 0; j < c; ++j) db[j] += gy[j];
        }
        if (needs(0)) {
          std::vector<double>& dx = grad_buf(n.inputs[0]);
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (int64_t j = 0; j < c; ++j) {
            double dxh = gy[j] * tg.data[j];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[j];
          }
          mean_dxh /= static_cast<double>(c);
          mean_dxh_xh /= static_cast<double>(c);
          for (int64_t j = 0; j < c; ++j) {
            double dxh = gy[j] * tg.data[j];
            dx[r * c + j] += inv_std * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
          }
        }
      }
      break;
    }
    case OpKind::kConv1d: {
      const Tensor& tx = nodes_[n.inputs[0]].value;
      const Tensor& tw = nodes_[n.inputs[1]].value;
      int stride = n.ints[0], pad = n.ints[1];
      int64_t len = tx.rows(), cin = tx.cols();
      int64_t cout = tw.shape[0], k = tw.shape[2];
      for (int64_t t = 0; t < n.value.rows(); ++t) {
        for (int64_t o = 0; o < cout; ++o) {
          double go = g[t * cout + o];
          if (needs(2)) grad_buf(n.inputs[2])[o] += go;
          for (int64_t j = 0; j < k; ++j) {
            int64_t u = t * stride + j - pad;
            if (u < 0 || u >= len) continue;
            if (needs(0)) {
              std::vector<double>& dx = grad_buf(n.inputs[0]);
              for (int64_t cc = 0; cc < cin; ++cc)
                dx[u * cin + cc] += go * tw.data[(o * cin + cc) * k + j];
            }
            if (needs(1)) {
              std::vector<double>& dw = grad_buf(n.inputs[1]);
              for (int64_t cc = 0; cc < cin; ++cc)
                dw[(o * cin + cc) * k + j] += go * tx.data[u * cin + cc];
            }
          }
        }
      }
      break;
    }
    case OpKind::kCrossEntropyLS: {
      if (!needs(0)) break;
      const Tensor& tl = nodes_[n.inputs[0]].value;
      int64_t v = tl.cols();
      double eps = n.scalar;
      double gs = g[0];
      std::vector<double>& d = grad_buf(n.inputs[0]);
      for (int64_t r = 0; r < tl.rows(); ++r) {
        const double* row = tl.data.data() + r * v;
        double mx = *std::max_element(row, row + v);
        double sum_exp = 0.0;
        for (int64_t j = 0; j < v; ++j) sum_exp += std::exp(row[j] - mx);
        for (int64_t j = 0; j < v; ++j) {
          double p = std::exp(row[j] - mx) / sum_exp;
          double q = eps / static_cast<double>(v) +
                     (j == n.ints[r] ? 1.0 - eps : 0.0);
          d[r * v + j] += gs * (p - q);
        }
      }
      break;
    }
  }
}

}  // namespace pmst
