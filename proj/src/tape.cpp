#include "nesyrs/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace nesyrs {

void Tape::backward(NodeId loss) {
  if (nodes_[loss].val.size() != 1) throw std::runtime_error("backward: loss is not scalar");
  grad(loss)[0] = 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    auto& n = nodes_[id];
    if (n.back && !n.grad.empty()) n.back(*this);
  }
}

NodeId op_add(Tape& t, NodeId a, NodeId b) {
  std::vector<double> v = t.val(a);
  const auto& vb = t.val(b);
  if (v.size() != vb.size()) throw std::runtime_error("op_add: shape mismatch");
  for (size_t i = 0; i < v.size(); ++i) v[i] += vb[i];
  NodeId out = static_cast<NodeId>(t.size());
  return t.add(std::move(v), [a, b, out](Tape& tt) {
    const auto& g = tt.grad(out);
    auto& ga = tt.grad(a);
    auto& gb = tt.grad(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] += g[i];
    }
  });
}

NodeId op_scale(Tape& t, NodeId a, double s) {
  std::vector<double> v = t.val(a);
  for (auto& x : v) x *= s;
  NodeId out = static_cast<NodeId>(t.size());
  return t.add(std::move(v), [a, s, out](Tape& tt) {
    const auto& g = tt.grad(out);
    auto& ga = tt.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

NodeId op_mul(Tape& t, NodeId a, NodeId b) {
  std::vector<double> v = t.val(a);
  const auto& vb = t.val(b);
  if (v.size() != vb.size()) throw std::runtime_error("op_mul: shape mismatch");
  for (size_t i = 0; i < v.size(); ++i) v[i] *= vb[i];
  NodeId out = static_cast<NodeId>(t.size());
  return t.add(std::move(v), [a, b, out](Tape& tt) {
    const auto& g = tt.grad(out);
    const auto& va = tt.val(a);
    const auto& vb2 = tt.val(b);
    auto& ga = tt.grad(a);
    auto& gb = tt.grad(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * vb2[i];
      gb[i] += g[i] * va[i];
    }
  });
}

NodeId op_sum(Tape& t, NodeId a) {
  double s = 0.0;
  for (double x : t.val(a)) s += x;
  NodeId out = static_cast<NodeId>(t.size());
  return t.add({s}, [a, out](Tape& tt) {
    double g = tt.grad(out)[0];
    auto& ga = tt.grad(a);
    for (auto& x : ga) x += g;
  });
}

NodeId op_add_scalars(Tape& t, const std::vector<NodeId>& xs) {
  double s = 0.0;
  for (NodeId id : xs) s += t.scalar(id);
  NodeId out = static_cast<NodeId>(t.size());
  std::vector<NodeId> ids = xs;
  return t.add({s}, [ids, out](Tape& tt) {
    double g = tt.grad(out)[0];
    for (NodeId id : ids) tt.grad(id)[0] += g;
  });
}

NodeId op_relu(Tape& t, NodeId a) {
  std::vector<double> v = t.val(a);
  for (auto& x : v)
    if (x < 0.0) x = 0.0;
  NodeId out = static_cast<NodeId>(t.size());
  return t.add(std::move(v), [a, out](Tape& tt) {
    const auto& g = tt.grad(out);
    const auto& va = tt.val(a);
    auto& ga = tt.grad(a);
    for (size_t i = 0; i < g.size(); ++i)
      if (va[i] > 0.0) ga[i] += g[i];
  });
}

NodeId op_log_clamped(Tape& t, NodeId a) {
  std::vector<double> v = t.val(a);
  for (auto& x : v) x = std::log(x < kProbFloor ? kProbFloor : x);
  NodeId out = static_cast<NodeId>(t.size());
  return t.add(std::move(v), [a, out](Tape& tt) {
    const auto& g = tt.grad(out);
    const auto& va = tt.val(a);
    auto& ga = tt.grad(a);
    for (size_t i = 0; i < g.size(); ++i)
      if (va[i] >= kProbFloor) ga[i] += g[i] / va[i];
  });
}

NodeId op_affine(Tape& t, NodeId w, NodeId b, NodeId x, int rows, int cols) {
  const auto& vw = t.val(w);
  const auto& vb = t.val(b);
  const auto& vx = t.val(x);
  if (static_cast<int>(vx.size()) != cols || static_cast<int>(vb.size()) != rows ||
      static_cast<int>(vw.size()) != rows * cols)
    throw std::runtime_error("op_affine: shape mismatch");
  std::vector<double> v(rows);
  for (int r = 0; r < rows; ++r) {
    double s = vb[r];
    const double* wr = vw.data() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) s += wr[c] * vx[c];
    v[r] = s;
  }
  NodeId out = static_cast<NodeId>(t.size());
  return t.add(std::move(v), [w, b, x, rows, cols, out](Tape& tt) {
    const auto& g = tt.grad(out);
    const auto& vw2 = tt.val(w);
    const auto& vx2 = tt.val(x);
    auto& gw = tt.grad(w);
    auto& gb = tt.grad(b);
    auto& gx = tt.grad(x);
    for (int r = 0; r < rows; ++r) {
      double gr = g[r];
      gb[r] += gr;
      double* gwr = gw.data() + static_cast<size_t>(r) * cols;
      const double* wr = vw2.data() + static_cast<size_t>(r) * cols;
      for (int c = 0; c < cols; ++c) {
        gwr[c] += gr * vx2[c];
        gx[c] += gr * wr[c];
      }
    }
  });
}

NodeId op_softmax_slice(Tape& t, NodeId a, int begin, int len) {
  const auto& va = t.val(a);
  if (begin < 0 || begin + len > static_cast<int>(va.size()))
    throw std::runtime_error("op_softmax_slice: out of range");
  double mx = va[begin];
  for (int i = 1; i < len; ++i) mx = std::max(mx, va[begin + i]);
  std::vector<double> v(len);
  double z = 0.0;
  for (int i = 0; i < len; ++i) {
    v[i] = std::exp(va[begin + i] - mx);
    z += v[i];
  }
  for (auto& x : v) x /= z;
  NodeId out = static_cast<NodeId>(t.size());
  return t.add(std::move(v), [a, begin, len, out](Tape& tt) {
    const auto& g = tt.grad(out);
    const auto& p = tt.val(out);
    auto& ga = tt.grad(a);
    double dot = 0.0;
    for (int i = 0; i < len; ++i) dot += g[i] * p[i];
    for (int i = 0; i < len; ++i) ga[begin + i] += p[i] * (g[i] - dot);
  });
}

NodeId op_mask(Tape& t, NodeId a, std::vector<double> mask) {
  std::vector<double> v = t.val(a);
  if (v.size() != mask.size()) throw std::runtime_error("op_mask: shape mismatch");
  for (size_t i = 0; i < v.size(); ++i) v[i] *= mask[i];
  NodeId out = static_cast<NodeId>(t.size());
  return t.add(std::move(v), [a, m = std::move(mask), out](Tape& tt) {
    const auto& g = tt.grad(out);
    auto& ga = tt.grad(a);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * m[i];
  });
}

NodeId op_index(Tape& t, NodeId a, int i) {
  NodeId out = static_cast<NodeId>(t.size());
  return t.add({t.val(a)[i]}, [a, i, out](Tape& tt) {
    tt.grad(a)[i] += tt.grad(out)[0];
  });
}

}  // namespace nesyrs
