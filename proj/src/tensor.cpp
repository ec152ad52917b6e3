#include "axcrf/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

#include "axcrf/random.hpp"

namespace axcrf {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (values.size() != shape_size(shape)) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " given " +
                     std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(Shape s) { return filled(std::move(s), 0.0); }

Tensor Tensor::filled(Shape s, double value) {
  const std::size_t n = shape_size(s);
  return Tensor(std::move(s), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (shape.size() != 2) throw ShapeError("expected 2-D tensor, got " + shape_str(shape));
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() != 2) throw ShapeError("expected 2-D tensor, got " + shape_str(shape));
  return shape[1];
}

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 19> kOpNames{{
    {OpKind::kAdd, "add"},
    {OpKind::kSubtract, "subtract"},
    {OpKind::kMultiply, "elementwise-multiply"},
    {OpKind::kMatMul, "matrix-multiply"},
    {OpKind::kBatchedMatMul, "batched-matrix-multiply"},
    {OpKind::kExp, "exponential"},
    {OpKind::kLog, "natural-log"},
    {OpKind::kRelu, "relu"},
    {OpKind::kSoftmaxRows, "softmax-rows"},
    {OpKind::kLogSoftmaxRows, "log-softmax-rows"},
    {OpKind::kSum, "sum"},
    {OpKind::kMean, "mean"},
    {OpKind::kConcat, "concatenate"},
    {OpKind::kGatherRows, "gather-rows"},
    {OpKind::kOneHotArgmax, "one-hot-argmax"},
    {OpKind::kStopGradient, "stop-gradient"},
    {OpKind::kDropout, "dropout-mask"},
    {OpKind::kReshape, "reshape"},
    {OpKind::kAddBias, "add-bias"},
}};

std::size_t expected_arity(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kSubtract:
    case OpKind::kMultiply:
    case OpKind::kMatMul:
    case OpKind::kBatchedMatMul:
    case OpKind::kAddBias:
      return 2;
    case OpKind::kConcat:
      return 0;  // variadic
    default:
      return 1;
  }
}

[[noreturn]] void shape_mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

void require_2d(OpKind kind, const Shape& s) {
  if (s.size() != 2) {
    throw ShapeError(std::string(op_name(kind)) + ": expected 2-D input, got " + shape_str(s));
  }
}

// Dense kernels. C += A * B with A (m x k), B (k x n).
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA += dC * B^T
void gemm_grad_a(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// dB += A^T * dC
void gemm_grad_b(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

Shape broadcast_shape(OpKind kind, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (shape_size(b) == 1) return a;
  if (shape_size(a) == 1) return b;
  shape_mismatch(kind, a, b);
}

}  // namespace

OpKind parse_op_kind(std::string_view name) {
  for (const auto& [kind, n] : kOpNames) {
    if (n == name) return kind;
  }
  throw std::invalid_argument("unknown operation kind '" + std::string(name) + "'");
}

std::string_view op_name(OpKind kind) {
  for (const auto& [k, n] : kOpNames) {
    if (k == kind) return n;
  }
  return "?";
}

const Shape& Var::shape() const { return rec_->shape(id_); }
const std::vector<double>& Var::values() const { return rec_->value(id_).values; }
Tensor Var::value() const { return rec_->value(id_); }

const Tensor& Gradients::at(NodeId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    throw AutogradError("no gradient recorded for node " + std::to_string(id));
  }
  return it->second;
}

Var Record::leaf(Tensor t) {
  Node n;
  n.is_leaf = true;
  n.requires_grad = true;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Record::constant(Tensor t) {
  Node n;
  n.is_leaf = true;
  n.requires_grad = false;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Record::check_owned(const Var& v) const {
  if (v.record() != this || v.id() >= nodes_.size()) {
    throw AutogradError("tensor does not belong to this computation record");
  }
}

Var Record::apply(std::string_view kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  return apply(parse_op_kind(kind), inputs, attrs);
}

Var Record::apply(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs) {
  if (backward_done_) throw AutogradError("record already consumed by backward");
  const std::size_t arity = expected_arity(kind);
  if (arity != 0 && inputs.size() != arity) {
    throw std::invalid_argument(std::string(op_name(kind)) + ": expected " +
                                std::to_string(arity) + " inputs, got " +
                                std::to_string(inputs.size()));
  }
  if (inputs.empty()) throw std::invalid_argument(std::string(op_name(kind)) + ": no inputs");

  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  bool any_grad = false;
  for (const Var& v : inputs) {
    check_owned(v);
    in.push_back(&nodes_[v.id()].value);
    any_grad = any_grad || nodes_[v.id()].requires_grad;
  }

  Node n;
  n.kind = kind;
  n.attrs = attrs;
  n.value = forward(kind, in, attrs, n.saved);
  n.requires_grad =
      any_grad && kind != OpKind::kOneHotArgmax && kind != OpKind::kStopGradient;
  for (const Var& v : inputs) n.inputs.push_back(v.id());
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Tensor Record::forward(OpKind kind, const std::vector<const Tensor*>& in, const OpAttrs& attrs,
                       std::vector<double>& saved) const {
  switch (kind) {
    case OpKind::kAdd:
    case OpKind::kSubtract:
    case OpKind::kMultiply: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      Tensor out = Tensor::zeros(broadcast_shape(kind, a.shape, b.shape));
      const bool as = a.size() == 1 && out.size() != 1;
      const bool bs = b.size() == 1 && out.size() != 1;
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = as ? a.values[0] : a.values[i];
        const double y = bs ? b.values[0] : b.values[i];
        out.values[i] = kind == OpKind::kAdd ? x + y : kind == OpKind::kSubtract ? x - y : x * y;
      }
      return out;
    }
    case OpKind::kMatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
        shape_mismatch(kind, a.shape, b.shape);
      }
      Tensor out = Tensor::zeros({a.shape[0], b.shape[1]});
      gemm_acc(a.values.data(), b.values.data(), out.values.data(), a.shape[0], a.shape[1],
               b.shape[1]);
      return out;
    }
    case OpKind::kBatchedMatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.shape.size() != 3 || b.shape.size() != 3 || a.shape[0] != b.shape[0] ||
          a.shape[2] != b.shape[1]) {
        shape_mismatch(kind, a.shape, b.shape);
      }
      const std::size_t bs = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2];
      Tensor out = Tensor::zeros({bs, m, n});
      for (std::size_t s = 0; s < bs; ++s) {
        gemm_acc(a.values.data() + s * m * k, b.values.data() + s * k * n,
                 out.values.data() + s * m * n, m, k, n);
      }
      return out;
    }
    case OpKind::kExp:
    case OpKind::kLog:
    case OpKind::kRelu:
    case OpKind::kStopGradient: {
      Tensor out = *in[0];
      for (double& v : out.values) {
        if (kind == OpKind::kExp) v = std::exp(v);
        else if (kind == OpKind::kLog) v = std::log(v);
        else if (kind == OpKind::kRelu) v = v > 0.0 ? v : 0.0;
      }
      return out;
    }
    case OpKind::kSoftmaxRows:
    case OpKind::kLogSoftmaxRows: {
      const Tensor& a = *in[0];
      require_2d(kind, a.shape);
      Tensor out = a;
      const std::size_t c = a.shape[1];
      for (std::size_t r = 0; r < a.shape[0]; ++r) {
        double* row = out.values.data() + r * c;
        const double mx = c ? *std::max_element(row, row + c) : 0.0;
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        if (kind == OpKind::kSoftmaxRows) {
          for (std::size_t j = 0; j < c; ++j) row[j] = std::exp(row[j] - mx) / z;
        } else {
          const double lz = std::log(z);
          for (std::size_t j = 0; j < c; ++j) row[j] = row[j] - mx - lz;
        }
      }
      return out;
    }
    case OpKind::kSum:
    case OpKind::kMean: {
      const Tensor& a = *in[0];
      double s = 0.0;
      for (double v : a.values) s += v;
      if (kind == OpKind::kMean) {
        if (a.size() == 0) throw ShapeError("mean: empty input");
        s /= static_cast<double>(a.size());
      }
      return Tensor::scalar(s);
    }
    case OpKind::kConcat: {
      for (const Tensor* t : in) require_2d(kind, t->shape);
      if (attrs.axis > 1) throw ShapeError("concatenate: axis must be 0 or 1");
      const std::size_t fixed = attrs.axis == 0 ? 1 : 0;
      std::size_t total = 0;
      for (const Tensor* t : in) {
        if (t->shape[fixed] != in[0]->shape[fixed]) shape_mismatch(kind, in[0]->shape, t->shape);
        total += t->shape[attrs.axis];
      }
      if (attrs.axis == 0) {
        Tensor out = Tensor::zeros({total, in[0]->shape[1]});
        std::size_t off = 0;
        for (const Tensor* t : in) {
          std::copy(t->values.begin(), t->values.end(), out.values.begin() + off);
          off += t->size();
        }
        return out;
      }
      const std::size_t rows = in[0]->shape[0];
      Tensor out = Tensor::zeros({rows, total});
      for (std::size_t r = 0; r < rows; ++r) {
        std::size_t off = r * total;
        for (const Tensor* t : in) {
          const std::size_t c = t->shape[1];
          std::copy_n(t->values.begin() + r * c, c, out.values.begin() + off);
          off += c;
        }
      }
      return out;
    }
    case OpKind::kGatherRows: {
      const Tensor& a = *in[0];
      require_2d(kind, a.shape);
      const std::size_t c = a.shape[1];
      Tensor out = Tensor::zeros({attrs.indices.size(), c});
      for (std::size_t i = 0; i < attrs.indices.size(); ++i) {
        const std::size_t src = attrs.indices[i];
        if (src >= a.shape[0]) {
          throw ShapeError("gather-rows: index " + std::to_string(src) + " out of range for " +
                           shape_str(a.shape));
        }
        std::copy_n(a.values.begin() + src * c, c, out.values.begin() + i * c);
      }
      return out;
    }
    case OpKind::kOneHotArgmax: {
      const Tensor& a = *in[0];
      require_2d(kind, a.shape);
      Tensor out = Tensor::zeros(a.shape);
      const auto idx = argmax_rows(a);
      for (std::size_t r = 0; r < idx.size(); ++r) out(r, static_cast<std::size_t>(idx[r])) = 1.0;
      return out;
    }
    case OpKind::kDropout: {
      if (!(attrs.rate >= 0.0 && attrs.rate < 1.0)) {
        throw std::invalid_argument("dropout-mask: rate must lie in [0, 1)");
      }
      Tensor out = *in[0];
      if (!attrs.training || attrs.rate == 0.0) return out;
      Rng rng(attrs.seed);
      const double s = 1.0 / (1.0 - attrs.rate);
      saved.resize(out.size());
      for (std::size_t i = 0; i < out.size(); ++i) {
        saved[i] = rng.uniform() >= attrs.rate ? s : 0.0;
        out.values[i] *= saved[i];
      }
      return out;
    }
    case OpKind::kReshape: {
      if (shape_size(attrs.shape) != in[0]->size()) shape_mismatch(kind, in[0]->shape, attrs.shape);
      return Tensor(attrs.shape, in[0]->values);
    }
    case OpKind::kAddBias: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      require_2d(kind, a.shape);
      const std::size_t c = a.shape[1];
      if (b.size() != c) shape_mismatch(kind, a.shape, b.shape);
      Tensor out = a;
      for (std::size_t r = 0; r < a.shape[0]; ++r) {
        for (std::size_t j = 0; j < c; ++j) out.values[r * c + j] += b.values[j];
      }
      return out;
    }
  }
  throw std::invalid_argument("unknown operation kind");
}

void Record::backprop(const Node& node, const std::vector<double>& g,
                      std::vector<std::vector<double>>& grads) const {
  auto acc = [&](std::size_t slot) -> double* {
    const NodeId id = node.inputs[slot];
    if (!nodes_[id].requires_grad) return nullptr;
    auto& buf = grads[id];
    if (buf.empty()) buf.assign(nodes_[id].value.size(), 0.0);
    return buf.data();
  };
  auto input = [&](std::size_t slot) -> const Tensor& { return nodes_[node.inputs[slot]].value; };
  const Tensor& out = node.value;

  switch (node.kind) {
    case OpKind::kAdd:
    case OpKind::kSubtract:
    case OpKind::kMultiply: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      const bool as = a.size() == 1 && out.size() != 1;
      const bool bs = b.size() == 1 && out.size() != 1;
      if (double* ga = acc(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          double d = g[i];
          if (node.kind == OpKind::kMultiply) d *= bs ? b.values[0] : b.values[i];
          ga[as ? 0 : i] += d;
        }
      }
      if (double* gb = acc(1)) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          double d = node.kind == OpKind::kSubtract ? -g[i] : g[i];
          if (node.kind == OpKind::kMultiply) d *= as ? a.values[0] : a.values[i];
          gb[bs ? 0 : i] += d;
        }
      }
      return;
    }
    case OpKind::kMatMul: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
      if (double* ga = acc(0)) gemm_grad_a(g.data(), b.values.data(), ga, m, k, n);
      if (double* gb = acc(1)) gemm_grad_b(a.values.data(), g.data(), gb, m, k, n);
      return;
    }
    case OpKind::kBatchedMatMul: {
      const Tensor& a = input(0);
      const Tensor& b = input(1);
      const std::size_t bs = a.shape[0], m = a.shape[1], k = a.shape[2], n = b.shape[2];
      double* ga = acc(0);
      double* gb = acc(1);
      for (std::size_t s = 0; s < bs; ++s) {
        const double* gs = g.data() + s * m * n;
        if (ga) gemm_grad_a(gs, b.values.data() + s * k * n, ga + s * m * k, m, k, n);
        if (gb) gemm_grad_b(a.values.data() + s * m * k, gs, gb + s * k * n, m, k, n);
      }
      return;
    }
    case OpKind::kExp:
      if (double* ga = acc(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * out.values[i];
      }
      return;
    case OpKind::kLog:
      if (double* ga = acc(0)) {
        const Tensor& a = input(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / a.values[i];
      }
      return;
    case OpKind::kRelu:
      if (double* ga = acc(0)) {
        const Tensor& a = input(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (a.values[i] > 0.0) ga[i] += g[i];
        }
      }
      return;
    case OpKind::kSoftmaxRows:
      if (double* ga = acc(0)) {
        const std::size_t c = out.shape[1];
        for (std::size_t r = 0; r < out.shape[0]; ++r) {
          const double* y = out.values.data() + r * c;
          const double* gr = g.data() + r * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += gr[j] * y[j];
          for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += y[j] * (gr[j] - dot);
        }
      }
      return;
    case OpKind::kLogSoftmaxRows:
      if (double* ga = acc(0)) {
        const std::size_t c = out.shape[1];
        for (std::size_t r = 0; r < out.shape[0]; ++r) {
          const double* y = out.values.data() + r * c;
          const double* gr = g.data() + r * c;
          double gs = 0.0;
          for (std::size_t j = 0; j < c; ++j) gs += gr[j];
          for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += gr[j] - std::exp(y[j]) * gs;
        }
      }
      return;
    case OpKind::kSum:
    case OpKind::kMean:
      if (double* ga = acc(0)) {
        const std::size_t n = input(0).size();
        const double d = node.kind == OpKind::kMean ? g[0] / static_cast<double>(n) : g[0];
        for (std::size_t i = 0; i < n; ++i) ga[i] += d;
      }
      return;
    case OpKind::kConcat: {
      const std::size_t axis = node.attrs.axis;
      if (axis == 0) {
        std::size_t off = 0;
        for (std::size_t s = 0; s < node.inputs.size(); ++s) {
          const std::size_t n = input(s).size();
          if (double* ga = acc(s)) {
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[off + i];
          }
          off += n;
        }
      } else {
        const std::size_t rows = out.shape[0], total = out.shape[1];
        std::size_t coff = 0;
        for (std::size_t s = 0; s < node.inputs.size(); ++s) {
          const std::size_t c = input(s).shape[1];
          if (double* ga = acc(s)) {
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t j = 0; j < c; ++j) ga[r * c + j] += g[r * total + coff + j];
            }
          }
          coff += c;
        }
      }
      return;
    }
    case OpKind::kGatherRows:
      if (double* ga = acc(0)) {
        const std::size_t c = out.shape[1];
        const auto& idx = node.attrs.indices;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          for (std::size_t j = 0; j < c; ++j) ga[idx[i] * c + j] += g[i * c + j];
        }
      }
      return;
    case OpKind::kOneHotArgmax:
    case OpKind::kStopGradient:
      return;
    case OpKind::kDropout:
      if (double* ga = acc(0)) {
        if (node.saved.empty()) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        } else {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * node.saved[i];
        }
      }
      return;
    case OpKind::kReshape:
      if (double* ga = acc(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      return;
    case OpKind::kAddBias: {
      const std::size_t c = out.shape[1];
      if (double* ga = acc(0)) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (double* gb = acc(1)) {
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % c] += g[i];
      }
      return;
    }
  }
}

Gradients Record::backward(const Var& loss) {
  check_owned(loss);
  if (backward_done_) throw AutogradError("backward already run on this record");
  const Tensor& lv = nodes_[loss.id()].value;
  if (lv.size() != 1) {
    throw AutogradError("backward requires a scalar loss, got shape " + shape_str(lv.shape));
  }
  backward_done_ = true;

  std::vector<std::vector<double>> grads(nodes_.size());
  if (nodes_[loss.id()].requires_grad) grads[loss.id()] = {1.0};
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.is_leaf || !n.requires_grad || grads[id].empty()) continue;
    backprop(n, grads[id], grads);
    grads[id].clear();
    grads[id].shrink_to_fit();
  }

  Gradients out;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (!n.is_leaf || !n.requires_grad) continue;
    Tensor g = Tensor::zeros(n.value.shape);
    if (!grads[id].empty()) g.values = std::move(grads[id]);
    out.grads_.emplace(id, std::move(g));
  }
  return out;
}

namespace {

Var apply1(OpKind kind, const Var& a, const OpAttrs& attrs = {}) {
  const Var in[] = {a};
  return a.record()->apply(kind, in, attrs);
}

Var apply2(OpKind kind, const Var& a, const Var& b) {
  if (a.record() != b.record()) throw AutogradError("operands belong to different records");
  const Var in[] = {a, b};
  return a.record()->apply(kind, in);
}

}  // namespace

Var add(const Var& a, const Var& b) { return apply2(OpKind::kAdd, a, b); }
Var sub(const Var& a, const Var& b) { return apply2(OpKind::kSubtract, a, b); }
Var mul(const Var& a, const Var& b) { return apply2(OpKind::kMultiply, a, b); }
Var scale(const Var& a, double factor) {
  return mul(a, a.record()->constant(Tensor::scalar(factor)));
}
Var matmul(const Var& a, const Var& b) { return apply2(OpKind::kMatMul, a, b); }
Var batched_matmul(const Var& a, const Var& b) { return apply2(OpKind::kBatchedMatMul, a, b); }
Var exp(const Var& a) { return apply1(OpKind::kExp, a); }
Var log(const Var& a) { return apply1(OpKind::kLog, a); }
Var relu(const Var& a) { return apply1(OpKind::kRelu, a); }
Var softmax_rows(const Var& a) { return apply1(OpKind::kSoftmaxRows, a); }
Var log_softmax_rows(const Var& a) { return apply1(OpKind::kLogSoftmaxRows, a); }
Var sum(const Var& a) { return apply1(OpKind::kSum, a); }
Var mean(const Var& a) { return apply1(OpKind::kMean, a); }

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concatenate: no inputs");
  OpAttrs attrs;
  attrs.axis = axis;
  return parts[0].record()->apply(OpKind::kConcat, parts, attrs);
}

Var gather_rows(const Var& a, std::vector<std::size_t> indices) {
  OpAttrs attrs;
  attrs.indices = std::move(indices);
  return apply1(OpKind::kGatherRows, a, attrs);
}

Var one_hot_argmax(const Var& a) { return apply1(OpKind::kOneHotArgmax, a); }
Var stop_gradient(const Var& a) { return apply1(OpKind::kStopGradient, a); }

Var dropout(const Var& a, double rate, std::uint64_t seed, bool training) {
  OpAttrs attrs;
  attrs.rate = rate;
  attrs.seed = seed;
  attrs.training = training;
  return apply1(OpKind::kDropout, a, attrs);
}

Var reshape(const Var& a, Shape shape) {
  OpAttrs attrs;
  attrs.shape = std::move(shape);
  return apply1(OpKind::kReshape, a, attrs);
}

Var add_bias(const Var& a, const Var& bias) { return apply2(OpKind::kAddBias, a, bias); }

std::vector<int> argmax_rows(const Tensor& m) {
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<int> out(r, 0);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = m.values.data() + i * c;
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

double grad_check(const ScalarFn& fn, const Tensor& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  auto eval = [&](const Tensor& x) {
    Record rec;
    const Var in = rec.leaf(x);
    const Var y = fn(rec, in);
    if (y.values().size() != 1) throw AutogradError("grad_check: function is not scalar");
    const double v = y.values()[0];
    if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite forward value");
    return v;
  };

  Tensor analytic;
  {
    Record rec;
    const Var in = rec.leaf(point);
    const Var y = fn(rec, in);
    if (!std::isfinite(y.values().at(0))) {
      throw std::domain_error("grad_check: non-finite forward value");
    }
    analytic = rec.backward(y)[in];
  }

  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe.values[i] = point.values[i] + step;
    const double up = eval(probe);
    probe.values[i] = point.values[i] - step;
    const double down = eval(probe);
    probe.values[i] = point.values[i];
    const double numeric = (up - down) / (2.0 * step);
    const double err = std::abs(analytic.values[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace axcrf
