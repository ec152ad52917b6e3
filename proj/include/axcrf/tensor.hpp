#pragma once

// Dense row-major tensors and a tape-based reverse-mode differentiation
// engine. A Record owns every node created while building one loss; Var is
// a cheap handle into it.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace axcrf {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutogradError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> v);

  static Tensor zeros(Shape s);
  static Tensor filled(Shape s, double value);
  static Tensor scalar(double value);
  /// Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t size() const { return values.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double operator()(std::size_t r, std::size_t c) const { return values[r * shape[1] + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values[r * shape[1] + c]; }

  bool operator==(const Tensor&) const = default;
};

enum class OpKind {
  kAdd,
  kSubtract,
  kMultiply,
  kMatMul,
  kBatchedMatMul,
  kExp,
  kLog,
  kRelu,
  kSoftmaxRows,
  kLogSoftmaxRows,
  kSum,
  kMean,
  kConcat,
  kGatherRows,
  kOneHotArgmax,
  kStopGradient,
  kDropout,
  kReshape,
  kAddBias,
};

/// Accepts the hyphenated names ("matrix-multiply", "softmax-rows", ...).
/// Throws std::invalid_argument for unknown names.
OpKind parse_op_kind(std::string_view name);
std::string_view op_name(OpKind kind);

struct OpAttrs {
  std::vector<std::size_t> indices;  // gather-rows
  Shape shape;                       // reshape
  std::size_t axis = 0;              // concatenate: 0 = rows, 1 = columns
  double rate = 0.0;                 // dropout
  std::uint64_t seed = 0;            // dropout
  bool training = true;              // dropout
};

using NodeId = std::size_t;

class Record;

class Var {
 public:
  Var() = default;

  NodeId id() const { return id_; }
  Record* record() const { return rec_; }
  bool valid() const { return rec_ != nullptr; }

  const Shape& shape() const;
  const std::vector<double>& values() const;
  Tensor value() const;

 private:
  friend class Record;
  Var(Record* rec, NodeId id) : rec_(rec), id_(id) {}

  Record* rec_ = nullptr;
  NodeId id_ = 0;
};

/// Gradients of one backward pass, keyed by leaf node id.
class Gradients {
 public:
  const Tensor& at(NodeId id) const;
  const Tensor& operator[](const Var& v) const { return at(v.id()); }
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Record;
  std::unordered_map<NodeId, Tensor> grads_;
};

/// Computation record (tape). Single writer; one backward pass per record.
class Record {
 public:
  Record() = default;
  Record(const Record&) = delete;
  Record& operator=(const Record&) = delete;

  /// Trainable input; receives a gradient during backward.
  Var leaf(Tensor t);
  /// Input that never receives a gradient.
  Var constant(Tensor t);

  Var apply(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});
  Var apply(std::string_view kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

  Gradients backward(const Var& loss);

  std::size_t node_count() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  const Shape& shape(NodeId id) const { return nodes_.at(id).value.shape; }
  const Tensor& value(NodeId id) const { return nodes_.at(id).value; }

 private:
  struct Node {
    OpKind kind = OpKind::kStopGradient;
    bool is_leaf = false;
    bool requires_grad = false;
    std::vector<NodeId> inputs;
    Tensor value;
    std::vector<double> saved;  // mask for dropout
    OpAttrs attrs;
  };

  void check_owned(const Var& v) const;
  Tensor forward(OpKind kind, const std::vector<const Tensor*>& in, const OpAttrs& attrs,
                 std::vector<double>& saved) const;
  void backprop(const Node& node, const std::vector<double>& gout,
                std::vector<std::vector<double>>& grads) const;

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Convenience wrappers around Record::apply.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var matmul(const Var& a, const Var& b);
Var batched_matmul(const Var& a, const Var& b);
Var exp(const Var& a);
Var log(const Var& a);
Var relu(const Var& a);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var concat(std::span<const Var> parts, std::size_t axis);
Var gather_rows(const Var& a, std::vector<std::size_t> indices);
Var one_hot_argmax(const Var& a);
Var stop_gradient(const Var& a);
Var dropout(const Var& a, double rate, std::uint64_t seed, bool training);
Var reshape(const Var& a, Shape shape);
Var add_bias(const Var& a, const Var& bias);

/// Row-wise argmax, ties resolved to the lowest index.
std::vector<int> argmax_rows(const Tensor& m);

/// Compares the tape gradient of `fn` at `point` against central finite
/// differences. Returns max_i |analytic - numeric| / max(1, |numeric|).
/// Throws std::domain_error if any forward evaluation is non-finite.
using ScalarFn = std::function<Var(Record&, const Var&)>;
double grad_check(const ScalarFn& fn, const Tensor& point, double step);

}  // namespace axcrf
