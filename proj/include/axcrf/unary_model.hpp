#pragma once

// Shallow per-point classifier built from stacked X-Conv blocks and a
// two-layer head. Produces the unary potentials consumed by the XCRF stack.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "axcrf/neighbors.hpp"
#include "axcrf/tensor.hpp"

namespace axcrf {

struct Dense {
  Tensor weight;  // fan_in x fan_out
  Tensor bias;    // fan_out
};

/// One X-Conv operator. Neighborhoods come from atrous_gather(K, stride).
struct XConvParams {
  std::size_t k = 16;
  std::size_t stride = 1;
  std::size_t c_in = 0;
  std::size_t c_delta = 16;
  std::size_t c_out = 32;
  Dense lift1, lift2;    // 3 -> hidden -> c_delta, per neighbor offset
  Dense xform1, xform2;  // 3K -> hidden -> K*K, per point
  Dense conv;            // K*(c_delta + c_in) -> c_out
};

struct XConvSpec {
  std::size_t k = 16;
  std::size_t stride = 1;
  std::size_t c_out = 32;
};

struct UnaryModelConfig {
  std::size_t feature_dim = 2;
  int num_classes = 2;
  std::vector<XConvSpec> blocks{{16, 1, 32}, {16, 2, 32}};
  std::size_t c_delta = 16;
  std::size_t hidden = 32;
  std::size_t head_hidden = 32;
  double dropout_rate = 0.3;
};

struct UnaryModelParams {
  std::vector<XConvParams> blocks;
  Dense head1, head2;
  double dropout_rate = 0.3;
  int num_classes = 0;

  /// Every trainable tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

/// Uniform [-s, s] weights with s = sqrt(6 / (fan_in + fan_out)), zero biases.
UnaryModelParams init_unary_model(const UnaryModelConfig& config, std::uint64_t seed);

/// Model tensors registered in a record, parallel to named_tensors().
struct UnaryVars {
  std::vector<Var> tensors;
};

UnaryVars register_unary(Record& rec, const UnaryModelParams& params, bool trainable);

/// Per-sample geometry for one forward pass: positions, input features and
/// one neighbor table per X-Conv block.
struct BlockInput {
  Tensor positions;  // n x 3
  Tensor features;   // n x F
  std::vector<NeighborTable> tables;
};

BlockInput make_block_input(const Tensor& positions, const Tensor& features,
                            const UnaryModelParams& params);
BlockInput make_block_input(const Tensor& positions, const Tensor& features,
                            const UnaryModelParams& params, const NeighborIndex& index);

/// Differentiable X-Conv over all points. `offsets` holds P - p for each
/// (point, neighbor) pair, (n*K) x 3; `neighbor_features` is (n*K) x c_in.
Var xconv_block(Record& rec, const std::vector<Var>& block_vars, const XConvParams& params,
                const Tensor& offsets, const Var& neighbor_features, std::size_t n);

/// Single representative point: p (3), P (K x 3), F (K x c_in) -> c_out.
/// Throws ShapeError when P does not hold exactly K neighbors.
Tensor xconv_forward(const std::vector<double>& p, const Tensor& neighbors,
                     const Tensor& neighbor_features, const XConvParams& params);

/// Logits (n x C). Dropout is active only when `training` is set.
Var unary_forward(Record& rec, const UnaryVars& vars, const UnaryModelParams& params,
                  const BlockInput& input, bool training, std::uint64_t dropout_seed);

/// Value-level convenience wrapper (eval mode).
Tensor unary_forward(const UnaryModelParams& params, const BlockInput& input);

/// Mean over points of -log softmax(U)[label].
Var cross_entropy(const Var& logits, const std::vector<int>& labels);
/// Sum instead of mean, for averaging over several blocks.
Var cross_entropy_sum(const Var& logits, const std::vector<int>& labels);
double cross_entropy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace axcrf
