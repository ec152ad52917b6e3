#pragma once

// Neighbor-limited CRF refinement of per-point class logits.
//
// One XCRF level runs r mean-field style iterations:
//   U_s = softmax_rows(U_1)
//   W_u = onehot(argmax U_s) * W_c            (N x C times C x C)
//   U_G[i, c] = sum_j G_w[i, j] * U_s[nbr(i, j), c]
//   U_p = U_G (elementwise) W_u
//   U_1 = U - U_p                              (always from the original U)
// with G_w = w_b * B_f + w_s * S_f over each point's atrous neighborhood.
// The A-XCRF stack runs every level on the same U and sums the outputs.

#include <cstddef>
#include <vector>

#include "axcrf/neighbors.hpp"
#include "axcrf/tensor.hpp"

namespace axcrf {

struct Bandwidths {
  double alpha = 1.0;  // bilateral, spatial part (meters)
  double beta = 1.0;   // bilateral, feature part (normalized feature units)
  double gamma = 1.0;  // spatial filter (meters)
};

struct XcrfLevelParams {
  int num_classes = 0;
  double w_b = 1.0;
  double w_s = 1.0;
  /// Off-diagonal entries of the compatibility matrix, row-major with the
  /// diagonal skipped: C * (C - 1) values. The diagonal is always zero.
  std::vector<double> compat_offdiag;
  Bandwidths theta;
  std::size_t k = 64;
  std::size_t stride = 1;
  std::size_t iterations = 5;

  /// Weights one, compatibility all ones off the diagonal.
  static XcrfLevelParams initial(int num_classes, std::size_t k, std::size_t stride,
                                 std::size_t iterations);

  Tensor compat_matrix() const;
  void set_compat(std::size_t row, std::size_t col, double v);
  void validate() const;
};

struct AXcrfParams {
  std::vector<XcrfLevelParams> levels;
  /// When set, every level reads its trainable weights (w_b, w_s, W_c)
  /// from levels[0]; bandwidths, K and D stay per level.
  bool shared_weights = false;
  bool theta_initialized = false;

  static AXcrfParams initial(int num_classes, std::size_t k, const std::vector<std::size_t>& strides,
                             std::size_t iterations);

  std::vector<std::size_t> strides() const;
  void set_theta(const Bandwidths& theta);
};

struct FilterResponse {
  Tensor bilateral;  // N x K, B_f
  Tensor spatial;    // N x K, S_f
  Tensor weighted;   // N x K, G_w = w_b * B_f + w_s * S_f
};

FilterResponse gaussian_filters(const Tensor& positions, const Tensor& features,
                                const NeighborTable& neighbors, const XcrfLevelParams& params);

/// Intermediates of the last iteration (for inspection and tests).
struct MeanFieldState {
  Tensor unary;      // U
  Tensor working;    // U_1 fed into the iteration
  Tensor normalized; // U_s
  Tensor selected;   // W_u
  Tensor aggregated; // U_G
  Tensor penalty;    // U_p
};

/// Trainable XCRF weights registered in a record.
struct LevelVars {
  Var w_b;
  Var w_s;
  Var compat_offdiag;  // C(C-1) x 1
};

/// Registers the level weights as leaves (trainable) or constants.
LevelVars register_level(Record& rec, const XcrfLevelParams& params, bool trainable);

/// Builds the C x C hollow matrix from the off-diagonal parameter vector.
Var hollow_compat(const Var& offdiag, int num_classes);

/// Differentiable single level. `bilateral` and `spatial` come from
/// gaussian_filters over `neighbors`. The one-hot selection carries no
/// gradient; everything else does.
Var xcrf_level(Record& rec, const Var& unary, const Tensor& bilateral, const Tensor& spatial,
               const NeighborTable& neighbors, const LevelVars& weights, std::size_t iterations,
               int num_classes, MeanFieldState* trace = nullptr);

/// Neighborhood tables for each level, sharing one k-NN pass per point.
std::vector<NeighborTable> level_tables(const NeighborIndex& index, const AXcrfParams& params);

/// Filter responses per level (bilateral/spatial only depend on bandwidths).
std::vector<FilterResponse> level_filters(const Tensor& positions, const Tensor& features,
                                          const std::vector<NeighborTable>& tables,
                                          const AXcrfParams& params);

/// Differentiable A-XCRF sum. `weights` holds one entry per level (entries
/// may alias when weights are shared).
Var axcrf_stack(Record& rec, const Var& unary, const std::vector<FilterResponse>& filters,
                const std::vector<NeighborTable>& tables, const std::vector<LevelVars>& weights,
                const AXcrfParams& params);

/// Value-level single XCRF refinement.
Tensor xcrf_forward(const Tensor& unary, const Tensor& positions, const Tensor& features,
                    const XcrfLevelParams& params, const NeighborIndex& index,
                    MeanFieldState* trace = nullptr);

/// Value-level A-XCRF refinement: sum over levels of xcrf_forward(U).
Tensor axcrf_forward(const Tensor& unary, const Tensor& positions, const Tensor& features,
                     const AXcrfParams& params, const NeighborIndex& index);

/// Per-row argmax (ties to the lowest class). Softmax is monotone, so this
/// equals the argmax of the class probabilities.
std::vector<int> predict(const Tensor& unary_final);

}  // namespace axcrf
