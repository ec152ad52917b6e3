#pragma once

// Exact k-nearest-neighbor search over a fixed point set and atrous
// (strided) neighborhood selection.

#include <array>
#include <cstddef>
#include <optional>
#include <vector>

#include "axcrf/tensor.hpp"

namespace axcrf {

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;  // Euclidean, meters
};

/// k-d tree over an immutable snapshot of M x 3 positions. Results are
/// exact, ordered by (squared distance, index).
class NeighborIndex {
 public:
  explicit NeighborIndex(Tensor positions);

  std::size_t size() const { return count_; }
  const Tensor& positions() const { return positions_; }

  /// The k nearest points to `query`, optionally skipping one index.
  std::vector<Neighbor> knn(const std::array<double, 3>& query, std::size_t k,
                            std::optional<std::size_t> exclude = std::nullopt) const;

 private:
  struct Node {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t left = 0;   // child node ids; 0 marks a leaf
    std::size_t right = 0;
    int axis = -1;
    double split = 0.0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  double coord(std::size_t point, int axis) const { return positions_.values[point * 3 + axis]; }

  Tensor positions_;
  std::size_t count_ = 0;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// Validates coordinates and builds the tree. Throws DataError on
/// non-finite input or an empty point set.
NeighborIndex build_index(const Tensor& positions);

struct AtrousNeighborhood {
  std::size_t query = 0;
  std::size_t k = 0;
  std::size_t stride = 0;  // atrous distance D
  std::vector<std::size_t> indices;
  std::vector<double> distances;
};

/// Ranks D, 2D, ..., K*D (1-indexed) of the other points sorted by
/// distance from `query`. When fewer than K*D other points exist the sorted
/// list is repeated cyclically.
AtrousNeighborhood atrous_gather(const NeighborIndex& index, std::size_t query, std::size_t k,
                                 std::size_t stride);

/// Atrous neighborhoods for every indexed point, flattened row-major.
struct NeighborTable {
  std::size_t points = 0;
  std::size_t k = 0;
  std::vector<std::size_t> indices;  // points * k
  std::vector<double> distances;

  std::size_t at(std::size_t point, std::size_t j) const { return indices[point * k + j]; }
};

NeighborTable atrous_table(const NeighborIndex& index, std::size_t k, std::size_t stride);

}  // namespace axcrf
