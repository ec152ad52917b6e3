#pragma once

// Point cloud loading, feature normalization, block slicing and sampling,
// plus synthetic labeled clouds for desk-scale experiments.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "axcrf/tensor.hpp"

namespace axcrf {

struct PointCloud {
  Tensor positions;             // N x 3, meters
  Tensor features;              // N x F
  std::vector<int> labels;      // empty, or N entries in [0, num_classes)
  int num_classes = 0;
  std::vector<std::string> column_names;

  std::size_t size() const { return positions.shape.empty() ? 0 : positions.shape[0]; }
  std::size_t feature_dim() const { return features.shape.size() == 2 ? features.shape[1] : 0; }
  bool has_labels() const { return !labels.empty(); }
};

/// Role -> column index. `features` may be empty; `label` is optional.
struct ColumnMap {
  std::size_t x = 0;
  std::size_t y = 1;
  std::size_t z = 2;
  std::vector<std::size_t> features;
  std::optional<std::size_t> label;
};

/// Reads one point per non-empty line. Fields are separated by whitespace
/// and/or commas. Throws DataError naming the line for malformed input.
PointCloud load_pointcloud(const std::filesystem::path& path, const ColumnMap& columns,
                           int num_classes, bool skip_header = false);

/// Writes "x y z f... [label]" with full round-trip precision.
void write_pointcloud(const std::filesystem::path& path, const PointCloud& cloud);

std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<int>& labels);

PointCloud subset(const PointCloud& cloud, const std::vector<std::size_t>& indices);

/// Per-column affine map onto [-0.5, 0.5]; constant columns map to 0.
struct FeatureNormalizer {
  std::vector<double> min;
  std::vector<double> max;

  PointCloud apply(const PointCloud& cloud) const;
};

struct NormalizedCloud {
  PointCloud cloud;
  FeatureNormalizer normalizer;
};

NormalizedCloud normalize_features(const PointCloud& cloud);
FeatureNormalizer fit_normalizer(const PointCloud& cloud);

struct Block {
  double origin_x = 0.0;
  double origin_y = 0.0;
  double side = 0.0;
  std::vector<std::size_t> members;  // indices into the parent cloud
  Tensor local_positions;            // members x 3, re-centered on the block center

  double center_x() const { return origin_x + 0.5 * side; }
  double center_y() const { return origin_y + 0.5 * side; }
};

struct SliceOptions {
  double side = 25.0;
  double shift = 12.5;
  std::size_t min_points = 64;
  bool recenter_z = false;
};

/// Union of a base grid anchored at the cloud's min x,y and a second grid
/// translated by (shift, shift). Blocks under min_points are dropped.
std::vector<Block> slice_blocks(const PointCloud& cloud, const SliceOptions& options = {});

/// Cell origin along one axis for a grid anchored at `anchor`; exact with
/// respect to the comparisons anchor + i*side <= v < anchor + (i+1)*side.
long grid_cell(double v, double anchor, double side);

struct SampledBlock {
  std::size_t block = 0;                   // index into the block list
  std::vector<std::size_t> sample_indices;  // into the parent cloud
  std::uint64_t seed = 0;
};

/// Uniform sample without replacement when the block holds >= n points,
/// otherwise all members followed by draws with replacement up to n.
SampledBlock sample_block(const Block& block, std::size_t n, std::uint64_t seed,
                          std::size_t block_id = 0);

/// Sampling passes that together cover every member at least once: the
/// members are shuffled and cut into windows of n; the last window is
/// topped up with members drawn without replacement from the others.
std::vector<SampledBlock> coverage_samples(const Block& block, std::size_t n, std::uint64_t seed,
                                           std::size_t block_id = 0);

/// Per-block seed; independent of processing order.
std::uint64_t block_seed(std::uint64_t global_seed, const Block& block, std::uint64_t salt = 0);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

struct TileSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Assigns whole square tiles (base grid of `tile_side`) to partitions by a
/// seeded shuffle. `test_fraction` of tiles is held out first; the rest is
/// divided train/validation by `train_fraction`.
TileSplit split_by_tiles(const PointCloud& cloud, double tile_side, double train_fraction,
                         double test_fraction, std::uint64_t seed);

struct SyntheticLayout {
  double density = 1.0;  // points per square meter
  double aspect = 2.0;   // x extent / y extent
};

/// Presets: "strata" (parallel bands, each a horizontal layer at its own
/// elevation) and "clusters" (Voronoi patches). Elevations do not depend on
/// the class. Features: HaG-like and intensity-like columns whose class
/// means are separated, plus Gaussian noise of std `noise`.
PointCloud generate_synthetic(const std::string& preset, std::size_t n, int num_classes,
                              double noise, std::uint64_t seed, const SyntheticLayout& layout = {});

}  // namespace axcrf
