#include "axcrf/pointcloud.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include "axcrf/errors.hpp"
#include "axcrf/random.hpp"

namespace axcrf {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  auto is_sep = [](char c) { return c == ' ' || c == '\t' || c == ',' || c == '\r'; };
  while (i < line.size()) {
    while (i < line.size() && is_sep(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_sep(line[i])) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

bool parse_double(std::string_view s, double& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::string line_error(std::size_t line_no, const std::string& what) {
  return "line " + std::to_string(line_no) + ": " + what;
}

}  // namespace

PointCloud load_pointcloud(const std::filesystem::path& path, const ColumnMap& columns,
                           int num_classes, bool skip_header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open point file " + path.string());

  std::size_t needed = std::max({columns.x, columns.y, columns.z});
  for (std::size_t f : columns.features) needed = std::max(needed, f);
  if (columns.label) needed = std::max(needed, *columns.label);
  ++needed;

  std::vector<double> pos;
  std::vector<double> feat;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  bool header_pending = skip_header;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    if (fields.size() < needed) {
      throw DataError(line_error(line_no, "expected at least " + std::to_string(needed) +
                                              " fields, found " + std::to_string(fields.size())));
    }
    auto get = [&](std::size_t col) {
      double v = 0.0;
      if (!parse_double(fields[col], v) || !std::isfinite(v)) {
        throw DataError(line_error(line_no, "malformed number '" + std::string(fields[col]) +
                                                "' in column " + std::to_string(col)));
      }
      return v;
    };
    pos.push_back(get(columns.x));
    pos.push_back(get(columns.y));
    pos.push_back(get(columns.z));
    for (std::size_t f : columns.features) feat.push_back(get(f));
    if (columns.label) {
      const double v = get(*columns.label);
      if (v != std::floor(v)) {
        throw DataError(line_error(line_no, "label is not an integer"));
      }
      if (v < 0 || v >= num_classes) {
        throw DataError(line_error(line_no, "label " + std::string(fields[*columns.label]) +
                                                " outside [0, " + std::to_string(num_classes) +
                                                ")"));
      }
      labels.push_back(static_cast<int>(v));
    }
  }

  PointCloud cloud;
  const std::size_t n = pos.size() / 3;
  cloud.positions = Tensor({n, 3}, std::move(pos));
  cloud.features = Tensor({n, columns.features.size()}, std::move(feat));
  cloud.labels = std::move(labels);
  cloud.num_classes = num_classes;
  cloud.column_names = {"x", "y", "z"};
  for (std::size_t i = 0; i < columns.features.size(); ++i) {
    cloud.column_names.push_back("f" + std::to_string(i));
  }
  if (columns.label) cloud.column_names.push_back("label");
  return cloud;
}

void write_pointcloud(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write point file " + path.string());
  out.precision(std::numeric_limits<double>::max_digits10);
  const std::size_t f = cloud.feature_dim();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    out << cloud.positions(i, 0) << ' ' << cloud.positions(i, 1) << ' ' << cloud.positions(i, 2);
    for (std::size_t j = 0; j < f; ++j) out << ' ' << cloud.features(i, j);
    if (cloud.has_labels()) out << ' ' << cloud.labels[i];
    out << '\n';
  }
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open label file " + path.string());
  std::vector<int> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    int v = 0;
    const auto* end = fields[0].data() + fields[0].size();
    auto [ptr, ec] = std::from_chars(fields[0].data(), end, v);
    if (ec != std::errc() || ptr != end || fields.size() != 1) {
      throw DataError("label file " + path.string() + " " + line_error(line_no, "malformed label"));
    }
    out.push_back(v);
  }
  return out;
}

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write label file " + path.string());
  for (int l : labels) out << l << '\n';
}

PointCloud subset(const PointCloud& cloud, const std::vector<std::size_t>& indices) {
  PointCloud out;
  const std::size_t f = cloud.feature_dim();
  out.positions = Tensor::zeros({indices.size(), 3});
  out.features = Tensor::zeros({indices.size(), f});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    for (std::size_t j = 0; j < 3; ++j) out.positions(i, j) = cloud.positions(src, j);
    for (std::size_t j = 0; j < f; ++j) out.features(i, j) = cloud.features(src, j);
    if (cloud.has_labels()) out.labels.push_back(cloud.labels[src]);
  }
  out.num_classes = cloud.num_classes;
  out.column_names = cloud.column_names;
  return out;
}

FeatureNormalizer fit_normalizer(const PointCloud& cloud) {
  const std::size_t f = cloud.feature_dim();
  FeatureNormalizer norm;
  norm.min.assign(f, std::numeric_limits<double>::infinity());
  norm.max.assign(f, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const double v = cloud.features(i, j);
      if (!std::isfinite(v)) {
        throw DataError("non-finite feature at point " + std::to_string(i) + ", column " +
                        std::to_string(j));
      }
      norm.min[j] = std::min(norm.min[j], v);
      norm.max[j] = std::max(norm.max[j], v);
    }
  }
  if (cloud.size() == 0) {
    norm.min.assign(f, 0.0);
    norm.max.assign(f, 0.0);
  }
  return norm;
}

PointCloud FeatureNormalizer::apply(const PointCloud& cloud) const {
  const std::size_t f = cloud.feature_dim();
  if (f != min.size()) {
    throw DataError("normalizer expects " + std::to_string(min.size()) + " feature columns, cloud has " +
                    std::to_string(f));
  }
  PointCloud out = cloud;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const double v = cloud.features(i, j);
      if (!std::isfinite(v)) throw DataError("non-finite feature at point " + std::to_string(i));
      const double range = max[j] - min[j];
      out.features(i, j) = range > 0.0 ? (v - min[j]) / range - 0.5 : 0.0;
    }
  }
  return out;
}

NormalizedCloud normalize_features(const PointCloud& cloud) {
  FeatureNormalizer norm = fit_normalizer(cloud);
  PointCloud out = norm.apply(cloud);
  return {std::move(out), std::move(norm)};
}

long grid_cell(double v, double anchor, double side) {
  long i = static_cast<long>(std::floor((v - anchor) / side));
  while (v < anchor + static_cast<double>(i) * side) --i;
  while (v >= anchor + static_cast<double>(i + 1) * side) ++i;
  return i;
}

namespace {

void fill_local_positions(const PointCloud& cloud, Block& b, bool recenter_z) {
  b.local_positions = Tensor::zeros({b.members.size(), 3});
  double cz = 0.0;
  if (recenter_z && !b.members.empty()) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t m : b.members) {
      lo = std::min(lo, cloud.positions(m, 2));
      hi = std::max(hi, cloud.positions(m, 2));
    }
    cz = 0.5 * (lo + hi);
  }
  for (std::size_t i = 0; i < b.members.size(); ++i) {
    const std::size_t m = b.members[i];
    b.local_positions(i, 0) = cloud.positions(m, 0) - b.center_x();
    b.local_positions(i, 1) = cloud.positions(m, 1) - b.center_y();
    b.local_positions(i, 2) = cloud.positions(m, 2) - cz;
  }
}

}  // namespace

std::vector<Block> slice_blocks(const PointCloud& cloud, const SliceOptions& options) {
  if (!(options.side > 0.0)) throw std::invalid_argument("slice_blocks: side must be positive");
  if (!(options.shift > 0.0 && options.shift <= options.side)) {
    throw std::invalid_argument("slice_blocks: shift must lie in (0, side]");
  }
  std::vector<Block> blocks;
  const std::size_t n = cloud.size();
  if (n == 0) return blocks;

  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  for (std::size_t i = 0; i < n; ++i) {
    min_x = std::min(min_x, cloud.positions(i, 0));
    min_y = std::min(min_y, cloud.positions(i, 1));
  }

  const double anchors[2][2] = {{min_x, min_y},
                                {min_x + options.shift, min_y + options.shift}};
  for (const auto& anchor : anchors) {
    std::map<std::pair<long, long>, std::vector<std::size_t>> cells;
    for (std::size_t i = 0; i < n; ++i) {
      const long cx = grid_cell(cloud.positions(i, 0), anchor[0], options.side);
      const long cy = grid_cell(cloud.positions(i, 1), anchor[1], options.side);
      cells[{cy, cx}].push_back(i);
    }
    for (auto& [key, members] : cells) {
      if (members.size() < options.min_points) continue;
      Block b;
      b.origin_x = anchor[0] + static_cast<double>(key.second) * options.side;
      b.origin_y = anchor[1] + static_cast<double>(key.first) * options.side;
      b.side = options.side;
      b.members = std::move(members);
      fill_local_positions(cloud, b, options.recenter_z);
      blocks.push_back(std::move(b));
    }
  }
  return blocks;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t block_seed(std::uint64_t global_seed, const Block& block, std::uint64_t salt) {
  auto bits = [](double v) {
    std::uint64_t u = 0;
    static_assert(sizeof u == sizeof v);
    std::memcpy(&u, &v, sizeof u);
    return u;
  };
  return mix_seed(mix_seed(mix_seed(global_seed, bits(block.origin_x)), bits(block.origin_y)),
                  salt);
}

SampledBlock sample_block(const Block& block, std::size_t n, std::uint64_t seed,
                          std::size_t block_id) {
  if (block.members.empty()) throw DataError("sample_block: empty block");
  if (n == 0) throw std::invalid_argument("sample_block: sample size must be positive");
  SampledBlock out;
  out.block = block_id;
  out.seed = seed;
  Rng rng(seed);
  const std::size_t m = block.members.size();
  if (m >= n) {
    std::vector<std::size_t> pool = block.members;
    for (std::size_t i = 0; i < n; ++i) {
      std::swap(pool[i], pool[i + rng.index(m - i)]);
    }
    pool.resize(n);
    out.sample_indices = std::move(pool);
  } else {
    out.sample_indices = block.members;
    for (std::size_t i = m; i < n; ++i) out.sample_indices.push_back(block.members[rng.index(m)]);
  }
  return out;
}

std::vector<SampledBlock> coverage_samples(const Block& block, std::size_t n, std::uint64_t seed,
                                           std::size_t block_id) {
  if (block.members.empty()) throw DataError("coverage_samples: empty block");
  const std::size_t m = block.members.size();
  if (m <= n) return {sample_block(block, n, seed, block_id)};

  Rng rng(seed);
  std::vector<std::size_t> order = block.members;
  rng.shuffle(order);
  std::vector<SampledBlock> passes;
  for (std::size_t start = 0; start < m; start += n) {
    SampledBlock s;
    s.block = block_id;
    s.seed = seed;
    const std::size_t end = std::min(m, start + n);
    s.sample_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                            order.begin() + static_cast<std::ptrdiff_t>(end));
    if (end - start < n) {
      // top up from members outside this window, without replacement
      std::vector<std::size_t> rest(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(start));
      const std::size_t need = n - (end - start);
      for (std::size_t i = 0; i < need; ++i) {
        std::swap(rest[i], rest[i + rng.index(rest.size() - i)]);
        s.sample_indices.push_back(rest[i]);
      }
    }
    passes.push_back(std::move(s));
  }
  return passes;
}

TileSplit split_by_tiles(const PointCloud& cloud, double tile_side, double train_fraction,
                         double test_fraction, std::uint64_t seed) {
  if (!(tile_side > 0.0)) throw std::invalid_argument("split_by_tiles: tile side must be positive");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0) ||
      !(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split_by_tiles: fractions out of range");
  }
  TileSplit split;
  const std::size_t n = cloud.size();
  if (n == 0) return split;
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  for (std::size_t i = 0; i < n; ++i) {
    min_x = std::min(min_x, cloud.positions(i, 0));
    min_y = std::min(min_y, cloud.positions(i, 1));
  }
  std::map<std::pair<long, long>, std::vector<std::size_t>> tiles;
  for (std::size_t i = 0; i < n; ++i) {
    tiles[{grid_cell(cloud.positions(i, 1), min_y, tile_side),
           grid_cell(cloud.positions(i, 0), min_x, tile_side)}]
        .push_back(i);
  }
  std::vector<std::vector<std::size_t>*> order;
  for (auto& [key, members] : tiles) order.push_back(&members);
  Rng rng(seed);
  rng.shuffle(order);

  const std::size_t t = order.size();
  std::size_t n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(t)));
  if (test_fraction > 0.0 && t >= 3) n_test = std::clamp<std::size_t>(n_test, 1, t - 2);
  const std::size_t rest = t - n_test;
  std::size_t n_train =
      static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(rest)));
  if (train_fraction < 1.0 && rest >= 2) n_train = std::clamp<std::size_t>(n_train, 1, rest - 1);

  for (std::size_t k = 0; k < t; ++k) {
    auto& dst = k < n_test ? split.test : k < n_test + n_train ? split.train : split.validation;
    dst.insert(dst.end(), order[k]->begin(), order[k]->end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

PointCloud generate_synthetic(const std::string& preset, std::size_t n, int num_classes,
                              double noise, std::uint64_t seed, const SyntheticLayout& layout) {
  if (preset != "strata" && preset != "clusters") {
    throw std::invalid_argument("unknown synthetic preset '" + preset + "'");
  }
  if (n == 0 || num_classes < 2 || !(noise >= 0.0 && noise < 1.0)) {
    throw std::invalid_argument("generate_synthetic: need N > 0, C >= 2, 0 <= noise < 1");
  }
  Rng rng(seed);
  const double area = static_cast<double>(n) / layout.density;
  const double width = std::sqrt(area * layout.aspect);
  const double height = area / width;
  const auto classes = static_cast<std::size_t>(num_classes);

  auto pick_class = [&](int avoid) {
    int c = static_cast<int>(rng.index(classes));
    if (c == avoid) c = (c + 1 + static_cast<int>(rng.index(classes - 1))) % num_classes;
    return c;
  };

  // Planar regions (strata bands or Voronoi cells), each with a class and a
  // ground elevation drawn independently of the class.
  std::vector<double> band_edges;  // strata: band upper edges along the band axis
  std::vector<double> sites_xy;    // clusters: Voronoi sites
  std::vector<int> region_class;
  std::vector<double> region_z;
  const double ca = std::cos(std::numbers::pi / 6.0);
  const double sa = std::sin(std::numbers::pi / 6.0);
  if (preset == "strata") {
    const double t_max = width * ca + height * sa;
    double t = 0.0;
    int prev = -1;
    while (t < t_max) {
      t += rng.uniform(6.0, 18.0);
      band_edges.push_back(t);
      prev = pick_class(prev);
      region_class.push_back(prev);
      region_z.push_back(rng.uniform(0.0, 6.0));
    }
  } else {
    const std::size_t sites = std::max<std::size_t>(classes, static_cast<std::size_t>(area / 150.0));
    for (std::size_t s = 0; s < sites; ++s) {
      sites_xy.push_back(rng.uniform(0.0, width));
      sites_xy.push_back(rng.uniform(0.0, height));
      region_class.push_back(static_cast<int>(rng.index(classes)));
      region_z.push_back(rng.uniform(0.0, 6.0));
    }
  }
  auto region_at = [&](double x, double y) -> std::size_t {
    if (!band_edges.empty()) {
      const double t = x * ca + y * sa;
      const auto it = std::upper_bound(band_edges.begin(), band_edges.end(), t);
      return std::min<std::size_t>(static_cast<std::size_t>(it - band_edges.begin()), band_edges.size() - 1);
    }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < region_class.size(); ++s) {
      const double dx = x - sites_xy[2 * s], dy = y - sites_xy[2 * s + 1];
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    return best;
  };

  const double denom = static_cast<double>(num_classes - 1);
  PointCloud cloud;
  cloud.positions = Tensor::zeros({n, 3});
  cloud.features = Tensor::zeros({n, 2});
  cloud.labels.resize(n);
  cloud.num_classes = num_classes;
  cloud.column_names = {"x", "y", "z", "hag", "intensity", "label"};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(0.0, width);
    const double y = rng.uniform(0.0, height);
    const std::size_t r = region_at(x, y);
    const int c = region_class[r];
    cloud.positions(i, 0) = x;
    cloud.positions(i, 1) = y;
    cloud.positions(i, 2) = region_z[r] + 0.2 * rng.normal();
    cloud.features(i, 0) = c / denom + noise * rng.normal();
    cloud.features(i, 1) = ((2 * c) % num_classes) / denom + noise * rng.normal();
    cloud.labels[i] = c;
  }
  return cloud;
}

}  // namespace axcrf
