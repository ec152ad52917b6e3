#include "axcrf/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "axcrf/errors.hpp"

namespace axcrf {

namespace {

constexpr std::size_t kLeafSize = 12;

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index)

}  // namespace

NeighborIndex::NeighborIndex(Tensor positions) : positions_(std::move(positions)) {
  if (positions_.shape.size() != 2 || positions_.shape[1] != 3) {
    throw ShapeError("neighbor index expects M x 3 positions, got " + shape_str(positions_.shape));
  }
  count_ = positions_.shape[0];
  order_.resize(count_);
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (count_ > 0) {
    nodes_.reserve(2 * (count_ / kLeafSize + 1));
    build(0, count_);
  }
}

std::size_t NeighborIndex::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{begin, end, 0, 0, -1, 0.0});
  if (end - begin <= kLeafSize) return id;

  // split on the widest axis at the median
  double lo[3], hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = hi[a] = coord(order_[begin], a);
  }
  for (std::size_t i = begin; i < end; ++i) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], coord(order_[i], a));
      hi[a] = std::max(hi[a], coord(order_[i], a));
    }
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a) {
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;
  }
  if (hi[axis] - lo[axis] == 0.0) return id;  // all coincident

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return coord(a, axis) < coord(b, axis); });
  const double split = coord(order_[mid], axis);
  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  return id;
}

std::vector<Neighbor> NeighborIndex::knn(const std::array<double, 3>& query, std::size_t k,
                                         std::optional<std::size_t> exclude) const {
  std::vector<Candidate> heap;
  if (k == 0 || count_ == 0) return {};
  heap.reserve(k + 1);

  auto consider = [&](std::size_t p) {
    if (exclude && *exclude == p) return;
    const double dx = coord(p, 0) - query[0];
    const double dy = coord(p, 1) - query[1];
    const double dz = coord(p, 2) - query[2];
    const Candidate c{dx * dx + dy * dy + dz * dz, p};
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
  };

  // explicit stack of (node, lower bound on squared distance)
  std::vector<std::pair<std::size_t, double>> stack{{0, 0.0}};
  while (!stack.empty()) {
    const auto [id, bound] = stack.back();
    stack.pop_back();
    if (heap.size() == k && bound > heap.front().first) continue;
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::size_t i = node.begin; i < node.end; ++i) consider(order_[i]);
      continue;
    }
    const double diff = query[static_cast<std::size_t>(node.axis)] - node.split;
    const std::size_t near = diff < 0.0 ? node.left : node.right;
    const std::size_t far = diff < 0.0 ? node.right : node.left;
    // far side first so the near side is searched next
    stack.emplace_back(far, std::max(bound, diff * diff));
    stack.emplace_back(near, bound);
  }

  std::sort_heap(heap.begin(), heap.end());
  std::vector<Neighbor> out;
  out.reserve(heap.size());
  for (const auto& [d2, p] : heap) out.push_back({p, std::sqrt(d2)});
  return out;
}

NeighborIndex build_index(const Tensor& positions) {
  if (positions.shape.size() != 2 || positions.shape[1] != 3) {
    throw ShapeError("build_index expects M x 3 positions, got " + shape_str(positions.shape));
  }
  if (positions.shape[0] == 0) throw DataError("build_index: no points");
  for (double v : positions.values) {
    if (!std::isfinite(v)) throw DataError("build_index: non-finite coordinate");
  }
  return NeighborIndex(positions);
}

AtrousNeighborhood atrous_gather(const NeighborIndex& index, std::size_t query, std::size_t k,
                                 std::size_t stride) {
  if (k == 0 || stride == 0) {
    throw std::invalid_argument("atrous_gather: K and D must be at least 1");
  }
  if (query >= index.size()) throw std::out_of_range("atrous_gather: query index out of range");
  if (index.size() < 2) throw DataError("atrous_gather: no other points to select");

  const Tensor& p = index.positions();
  const std::array<double, 3> q{p(query, 0), p(query, 1), p(query, 2)};
  const std::size_t span = k * stride;
  const auto sorted = index.knn(q, std::min(span, index.size() - 1), query);

  AtrousNeighborhood out;
  out.query = query;
  out.k = k;
  out.stride = stride;
  out.indices.reserve(k);
  out.distances.reserve(k);
  for (std::size_t j = 1; j <= k; ++j) {
    const Neighbor& nb = sorted[(j * stride - 1) % sorted.size()];
    out.indices.push_back(nb.index);
    out.distances.push_back(nb.distance);
  }
  return out;
}

NeighborTable atrous_table(const NeighborIndex& index, std::size_t k, std::size_t stride) {
  NeighborTable table;
  table.points = index.size();
  table.k = k;
  table.indices.reserve(table.points * k);
  table.distances.reserve(table.points * k);
  for (std::size_t i = 0; i < table.points; ++i) {
    auto nb = atrous_gather(index, i, k, stride);
    table.indices.insert(table.indices.end(), nb.indices.begin(), nb.indices.end());
    table.distances.insert(table.distances.end(), nb.distances.begin(), nb.distances.end());
  }
  return table;
}

}  // namespace axcrf
