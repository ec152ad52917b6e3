#include "axcrf/xcrf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "axcrf/errors.hpp"

namespace axcrf {

namespace {

std::size_t offdiag_slot(std::size_t row, std::size_t col, std::size_t c) {
  return row * (c - 1) + (col < row ? col : col - 1);
}

}  // namespace

XcrfLevelParams XcrfLevelParams::initial(int num_classes, std::size_t k, std::size_t stride,
                                         std::size_t iterations) {
  if (num_classes < 2) throw std::invalid_argument("XCRF needs at least two classes");
  XcrfLevelParams p;
  p.num_classes = num_classes;
  const auto c = static_cast<std::size_t>(num_classes);
  p.compat_offdiag.assign(c * (c - 1), 1.0);
  p.k = k;
  p.stride = stride;
  p.iterations = iterations;
  p.validate();
  return p;
}

Tensor XcrfLevelParams::compat_matrix() const {
  const auto c = static_cast<std::size_t>(num_classes);
  Tensor m = Tensor::zeros({c, c});
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (i != j) m(i, j) = compat_offdiag[offdiag_slot(i, j, c)];
    }
  }
  return m;
}

void XcrfLevelParams::set_compat(std::size_t row, std::size_t col, double v) {
  const auto c = static_cast<std::size_t>(num_classes);
  if (row >= c || col >= c) throw std::out_of_range("compatibility index out of range");
  if (row == col) throw std::invalid_argument("compatibility diagonal is fixed at zero");
  compat_offdiag[offdiag_slot(row, col, c)] = v;
}

void XcrfLevelParams::validate() const {
  if (num_classes < 2) throw std::invalid_argument("XCRF level: num_classes must be >= 2");
  const auto c = static_cast<std::size_t>(num_classes);
  if (compat_offdiag.size() != c * (c - 1)) {
    throw ShapeError("XCRF level: expected " + std::to_string(c * (c - 1)) +
                     " off-diagonal compatibility entries, got " +
                     std::to_string(compat_offdiag.size()));
  }
  if (!(theta.alpha > 0.0 && theta.beta > 0.0 && theta.gamma > 0.0)) {
    throw std::invalid_argument("XCRF level: bandwidths must be positive");
  }
  if (k == 0 || stride == 0) throw std::invalid_argument("XCRF level: K and D must be >= 1");
}

AXcrfParams AXcrfParams::initial(int num_classes, std::size_t k,
                                 const std::vector<std::size_t>& strides, std::size_t iterations) {
  if (strides.empty()) throw std::invalid_argument("A-XCRF needs at least one level");
  AXcrfParams p;
  for (std::size_t d : strides) p.levels.push_back(XcrfLevelParams::initial(num_classes, k, d, iterations));
  return p;
}

std::vector<std::size_t> AXcrfParams::strides() const {
  std::vector<std::size_t> out;
  for (const auto& l : levels) out.push_back(l.stride);
  return out;
}

void AXcrfParams::set_theta(const Bandwidths& theta) {
  for (auto& l : levels) l.theta = theta;
  theta_initialized = true;
}

FilterResponse gaussian_filters(const Tensor& positions, const Tensor& features,
                                const NeighborTable& neighbors, const XcrfLevelParams& params) {
  if (positions.shape.size() != 2 || positions.shape[1] != 3) {
    throw ShapeError("gaussian_filters: positions must be N x 3, got " + shape_str(positions.shape));
  }
  const std::size_t n = positions.shape[0];
  if (features.shape.size() != 2 || features.shape[0] != n) {
    throw ShapeError("gaussian_filters: features " + shape_str(features.shape) +
                     " do not match positions " + shape_str(positions.shape));
  }
  if (neighbors.points != n || neighbors.indices.size() != n * neighbors.k) {
    throw ShapeError("gaussian_filters: neighbor table covers " +
                     std::to_string(neighbors.points) + " points, expected " + std::to_string(n));
  }
  const std::size_t k = neighbors.k;
  const std::size_t f = features.shape[1];
  const double inv_a = 1.0 / (2.0 * params.theta.alpha * params.theta.alpha);
  const double inv_b = 1.0 / (2.0 * params.theta.beta * params.theta.beta);
  const double inv_g = 1.0 / (2.0 * params.theta.gamma * params.theta.gamma);

  FilterResponse out;
  out.bilateral = Tensor::zeros({n, k});
  out.spatial = Tensor::zeros({n, k});
  out.weighted = Tensor::zeros({n, k});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t nb = neighbors.at(i, j);
      double dp = 0.0;
      for (std::size_t a = 0; a < 3; ++a) {
        const double d = positions(i, a) - positions(nb, a);
        dp += d * d;
      }
      double df = 0.0;
      for (std::size_t a = 0; a < f; ++a) {
        const double d = features(i, a) - features(nb, a);
        df += d * d;
      }
      const double b = std::exp(-dp * inv_a - df * inv_b);
      const double s = std::exp(-dp * inv_g);
      out.bilateral(i, j) = b;
      out.spatial(i, j) = s;
      out.weighted(i, j) = params.w_b * b + params.w_s * s;
    }
  }
  return out;
}

LevelVars register_level(Record& rec, const XcrfLevelParams& params, bool trainable) {
  const std::size_t m = params.compat_offdiag.size();
  Tensor wb = Tensor::scalar(params.w_b);
  Tensor ws = Tensor::scalar(params.w_s);
  Tensor off({m, 1}, params.compat_offdiag);
  if (trainable) {
    return {rec.leaf(std::move(wb)), rec.leaf(std::move(ws)), rec.leaf(std::move(off))};
  }
  return {rec.constant(std::move(wb)), rec.constant(std::move(ws)), rec.constant(std::move(off))};
}

Var hollow_compat(const Var& offdiag, int num_classes) {
  const auto c = static_cast<std::size_t>(num_classes);
  Record& rec = *offdiag.record();
  const Var parts[] = {rec.constant(Tensor::zeros({1, 1})), offdiag};
  const Var padded = concat(parts, 0);
  std::vector<std::size_t> map(c * c, 0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      if (i != j) map[i * c + j] = 1 + offdiag_slot(i, j, c);
    }
  }
  return reshape(gather_rows(padded, std::move(map)), {c, c});
}

Var xcrf_level(Record& rec, const Var& unary, const Tensor& bilateral, const Tensor& spatial,
               const NeighborTable& neighbors, const LevelVars& weights, std::size_t iterations,
               int num_classes, MeanFieldState* trace) {
  const Shape& us = unary.shape();
  const auto c = static_cast<std::size_t>(num_classes);
  if (us.size() != 2 || us[1] != c) {
    throw ShapeError("xcrf: unaries " + shape_str(us) + " do not have " + std::to_string(c) +
                     " class columns");
  }
  const std::size_t n = us[0];
  const std::size_t k = neighbors.k;
  if (neighbors.points != n || bilateral.shape != Shape{n, k} || spatial.shape != Shape{n, k}) {
    throw ShapeError("xcrf: neighborhoods/filters do not match " + std::to_string(n) + " points");
  }
  if (iterations == 0) {
    if (trace) trace->unary = trace->working = unary.value();
    return unary;
  }

  const Var gw = add(mul(weights.w_b, rec.constant(bilateral)),
                     mul(weights.w_s, rec.constant(spatial)));
  const Var gw3 = reshape(gw, {n, 1, k});
  const Var compat = hollow_compat(weights.compat_offdiag, num_classes);

  Var working = unary;
  for (std::size_t it = 0; it < iterations; ++it) {
    const Var normalized = softmax_rows(working);
    const Var selected = matmul(one_hot_argmax(normalized), compat);
    const Var gathered = reshape(gather_rows(normalized, neighbors.indices), {n, k, c});
    const Var aggregated = reshape(batched_matmul(gw3, gathered), {n, c});
    const Var penalty = mul(aggregated, selected);
    if (trace && it + 1 == iterations) {
      trace->unary = unary.value();
      trace->working = working.value();
      trace->normalized = normalized.value();
      trace->selected = selected.value();
      trace->aggregated = aggregated.value();
      trace->penalty = penalty.value();
    }
    working = sub(unary, penalty);
  }
  return working;
}

std::vector<NeighborTable> level_tables(const NeighborIndex& index, const AXcrfParams& params) {
  if (params.levels.empty()) throw std::invalid_argument("A-XCRF needs at least one level");
  const std::size_t n = index.size();
  if (n < 2) throw DataError("A-XCRF needs at least two points");
  std::size_t span = 0;
  for (const auto& l : params.levels) {
    l.validate();
    span = std::max(span, l.k * l.stride);
  }
  span = std::min(span, n - 1);

  std::vector<NeighborTable> tables(params.levels.size());
  for (std::size_t li = 0; li < tables.size(); ++li) {
    tables[li].points = n;
    tables[li].k = params.levels[li].k;
    tables[li].indices.reserve(n * tables[li].k);
    tables[li].distances.reserve(n * tables[li].k);
  }
  const Tensor& p = index.positions();
  for (std::size_t i = 0; i < n; ++i) {
    const auto sorted = index.knn({p(i, 0), p(i, 1), p(i, 2)}, span, i);
    for (std::size_t li = 0; li < tables.size(); ++li) {
      const auto& l = params.levels[li];
      // cyclic repetition runs over this level's own window of K*D ranks
      const std::size_t window = std::min(l.k * l.stride, sorted.size());
      for (std::size_t j = 1; j <= l.k; ++j) {
        const Neighbor& nb = sorted[(j * l.stride - 1) % window];
        tables[li].indices.push_back(nb.index);
        tables[li].distances.push_back(nb.distance);
      }
    }
  }
  return tables;
}

std::vector<FilterResponse> level_filters(const Tensor& positions, const Tensor& features,
                                          const std::vector<NeighborTable>& tables,
                                          const AXcrfParams& params) {
  std::vector<FilterResponse> out;
  out.reserve(tables.size());
  for (std::size_t li = 0; li < tables.size(); ++li) {
    const auto& weights = params.levels[params.shared_weights ? 0 : li];
    XcrfLevelParams level = params.levels[li];
    level.w_b = weights.w_b;
    level.w_s = weights.w_s;
    out.push_back(gaussian_filters(positions, features, tables[li], level));
  }
  return out;
}

Var axcrf_stack(Record& rec, const Var& unary, const std::vector<FilterResponse>& filters,
                const std::vector<NeighborTable>& tables, const std::vector<LevelVars>& weights,
                const AXcrfParams& params) {
  const std::size_t n = params.levels.size();
  if (n == 0) throw std::invalid_argument("A-XCRF needs at least one level");
  if (filters.size() != n || tables.size() != n || weights.size() != n) {
    throw std::invalid_argument("A-XCRF: per-level inputs do not match level count");
  }
  Var total;
  for (std::size_t li = 0; li < n; ++li) {
    const auto& l = params.levels[li];
    const Var out = xcrf_level(rec, unary, filters[li].bilateral, filters[li].spatial, tables[li],
                               weights[li], l.iterations, l.num_classes);
    total = total.valid() ? add(total, out) : out;
  }
  return total;
}

Tensor xcrf_forward(const Tensor& unary, const Tensor& positions, const Tensor& features,
                    const XcrfLevelParams& params, const NeighborIndex& index,
                    MeanFieldState* trace) {
  params.validate();
  if (unary.shape.size() != 2 || unary.shape[0] != index.size() ||
      unary.shape[1] != static_cast<std::size_t>(params.num_classes)) {
    throw ShapeError("xcrf_forward: unaries " + shape_str(unary.shape) + " vs " +
                     std::to_string(index.size()) + " points and " +
                     std::to_string(params.num_classes) + " classes");
  }
  if (params.iterations == 0) return unary;
  AXcrfParams single;
  single.levels = {params};
  const auto tables = level_tables(index, single);
  const auto filters = level_filters(positions, features, tables, single);
  Record rec;
  const Var u = rec.constant(unary);
  const LevelVars w = register_level(rec, params, false);
  return xcrf_level(rec, u, filters[0].bilateral, filters[0].spatial, tables[0], w,
                    params.iterations, params.num_classes, trace)
      .value();
}

Tensor axcrf_forward(const Tensor& unary, const Tensor& positions, const Tensor& features,
                     const AXcrfParams& params, const NeighborIndex& index) {
  if (params.levels.empty()) throw std::invalid_argument("A-XCRF needs at least one level");
  for (const auto& l : params.levels) {
    l.validate();
    if (unary.shape.size() != 2 || unary.shape[0] != index.size() ||
        unary.shape[1] != static_cast<std::size_t>(l.num_classes)) {
      throw ShapeError("axcrf_forward: unaries " + shape_str(unary.shape) + " do not match params");
    }
  }
  const auto tables = level_tables(index, params);
  const auto filters = level_filters(positions, features, tables, params);
  Record rec;
  const Var u = rec.constant(unary);
  std::vector<LevelVars> weights;
  for (std::size_t li = 0; li < params.levels.size(); ++li) {
    weights.push_back(register_level(rec, params.levels[params.shared_weights ? 0 : li], false));
  }
  return axcrf_stack(rec, u, filters, tables, weights, params).value();
}

std::vector<int> predict(const Tensor& unary_final) {
  if (unary_final.size() == 0) return {};
  return argmax_rows(unary_final);
}

}  // namespace axcrf
