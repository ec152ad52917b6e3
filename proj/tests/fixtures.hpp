#pragma once

// Randomized cases shared by the unit tests and the acceptance binary.

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "axcrf/neighbors.hpp"
#include "axcrf/tensor.hpp"
#include "axcrf/unary_model.hpp"
#include "axcrf/xcrf.hpp"
#include "oracles.hpp"
#include "parity.hpp"

namespace fixture {

using namespace axcrf;
using OpFn = std::function<Var(Record&, const std::vector<Var>&)>;

// sum(op(inputs) * R) for a fixed random R, so every output element carries
// a distinct upstream gradient.
inline oracle::LossFn weighted(OpFn op, std::uint64_t seed) {
  return [op, seed](Record& rec, const std::vector<Var>& in) {
    const Var out = op(rec, in);
    Rng rng(seed);
    const Var r = rec.constant(oracle::random_tensor(rng, out.shape()));
    return sum(mul(out, r));
  };
}

inline std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

// values bounded away from the relu kink
inline Tensor away_from_zero(Rng& rng, Shape s) {
  Tensor t = oracle::random_tensor(rng, std::move(s), 0.1, 1.0);
  for (double& v : t.values) v = rng.uniform() < 0.5 ? -v : v;
  return t;
}

struct OpCase {
  std::string name;
  OpFn op;
  std::vector<Tensor> inputs;
};

/// One case per differentiable kind with shapes drawn from `seed`.
inline std::vector<OpCase> op_cases(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t n = dim(rng, 1, 5), m = dim(rng, 1, 5), p = dim(rng, 1, 4), b = dim(rng, 1, 3);
  const Tensor x = oracle::random_tensor(rng, {n, m});
  const Tensor y = oracle::random_tensor(rng, {n, m});
  const Tensor w = oracle::random_tensor(rng, {m, p});
  const Tensor bias = oracle::random_tensor(rng, {m});
  const Tensor pos = oracle::random_tensor(rng, {n, m}, 0.5, 2.0);
  const Tensor kinked = away_from_zero(rng, {n, m});
  const Tensor ba = oracle::random_tensor(rng, {b, n, m});
  const Tensor bb = oracle::random_tensor(rng, {b, m, p});
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n + 2; ++i) rows.push_back(rng.index(n));

  return {
      {"add", [](Record&, auto& in) { return add(in[0], in[1]); }, {x, y}},
      {"add-scalar", [](Record&, auto& in) { return add(in[0], in[1]); }, {x, Tensor::scalar(0.3)}},
      {"subtract", [](Record&, auto& in) { return sub(in[0], in[1]); }, {x, y}},
      {"multiply", [](Record&, auto& in) { return mul(in[0], in[1]); }, {x, y}},
      {"multiply-scalar", [](Record&, auto& in) { return mul(in[1], in[0]); }, {x, Tensor::scalar(0.7)}},
      {"matrix-multiply", [](Record&, auto& in) { return matmul(in[0], in[1]); }, {x, w}},
      {"batched-matrix-multiply", [](Record&, auto& in) { return batched_matmul(in[0], in[1]); }, {ba, bb}},
      {"exponential", [](Record&, auto& in) { return exp(in[0]); }, {x}},
      {"natural-log", [](Record&, auto& in) { return log(in[0]); }, {pos}},
      {"relu", [](Record&, auto& in) { return relu(in[0]); }, {kinked}},
      {"softmax-rows", [](Record&, auto& in) { return softmax_rows(in[0]); }, {x}},
      {"log-softmax-rows", [](Record&, auto& in) { return log_softmax_rows(in[0]); }, {x}},
      {"sum", [](Record&, auto& in) { return sum(in[0]); }, {x}},
      {"mean", [](Record&, auto& in) { return mean(in[0]); }, {x}},
      {"concatenate-rows", [](Record&, auto& in) { return concat(in, 0); }, {x, y}},
      {"concatenate-cols", [](Record&, auto& in) { return concat(in, 1); }, {x, y}},
      {"gather-rows", [rows](Record&, auto& in) { return gather_rows(in[0], rows); }, {x}},
      {"one-hot-argmax", [](Record&, auto& in) { return one_hot_argmax(in[0]); }, {x}},
      {"dropout-mask", [seed](Record&, auto& in) { return dropout(in[0], 0.4, seed, true); }, {x}},
      {"reshape", [n, m](Record&, auto& in) { return reshape(in[0], {m, n}); }, {x}},
      {"add-bias", [](Record&, auto& in) { return add_bias(in[0], in[1]); }, {x, bias}},
  };
}

inline double op_parity(const OpCase& c, std::uint64_t seed) {
  return oracle::parity_error(weighted(c.op, seed + 1000), c.inputs);
}

inline UnaryModelConfig tiny_unary(std::size_t k, int classes) {
  UnaryModelConfig c;
  c.feature_dim = 2;
  c.num_classes = classes;
  c.blocks = {{k, 1, 8}, {k, 2, 6}};
  c.c_delta = 4;
  c.hidden = 8;
  c.head_hidden = 8;
  c.dropout_rate = 0.3;
  return c;
}

/// X-Conv block (K=8, C_delta=4) against central differences with h=1e-5.
/// Draws that put a relu input within h of its kink are redrawn; `redraws`
/// counts them.
inline double xconv_parity(std::uint64_t seed, std::size_t* redraws = nullptr) {
  Rng rng(seed);
  UnaryModelConfig c = tiny_unary(8, 3);
  c.blocks = {{8, 1, 4}};
  const auto m = init_unary_model(c, seed);
  const XConvParams& x = m.blocks[0];
  for (;;) {
    const Tensor offsets = oracle::random_tensor(rng, {8, 3});
    std::vector<Tensor> inputs;
    // nonzero biases keep relu inputs off the kink when every output is dead
    for (const Dense* d : {&x.lift1, &x.lift2, &x.xform1, &x.xform2, &x.conv}) {
      inputs.push_back(d->weight);
      inputs.push_back(oracle::random_tensor(rng, d->bias.shape, -0.2, 0.2));
    }
    inputs.push_back(oracle::random_tensor(rng, {8, 2}));
    const oracle::LossFn loss = [&](Record& rec, const std::vector<Var>& in) {
      const std::vector<Var> w(in.begin(), in.begin() + 10);
      const Var out = xconv_block(rec, w, x, offsets, in[10], 1);
      return sum(mul(out, out));
    };
    if (oracle::near_kink(loss, inputs, 1e-5)) {
      if (redraws) ++*redraws;
      continue;
    }
    return oracle::parity_error(loss, inputs, 1e-5);
  }
}

/// Full unary model plus cross-entropy, N=16, K=8, C=3, dropout active.
inline double unary_parity(std::uint64_t seed) {
  Rng rng(seed + 40);
  const auto m = init_unary_model(tiny_unary(8, 3), seed);
  const Tensor pos = oracle::random_cloud(rng, 16, 2.0);
  const Tensor feat = oracle::random_tensor(rng, {16, 2}, -0.5, 0.5);
  std::vector<int> labels;
  for (int i = 0; i < 16; ++i) labels.push_back(static_cast<int>(rng.index(3)));
  const BlockInput input = make_block_input(pos, feat, m);
  // zero-initialized biases put relu inputs of dropped rows exactly on the kink
  std::vector<Tensor> tensors;
  for (const auto& [name, t] : m.named_tensors()) {
    tensors.push_back(*t);
    if (name.ends_with("bias")) tensors.back() = oracle::random_tensor(rng, t->shape, -0.2, 0.2);
  }
  const oracle::LossFn loss = [&](Record& rec, const std::vector<Var>& in) {
    return cross_entropy(unary_forward(rec, UnaryVars{in}, m, input, true, seed), labels);
  };
  return oracle::parity_error(loss, tensors);
}

/// XCRF level weights (w_b, w_s, off-diagonal W_c) under a cross-entropy
/// loss, N <= 16, K <= 8, C <= 4.
inline double xcrf_weight_parity(std::uint64_t seed) {
  Rng rng(seed + 77);
  const std::size_t n = 3 + rng.index(14), k = 1 + rng.index(8);
  const int c = 2 + static_cast<int>(rng.index(3));
  const Tensor u = oracle::random_tensor(rng, {n, static_cast<std::size_t>(c)}, -2, 2);
  const Tensor pos = oracle::random_cloud(rng, n, 3.0);
  const Tensor feat = oracle::random_tensor(rng, {n, 2});
  auto p = XcrfLevelParams::initial(c, k, 1 + rng.index(2), 1 + rng.index(5));
  p.w_b = rng.uniform(0.2, 1.5);
  p.w_s = rng.uniform(0.2, 1.5);
  for (double& v : p.compat_offdiag) v = rng.uniform(0.1, 1.5);
  Tensor y = Tensor::zeros(u.shape);
  for (std::size_t i = 0; i < n; ++i) y(i, rng.index(static_cast<std::size_t>(c))) = 1.0;

  const NeighborIndex idx = build_index(pos);
  AXcrfParams single;
  single.levels = {p};
  const auto tables = level_tables(idx, single);
  const auto filters = level_filters(pos, feat, tables, single);
  const oracle::LossFn loss = [&](Record& rec, const std::vector<Var>& in) {
    const LevelVars w{in[0], in[1], in[2]};
    const Var out = xcrf_level(rec, rec.constant(u), filters[0].bilateral, filters[0].spatial, tables[0], w,
                               p.iterations, c);
    return scale(sum(mul(rec.constant(y), log_softmax_rows(out))), -1.0);
  };
  return oracle::parity_error(loss, {Tensor::scalar(p.w_b), Tensor::scalar(p.w_s),
                                     Tensor({p.compat_offdiag.size(), 1}, p.compat_offdiag)});
}

struct XcrfInstance {
  Tensor unary, positions, features;
  XcrfLevelParams params;
};

/// N <= 64, C <= 5, r <= 5.
inline XcrfInstance random_xcrf_instance(std::uint64_t seed, bool nonnegative) {
  Rng rng(seed);
  XcrfInstance in;
  const std::size_t n = 2 + rng.index(63);
  const int c = 2 + static_cast<int>(rng.index(4));
  in.unary = oracle::random_tensor(rng, {n, static_cast<std::size_t>(c)}, -3, 3);
  in.positions = oracle::random_cloud(rng, n, 5.0);
  in.features = oracle::random_tensor(rng, {n, 2}, -0.5, 0.5);
  in.params = XcrfLevelParams::initial(c, 1 + rng.index(8), 1 + rng.index(3), rng.index(6));
  const double lo = nonnegative ? 0.0 : -1.0;
  in.params.w_b = rng.uniform(lo, 2.0);
  in.params.w_s = rng.uniform(lo, 2.0);
  for (double& v : in.params.compat_offdiag) v = rng.uniform(lo, 2.0);
  in.params.theta = {rng.uniform(0.5, 4), rng.uniform(0.05, 0.5), rng.uniform(0.5, 4)};
  return in;
}

inline oracle::Level to_oracle(const XcrfLevelParams& p) {
  oracle::Level lv;
  lv.w_b = p.w_b;
  lv.w_s = p.w_s;
  const Tensor m = p.compat_matrix();
  const std::size_t c = static_cast<std::size_t>(p.num_classes);
  lv.compat.assign(c, std::vector<double>(c));
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) lv.compat[i][j] = m(i, j);
  }
  lv.alpha = p.theta.alpha;
  lv.beta = p.theta.beta;
  lv.gamma = p.theta.gamma;
  lv.k = p.k;
  lv.d = p.stride;
  lv.r = p.iterations;
  return lv;
}

inline std::vector<std::vector<double>> rows_of(const Tensor& t) {
  std::vector<std::vector<double>> out(t.shape[0], std::vector<double>(t.shape[1]));
  for (std::size_t i = 0; i < t.shape[0]; ++i) {
    for (std::size_t j = 0; j < t.shape[1]; ++j) out[i][j] = t(i, j);
  }
  return out;
}

/// Largest absolute difference between xcrf_forward and the scalar reference.
inline double xcrf_reference_error(const XcrfInstance& in) {
  const Tensor out = xcrf_forward(in.unary, in.positions, in.features, in.params, build_index(in.positions));
  const auto ref = oracle::xcrf(rows_of(in.unary), in.positions, in.features, to_oracle(in.params));
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    for (std::size_t j = 0; j < ref[i].size(); ++j) worst = std::max(worst, std::abs(out(i, j) - ref[i][j]));
  }
  return worst;
}

inline std::size_t argmax_violations(const XcrfInstance& in) {
  const Tensor out = xcrf_forward(in.unary, in.positions, in.features, in.params, build_index(in.positions));
  const auto a = predict(in.unary), b = predict(out);
  std::size_t v = 0;
  for (std::size_t i = 0; i < a.size(); ++i) v += a[i] != b[i];
  return v;
}

/// The three collinear points of the hand-worked pass; returns the largest
/// deviation from the closed form.
inline double three_point_error() {
  const Tensor pos = Tensor::matrix({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}});
  const Tensor feat = Tensor::zeros({3, 1});
  const Tensor u = Tensor::matrix({{2, 0}, {0, 2}, {2, 0}});
  XcrfLevelParams p = XcrfLevelParams::initial(2, 2, 1, 1);
  const Tensor out = xcrf_forward(u, pos, feat, p, build_index(pos));

  // U_s rows: s = e^2/(1+e^2) on the larger entry
  const double s = std::exp(2.0) / (1.0 + std::exp(2.0)), t = 1.0 - s;
  const double g1 = 2.0 * std::exp(-0.5), g2 = 2.0 * std::exp(-2.0);  // w_b B_f + w_s S_f
  // point 0: neighbors 1 (1 m), 2 (2 m); argmax 0 so only class 1 is penalized
  const double p0 = g1 * s + g2 * t;
  // point 1: neighbors 0 and 2 (both 1 m); argmax 1, penalty on class 0
  const double p1 = g1 * s + g1 * s;
  // point 2: neighbors 1 (1 m), 0 (2 m)
  const double p2 = g1 * s + g2 * t;
  const std::vector<double> expect{2.0, -p0, -p1, 2.0, 2.0, -p2};
  double worst = 0.0;
  for (std::size_t i = 0; i < 6; ++i) worst = std::max(worst, std::abs(out.values[i] - expect[i]));
  return worst;
}

}  // namespace fixture
