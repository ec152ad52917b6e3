#include "axcrf/unary_model.hpp"

#include <cmath>
#include <stdexcept>

#include "axcrf/errors.hpp"
#include "axcrf/pointcloud.hpp"
#include "axcrf/random.hpp"

namespace axcrf {

namespace {

constexpr std::size_t kTensorsPerBlock = 10;

Dense init_dense(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  Dense d;
  d.weight = Tensor::zeros({fan_in, fan_out});
  d.bias = Tensor::zeros({fan_out});
  const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : d.weight.values) v = rng.uniform(-s, s);
  return d;
}

Var dense(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

Tensor neighbor_offsets(const Tensor& positions, const NeighborTable& table) {
  const std::size_t n = table.points, k = table.k;
  Tensor out = Tensor::zeros({n * k, 3});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t nb = table.at(i, j);
      for (std::size_t a = 0; a < 3; ++a) {
        out(i * k + j, a) = positions(nb, a) - positions(i, a);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> UnaryModelParams::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    XConvParams& x = blocks[b];
    const std::string p = "xconv" + std::to_string(b) + ".";
    for (auto [name, d] : {std::pair<const char*, Dense*>{"lift1", &x.lift1},
                           {"lift2", &x.lift2},
                           {"xform1", &x.xform1},
                           {"xform2", &x.xform2},
                           {"conv", &x.conv}}) {
      out.emplace_back(p + name + ".weight", &d->weight);
      out.emplace_back(p + name + ".bias", &d->bias);
    }
  }
  out.emplace_back("head1.weight", &head1.weight);
  out.emplace_back("head1.bias", &head1.bias);
  out.emplace_back("head2.weight", &head2.weight);
  out.emplace_back("head2.bias", &head2.bias);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> UnaryModelParams::named_tensors() const {
  auto mut = const_cast<UnaryModelParams*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(std::move(n), t);
  return out;
}

UnaryModelParams init_unary_model(const UnaryModelConfig& config, std::uint64_t seed) {
  if (config.num_classes < 2) throw std::invalid_argument("unary model needs >= 2 classes");
  if (config.blocks.empty()) throw std::invalid_argument("unary model needs an X-Conv block");
  if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) {
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }
  Rng rng(seed);
  UnaryModelParams m;
  m.num_classes = config.num_classes;
  m.dropout_rate = config.dropout_rate;
  std::size_t c_in = config.feature_dim;
  for (const XConvSpec& spec : config.blocks) {
    if (spec.k == 0 || spec.stride == 0 || spec.c_out == 0) {
      throw std::invalid_argument("X-Conv block needs K, D and output width >= 1");
    }
    XConvParams x;
    x.k = spec.k;
    x.stride = spec.stride;
    x.c_in = c_in;
    x.c_delta = config.c_delta;
    x.c_out = spec.c_out;
    x.lift1 = init_dense(rng, 3, config.hidden);
    x.lift2 = init_dense(rng, config.hidden, config.c_delta);
    x.xform1 = init_dense(rng, 3 * spec.k, config.hidden);
    x.xform2 = init_dense(rng, config.hidden, spec.k * spec.k);
    x.conv = init_dense(rng, spec.k * (config.c_delta + c_in), spec.c_out);
    m.blocks.push_back(std::move(x));
    c_in = spec.c_out;
  }
  m.head1 = init_dense(rng, c_in, config.head_hidden);
  m.head2 = init_dense(rng, config.head_hidden, static_cast<std::size_t>(config.num_classes));
  return m;
}

UnaryVars register_unary(Record& rec, const UnaryModelParams& params, bool trainable) {
  UnaryVars vars;
  for (const auto& [name, t] : params.named_tensors()) {
    vars.tensors.push_back(trainable ? rec.leaf(*t) : rec.constant(*t));
  }
  return vars;
}

BlockInput make_block_input(const Tensor& positions, const Tensor& features,
                            const UnaryModelParams& params) {
  return make_block_input(positions, features, params, build_index(positions));
}

BlockInput make_block_input(const Tensor& positions, const Tensor& features,
                            const UnaryModelParams& params, const NeighborIndex& index) {
  if (features.shape.size() != 2 || features.shape[0] != positions.shape.at(0)) {
    throw ShapeError("block input: features " + shape_str(features.shape) +
                     " do not match positions " + shape_str(positions.shape));
  }
  BlockInput in;
  in.positions = positions;
  in.features = features;
  for (const XConvParams& x : params.blocks) in.tables.push_back(atrous_table(index, x.k, x.stride));
  return in;
}

Var xconv_block(Record& rec, const std::vector<Var>& v, const XConvParams& params,
                const Tensor& offsets, const Var& neighbor_features, std::size_t n) {
  const std::size_t k = params.k;
  if (offsets.shape != Shape{n * k, 3}) {
    throw ShapeError("X-Conv: expected " + std::to_string(k) + " neighbor offsets per point, got " +
                     shape_str(offsets.shape));
  }
  if (neighbor_features.shape() != Shape{n * k, params.c_in}) {
    throw ShapeError("X-Conv: neighbor features " + shape_str(neighbor_features.shape()) +
                     " expected " + shape_str({n * k, params.c_in}));
  }
  if (v.size() != kTensorsPerBlock) throw std::invalid_argument("X-Conv: wrong parameter count");

  // local coordinates P_o = P - p, lifted per neighbor into c_delta features
  const Var local = rec.constant(offsets);
  const Var lifted = dense(relu(dense(local, v[0], v[1])), v[2], v[3]);
  const Var stacked_parts[] = {lifted, neighbor_features};
  const Var stacked = concat(stacked_parts, 1);  // (n*K) x (c_delta + c_in)

  // K x K transformation learned from the neighborhood's offsets
  const Var flat_offsets = rec.constant(Tensor({n, 3 * k}, offsets.values));
  const Var xform = reshape(dense(relu(dense(flat_offsets, v[4], v[5])), v[6], v[7]), {n, k, k});

  const std::size_t cf = params.c_delta + params.c_in;
  const Var transformed = batched_matmul(xform, reshape(stacked, {n, k, cf}));
  return relu(dense(reshape(transformed, {n, k * cf}), v[8], v[9]));
}

Tensor xconv_forward(const std::vector<double>& p, const Tensor& neighbors,
                     const Tensor& neighbor_features, const XConvParams& params) {
  if (p.size() != 3) throw ShapeError("X-Conv: representative point must have 3 coordinates");
  if (neighbors.shape.size() != 2 || neighbors.shape[1] != 3 || neighbors.shape[0] != params.k) {
    throw ShapeError("X-Conv: expected exactly " + std::to_string(params.k) +
                     " neighbor positions, got " + shape_str(neighbors.shape));
  }
  if (neighbor_features.shape != Shape{params.k, params.c_in}) {
    throw ShapeError("X-Conv: neighbor features " + shape_str(neighbor_features.shape) +
                     " expected " + shape_str({params.k, params.c_in}));
  }
  Tensor offsets = neighbors;
  for (std::size_t j = 0; j < params.k; ++j) {
    for (std::size_t a = 0; a < 3; ++a) offsets(j, a) -= p[a];
  }
  Record rec;
  std::vector<Var> v;
  for (const Dense* d : {&params.lift1, &params.lift2, &params.xform1, &params.xform2, &params.conv}) {
    v.push_back(rec.constant(d->weight));
    v.push_back(rec.constant(d->bias));
  }
  const Var out = xconv_block(rec, v, params, offsets, rec.constant(neighbor_features), 1);
  return Tensor({params.c_out}, out.values());
}

Var unary_forward(Record& rec, const UnaryVars& vars, const UnaryModelParams& params,
                  const BlockInput& input, bool training, std::uint64_t dropout_seed) {
  const std::size_t n = input.positions.shape.at(0);
  if (input.tables.size() != params.blocks.size()) {
    throw ShapeError("unary_forward: need one neighbor table per X-Conv block");
  }
  const std::size_t expected = params.blocks.size() * kTensorsPerBlock + 4;
  if (vars.tensors.size() != expected) throw std::invalid_argument("unary_forward: wrong parameter count");

  Var features = rec.constant(input.features);
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    const XConvParams& x = params.blocks[b];
    const NeighborTable& table = input.tables[b];
    if (table.points != n || table.k != x.k) {
      throw ShapeError("unary_forward: neighbor table does not match X-Conv block " +
                       std::to_string(b));
    }
    const std::vector<Var> block_vars(
        vars.tensors.begin() + static_cast<std::ptrdiff_t>(b * kTensorsPerBlock),
        vars.tensors.begin() + static_cast<std::ptrdiff_t>((b + 1) * kTensorsPerBlock));
    features = xconv_block(rec, block_vars, x, neighbor_offsets(input.positions, table),
                           gather_rows(features, table.indices), n);
  }
  const auto h = vars.tensors.end() - 4;
  const Var dropped = dropout(features, params.dropout_rate, dropout_seed, training);
  return dense(relu(dense(dropped, h[0], h[1])), h[2], h[3]);
}

Tensor unary_forward(const UnaryModelParams& params, const BlockInput& input) {
  Record rec;
  const UnaryVars vars = register_unary(rec, params, false);
  return unary_forward(rec, vars, params, input, false, 0).value();
}

namespace {

Tensor label_one_hot(const Shape& shape, const std::vector<int>& labels) {
  if (shape.size() != 2 || shape[0] != labels.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(shape));
  }
  const std::size_t c = shape[1];
  Tensor y = Tensor::zeros(shape);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(c) + ")");
    }
    y(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return y;
}

}  // namespace

Var cross_entropy_sum(const Var& logits, const std::vector<int>& labels) {
  Record& rec = *logits.record();
  const Var y = rec.constant(label_one_hot(logits.shape(), labels));
  return scale(sum(mul(y, log_softmax_rows(logits))), -1.0);
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
  if (labels.empty()) throw DataError("cross_entropy: no labels");
  return scale(cross_entropy_sum(logits, labels), 1.0 / static_cast<double>(labels.size()));
}

double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  Record rec;
  return cross_entropy(rec.constant(logits), labels).values()[0];
}

}  // namespace axcrf
