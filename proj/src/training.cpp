#include "axcrf/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <thread>

#include "axcrf/errors.hpp"
#include "axcrf/random.hpp"

namespace axcrf {

namespace {

using json = nlohmann::json;

constexpr std::uint64_t kTrainSalt = 0x7472;
constexpr std::uint64_t kDropoutSalt = 0x6470;
constexpr std::uint64_t kEvalSalt = 0x6576;
constexpr std::uint64_t kLabelSalt = 0x6c62;
constexpr std::uint64_t kStep2Salt = 0x7332;

// Runs fn(i) for i in [0, n). Results must be written to per-index slots so
// the outcome does not depend on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Block-local geometry of a sample: x, y relative to the block center and z
// relative to the block's own z reference.
struct SampleGeometry {
  Tensor positions;
  Tensor features;
};

SampleGeometry sample_geometry(const BlockSet& set, const Block& block,
                               const std::vector<std::size_t>& indices) {
  const PointCloud& cloud = set.cloud;
  const double cz = cloud.positions(block.members.front(), 2) - block.local_positions(0, 2);
  const std::size_t f = cloud.feature_dim();
  SampleGeometry g{Tensor::zeros({indices.size(), 3}), Tensor::zeros({indices.size(), f})};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t m = indices[i];
    g.positions(i, 0) = cloud.positions(m, 0) - block.center_x();
    g.positions(i, 1) = cloud.positions(m, 1) - block.center_y();
    g.positions(i, 2) = cloud.positions(m, 2) - cz;
    for (std::size_t a = 0; a < f; ++a) g.features(i, a) = cloud.features(m, a);
  }
  return g;
}

std::vector<int> sample_labels(const std::vector<int>& labels, const std::vector<std::size_t>& indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t m : indices) {
    if (labels[m] < 0) throw DataError("training sample contains a point without a label");
    out.push_back(labels[m]);
  }
  return out;
}

// Parameter slots: unary tensors first, then (w_b, w_s, W_c) per XCRF level.
std::vector<std::span<double>> xcrf_slots(AXcrfParams& x) {
  std::vector<std::span<double>> out;
  for (auto& l : x.levels) {
    out.emplace_back(&l.w_b, 1);
    out.emplace_back(&l.w_s, 1);
    out.emplace_back(l.compat_offdiag);
  }
  return out;
}

class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& c) : config_(c) {}

  void step(std::size_t slot, std::span<double> values, const std::vector<double>& grad, double lr) {
    if (config_.optimizer == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * grad[i];
      return;
    }
    State& s = state_[slot];
    if (s.m.empty()) {
      s.m.assign(values.size(), 0.0);
      s.v.assign(values.size(), 0.0);
    }
    ++s.t;
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < values.size(); ++i) {
      s.m[i] = b1 * s.m[i] + (1.0 - b1) * grad[i];
      s.v[i] = b2 * s.v[i] + (1.0 - b2) * grad[i] * grad[i];
      values[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + config_.adam_epsilon);
    }
  }

 private:
  struct State {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };
  const TrainConfig& config_;
  std::map<std::size_t, State> state_;
};

struct BlockJob {
  const BlockSet* set = nullptr;
  std::size_t block = 0;
  std::uint64_t sample_seed = 0;
  std::uint64_t dropout_seed = 0;
  const std::vector<int>* labels = nullptr;
};

struct BlockResult {
  std::vector<std::vector<double>> unary_grads;
  std::vector<std::vector<double>> xcrf_grads;  // per level slot
  double loss = 0.0;
  std::size_t points = 0;
};

// xcrf == nullptr: unary only. Otherwise the A-XCRF stack is attached and its
// weights receive gradients iff `xcrf_trainable`.
BlockResult run_block(const BlockJob& job, const UnaryModelParams& unary, const AXcrfParams* xcrf,
                      bool xcrf_trainable, std::size_t sample_size) {
  const Block& block = job.set->blocks[job.block];
  const SampledBlock s = sample_block(block, sample_size, job.sample_seed, job.block);
  const SampleGeometry g = sample_geometry(*job.set, block, s.sample_indices);
  const std::vector<int> labels = sample_labels(*job.labels, s.sample_indices);

  const NeighborIndex index = build_index(g.positions);
  const BlockInput input = make_block_input(g.positions, g.features, unary, index);
  Record rec;
  const UnaryVars uv = register_unary(rec, unary, true);
  Var logits = unary_forward(rec, uv, unary, input, true, job.dropout_seed);

  std::vector<LevelVars> level_vars;
  if (xcrf) {
    const auto tables = level_tables(index, *xcrf);
    const auto filters = level_filters(g.positions, g.features, tables, *xcrf);
    const std::size_t owners = xcrf->shared_weights ? 1 : xcrf->levels.size();
    for (std::size_t li = 0; li < owners; ++li) {
      level_vars.push_back(register_level(rec, xcrf->levels[li], xcrf_trainable));
    }
    std::vector<LevelVars> per_level;
    for (std::size_t li = 0; li < xcrf->levels.size(); ++li) {
      per_level.push_back(level_vars[xcrf->shared_weights ? 0 : li]);
    }
    logits = axcrf_stack(rec, logits, filters, tables, per_level, *xcrf);
  }
  const Var loss = cross_entropy_sum(logits, labels);
  const Gradients grads = rec.backward(loss);

  BlockResult r;
  r.loss = loss.values()[0];
  r.points = labels.size();
  for (const Var& v : uv.tensors) r.unary_grads.push_back(grads[v].values);
  if (xcrf) {
    for (std::size_t li = 0; li < xcrf->levels.size(); ++li) {
      if (xcrf_trainable && li < level_vars.size()) {
        const LevelVars& lv = level_vars[li];
        r.xcrf_grads.push_back(grads[lv.w_b].values);
        r.xcrf_grads.push_back(grads[lv.w_s].values);
        r.xcrf_grads.push_back(grads[lv.compat_offdiag].values);
      }
    }
  }
  return r;
}

struct BatchOutcome {
  double loss = 0.0;
  std::size_t points = 0;
};

// One optimizer step over a batch of blocks; gradients are averaged over all
// sampled points of the batch.
BatchOutcome train_batch(const std::vector<BlockJob>& jobs, UnaryModelParams& unary, AXcrfParams* xcrf,
                         bool xcrf_trainable, const TrainConfig& config, Optimizer& opt, double lr) {
  std::vector<BlockResult> results(jobs.size());
  parallel_for(jobs.size(), config.threads, [&](std::size_t i) {
    results[i] = run_block(jobs[i], unary, xcrf, xcrf_trainable, config.sample_size);
  });

  BatchOutcome out;
  auto named = unary.named_tensors();
  std::vector<std::vector<double>> ug(named.size());
  std::vector<std::vector<double>> xg;
  for (std::size_t t = 0; t < named.size(); ++t) ug[t].assign(named[t].second->values.size(), 0.0);
  for (const BlockResult& r : results) {
    out.loss += r.loss;
    out.points += r.points;
    for (std::size_t t = 0; t < ug.size(); ++t) {
      for (std::size_t i = 0; i < ug[t].size(); ++i) ug[t][i] += r.unary_grads[t][i];
    }
    if (xg.empty()) xg.resize(r.xcrf_grads.size());
    for (std::size_t t = 0; t < r.xcrf_grads.size(); ++t) {
      if (xg[t].empty()) xg[t].assign(r.xcrf_grads[t].size(), 0.0);
      for (std::size_t i = 0; i < xg[t].size(); ++i) xg[t][i] += r.xcrf_grads[t][i];
    }
  }
  if (!std::isfinite(out.loss)) throw NumericError("training loss became non-finite");
  const double inv = 1.0 / static_cast<double>(out.points);
  for (auto& g : ug) {
    for (double& v : g) v *= inv;
  }
  for (auto& g : xg) {
    for (double& v : g) v *= inv;
  }
  for (std::size_t t = 0; t < named.size(); ++t) {
    opt.step(t, named[t].second->values, ug[t], lr);
  }
  if (xcrf && xcrf_trainable) {
    auto slots = xcrf_slots(*xcrf);
    for (std::size_t t = 0; t < xg.size(); ++t) opt.step(named.size() + t, slots[t], xg[t], lr);
    if (xcrf->shared_weights) {
      for (auto& l : xcrf->levels) {
        l.w_b = xcrf->levels[0].w_b;
        l.w_s = xcrf->levels[0].w_s;
        l.compat_offdiag = xcrf->levels[0].compat_offdiag;
      }
    }
  }
  for (const auto& [name, t] : named) {
    for (double v : t->values) {
      if (!std::isfinite(v)) throw NumericError("parameter " + name + " became non-finite");
    }
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  return order;
}

std::vector<std::vector<BlockJob>> make_batches(const BlockSet& set, const std::vector<int>& labels,
                                                const TrainConfig& config, std::uint64_t epoch_seed) {
  std::vector<std::vector<BlockJob>> batches;
  const auto order = epoch_order(set.blocks.size(), epoch_seed);
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    std::vector<BlockJob> batch;
    for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
      const Block& b = set.blocks[order[i]];
      BlockJob job;
      job.set = &set;
      job.block = order[i];
      job.sample_seed = block_seed(epoch_seed, b, kTrainSalt);
      job.dropout_seed = block_seed(epoch_seed, b, kDropoutSalt);
      job.labels = &labels;
      batch.push_back(job);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

void emit(const TrainHooks& hooks, const EpochRecord& r, const char* step, const UnaryModelParams& u,
          const AXcrfParams* x) {
  if (hooks.log) {
    json j{{"step", step},
           {"epoch", r.epoch},
           {"kind", r.kind == EpochKind::kLabeled ? "labeled" : "artificial"},
           {"mean_loss", r.mean_loss},
           {"learning_rate", r.learning_rate}};
    if (std::isnan(r.validation_oa)) j["validation_oa"] = nullptr;
    else j["validation_oa"] = r.validation_oa;
    *hooks.log << j.dump() << '\n';
    hooks.log->flush();
  }
  if (hooks.on_epoch) hooks.on_epoch(r, u, x);
}

void require_trainable_set(const BlockSet& set, const char* what) {
  if (set.blocks.empty()) throw DataError(std::string(what) + " set has no blocks");
  if (!set.cloud.has_labels()) throw DataError(std::string(what) + " set has no labels");
}

// Per-pass geometry and unaries for one block sample.
struct PassData {
  std::vector<std::size_t> indices;
  SampleGeometry geometry;
  Tensor logits;
};

PassData run_pass(const ModelCheckpoint& model, const BlockSet& set, const Block& block,
                  const SampledBlock& s, std::optional<NeighborIndex>* index_out) {
  PassData p{s.sample_indices, sample_geometry(set, block, s.sample_indices), {}};
  NeighborIndex index = build_index(p.geometry.positions);
  p.logits = unary_forward(model.unary, make_block_input(p.geometry.positions, p.geometry.features,
                                                         model.unary, index));
  if (index_out) index_out->emplace(std::move(index));
  return p;
}

struct PassJob {
  std::size_t block = 0;
  SampledBlock sample;
};

std::vector<PassJob> coverage_jobs(const BlockSet& set, std::size_t n, std::uint64_t seed) {
  std::vector<PassJob> jobs;
  for (std::size_t b = 0; b < set.blocks.size(); ++b) {
    for (auto& s : coverage_samples(set.blocks[b], n, block_seed(seed, set.blocks[b], kEvalSalt), b)) {
      jobs.push_back({b, std::move(s)});
    }
  }
  return jobs;
}

// Majority vote; each pass counts a point once.
std::vector<int> vote(std::size_t points, int classes, const std::vector<PassJob>& jobs,
                      const std::vector<std::vector<int>>& preds) {
  const auto c = static_cast<std::size_t>(classes);
  std::vector<std::uint32_t> votes(points * c, 0);
  std::vector<std::size_t> stamp(points, std::numeric_limits<std::size_t>::max());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& idx = jobs[j].sample.sample_indices;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (stamp[idx[i]] == j) continue;
      stamp[idx[i]] = j;
      ++votes[idx[i] * c + static_cast<std::size_t>(preds[j][i])];
    }
  }
  std::vector<int> out(points, -1);
  for (std::size_t p = 0; p < points; ++p) {
    std::uint32_t best = 0;
    for (std::size_t k = 0; k < c; ++k) {
      if (votes[p * c + k] > best) {
        best = votes[p * c + k];
        out[p] = static_cast<int>(k);
      }
    }
  }
  return out;
}

ModelCheckpoint snapshot(const UnaryModelParams& u, const std::optional<AXcrfParams>& x,
                         const ModelCheckpoint& base, double oa, std::uint64_t iteration) {
  ModelCheckpoint c = base;
  c.unary = u;
  c.xcrf = x;
  c.best_validation_oa = oa;
  c.iteration = iteration;
  return c;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

}  // namespace

BlockSet make_block_set(PointCloud cloud, const SliceOptions& slicing) {
  BlockSet set;
  set.blocks = slice_blocks(cloud, slicing);
  set.cloud = std::move(cloud);
  return set;
}

namespace {

SliceOptions covering(SliceOptions s) {
  s.min_points = 1;
  return s;
}

}  // namespace

PreparedData prepare_data(const PointCloud& labeled, const TrainConfig& config, double test_fraction) {
  if (!labeled.has_labels()) throw DataError("training data has no labels");
  const TileSplit split =
      split_by_tiles(labeled, config.tile_side, config.train_fraction, test_fraction, config.seed);
  if (split.train.empty() || split.validation.empty()) {
    throw DataError("tile split left the training or validation partition empty; reduce tile_side");
  }
  PreparedData d;
  const PointCloud train = subset(labeled, split.train);
  d.normalizer = fit_normalizer(train);
  d.train = make_block_set(d.normalizer.apply(train), config.slicing);
  d.validation = make_block_set(d.normalizer.apply(subset(labeled, split.validation)), covering(config.slicing));
  if (!split.test.empty()) {
    d.test = make_block_set(d.normalizer.apply(subset(labeled, split.test)), covering(config.slicing));
  }
  return d;
}

BlockSet prediction_set(const PointCloud& cloud, const ModelCheckpoint& model) {
  if (cloud.feature_dim() != model.normalizer.min.size()) {
    throw DataError("cloud has " + std::to_string(cloud.feature_dim()) + " feature columns, model expects " +
                    std::to_string(model.normalizer.min.size()));
  }
  return make_block_set(model.normalizer.apply(cloud), covering(model.config.slicing));
}

std::uint64_t ModelCheckpoint::fingerprint() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : unary.named_tensors()) {
    h = fnv1a(h, name.data(), name.size());
    h = fnv1a(h, t->values.data(), t->values.size() * sizeof(double));
  }
  if (xcrf) {
    for (const auto& l : xcrf->levels) {
      const double head[] = {l.w_b, l.w_s, l.theta.alpha, l.theta.beta, l.theta.gamma};
      h = fnv1a(h, head, sizeof head);
      h = fnv1a(h, l.compat_offdiag.data(), l.compat_offdiag.size() * sizeof(double));
    }
  }
  return h;
}

std::uint64_t ArtificialLabelSet::hash() const {
  std::uint64_t h = fnv1a(kFnvOffset, &checkpoint_id, sizeof checkpoint_id);
  return fnv1a(h, labels.data(), labels.size() * sizeof(int));
}

std::vector<int> predict_points(const ModelCheckpoint& model, const BlockSet& set, bool use_xcrf,
                                std::uint64_t seed, std::size_t threads) {
  if (use_xcrf && !model.xcrf) throw std::invalid_argument("predict_points: checkpoint has no A-XCRF");
  const std::vector<PassJob> jobs = coverage_jobs(set, model.config.sample_size, seed);
  std::vector<std::vector<int>> preds(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    std::optional<NeighborIndex> index;
    const Block& block = set.blocks[jobs[j].block];
    PassData p = run_pass(model, set, block, jobs[j].sample, &index);
    if (use_xcrf) {
      p.logits = axcrf_forward(p.logits, p.geometry.positions, p.geometry.features, *model.xcrf, *index);
    }
    preds[j] = predict(p.logits);
  });
  return vote(set.cloud.size(), model.unary.num_classes, jobs, preds);
}

double evaluate_oa(const ModelCheckpoint& model, const BlockSet& set, bool use_xcrf, std::size_t threads) {
  if (!set.cloud.has_labels()) throw DataError("evaluate_oa: set has no labels");
  const auto pred = predict_points(model, set, use_xcrf, model.config.seed, threads);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0) continue;
    ++total;
    hit += pred[i] == set.cloud.labels[i];
  }
  if (total == 0) throw DataError("evaluate_oa: no covered points");
  return static_cast<double>(hit) / static_cast<double>(total);
}

ModelCheckpoint train_step1(const BlockSet& train, const BlockSet& validation, const TrainConfig& config,
                            const FeatureNormalizer& normalizer, const TrainHooks& hooks) {
  config.validate();
  require_trainable_set(train, "training");
  require_trainable_set(validation, "validation");
  if (train.cloud.feature_dim() != config.model.feature_dim) {
    throw DataError("training cloud has " + std::to_string(train.cloud.feature_dim()) +
                    " feature columns, model expects " + std::to_string(config.model.feature_dim));
  }

  ModelCheckpoint base;
  base.config = config;
  base.normalizer = normalizer;
  base.unary = init_unary_model(config.model, mix_seed(config.seed, 0));
  UnaryModelParams live = base.unary;
  ModelCheckpoint best = base;
  best.best_validation_oa = -1.0;

  Optimizer opt(config);
  EarlyStopper stopper(config.patience);
  std::uint64_t t = 0;
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(config.seed, mix_seed(1, epoch));
    double loss = 0.0;
    std::size_t points = 0;
    double lr = learning_rate(config, t);
    for (const auto& batch : make_batches(train, train.cloud.labels, config, epoch_seed)) {
      lr = learning_rate(config, t);
      const BatchOutcome o = train_batch(batch, live, nullptr, false, config, opt, lr);
      loss += o.loss;
      points += o.points;
      ++t;
    }
    ModelCheckpoint current = snapshot(live, std::nullopt, base, 0.0, t);
    const double oa = hooks.validation_override ? hooks.validation_override(epoch)
                                                : evaluate_oa(current, validation, false, config.threads);
    emit(hooks, {epoch, EpochKind::kLabeled, loss / static_cast<double>(points), oa, lr}, "step1", live,
         nullptr);
    const bool stop = stopper.update(oa);
    if (stopper.last_improved()) best = snapshot(live, std::nullopt, base, oa, t);
    if (stop) break;
  }
  return best;
}

ArtificialLabelSet generate_artificial_labels(const ModelCheckpoint& checkpoint, const BlockSet& unlabeled) {
  if (unlabeled.blocks.empty()) throw DataError("unlabeled set has no blocks");
  ArtificialLabelSet out;
  out.labels = predict_points(checkpoint, unlabeled, false, mix_seed(checkpoint.config.seed, kLabelSalt),
                              checkpoint.config.threads);
  out.checkpoint_id = checkpoint.fingerprint();
  std::vector<bool> member(unlabeled.cloud.size(), false);
  for (const Block& b : unlabeled.blocks) {
    for (std::size_t m : b.members) member[m] = true;
  }
  for (std::size_t i = 0; i < member.size(); ++i) out.uncovered += member[i] && out.labels[i] < 0;
  return out;
}

ModelCheckpoint prepare_step2(const ModelCheckpoint& step1, const BlockSet& validation) {
  const TrainConfig& config = step1.config;
  require_trainable_set(validation, "validation");
  ModelCheckpoint out = step1;
  AXcrfParams x = AXcrfParams::initial(config.num_classes(), config.xcrf_k, config.xcrf_strides,
                                       config.xcrf_iterations);
  x.shared_weights = config.shared_xcrf_weights;

  // unaries and neighborhoods do not depend on the bandwidths
  struct Cached {
    PassData pass;
    std::vector<NeighborTable> tables;
    std::vector<int> labels;
  };
  const std::vector<PassJob> jobs = coverage_jobs(validation, config.sample_size, config.seed);
  std::vector<Cached> cache(jobs.size());
  parallel_for(jobs.size(), config.threads, [&](std::size_t j) {
    std::optional<NeighborIndex> index;
    cache[j].pass = run_pass(step1, validation, validation.blocks[jobs[j].block], jobs[j].sample, &index);
    cache[j].tables = level_tables(*index, x);
    cache[j].labels = sample_labels(validation.cloud.labels, jobs[j].sample.sample_indices);
  });

  double best_oa = -1.0, best_ce = std::numeric_limits<double>::infinity();
  Bandwidths best_theta;
  for (double alpha : config.theta_alpha) {
    for (double beta : config.theta_beta) {
      for (double gamma : config.theta_gamma) {
        const Bandwidths theta{alpha, beta, gamma};
        AXcrfParams candidate = x;
        candidate.set_theta(theta);
        std::vector<std::vector<int>> preds(jobs.size());
        std::vector<double> ce(jobs.size());
        parallel_for(jobs.size(), config.threads, [&](std::size_t j) {
          const Cached& c = cache[j];
          const auto filters =
              level_filters(c.pass.geometry.positions, c.pass.geometry.features, c.tables, candidate);
          Record rec;
          std::vector<LevelVars> w;
          for (std::size_t li = 0; li < candidate.levels.size(); ++li) {
            w.push_back(register_level(rec, candidate.levels[candidate.shared_weights ? 0 : li], false));
          }
          const Var refined = axcrf_stack(rec, rec.constant(c.pass.logits), filters, c.tables, w, candidate);
          preds[j] = predict(refined.value());
          ce[j] = cross_entropy_sum(refined, c.labels).values()[0];
        });
        const auto votes = vote(validation.cloud.size(), config.num_classes(), jobs, preds);
        std::size_t hit = 0, total = 0;
        for (std::size_t i = 0; i < votes.size(); ++i) {
          if (votes[i] < 0) continue;
          ++total;
          hit += votes[i] == validation.cloud.labels[i];
        }
        const double oa = static_cast<double>(hit) / static_cast<double>(std::max<std::size_t>(total, 1));
        const double total_ce = std::accumulate(ce.begin(), ce.end(), 0.0);
        if (oa > best_oa || (oa == best_oa && total_ce < best_ce)) {
          best_oa = oa;
          best_ce = total_ce;
          best_theta = theta;
        }
      }
    }
  }
  x.set_theta(best_theta);
  out.xcrf = std::move(x);
  return out;
}

ModelCheckpoint train_step2(const ModelCheckpoint& checkpoint, const BlockSet& train,
                            const BlockSet& unlabeled, const ArtificialLabelSet& artificial,
                            const BlockSet& validation, const TrainHooks& hooks) {
  if (!checkpoint.xcrf || !checkpoint.xcrf->theta_initialized) {
    throw std::invalid_argument("step 2 needs an A-XCRF stack with initialized bandwidths");
  }
  const TrainConfig& config = checkpoint.config;
  config.validate();
  require_trainable_set(train, "training");
  if (!hooks.validation_override) require_trainable_set(validation, "validation");
  if (unlabeled.blocks.empty()) throw DataError("unlabeled set has no blocks");
  if (artificial.labels.size() != unlabeled.cloud.size()) {
    throw DataError("artificial labels do not match the unlabeled cloud");
  }

  // artificial-label epochs use only blocks that pass the training slicing
  // threshold; the small ones exist for prediction coverage
  BlockSet fake_set{unlabeled.cloud, {}};
  for (const Block& b : unlabeled.blocks) {
    if (b.members.size() >= config.slicing.min_points) fake_set.blocks.push_back(b);
  }
  if (fake_set.blocks.empty()) {
    throw DataError("unlabeled set has no block with at least " + std::to_string(config.slicing.min_points) +
                    " points");
  }

  UnaryModelParams unary = checkpoint.unary;
  std::optional<AXcrfParams> xcrf = checkpoint.xcrf;
  ModelCheckpoint best = checkpoint;
  best.best_validation_oa = -1.0;
  Optimizer opt(config);
  EarlyStopper stopper(config.patience);
  std::uint64_t t = config.restart_schedule_in_step2 ? 0 : checkpoint.iteration;

  struct Tagged {
    std::vector<BlockJob> jobs;
    bool labeled;
  };
  for (std::size_t round = 0; round < config.step2_max_epochs; ++round) {
    const std::uint64_t seed_l = mix_seed(config.seed, mix_seed(kStep2Salt, 2 * round));
    const std::uint64_t seed_a = mix_seed(config.seed, mix_seed(kStep2Salt, 2 * round + 1));
    auto labeled = make_batches(train, train.cloud.labels, config, seed_l);
    auto fake = make_batches(fake_set, artificial.labels, config, seed_a);

    std::vector<Tagged> schedule;
    if (config.alternate_per_batch) {
      for (std::size_t i = 0; i < std::max(labeled.size(), fake.size()); ++i) {
        if (i < labeled.size()) schedule.push_back({std::move(labeled[i]), true});
        if (i < fake.size()) schedule.push_back({std::move(fake[i]), false});
      }
    } else {
      for (auto& b : labeled) schedule.push_back({std::move(b), true});
      for (auto& b : fake) schedule.push_back({std::move(b), false});
    }

    double loss[2] = {0.0, 0.0};
    std::size_t points[2] = {0, 0};
    double lr = learning_rate(config, t);
    for (const Tagged& step : schedule) {
      lr = learning_rate(config, t);
      const BatchOutcome o = train_batch(step.jobs, unary, &*xcrf, step.labeled, config, opt, lr);
      loss[step.labeled ? 0 : 1] += o.loss;
      points[step.labeled ? 0 : 1] += o.points;
      ++t;
    }
    emit(hooks,
         {2 * round, EpochKind::kLabeled, loss[0] / static_cast<double>(std::max<std::size_t>(points[0], 1)),
          std::numeric_limits<double>::quiet_NaN(), lr},
         "step2", unary, &*xcrf);
    ModelCheckpoint current = snapshot(unary, xcrf, checkpoint, 0.0, t);
    const double oa = hooks.validation_override ? hooks.validation_override(round)
                                                : evaluate_oa(current, validation, true, config.threads);
    emit(hooks,
         {2 * round + 1, EpochKind::kArtificial,
          loss[1] / static_cast<double>(std::max<std::size_t>(points[1], 1)), oa, lr},
         "step2", unary, &*xcrf);
    const bool stop = stopper.update(oa);
    if (stopper.last_improved()) best = snapshot(unary, xcrf, checkpoint, oa, t);
    if (stop) break;
  }
  return best;
}

}  // namespace axcrf
