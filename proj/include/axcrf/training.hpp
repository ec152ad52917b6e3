#pragma once

// Two-step training: (1) split-validated training of the unary model,
// (2) retraining with the A-XCRF stack attached, alternating epochs on
// labeled data (all parameters move) and on artificially labeled data
// (XCRF weights frozen).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "axcrf/pointcloud.hpp"
#include "axcrf/unary_model.hpp"
#include "axcrf/xcrf.hpp"

namespace axcrf {

enum class OptimizerKind { kSgd, kAdam };

struct TrainConfig {
  // schedule: lr(t) = max(floor, lr0 * decay^floor(t / decay_every))
  double learning_rate = 0.005;
  double decay = 0.8;
  std::size_t decay_every = 5000;
  double lr_floor = 1e-6;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  std::size_t batch_size = 6;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::size_t step2_max_epochs = 100;
  std::uint64_t seed = 1;
  std::size_t sample_size = 2048;
  std::size_t threads = 1;

  UnaryModelConfig model;

  std::size_t xcrf_k = 64;
  std::vector<std::size_t> xcrf_strides{1, 2, 3, 4, 8, 16};
  std::size_t xcrf_iterations = 5;
  bool shared_xcrf_weights = false;
  std::vector<double> theta_alpha{0.5, 1.0, 2.0, 4.0};
  std::vector<double> theta_beta{0.05, 0.1, 0.25, 0.5};
  std::vector<double> theta_gamma{0.5, 1.0, 2.0, 4.0};
  bool restart_schedule_in_step2 = false;  // step 2 continues the step-1 iteration counter
  bool alternate_per_batch = false;

  SliceOptions slicing;
  double tile_side = 100.0;
  double train_fraction = 0.8;

  int num_classes() const { return model.num_classes; }
  void validate() const;

  nlohmann::json to_json() const;
  /// Keys absent from `j` keep their defaults; unknown keys throw
  /// std::invalid_argument naming the key.
  static TrainConfig from_json(const nlohmann::json& j);
};

double learning_rate(const TrainConfig& config, std::uint64_t iteration);

/// "No improvement over the best so far" early stopping.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);

  /// Records one epoch's validation score. Returns true once `patience`
  /// consecutive epochs have failed to improve on the best score.
  bool update(double score);
  bool last_improved() const { return last_improved_; }
  double best() const { return best_; }
  std::size_t stale_epochs() const { return stale_; }

 private:
  std::size_t patience_;
  double best_;
  std::size_t stale_ = 0;
  bool last_improved_ = false;
};

/// A (normalized) partition of a cloud and its blocks.
struct BlockSet {
  PointCloud cloud;
  std::vector<Block> blocks;
};

BlockSet make_block_set(PointCloud cloud, const SliceOptions& slicing);

/// Labeled data split by whole tiles. The normalizer is fitted on the
/// training partition; evaluation partitions are sliced with min_points = 1
/// so that every point lies in some block.
struct PreparedData {
  BlockSet train;
  BlockSet validation;
  BlockSet test;  // empty cloud when test_fraction == 0
  FeatureNormalizer normalizer;
};

PreparedData prepare_data(const PointCloud& labeled, const TrainConfig& config, double test_fraction = 0.0);

struct ModelCheckpoint {
  static constexpr std::uint8_t kFormatVersion = 1;

  UnaryModelParams unary;
  std::optional<AXcrfParams> xcrf;
  FeatureNormalizer normalizer;
  TrainConfig config;
  double best_validation_oa = 0.0;
  std::uint64_t iteration = 0;

  /// FNV-1a over every stored tensor; identifies label generations.
  std::uint64_t fingerprint() const;
};

struct ArtificialLabelSet {
  std::vector<int> labels;  // per point of the unlabeled cloud; -1 if in no block
  std::uint64_t checkpoint_id = 0;
  std::size_t uncovered = 0;  // block members never sampled (0 after generation)

  std::uint64_t hash() const;
};

enum class EpochKind { kLabeled, kArtificial };

struct EpochRecord {
  std::size_t epoch = 0;
  EpochKind kind = EpochKind::kLabeled;
  double mean_loss = 0.0;
  double validation_oa = 0.0;  // NaN for epochs not followed by validation
  double learning_rate = 0.0;
};

struct TrainHooks {
  std::ostream* log = nullptr;  // one JSON record per epoch
  /// Called after every epoch with the live parameters.
  std::function<void(const EpochRecord&, const UnaryModelParams&, const AXcrfParams*)> on_epoch;
  /// Overrides the validation measurement (tests).
  std::function<double(std::size_t epoch)> validation_override;
};

ModelCheckpoint train_step1(const BlockSet& train, const BlockSet& validation,
                            const TrainConfig& config, const FeatureNormalizer& normalizer,
                            const TrainHooks& hooks = {});

/// Per-point predictions for the whole block set via coverage passes and a
/// per-point majority vote (ties to the lowest class). Points that belong to
/// no block get -1.
std::vector<int> predict_points(const ModelCheckpoint& model, const BlockSet& set, bool use_xcrf,
                                std::uint64_t seed, std::size_t threads = 1);

/// Normalizes with the checkpoint's normalizer and slices for prediction.
BlockSet prediction_set(const PointCloud& cloud, const ModelCheckpoint& model);

ArtificialLabelSet generate_artificial_labels(const ModelCheckpoint& checkpoint,
                                              const BlockSet& unlabeled);

/// Attaches a freshly initialized A-XCRF stack (weights one, hollow W_c of
/// ones) and picks bandwidths by grid search on validation OA, ties broken
/// by lower validation cross-entropy.
ModelCheckpoint prepare_step2(const ModelCheckpoint& step1, const BlockSet& validation);

ModelCheckpoint train_step2(const ModelCheckpoint& checkpoint, const BlockSet& train,
                            const BlockSet& unlabeled, const ArtificialLabelSet& artificial,
                            const BlockSet& validation, const TrainHooks& hooks = {});

/// Accuracy of predict_points over labeled points covered by blocks.
double evaluate_oa(const ModelCheckpoint& model, const BlockSet& set, bool use_xcrf,
                   std::size_t threads = 1);

enum class CheckpointErrorCode { kIo, kCorruptHeader, kTruncatedPayload, kVersionMismatch };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

/// Binary layout: "AXCRF", one version byte, a one-line JSON manifest
/// (tensor name, shape, byte offset, length plus metadata), then the
/// little-endian IEEE-754 payloads in manifest order.
std::string serialize_checkpoint(const ModelCheckpoint& ckpt);
ModelCheckpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace axcrf
