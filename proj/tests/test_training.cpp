#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "axcrf/errors.hpp"
#include "axcrf/training.hpp"

using namespace axcrf;
namespace fs = std::filesystem;

namespace {

TrainConfig small_config(int classes) {
  TrainConfig c;
  c.model.num_classes = classes;
  c.model.blocks = {{8, 1, 16}, {8, 2, 16}};
  c.model.hidden = 16;
  c.model.head_hidden = 16;
  c.sample_size = 128;
  c.tile_side = 20.0;
  c.xcrf_k = 8;
  c.xcrf_strides = {1, 2};
  c.xcrf_iterations = 2;
  c.theta_alpha = {1.0, 2.0};
  c.theta_beta = {0.25};
  c.theta_gamma = {1.0};
  c.max_epochs = 3;
  c.step2_max_epochs = 2;
  c.optimizer = OptimizerKind::kAdam;
  c.learning_rate = 0.01;
  c.slicing = {10.0, 5.0, 16, false};
  return c;
}

struct Fixture {
  TrainConfig config;
  PreparedData data;
};

Fixture make_fixture(int classes, double noise, std::size_t n = 3000) {
  Fixture f;
  f.config = small_config(classes);
  f.data = prepare_data(generate_synthetic("strata", n, classes, noise, 3), f.config, 0.25);
  return f;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const TrainConfig c;
  CHECK(learning_rate(c, 0) == 0.005);
  CHECK(learning_rate(c, 4999) == 0.005);
  CHECK(learning_rate(c, 5000) == doctest::Approx(0.004).epsilon(1e-12));
  CHECK(learning_rate(c, 10000) == doctest::Approx(0.0032).epsilon(1e-12));
  for (std::uint64_t t : {0ULL, 100000ULL, 1000000ULL, 100000000ULL, ~0ULL}) CHECK(learning_rate(c, t) >= 1e-6);
  CHECK(learning_rate(c, 10000000) == 1e-6);
}

TEST_CASE("early stopping on a scripted sequence") {
  EarlyStopper s(10);
  const std::vector<double> oa{0.5, 0.6, 0.7, 0.7, 0.65, 0.7, 0.69, 0.7, 0.6, 0.7, 0.7, 0.7};
  std::size_t stopped_at = 0;
  for (std::size_t e = 0; e < oa.size(); ++e) {
    if (s.update(oa[e])) {
      stopped_at = e;
      break;
    }
  }
  CHECK(stopped_at == 0);  // nine stagnant epochs after the best
  CHECK(s.stale_epochs() == 9);
  CHECK(s.update(0.7));
  CHECK_THROWS_AS(EarlyStopper(0), std::invalid_argument);
}

TEST_CASE("configuration round trip and strict keys") {
  TrainConfig c = small_config(5);
  c.shared_xcrf_weights = true;
  const TrainConfig back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  try {
    TrainConfig::from_json(nlohmann::json{{"learning_rate", 0.1}, {"lerning_rate", 0.1}});
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("lerning_rate") != std::string::npos);
  }
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"model", {{"depth", 3}}}}), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_json(nlohmann::json{{"optimizer", "rmsprop"}}), std::invalid_argument);
  TrainConfig bad;
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.lr_floor = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("step 1 stops after patience stagnant epochs and keeps the best") {
  auto f = make_fixture(3, 0.1, 1500);
  f.config.max_epochs = 50;
  f.config.patience = 3;
  const std::vector<double> oa{0.2, 0.4, 0.3, 0.4, 0.35, 0.9};
  std::vector<std::uint64_t> prints;
  TrainHooks hooks;
  hooks.validation_override = [&](std::size_t e) { return oa.at(e); };
  hooks.on_epoch = [&](const EpochRecord&, const UnaryModelParams& u, const AXcrfParams*) {
    ModelCheckpoint c;
    c.unary = u;
    prints.push_back(c.fingerprint());
  };
  std::ostringstream log;
  hooks.log = &log;
  const auto ckpt = train_step1(f.data.train, f.data.validation, f.config, f.data.normalizer, hooks);
  CHECK(prints.size() == 5);  // best at epoch 1, then 3 stagnant epochs
  CHECK(ckpt.best_validation_oa == 0.4);
  CHECK(ckpt.fingerprint() == prints[1]);
  std::size_t lines = 0;
  for (char ch : log.str()) lines += ch == '\n';
  CHECK(lines == 5);
}

TEST_CASE("zero-noise strata is learned") {
  auto f = make_fixture(2, 0.0);
  f.config.max_epochs = 30;
  const auto ckpt = train_step1(f.data.train, f.data.validation, f.config, f.data.normalizer);
  const double train_oa = evaluate_oa(ckpt, make_block_set(f.data.train.cloud, {10.0, 5.0, 1, false}), false);
  CHECK(train_oa >= 0.99);
}

TEST_CASE("thread count does not change the result") {
  auto f = make_fixture(3, 0.1, 1500);
  f.config.max_epochs = 2;
  const auto a = train_step1(f.data.train, f.data.validation, f.config, f.data.normalizer);
  f.config.threads = 3;
  const auto b = train_step1(f.data.train, f.data.validation, f.config, f.data.normalizer);
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("non-finite loss is a numeric failure") {
  auto f = make_fixture(3, 0.1, 1500);
  f.config.optimizer = OptimizerKind::kSgd;
  f.config.learning_rate = 1e300;
  CHECK_THROWS_AS(train_step1(f.data.train, f.data.validation, f.config, f.data.normalizer), NumericError);
}

TEST_CASE("artificial labels, bandwidth search and the freezing contract") {
  auto f = make_fixture(3, 0.1);
  const auto step1 = train_step1(f.data.train, f.data.validation, f.config, f.data.normalizer);
  const auto labels = generate_artificial_labels(step1, f.data.test);
  CHECK(labels.uncovered == 0);
  CHECK(labels.labels.size() == f.data.test.cloud.size());
  for (int v : labels.labels) CHECK(v >= 0);
  CHECK(labels.checkpoint_id == step1.fingerprint());
  CHECK(generate_artificial_labels(step1, f.data.test).hash() == labels.hash());

  CHECK_THROWS_AS(train_step2(step1, f.data.train, f.data.test, labels, f.data.validation), std::invalid_argument);

  const auto prepared = prepare_step2(step1, f.data.validation);
  REQUIRE(prepared.xcrf);
  CHECK(prepared.xcrf->theta_initialized);
  CHECK(prepared.xcrf->levels.size() == 2);

  std::vector<AXcrfParams> snaps{*prepared.xcrf};
  std::vector<EpochKind> kinds;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r, const UnaryModelParams&, const AXcrfParams* x) {
    snaps.push_back(*x);
    kinds.push_back(r.kind);
  };
  const auto step2 = train_step2(prepared, f.data.train, f.data.test, labels, f.data.validation, hooks);
  REQUIRE(kinds.size() == 4);
  for (std::size_t e = 0; e < kinds.size(); ++e) {
    const auto& before = snaps[e];
    const auto& after = snaps[e + 1];
    for (std::size_t l = 0; l < before.levels.size(); ++l) {
      const bool same = before.levels[l].w_b == after.levels[l].w_b && before.levels[l].w_s == after.levels[l].w_s &&
                        before.levels[l].compat_offdiag == after.levels[l].compat_offdiag;
      if (kinds[e] == EpochKind::kArtificial) CHECK(same);
      else CHECK_FALSE(same);
    }
  }
  CHECK(step2.xcrf);
  CHECK(evaluate_oa(step2, f.data.test, true) > 0.5);
}

TEST_CASE("shared XCRF weights stay identical across levels") {
  auto f = make_fixture(3, 0.1, 1500);
  f.config.shared_xcrf_weights = true;
  f.config.max_epochs = 1;
  f.config.step2_max_epochs = 1;
  const auto step1 = train_step1(f.data.train, f.data.validation, f.config, f.data.normalizer);
  const auto labels = generate_artificial_labels(step1, f.data.test);
  const auto step2 =
      train_step2(prepare_step2(step1, f.data.validation), f.data.train, f.data.test, labels, f.data.validation);
  CHECK(step2.xcrf->levels[0].compat_offdiag == step2.xcrf->levels[1].compat_offdiag);
  CHECK(step2.xcrf->levels[0].w_b == step2.xcrf->levels[1].w_b);
  CHECK(step2.xcrf->levels[0].w_b != 1.0);
}

TEST_CASE("checkpoint files") {
  auto f = make_fixture(3, 0.1, 1500);
  f.config.max_epochs = 1;
  ModelCheckpoint ckpt = train_step1(f.data.train, f.data.validation, f.config, f.data.normalizer);
  ckpt = prepare_step2(ckpt, f.data.validation);
  ckpt.xcrf->levels[1].compat_offdiag[3] = 0.1 + 1e-17;
  const fs::path p = fs::temp_directory_path() / "axcrf_ckpt_test.bin";
  save_checkpoint(ckpt, p);
  const ModelCheckpoint back = load_checkpoint(p);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ckpt));
  CHECK(back.fingerprint() == ckpt.fingerprint());
  CHECK(back.normalizer.min == ckpt.normalizer.min);
  CHECK(back.xcrf->levels[1].theta.alpha == ckpt.xcrf->levels[1].theta.alpha);

  const std::string bytes = serialize_checkpoint(ckpt);
  auto code_of = [](const std::string& b) {
    try {
      deserialize_checkpoint(b);
    } catch (const CheckpointError& e) {
      return std::pair{e.code(), std::string(e.what())};
    }
    FAIL("expected CheckpointError");
    return std::pair{CheckpointErrorCode::kIo, std::string()};
  };
  CHECK(code_of(bytes.substr(0, bytes.size() - 9)).first == CheckpointErrorCode::kTruncatedPayload);
  std::string old = bytes;
  old[5] = 0;
  const auto v = code_of(old);
  CHECK(v.first == CheckpointErrorCode::kVersionMismatch);
  CHECK(v.second.find('0') != std::string::npos);
  CHECK(v.second.find('1') != std::string::npos);
  CHECK(code_of("PLY\n").first == CheckpointErrorCode::kCorruptHeader);
  CHECK(code_of(bytes.substr(0, 40)).first == CheckpointErrorCode::kCorruptHeader);
  try {
    load_checkpoint("/nonexistent/ckpt.bin");
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.code() == CheckpointErrorCode::kIo);
  }
}
