#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

#include "axcrf/training.hpp"

namespace axcrf {

namespace {

using json = nlohmann::json;
using Setter = std::function<void(const json&)>;

void apply_strict(const json& j, const std::string& scope, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw std::invalid_argument("config section '" + scope + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw std::invalid_argument("unknown config key '" + (scope.empty() ? key : scope + "." + key) + "'");
    }
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw std::invalid_argument("config key '" + key + "': " + e.what());
    }
  }
}

template <typename T>
Setter set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !(lr_floor > 0.0)) {
    throw std::invalid_argument("learning rate and floor must be positive");
  }
  if (!(decay > 0.0 && decay <= 1.0) || decay_every == 0) {
    throw std::invalid_argument("decay must lie in (0, 1] with a positive interval");
  }
  if (patience == 0) throw std::invalid_argument("patience must be at least 1");
  if (batch_size == 0 || sample_size == 0) {
    throw std::invalid_argument("batch size and sample size must be positive");
  }
  if (model.num_classes < 2) throw std::invalid_argument("need at least two classes");
  if (xcrf_strides.empty() || xcrf_k == 0) throw std::invalid_argument("A-XCRF needs K >= 1 and a level");
  if (theta_alpha.empty() || theta_beta.empty() || theta_gamma.empty()) {
    throw std::invalid_argument("bandwidth grid must not be empty");
  }
  for (const auto* grid : {&theta_alpha, &theta_beta, &theta_gamma}) {
    for (double v : *grid) {
      if (!(v > 0.0)) throw std::invalid_argument("bandwidth candidates must be positive");
    }
  }
}

double learning_rate(const TrainConfig& config, std::uint64_t iteration) {
  const auto steps = static_cast<double>(iteration / config.decay_every);
  return std::max(config.lr_floor, config.learning_rate * std::pow(config.decay, steps));
}

nlohmann::json TrainConfig::to_json() const {
  json blocks = json::array();
  for (const auto& b : model.blocks) blocks.push_back({{"k", b.k}, {"stride", b.stride}, {"c_out", b.c_out}});
  return {
      {"learning_rate", learning_rate},
      {"decay", decay},
      {"decay_every", decay_every},
      {"lr_floor", lr_floor},
      {"optimizer", optimizer_name(optimizer)},
      {"adam_beta1", adam_beta1},
      {"adam_beta2", adam_beta2},
      {"adam_epsilon", adam_epsilon},
      {"batch_size", batch_size},
      {"patience", patience},
      {"max_epochs", max_epochs},
      {"step2_max_epochs", step2_max_epochs},
      {"seed", seed},
      {"sample_size", sample_size},
      {"threads", threads},
      {"model",
       {{"feature_dim", model.feature_dim},
        {"num_classes", model.num_classes},
        {"blocks", blocks},
        {"c_delta", model.c_delta},
        {"hidden", model.hidden},
        {"head_hidden", model.head_hidden},
        {"dropout_rate", model.dropout_rate}}},
      {"xcrf_k", xcrf_k},
      {"xcrf_strides", xcrf_strides},
      {"xcrf_iterations", xcrf_iterations},
      {"shared_xcrf_weights", shared_xcrf_weights},
      {"theta_alpha", theta_alpha},
      {"theta_beta", theta_beta},
      {"theta_gamma", theta_gamma},
      {"restart_schedule_in_step2", restart_schedule_in_step2},
      {"alternate_per_batch", alternate_per_batch},
      {"slicing",
       {{"side", slicing.side},
        {"shift", slicing.shift},
        {"min_points", slicing.min_points},
        {"recenter_z", slicing.recenter_z}}},
      {"tile_side", tile_side},
      {"train_fraction", train_fraction},
  };
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto& m = c.model;
  const std::map<std::string, Setter> model_setters{
      {"feature_dim", set(m.feature_dim)},
      {"num_classes", set(m.num_classes)},
      {"c_delta", set(m.c_delta)},
      {"hidden", set(m.hidden)},
      {"head_hidden", set(m.head_hidden)},
      {"dropout_rate", set(m.dropout_rate)},
      {"blocks",
       [&m](const json& v) {
         m.blocks.clear();
         for (const auto& b : v) {
           XConvSpec spec;
           apply_strict(b, "model.blocks",
                        {{"k", set(spec.k)}, {"stride", set(spec.stride)}, {"c_out", set(spec.c_out)}});
           m.blocks.push_back(spec);
         }
       }},
  };
  const std::map<std::string, Setter> slicing_setters{
      {"side", set(c.slicing.side)},
      {"shift", set(c.slicing.shift)},
      {"min_points", set(c.slicing.min_points)},
      {"recenter_z", set(c.slicing.recenter_z)},
  };
  const std::map<std::string, Setter> setters{
      {"learning_rate", set(c.learning_rate)},
      {"decay", set(c.decay)},
      {"decay_every", set(c.decay_every)},
      {"lr_floor", set(c.lr_floor)},
      {"optimizer",
       [&c](const json& v) {
         const auto s = v.get<std::string>();
         if (s == "sgd") c.optimizer = OptimizerKind::kSgd;
         else if (s == "adam") c.optimizer = OptimizerKind::kAdam;
         else throw std::invalid_argument("unknown optimizer '" + s + "'");
       }},
      {"adam_beta1", set(c.adam_beta1)},
      {"adam_beta2", set(c.adam_beta2)},
      {"adam_epsilon", set(c.adam_epsilon)},
      {"batch_size", set(c.batch_size)},
      {"patience", set(c.patience)},
      {"max_epochs", set(c.max_epochs)},
      {"step2_max_epochs", set(c.step2_max_epochs)},
      {"seed", set(c.seed)},
      {"sample_size", set(c.sample_size)},
      {"threads", set(c.threads)},
      {"model", [&](const json& v) { apply_strict(v, "model", model_setters); }},
      {"xcrf_k", set(c.xcrf_k)},
      {"xcrf_strides", set(c.xcrf_strides)},
      {"xcrf_iterations", set(c.xcrf_iterations)},
      {"shared_xcrf_weights", set(c.shared_xcrf_weights)},
      {"theta_alpha", set(c.theta_alpha)},
      {"theta_beta", set(c.theta_beta)},
      {"theta_gamma", set(c.theta_gamma)},
      {"restart_schedule_in_step2", set(c.restart_schedule_in_step2)},
      {"alternate_per_batch", set(c.alternate_per_batch)},
      {"slicing", [&](const json& v) { apply_strict(v, "slicing", slicing_setters); }},
      {"tile_side", set(c.tile_side)},
      {"train_fraction", set(c.train_fraction)},
  };
  apply_strict(j, "", setters);
  return c;
}

EarlyStopper::EarlyStopper(std::size_t patience)
    : patience_(patience), best_(-std::numeric_limits<double>::infinity()) {
  if (patience == 0) throw std::invalid_argument("patience must be at least 1");
}

bool EarlyStopper::update(double score) {
  if (score > best_) {
    best_ = score;
    stale_ = 0;
    last_improved_ = true;
  } else {
    ++stale_;
    last_improved_ = false;
  }
  return stale_ >= patience_;
}

}  // namespace axcrf
