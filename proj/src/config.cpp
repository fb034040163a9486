#include "sarl/config.hpp"

#include <fstream>
#include <set>

#include "sarl/errors.hpp"

namespace sarl::config {
namespace {

// Reads the keys of one JSON object and rejects whatever was not consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(path_ + "." + k + ": unknown key");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string where = path_ + "." + key;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(where + ": expected a boolean");
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!it->is_number_unsigned() && !(it->is_number_integer() && it->template get<long long>() >= 0))
          throw ConfigError(where + ": expected a non-negative integer");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError(where + ": expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(where + ": expected a number");
      }
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }

  template <typename F>
  void sub(const char* key, F&& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Section s(*it, path_ + "." + key);
    fn(s);
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_model(Section& s, model::ModelConfig& c) {
  s.get("in_channels", c.in_channels);
  s.sub("extractor", [&](Section& e) {
    e.get("base_channels", c.extractor.base_channels);
    e.get("num_blocks", c.extractor.num_blocks);
    e.get("growth", c.extractor.growth);
    e.get("layers_per_block", c.extractor.layers_per_block);
  });
  s.sub("cfn", [&](Section& f) { f.get("hidden", c.cfn.hidden); });
  s.get("n_iters", c.framework.n_iters);
  s.get("shared_weights", c.framework.shared_weights);
  s.get("sh_order", c.framework.sh_order);
}

void read_train(Section& s, train::TrainConfig& c) {
  s.get("epochs", c.epochs);
  s.get("steps_per_epoch", c.steps_per_epoch);
  s.get("lr_drop_epoch", c.lr_drop_epoch);
  s.get("lr_initial", c.lr_initial);
  s.get("lr_after_drop", c.lr_after_drop);
  s.get("beta1", c.beta1);
  s.get("beta2", c.beta2);
  s.get("eps", c.eps);
  s.get("weight_decay", c.weight_decay);
  s.get("lambda_d", c.lambda_d);
  s.get("scale_range", c.scale_range);
  s.get("q_factors", c.q_factors);
  s.get("batch_size", c.batch_size);
  s.get("patch_hr", c.patch_hr);
  s.get("noise_sigma", c.noise_sigma);
  s.get("val_scale", c.val_scale);
  s.get("val_interval", c.val_interval);
  s.get("val_stride", c.val_stride);
  s.get("wavelet_levels", c.wavelet_levels);
  s.get("seed", c.seed);
}

}  // namespace

json to_json(const model::ModelConfig& c) {
  return {{"in_channels", c.in_channels},
          {"extractor",
           {{"base_channels", c.extractor.base_channels},
            {"num_blocks", c.extractor.num_blocks},
            {"growth", c.extractor.growth},
            {"layers_per_block", c.extractor.layers_per_block}}},
          {"cfn", {{"hidden", c.cfn.hidden}}},
          {"n_iters", c.framework.n_iters},
          {"shared_weights", c.framework.shared_weights},
          {"sh_order", c.framework.sh_order}};
}

json to_json(const train::TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"steps_per_epoch", c.steps_per_epoch},
          {"lr_drop_epoch", c.lr_drop_epoch},
          {"lr_initial", c.lr_initial},
          {"lr_after_drop", c.lr_after_drop},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"weight_decay", c.weight_decay},
          {"lambda_d", c.lambda_d},
          {"scale_range", c.scale_range},
          {"q_factors", c.q_factors},
          {"batch_size", c.batch_size},
          {"patch_hr", c.patch_hr},
          {"noise_sigma", c.noise_sigma},
          {"val_scale", c.val_scale},
          {"val_interval", c.val_interval},
          {"val_stride", c.val_stride},
          {"wavelet_levels", c.wavelet_levels},
          {"seed", c.seed}};
}

model::ModelConfig model_from_json(const json& j) {
  model::ModelConfig c;
  Section s(j, "model");
  read_model(s, c);
  return c;
}

train::TrainConfig train_from_json(const json& j) {
  train::TrainConfig c;
  Section s(j, "train");
  read_train(s, c);
  return c;
}

json to_json(const RunConfig& c) {
  json model = to_json(c.model);
  model.erase("in_channels");
  return {{"phantom",
           {{"size", c.phantom.size},
            {"slices", c.phantom.slices},
            {"n_dirs", c.phantom.n_dirs},
            {"bval", c.phantom.bval},
            {"n_b0", c.phantom.n_b0},
            {"noise_sigma", c.phantom.noise_sigma},
            {"seed", c.phantom.seed}}},
          {"degrade",
           {{"scale", c.degrade.scale},
            {"q_subset", c.degrade.q_subset},
            {"noise", c.degrade.noise},
            {"seed", c.degrade.seed}}},
          {"model", model},
          {"train", to_json(c.train)},
          {"eval",
           {{"scale", c.eval.scale},
            {"q_factor", c.eval.q_factor},
            {"baseline_lambda", c.eval.baseline_lambda}}}};
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  {
    Section root(j, "config");
    root.sub("phantom", [&](Section& s) {
      s.get("size", c.phantom.size);
      s.get("slices", c.phantom.slices);
      s.get("n_dirs", c.phantom.n_dirs);
      s.get("bval", c.phantom.bval);
      s.get("n_b0", c.phantom.n_b0);
      s.get("noise_sigma", c.phantom.noise_sigma);
      s.get("seed", c.phantom.seed);
    });
    root.sub("degrade", [&](Section& s) {
      s.get("scale", c.degrade.scale);
      s.get("q_subset", c.degrade.q_subset);
      s.get("noise", c.degrade.noise);
      s.get("seed", c.degrade.seed);
    });
    root.sub("model", [&](Section& s) {
      read_model(s, c.model);
    });
    root.sub("train", [&](Section& s) { read_train(s, c.train); });
    root.sub("eval", [&](Section& s) {
      s.get("scale", c.eval.scale);
      s.get("q_factor", c.eval.q_factor);
      s.get("baseline_lambda", c.eval.baseline_lambda);
    });
  }
  c.train.validate();
  c.model.extractor.validate();
  c.model.cfn.validate();
  c.model.framework.validate();
  if (c.degrade.scale < 1.0) throw ConfigError("config.degrade.scale: must be >= 1");
  if (c.degrade.q_subset < 1.0) throw ConfigError("config.degrade.q_subset: must be >= 1");
  if (c.degrade.noise < 0.0) throw ConfigError("config.degrade.noise: must be >= 0");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

}  // namespace sarl::config
