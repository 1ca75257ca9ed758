#include "camid/config.hpp"

#include <set>

#include "camid/error.hpp"
#include "camid/io.hpp"
#include "camid/nn/checkpoint.hpp"

namespace camid {
namespace {

using nlohmann::json;

// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail_at(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      fail_at(path_ + key, e.what());
    }
  }

  /// Calls fn(Section) when the key holds an object.
  template <typename Fn>
  void child(const std::string& key, Fn&& fn) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Section s(*it, path_ + key + ".");
    fn(s);
    s.finish();
  }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const std::string& path() const { return path_; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw Error(Errc::ConfigError, "unknown config key '" + path_ + it.key() + "'");
      }
    }
  }

  [[noreturn]] static void fail_at(const std::string& where, const std::string& what) {
    throw Error(Errc::ConfigError, "config key '" + where + "': " + what);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string loss_name(nn::LossKind k) {
  return k == nn::LossKind::PerClassBinary ? "per_class_binary" : "categorical";
}

nn::LossKind parse_loss(const std::string& s, const std::string& where) {
  if (s == "per_class_binary") return nn::LossKind::PerClassBinary;
  if (s == "categorical") return nn::LossKind::Categorical;
  Section::fail_at(where, "expected \"per_class_binary\" or \"categorical\", got \"" + s + "\"");
}

std::string averaging_name(Averaging a) {
  return a == Averaging::Probability ? "probability" : "logit";
}

Averaging parse_averaging(const std::string& s, const std::string& where) {
  if (s == "probability") return Averaging::Probability;
  if (s == "logit") return Averaging::Logit;
  Section::fail_at(where, "expected \"probability\" or \"logit\", got \"" + s + "\"");
}

json policy_json(const AugmentPolicy& p) {
  return {{"gamma_range", p.gamma_range},
          {"jpeg_range", p.jpeg_range},
          {"scale_range", p.scale_range},
          {"probability", p.probability}};
}

void read_policy(Section& s, AugmentPolicy& p) {
  s.get("gamma_range", p.gamma_range);
  s.get("jpeg_range", p.jpeg_range);
  s.get("scale_range", p.scale_range);
  s.get("probability", p.probability);
}

}  // namespace

void RunConfig::validate() const {
  try {
    if (workers < 1) throw Error(Errc::InvalidParam, "workers must be >= 1");
    if (precision != "f32" && precision != "f64") {
      throw Error(Errc::InvalidParam, "precision must be \"f32\" or \"f64\"");
    }
    if (val_per_class < 0) throw Error(Errc::InvalidParam, "val_per_class must be >= 0");
    if (infer.crop < 0) throw Error(Errc::InvalidParam, "infer.crop must be >= 0");
    curation.validate();
    eval_set.validate();
    train.validate();
    weights.validate();
    synth.validate();
    for (auto [t, grid] : {std::pair{SweepTransform::Gamma, &ablate.gamma_grid},
                           std::pair{SweepTransform::Jpeg, &ablate.jpeg_grid},
                           std::pair{SweepTransform::Scale, &ablate.scale_grid},
                           std::pair{SweepTransform::Contrast, &ablate.contrast_grid},
                           std::pair{SweepTransform::CropSize, &ablate.crop_grid}}) {
      SweepSpec{t, *grid}.validate();
    }
  } catch (const Error& e) {
    if (e.code() == Errc::ConfigError) throw;
    throw Error(Errc::ConfigError, e.what());
  }
}

nlohmann::json to_json(const RunConfig& c) {
  json whitelist = json::object();
  for (const auto& [name, dims] : c.curation.dimension_whitelist) {
    json list = json::array();
    for (const auto& [w, h] : dims) list.push_back({w, h});
    whitelist[name] = list;
  }
  json model;
  nn::to_json(model, c.train.model);
  return {
      {"seed", c.seed},
      {"workers", c.workers},
      {"precision", c.precision},
      {"curation",
       {{"software_blacklist", c.curation.software_blacklist},
        {"min_jpeg_quality", c.curation.min_jpeg_quality},
        {"dimension_whitelist", whitelist}}},
      {"val_per_class", c.val_per_class},
      {"eval_set",
       {{"crop", c.eval_set.crop},
        {"altered_fraction", c.eval_set.altered_fraction},
        {"gamma_grid", c.eval_set.gamma_grid},
        {"jpeg_grid", c.eval_set.jpeg_grid},
        {"scale_grid", c.eval_set.scale_grid},
        {"contrast_grid", c.eval_set.contrast_grid}}},
      {"train",
       {{"pre_crop", c.train.pre_crop},
        {"train_crop", c.train.train_crop},
        {"batch_size", c.train.batch_size},
        {"iterations", c.train.iterations},
        {"learning_rate", c.train.learning_rate},
        {"lr_decay_every", c.train.lr_decay_every},
        {"lr_decay_factor", c.train.lr_decay_factor},
        {"augment", c.train.augment},
        {"policy", policy_json(c.train.policy)},
        {"loss", loss_name(c.train.loss)},
        {"model", model},
        {"log_every", c.train.log_every},
        {"checkpoint_every", c.train.checkpoint_every}}},
      {"infer",
       {{"crop", c.infer.crop},
        {"five_crops", c.infer.tta.five_crops},
        {"dihedral", c.infer.tta.dihedral},
        {"averaging", averaging_name(c.infer.tta.averaging)}}},
      {"weights", {{"unaltered", c.weights.unaltered}, {"altered", c.weights.altered}}},
      {"ablate",
       {{"gamma_grid", c.ablate.gamma_grid},
        {"jpeg_grid", c.ablate.jpeg_grid},
        {"scale_grid", c.ablate.scale_grid},
        {"contrast_grid", c.ablate.contrast_grid},
        {"crop_grid", c.ablate.crop_grid},
        {"train_sizes", c.ablate.train_sizes}}},
      {"synth",
       {{"classes", c.synth.classes},
        {"train_per_class", c.synth.train_per_class},
        {"val_per_class", c.synth.val_per_class},
        {"train_size", c.synth.train_size},
        {"val_size", c.synth.val_size},
        {"texture_amplitude", c.synth.texture_amplitude},
        {"texture_period", c.synth.texture_period},
        {"noise_sigma", c.synth.noise_sigma},
        {"jpeg_quality", c.synth.jpeg_quality}}},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("workers", c.workers);
  root.get("precision", c.precision);
  root.get("val_per_class", c.val_per_class);
  root.child("curation", [&](Section& s) {
    s.get("software_blacklist", c.curation.software_blacklist);
    s.get("min_jpeg_quality", c.curation.min_jpeg_quality);
    if (const json* w = s.raw("dimension_whitelist")) {
      c.curation.dimension_whitelist.clear();
      try {
        for (auto it = w->begin(); it != w->end(); ++it) {
          auto& dims = c.curation.dimension_whitelist[it.key()];
          for (const auto& pair : *it) dims.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
        }
      } catch (const json::exception& e) {
        Section::fail_at(s.path() + "dimension_whitelist", e.what());
      }
    }
  });
  root.child("eval_set", [&](Section& s) {
    s.get("crop", c.eval_set.crop);
    s.get("altered_fraction", c.eval_set.altered_fraction);
    s.get("gamma_grid", c.eval_set.gamma_grid);
    s.get("jpeg_grid", c.eval_set.jpeg_grid);
    s.get("scale_grid", c.eval_set.scale_grid);
    s.get("contrast_grid", c.eval_set.contrast_grid);
  });
  root.child("train", [&](Section& s) {
    auto& t = c.train;
    s.get("pre_crop", t.pre_crop);
    s.get("train_crop", t.train_crop);
    s.get("batch_size", t.batch_size);
    s.get("iterations", t.iterations);
    s.get("learning_rate", t.learning_rate);
    s.get("lr_decay_every", t.lr_decay_every);
    s.get("lr_decay_factor", t.lr_decay_factor);
    s.get("augment", t.augment);
    s.child("policy", [&](Section& p) { read_policy(p, t.policy); });
    std::string loss = loss_name(t.loss);
    s.get("loss", loss);
    t.loss = parse_loss(loss, s.path() + "loss");
    if (const json* m = s.raw("model")) {
      try {
        // Start from the current values so partial model objects work.
        json merged;
        nn::to_json(merged, t.model);
        if (!m->is_object()) Section::fail_at(s.path() + "model", "expected an object");
        for (auto it = m->begin(); it != m->end(); ++it) {
          if (!merged.contains(it.key())) {
            throw Error(Errc::ConfigError,
                        "unknown config key '" + s.path() + "model." + it.key() + "'");
          }
          merged[it.key()] = *it;
        }
        nn::from_json(merged, t.model);
      } catch (const json::exception& e) {
        Section::fail_at(s.path() + "model", e.what());
      }
    }
    s.get("log_every", t.log_every);
    s.get("checkpoint_every", t.checkpoint_every);
  });
  root.child("infer", [&](Section& s) {
    s.get("crop", c.infer.crop);
    s.get("five_crops", c.infer.tta.five_crops);
    s.get("dihedral", c.infer.tta.dihedral);
    std::string avg = averaging_name(c.infer.tta.averaging);
    s.get("averaging", avg);
    c.infer.tta.averaging = parse_averaging(avg, s.path() + "averaging");
  });
  root.child("weights", [&](Section& s) {
    s.get("unaltered", c.weights.unaltered);
    s.get("altered", c.weights.altered);
  });
  root.child("ablate", [&](Section& s) {
    s.get("gamma_grid", c.ablate.gamma_grid);
    s.get("jpeg_grid", c.ablate.jpeg_grid);
    s.get("scale_grid", c.ablate.scale_grid);
    s.get("contrast_grid", c.ablate.contrast_grid);
    s.get("crop_grid", c.ablate.crop_grid);
    s.get("train_sizes", c.ablate.train_sizes);
  });
  root.child("synth", [&](Section& s) {
    s.get("classes", c.synth.classes);
    s.get("train_per_class", c.synth.train_per_class);
    s.get("val_per_class", c.synth.val_per_class);
    s.get("train_size", c.synth.train_size);
    s.get("val_size", c.synth.val_size);
    s.get("texture_amplitude", c.synth.texture_amplitude);
    s.get("texture_period", c.synth.texture_period);
    s.get("noise_sigma", c.synth.noise_sigma);
    s.get("jpeg_quality", c.synth.jpeg_quality);
  });
  root.finish();
  c.train.seed = c.seed;
  c.train.workers = c.workers;
  c.synth.seed = c.seed;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw Error(Errc::ConfigError, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace camid
