#include "gdiff/conditioning.hpp"

#include <algorithm>
#include <cstdio>

#include "gdiff/errors.hpp"

namespace gdiff {

std::string to_string(SurgeonStrategy s) {
  switch (s) {
    case SurgeonStrategy::kLearnableTable: return "learnable-table";
    case SurgeonStrategy::kExternalIdOnly: return "external-id-only";
    case SurgeonStrategy::kExternalIdGrs: return "external-id-grs";
  }
  return "learnable-table";
}

SurgeonStrategy strategy_from_string(const std::string& s) {
  if (s == "learnable-table") return SurgeonStrategy::kLearnableTable;
  if (s == "external-id-only") return SurgeonStrategy::kExternalIdOnly;
  if (s == "external-id-grs") return SurgeonStrategy::kExternalIdGrs;
  throw ConfigError("unknown surgeon strategy '" + s + "'");
}

void SurgeonProfile::validate() const {
  const bool external = strategy != SurgeonStrategy::kLearnableTable;
  if (external && !external_vector.has_value()) {
    throw ConfigError("surgeon '" + surgeon_id + "': strategy " + to_string(strategy) +
                      " requires an external vector");
  }
  if (!external && external_vector.has_value()) {
    throw ConfigError("surgeon '" + surgeon_id +
                      "': learnable-table strategy forbids an external vector");
  }
}

std::string build_prompt(const SurgeonProfile& profile) {
  if (profile.strategy == SurgeonStrategy::kExternalIdGrs) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", profile.mean_grs);
    return "Surgeon ID: " + profile.surgeon_id + ", average skill score: " + buf;
  }
  return "Surgeon ID: " + profile.surgeon_id;
}

void SurgeonRegistry::add(SurgeonProfile profile) {
  if (index_.count(profile.surgeon_id)) {
    throw ConfigError("duplicate surgeon id '" + profile.surgeon_id + "'");
  }
  profile.validate();
  auto pos = std::lower_bound(profiles_.begin(), profiles_.end(), profile,
                              [](const SurgeonProfile& a, const SurgeonProfile& b) {
                                return a.surgeon_id < b.surgeon_id;
                              });
  profiles_.insert(pos, std::move(profile));
  index_.clear();
  for (int i = 0; i < static_cast<int>(profiles_.size()); ++i) {
    index_[profiles_[static_cast<size_t>(i)].surgeon_id] = i;
  }
}

int SurgeonRegistry::index_of(const std::string& surgeon_id) const {
  auto it = index_.find(surgeon_id);
  if (it == index_.end()) {
    throw LookupError("surgeon id '" + surgeon_id + "' not registered");
  }
  return it->second;
}

namespace {

Tensor scaled_normal(std::vector<int> shape, Rng& rng, double std_dev = 0.02) {
  Tensor t(std::move(shape));
  for (double& x : t.data) x = rng.normal(0.0, std_dev);
  return t;
}

Var leaf_of(const std::map<std::string, Var>& leaves, const std::string& name) {
  auto it = leaves.find(name);
  if (it == leaves.end()) throw ConfigError("missing parameter leaf '" + name + "'");
  return it->second;
}

}  // namespace

ConditioningStack::ConditioningStack(ConditioningConfig config, const SurgeonRegistry* registry)
    : config_(config), registry_(registry) {
  if (config_.hidden <= 0) throw ConfigError("conditioning: hidden size must be positive");
  if (config_.surgeon_path_enabled &&
      config_.strategy == SurgeonStrategy::kLearnableTable &&
      (registry_ == nullptr || registry_->size() == 0)) {
    throw ConfigError("conditioning: learnable-table strategy needs a surgeon registry");
  }
}

void ConditioningStack::init_params(ParamMap& params, Rng& rng) const {
  const int h = config_.hidden;
  params["cond.vision_proj.weight"] = scaled_normal({config_.vision_dim, h}, rng);
  params["cond.vision_proj.bias"] = Tensor::zeros({h});
  params["cond.language_proj.weight"] = scaled_normal({config_.language_dim, h}, rng);
  params["cond.language_proj.bias"] = Tensor::zeros({h});
  if (config_.surgeon_path_enabled) {
    if (config_.strategy == SurgeonStrategy::kLearnableTable) {
      params["cond.surgeon_table"] = scaled_normal({registry_->size(), h}, rng);
    } else {
      params["cond.surgeon_proj.weight"] = scaled_normal({config_.surgeon_dim, h}, rng);
      params["cond.surgeon_proj.bias"] = Tensor::zeros({h});
    }
  }
  params["cond.time_embedding"] = scaled_normal({config_.timesteps, h}, rng);
  if (config_.fusion == FusionMode::kConcat) {
    params["cond.fuse_proj.weight"] = scaled_normal({4 * h, h}, rng);
    params["cond.fuse_proj.bias"] = Tensor::zeros({h});
  }
}

std::vector<std::string> ConditioningStack::param_names() const {
  std::vector<std::string> names = {
      "cond.vision_proj.weight", "cond.vision_proj.bias",
      "cond.language_proj.weight", "cond.language_proj.bias",
  };
  if (config_.surgeon_path_enabled) {
    if (config_.strategy == SurgeonStrategy::kLearnableTable) {
      names.push_back("cond.surgeon_table");
    } else {
      names.push_back("cond.surgeon_proj.weight");
      names.push_back("cond.surgeon_proj.bias");
    }
  }
  names.push_back("cond.time_embedding");
  if (config_.fusion == FusionMode::kConcat) {
    names.push_back("cond.fuse_proj.weight");
    names.push_back("cond.fuse_proj.bias");
  }
  return names;
}

Var ConditioningStack::build_context(Tape& tape, const std::map<std::string, Var>& leaves,
                                     const CondBatch& batch) const {
  const int b = batch.vision.rows();
  const int h = config_.hidden;
  if (batch.vision.cols() != config_.vision_dim) {
    throw ConfigError("conditioning: vision batch width " +
                      std::to_string(batch.vision.cols()) + " does not match configured " +
                      std::to_string(config_.vision_dim));
  }
  if (batch.language.cols() != config_.language_dim || batch.language.rows() != b) {
    throw ConfigError("conditioning: language batch shape " + batch.language.shape_str() +
                      " inconsistent with vision batch");
  }
  if (static_cast<int>(batch.timesteps.size()) != b) {
    throw ConfigError("conditioning: timestep count does not match batch size");
  }

  Var vision_h = ops::add_row_broadcast(
      ops::matmul(tape.leaf(batch.vision), leaf_of(leaves, "cond.vision_proj.weight")),
      leaf_of(leaves, "cond.vision_proj.bias"));
  Var language_h = ops::add_row_broadcast(
      ops::matmul(tape.leaf(batch.language), leaf_of(leaves, "cond.language_proj.weight")),
      leaf_of(leaves, "cond.language_proj.bias"));

  Var surgeon_h;
  if (!config_.surgeon_path_enabled) {
    surgeon_h = tape.leaf(Tensor::zeros({b, h}));
  } else if (config_.strategy == SurgeonStrategy::kLearnableTable) {
    if (static_cast<int>(batch.surgeon_rows.size()) != b) {
      throw ConfigError("conditioning: surgeon row count does not match batch size");
    }
    surgeon_h = ops::gather_rows(leaf_of(leaves, "cond.surgeon_table"), batch.surgeon_rows);
  } else {
    if (batch.surgeon_ext.rows() != b || batch.surgeon_ext.cols() != config_.surgeon_dim) {
      throw ConfigError("conditioning: external surgeon batch shape " +
                        batch.surgeon_ext.shape_str() + " does not match configured " +
                        std::to_string(config_.surgeon_dim));
    }
    surgeon_h = ops::add_row_broadcast(
        ops::matmul(tape.leaf(batch.surgeon_ext), leaf_of(leaves, "cond.surgeon_proj.weight")),
        leaf_of(leaves, "cond.surgeon_proj.bias"));
  }

  Var time_h = ops::gather_rows(leaf_of(leaves, "cond.time_embedding"), batch.timesteps);

  if (config_.fusion == FusionMode::kConcat) {
    Var cat = ops::concat_cols({vision_h, language_h, surgeon_h, time_h});
    return ops::add_row_broadcast(
        ops::matmul(cat, leaf_of(leaves, "cond.fuse_proj.weight")),
        leaf_of(leaves, "cond.fuse_proj.bias"));
  }
  return ops::add(ops::add(vision_h, language_h), ops::add(surgeon_h, time_h));
}

std::vector<double> ConditioningStack::surgeon_embedding(const ParamMap& params,
                                                         const SurgeonProfile& profile) const {
  profile.validate();
  if (!config_.surgeon_path_enabled) {
    return std::vector<double>(static_cast<size_t>(config_.hidden), 0.0);
  }
  if (config_.strategy == SurgeonStrategy::kLearnableTable) {
    const Tensor& table = params.at("cond.surgeon_table");
    const int row = registry_->index_of(profile.surgeon_id);
    const int h = table.cols();
    std::vector<double> out(static_cast<size_t>(h));
    for (int j = 0; j < h; ++j) out[static_cast<size_t>(j)] = table.at(row, j);
    return out;
  }
  const Tensor y = project_vector(*profile.external_vector,
                                  params.at("cond.surgeon_proj.weight"),
                                  params.at("cond.surgeon_proj.bias"));
  return y.data;
}

Tensor project_vector(const std::vector<double>& v, const Tensor& weight, const Tensor& bias) {
  if (weight.ndim() != 2 || static_cast<int>(v.size()) != weight.shape[0]) {
    throw ConfigError("project: vector of length " + std::to_string(v.size()) +
                      " does not match projection " + weight.shape_str());
  }
  const int d = weight.shape[0], h = weight.shape[1];
  if (bias.numel() != h) {
    throw ConfigError("project: bias length " + std::to_string(bias.numel()) +
                      " does not match projection " + weight.shape_str());
  }
  Tensor out({h});
  for (int j = 0; j < h; ++j) {
    double acc = bias[j];
    for (int i = 0; i < d; ++i) acc += v[static_cast<size_t>(i)] * weight.at(i, j);
    out[j] = acc;
  }
  out.ensure_finite("project");
  return out;
}

Tensor fuse(const Tensor& vision_h, const Tensor& language_h, const Tensor& surgeon_h,
            const Tensor& time_h) {
  if (!vision_h.same_shape(language_h) || !vision_h.same_shape(surgeon_h) ||
      !vision_h.same_shape(time_h)) {
    throw DimensionError("fuse: component shapes differ");
  }
  Tensor out(vision_h.shape);
  for (int i = 0; i < out.numel(); ++i) {
    out[i] = vision_h[i] + language_h[i] + surgeon_h[i] + time_h[i];
  }
  return out;
}

}  // namespace gdiff
