#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gdiff/adam.hpp"
#include "gdiff/rng.hpp"
#include "gdiff/tape.hpp"
#include "gdiff/tensor.hpp"

namespace gdiff {

enum class SurgeonStrategy {
  kLearnableTable,   // trainable row per surgeon
  kExternalIdOnly,   // frozen vector from an id-only prompt, learnable projection
  kExternalIdGrs,    // frozen vector from an id+skill prompt, learnable projection
};

enum class FusionMode {
  kSum,     // elementwise sum of the four projected vectors (default)
  kConcat,  // concatenation followed by a learnable projection
};

std::string to_string(SurgeonStrategy s);
SurgeonStrategy strategy_from_string(const std::string& s);

struct SurgeonProfile {
  std::string surgeon_id;
  double mean_grs = 0.0;
  SurgeonStrategy strategy = SurgeonStrategy::kLearnableTable;
  std::optional<std::vector<double>> external_vector;

  // Enforces the strategy/vector pairing rules.
  void validate() const;
};

// The prompt string an external sentence encoder would have been fed to
// produce the surgeon vector. Kept for provenance and as the key convention
// of external-vector files; no encoder is ever invoked here.
std::string build_prompt(const SurgeonProfile& profile);

// Immutable, id-sorted collection of surgeon profiles. Row order defines the
// learnable-table layout and the embedding export order.
class SurgeonRegistry {
 public:
  void add(SurgeonProfile profile);
  int index_of(const std::string& surgeon_id) const;  // LookupError if absent
  const SurgeonProfile& at(int index) const { return profiles_[static_cast<size_t>(index)]; }
  const SurgeonProfile& by_id(const std::string& surgeon_id) const {
    return at(index_of(surgeon_id));
  }
  int size() const { return static_cast<int>(profiles_.size()); }
  auto begin() const { return profiles_.begin(); }
  auto end() const { return profiles_.end(); }

 private:
  std::vector<SurgeonProfile> profiles_;
  std::map<std::string, int> index_;
};

struct ConditioningConfig {
  SurgeonStrategy strategy = SurgeonStrategy::kLearnableTable;
  FusionMode fusion = FusionMode::kSum;
  int vision_dim = 1000;
  int language_dim = 768;
  int surgeon_dim = 384;  // external-vector width
  int hidden = 512;
  int timesteps = 10;
  bool surgeon_path_enabled = true;  // false = surgeon-agnostic ablation
};

// Per-sequence conditioning inputs for one training/inference batch. For the
// learnable-table strategy surgeon_rows holds registry indices; for external
// strategies surgeon_ext holds the raw vectors, one row per sequence.
struct CondBatch {
  Tensor vision;               // B x vision_dim
  Tensor language;             // B x language_dim
  Tensor surgeon_ext;          // B x surgeon_dim (external strategies)
  std::vector<int> surgeon_rows;  // B (learnable-table strategy)
  std::vector<int> timesteps;     // B
};

// Raw inputs for a single sequence; spelled out to mirror what gets fused.
struct ConditioningBundle {
  std::vector<double> vision;
  std::vector<double> language;
  SurgeonProfile surgeon;
  int timestep = 0;
};

// Owns no tensors itself: parameters live in the model's ParamMap under the
// names this class registers, so the optimizer and checkpoints see one flat
// collection.
class ConditioningStack {
 public:
  ConditioningStack(ConditioningConfig config, const SurgeonRegistry* registry);

  const ConditioningConfig& config() const { return config_; }

  // Creates this stack's parameters (projections, tables) in `params`.
  void init_params(ParamMap& params, Rng& rng) const;
  std::vector<std::string> param_names() const;

  // Builds the fused B x hidden context on the tape. `leaves` maps parameter
  // names to their leaf vars for the current step.
  Var build_context(Tape& tape, const std::map<std::string, Var>& leaves,
                    const CondBatch& batch) const;

  // The post-projection surgeon embedding actually consumed by fusion, as a
  // plain value; the vector exported for analysis and audited for leakage.
  std::vector<double> surgeon_embedding(const ParamMap& params,
                                        const SurgeonProfile& profile) const;

 private:
  ConditioningConfig config_;
  const SurgeonRegistry* registry_;
};

// Affine map of a single vector into the hidden space: y = v * W + b.
Tensor project_vector(const std::vector<double>& v, const Tensor& weight, const Tensor& bias);

// Elementwise-sum fusion of four equal-length hidden vectors.
Tensor fuse(const Tensor& vision_h, const Tensor& language_h, const Tensor& surgeon_h,
            const Tensor& time_h);

}  // namespace gdiff
