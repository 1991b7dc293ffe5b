#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gdiff/adam.hpp"
#include "gdiff/conditioning.hpp"
#include "gdiff/diffusion.hpp"
#include "gdiff/rng.hpp"
#include "gdiff/tape.hpp"

namespace gdiff {

struct DenoiserConfig {
  int vocab = 16;
  int seq_len = 5;
  int hidden = 512;
  int layers = 2;
  int heads = 8;
  int ffw = 1024;
  double dropout = 0.0;  // accepted for config echo; only 0 is supported
  int epochs = 20;
  int batch = 32;
  double lr = 1e-3;
  uint64_t seed = 17;
  ConditioningConfig cond;

  void validate() const;
};

// One clean training window with its conditioning inputs. The surgeon is
// resolved through the registry by id.
struct TrainingExample {
  TokenSequence x0;
  std::vector<double> vision;
  std::vector<double> language;
};

// Corrupted batch ready for the forward pass.
struct DenoiserBatch {
  std::vector<std::vector<int>> tokens;  // B sequences of x_t
  CondBatch cond;
};

struct TrainLog {
  std::vector<double> epoch_mean_loss;
};

// The conditional reverse model: predicts per-position distributions over the
// clean sequence from a corrupted sequence, the fused context, and the
// timestep. Pre-norm transformer blocks; the output head starts at zero so an
// untrained model is exactly uniform.
class DenoiserModel {
 public:
  DenoiserModel(DenoiserConfig config, SurgeonRegistry registry);
  // Restores a model around checkpointed parameters (shapes already checked).
  DenoiserModel(DenoiserConfig config, SurgeonRegistry registry, ParamMap params);

  DenoiserModel(const DenoiserModel&) = delete;
  DenoiserModel& operator=(const DenoiserModel&) = delete;

  const DenoiserConfig& config() const { return config_; }
  const SurgeonRegistry& registry() const { return registry_; }
  const ConditioningStack& conditioning() const { return cond_stack_; }
  ParamMap& params() { return params_; }
  const ParamMap& params() const { return params_; }
  long long param_count() const;

  // Tape-level forward over a batch; returns the (B*seq_len) x vocab logits.
  Var build_forward(Tape& tape, std::map<std::string, Var>& leaves,
                    const DenoiserBatch& batch) const;

  // Value-level forward for one sequence: seq_len x vocab logits.
  Tensor forward(const std::vector<int>& xt, const ConditioningBundle& bundle) const;
  // Softmax of forward().
  Tensor predict_probs(const std::vector<int>& xt, const ConditioningBundle& bundle) const;

  // Training objective for one window: sample t uniformly, corrupt, and score
  // the model's clean-sequence prediction.
  double loss(const TokenSequence& x0, const ConditioningBundle& bundle,
              const TransitionSchedule& schedule, Rng& rng) const;

  // Minibatch Adam over seeded shuffles of `data`; deterministic given the
  // config seed. Returns the per-epoch mean loss curve.
  TrainLog train(const std::vector<TrainingExample>& data, const TransitionSchedule& schedule);

  // Assembles the CondBatch rows for a set of examples (shared by training,
  // evaluation and sampling paths).
  CondBatch make_cond_batch(const std::vector<const TrainingExample*>& examples,
                            const std::vector<int>& timesteps) const;

  // Adapter for the reverse sampler: per-position clean-token probabilities
  // for a fixed conditioning bundle.
  DenoiserFn as_denoiser_fn(const ConditioningBundle& bundle) const;

 private:
  void init_params();

  DenoiserConfig config_;
  SurgeonRegistry registry_;
  ConditioningStack cond_stack_;
  ParamMap params_;
};

// Per-position top-k token lists, ties broken toward the lower token index.
std::vector<std::vector<int>> top_k_tokens(const Tensor& probs, int k);

}  // namespace gdiff
