#include "gdiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gdiff/errors.hpp"
#include "gdiff/kernels.hpp"

namespace gdiff {

namespace {
// Substream tags for deriving independent generators from the config seed.
constexpr uint64_t kInitStream = 0x11;
constexpr uint64_t kShuffleStream = 0xA000;
constexpr uint64_t kCorruptStream = 0xB000;

Tensor scaled_normal(std::vector<int> shape, Rng& rng, double std_dev = 0.02) {
  Tensor t(std::move(shape));
  for (double& x : t.data) x = rng.normal(0.0, std_dev);
  return t;
}
}  // namespace

void DenoiserConfig::validate() const {
  if (vocab < 2) throw ConfigError("config: vocab must be at least 2");
  if (seq_len < 1) throw ConfigError("config: seq_len must be positive");
  if (hidden < 1 || layers < 1 || heads < 1 || ffw < 1) {
    throw ConfigError("config: hidden/layers/heads/ffw must be positive");
  }
  if (hidden % heads != 0) {
    throw ConfigError("config: hidden " + std::to_string(hidden) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (dropout != 0.0) throw ConfigError("config: only dropout=0 is supported");
  if (epochs < 1 || batch < 1) throw ConfigError("config: epochs and batch must be positive");
  if (lr <= 0.0) throw ConfigError("config: learning rate must be positive");
  if (cond.hidden != hidden) throw ConfigError("config: conditioning hidden size mismatch");
  if (cond.timesteps < 1) throw ConfigError("config: schedule must have timesteps");
}

DenoiserModel::DenoiserModel(DenoiserConfig config, SurgeonRegistry registry)
    : config_(config), registry_(std::move(registry)), cond_stack_(config.cond, &registry_) {
  config_.validate();
  init_params();
}

DenoiserModel::DenoiserModel(DenoiserConfig config, SurgeonRegistry registry, ParamMap params)
    : config_(config),
      registry_(std::move(registry)),
      cond_stack_(config.cond, &registry_),
      params_(std::move(params)) {
  config_.validate();
}

void DenoiserModel::init_params() {
  Rng rng(mix_seed(config_.seed, kInitStream));
  const int h = config_.hidden;
  params_["token_embedding"] = scaled_normal({config_.vocab, h}, rng);
  params_["position_embedding"] = scaled_normal({config_.seq_len, h}, rng);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    params_[p + "ln1.gain"] = Tensor::full({h}, 1.0);
    params_[p + "ln1.bias"] = Tensor::zeros({h});
    params_[p + "attn.wq"] = scaled_normal({h, h}, rng);
    params_[p + "attn.bq"] = Tensor::zeros({h});
    params_[p + "attn.wk"] = scaled_normal({h, h}, rng);
    params_[p + "attn.bk"] = Tensor::zeros({h});
    params_[p + "attn.wv"] = scaled_normal({h, h}, rng);
    params_[p + "attn.bv"] = Tensor::zeros({h});
    params_[p + "attn.wo"] = scaled_normal({h, h}, rng);
    params_[p + "attn.bo"] = Tensor::zeros({h});
    params_[p + "ln2.gain"] = Tensor::full({h}, 1.0);
    params_[p + "ln2.bias"] = Tensor::zeros({h});
    params_[p + "ffw.w1"] = scaled_normal({h, config_.ffw}, rng);
    params_[p + "ffw.b1"] = Tensor::zeros({config_.ffw});
    params_[p + "ffw.w2"] = scaled_normal({config_.ffw, h}, rng);
    params_[p + "ffw.b2"] = Tensor::zeros({h});
  }
  params_["final_ln.gain"] = Tensor::full({h}, 1.0);
  params_["final_ln.bias"] = Tensor::zeros({h});
  // Zero head: logits are exactly zero before the first update, so the
  // initial loss equals ln(vocab).
  params_["head.weight"] = Tensor::zeros({h, config_.vocab});
  params_["head.bias"] = Tensor::zeros({config_.vocab});
  cond_stack_.init_params(params_, rng);
}

long long DenoiserModel::param_count() const {
  long long n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

Var DenoiserModel::build_forward(Tape& tape, std::map<std::string, Var>& leaves,
                                 const DenoiserBatch& batch) const {
  const int b = static_cast<int>(batch.tokens.size());
  const int l = config_.seq_len;
  if (b == 0) throw ConfigError("forward: empty batch");
  std::vector<int> flat;
  flat.reserve(static_cast<size_t>(b) * l);
  for (const auto& seq : batch.tokens) {
    if (static_cast<int>(seq.size()) != l) {
      throw ConfigError("forward: sequence length " + std::to_string(seq.size()) +
                        " does not match configured " + std::to_string(l));
    }
    for (int tok : seq) {
      if (tok < 0 || tok >= config_.vocab) {
        throw IndexError("forward: token " + std::to_string(tok) + " outside vocabulary");
      }
      flat.push_back(tok);
    }
  }
  for (int t : batch.cond.timesteps) {
    if (t < 0 || t >= config_.cond.timesteps) {
      throw IndexError("forward: timestep " + std::to_string(t) + " outside schedule");
    }
  }

  if (leaves.empty()) {
    for (const auto& [name, tensor] : params_) leaves.emplace(name, tape.leaf(tensor));
  }
  auto leaf = [&](const std::string& name) -> Var {
    auto it = leaves.find(name);
    if (it == leaves.end()) throw ConfigError("forward: missing parameter '" + name + "'");
    return it->second;
  };

  Var x = ops::gather_rows(leaf("token_embedding"), flat);
  x = ops::add_positional(x, leaf("position_embedding"));
  Var ctx = cond_stack_.build_context(tape, leaves, batch.cond);
  x = ops::add_segment_broadcast(x, ctx, l);

  for (int layer = 0; layer < config_.layers; ++layer) {
    const std::string p = "layers." + std::to_string(layer) + ".";
    Var n1 = ops::add_row_broadcast(
        ops::mul_row_broadcast(ops::layer_norm_rows(x), leaf(p + "ln1.gain")),
        leaf(p + "ln1.bias"));
    Var q = ops::add_row_broadcast(ops::matmul(n1, leaf(p + "attn.wq")), leaf(p + "attn.bq"));
    Var k = ops::add_row_broadcast(ops::matmul(n1, leaf(p + "attn.wk")), leaf(p + "attn.bk"));
    Var v = ops::add_row_broadcast(ops::matmul(n1, leaf(p + "attn.wv")), leaf(p + "attn.bv"));
    Var attn = ops::self_attention(q, k, v, l, config_.heads);
    Var o = ops::add_row_broadcast(ops::matmul(attn, leaf(p + "attn.wo")), leaf(p + "attn.bo"));
    x = ops::add(x, o);

    Var n2 = ops::add_row_broadcast(
        ops::mul_row_broadcast(ops::layer_norm_rows(x), leaf(p + "ln2.gain")),
        leaf(p + "ln2.bias"));
    Var f1 = ops::relu(
        ops::add_row_broadcast(ops::matmul(n2, leaf(p + "ffw.w1")), leaf(p + "ffw.b1")));
    Var f2 = ops::add_row_broadcast(ops::matmul(f1, leaf(p + "ffw.w2")), leaf(p + "ffw.b2"));
    x = ops::add(x, f2);
  }

  Var nf = ops::add_row_broadcast(
      ops::mul_row_broadcast(ops::layer_norm_rows(x), leaf("final_ln.gain")),
      leaf("final_ln.bias"));
  return ops::add_row_broadcast(ops::matmul(nf, leaf("head.weight")), leaf("head.bias"));
}

CondBatch DenoiserModel::make_cond_batch(const std::vector<const TrainingExample*>& examples,
                                         const std::vector<int>& timesteps) const {
  const int b = static_cast<int>(examples.size());
  CondBatch cond;
  cond.vision = Tensor({b, config_.cond.vision_dim});
  cond.language = Tensor({b, config_.cond.language_dim});
  cond.timesteps = timesteps;
  const bool external = config_.cond.strategy != SurgeonStrategy::kLearnableTable;
  if (config_.cond.surgeon_path_enabled && external) {
    cond.surgeon_ext = Tensor({b, config_.cond.surgeon_dim});
  }
  for (int i = 0; i < b; ++i) {
    const TrainingExample& ex = *examples[static_cast<size_t>(i)];
    if (static_cast<int>(ex.vision.size()) != config_.cond.vision_dim) {
      throw ConfigError("window " + ex.x0.trial_id + ":" + std::to_string(ex.x0.window_start) +
                        ": vision vector length " + std::to_string(ex.vision.size()) +
                        " does not match configured " +
                        std::to_string(config_.cond.vision_dim));
    }
    if (static_cast<int>(ex.language.size()) != config_.cond.language_dim) {
      throw ConfigError("window " + ex.x0.trial_id + ":" + std::to_string(ex.x0.window_start) +
                        ": language vector length " + std::to_string(ex.language.size()) +
                        " does not match configured " +
                        std::to_string(config_.cond.language_dim));
    }
    std::copy(ex.vision.begin(), ex.vision.end(),
              cond.vision.data.begin() + static_cast<size_t>(i) * config_.cond.vision_dim);
    std::copy(ex.language.begin(), ex.language.end(),
              cond.language.data.begin() + static_cast<size_t>(i) * config_.cond.language_dim);
    if (config_.cond.surgeon_path_enabled) {
      const SurgeonProfile& profile = registry_.by_id(ex.x0.surgeon_id);
      if (external) {
        const auto& vec = profile.external_vector;
        if (!vec || static_cast<int>(vec->size()) != config_.cond.surgeon_dim) {
          throw ConfigError("surgeon '" + profile.surgeon_id +
                            "': external vector missing or of wrong length");
        }
        std::copy(vec->begin(), vec->end(),
                  cond.surgeon_ext.data.begin() + static_cast<size_t>(i) * config_.cond.surgeon_dim);
      } else {
        cond.surgeon_rows.push_back(registry_.index_of(ex.x0.surgeon_id));
      }
    }
  }
  return cond;
}

Tensor DenoiserModel::forward(const std::vector<int>& xt, const ConditioningBundle& bundle) const {
  TrainingExample ex;
  ex.x0.tokens = xt;  // tokens only carry the input; surgeon comes from the bundle
  ex.x0.surgeon_id = bundle.surgeon.surgeon_id;
  ex.vision = bundle.vision;
  ex.language = bundle.language;
  DenoiserBatch batch;
  batch.tokens = {xt};
  batch.cond = make_cond_batch({&ex}, {bundle.timestep});
  Tape tape;
  std::map<std::string, Var> leaves;
  Var logits = build_forward(tape, leaves, batch);
  Tensor out({config_.seq_len, config_.vocab});
  out.data = logits.val().data;
  return out;
}

Tensor DenoiserModel::predict_probs(const std::vector<int>& xt,
                                    const ConditioningBundle& bundle) const {
  Tensor logits = forward(xt, bundle);
  Tensor probs(logits.shape);
  kernels::softmax_rows(logits.rows(), logits.cols(), logits.data.data(), probs.data.data());
  return probs;
}

double DenoiserModel::loss(const TokenSequence& x0, const ConditioningBundle& bundle,
                           const TransitionSchedule& schedule, Rng& rng) const {
  const int t = rng.uniform_int(0, schedule.steps - 1);
  const TokenSequence xt = schedule.corrupt(x0, t, rng);
  ConditioningBundle b = bundle;
  b.timestep = t;
  TrainingExample ex;
  ex.x0 = x0;
  ex.x0.surgeon_id = bundle.surgeon.surgeon_id;
  ex.vision = bundle.vision;
  ex.language = bundle.language;
  DenoiserBatch batch;
  batch.tokens = {xt.tokens};
  batch.cond = make_cond_batch({&ex}, {t});
  Tape tape;
  std::map<std::string, Var> leaves;
  Var logits = build_forward(tape, leaves, batch);
  Var l = ops::softmax_cross_entropy(logits, x0.tokens);
  return l.val()[0];
}

TrainLog DenoiserModel::train(const std::vector<TrainingExample>& data,
                              const TransitionSchedule& schedule) {
  if (data.empty()) throw ConfigError("train: empty dataset");
  if (schedule.vocab != config_.vocab || schedule.steps != config_.cond.timesteps) {
    throw ConfigError("train: schedule (K=" + std::to_string(schedule.vocab) +
                      ", T=" + std::to_string(schedule.steps) +
                      ") inconsistent with model config");
  }
  AdamState opt;
  opt.hyper.lr = config_.lr;
  TrainLog log;
  const int n = static_cast<int>(data.size());
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(config_.seed, kShuffleStream + static_cast<uint64_t>(epoch)));
    Rng corrupt_rng(mix_seed(config_.seed, kCorruptStream + static_cast<uint64_t>(epoch)));
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    long positions = 0;
    for (int start = 0; start < n; start += config_.batch) {
      const int b = std::min(config_.batch, n - start);
      std::vector<const TrainingExample*> examples;
      std::vector<int> timesteps;
      DenoiserBatch batch;
      std::vector<int> targets;
      for (int i = 0; i < b; ++i) {
        const TrainingExample& ex = data[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
        const int t = corrupt_rng.uniform_int(0, schedule.steps - 1);
        const TokenSequence xt = schedule.corrupt(ex.x0, t, corrupt_rng);
        examples.push_back(&ex);
        timesteps.push_back(t);
        batch.tokens.push_back(xt.tokens);
        targets.insert(targets.end(), ex.x0.tokens.begin(), ex.x0.tokens.end());
      }
      batch.cond = make_cond_batch(examples, timesteps);

      Tape tape;
      std::map<std::string, Var> leaves;
      Var logits = build_forward(tape, leaves, batch);
      Var loss_var = ops::softmax_cross_entropy(logits, targets);
      tape.backward(loss_var);

      ParamMap grads;
      for (const auto& [name, leaf] : leaves) grads.emplace(name, leaf.grad());
      adam_step(params_, grads, opt);

      loss_sum += loss_var.val()[0] * static_cast<double>(b) * config_.seq_len;
      positions += static_cast<long>(b) * config_.seq_len;
    }
    log.epoch_mean_loss.push_back(loss_sum / static_cast<double>(positions));
  }
  return log;
}

DenoiserFn DenoiserModel::as_denoiser_fn(const ConditioningBundle& bundle) const {
  return [this, bundle](const std::vector<int>& xt, int t) {
    ConditioningBundle b = bundle;
    b.timestep = t;
    return predict_probs(xt, b);
  };
}

std::vector<std::vector<int>> top_k_tokens(const Tensor& probs, int k) {
  if (probs.ndim() != 2) throw DimensionError("top_k: expected rank-2 probabilities");
  const int rows = probs.shape[0], vocab = probs.shape[1];
  if (k < 1 || k > vocab) {
    throw IndexError("top_k: k=" + std::to_string(k) + " outside [1, " +
                     std::to_string(vocab) + "]");
  }
  std::vector<std::vector<int>> out(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    std::vector<int> idx(static_cast<size_t>(vocab));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b2) { return probs.at(r, a) > probs.at(r, b2); });
    idx.resize(static_cast<size_t>(k));
    out[static_cast<size_t>(r)] = std::move(idx);
  }
  return out;
}

}  // namespace gdiff
