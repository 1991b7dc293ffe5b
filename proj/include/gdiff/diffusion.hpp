#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gdiff/rng.hpp"
#include "gdiff/tensor.hpp"

namespace gdiff {

// Fixed-length sequence of vocabulary token indices plus the keys that tie a
// window back to its trial and surgeon.
struct TokenSequence {
  std::vector<int> tokens;
  std::string trial_id;
  int window_start = 0;
  std::string surgeon_id;
};

// The multinomial corruption chain. Step t keeps a token with probability
// 1 - (t+1)/T and flips it uniformly otherwise; every step matrix is
// symmetric and row-stochastic, and products of such matrices stay in the
// c*I + (1-c)/K * ones family, so the cumulative chain is carried as the
// single coefficient per step in cum_coef.
struct TransitionSchedule {
  int vocab = 16;   // K
  int steps = 10;   // T
  std::vector<double> step_stay;  // stay probability per step
  std::vector<double> step_flip;  // per-target flip probability per step
  std::vector<double> cum_coef;   // prod_{s<=t} (step_stay[s] - step_flip[s])

  TransitionSchedule(int vocab_size, int num_steps);

  // Single-step K x K transition matrix Q_t.
  Tensor step_matrix(int t) const;

  // Row x0 of the cumulative matrix: the distribution of x_t given x_0.
  std::vector<double> cumulative_row(int t, int x0_token) const;

  // Entry (x0, xt) of the cumulative matrix.
  double cumulative_entry(int t, int x0_token, int xt_token) const;

  // Distribution of x_{t-1} given x_t and x_0 (t >= 1), normalized.
  std::vector<double> posterior_row(int t, int xt_token, int x0_token) const;

  // Samples x_t from the cumulative marginal, position-independent.
  TokenSequence corrupt(const TokenSequence& x0, int t, Rng& rng) const;

 private:
  void check_step(int t) const;
  void check_token(int token) const;
};

// Per-position clean-sequence distribution supplied by the denoiser: returns
// an L x K matrix of probabilities for input tokens x_t at timestep t.
using DenoiserFn = std::function<Tensor(const std::vector<int>& xt, int t)>;

enum class ReverseInit {
  kUniform,  // x_{T-1} uniform over the vocabulary (default)
  kQSeeded,  // x_{T-1} ~ q(x_{T-1} | x_0); requires the clean sequence
};

// Runs the learned reverse chain from t = T-1 down to the clean sequence.
// Intermediate steps sample x_{t-1} from the x0-marginalized posterior
// mixture; the final emission is the argmax of the t=1 mixture, which keeps
// the output deterministic given the chain state. `x0_for_seed` is consulted
// only in q-seeded mode.
std::vector<int> reverse_sample(const TransitionSchedule& schedule, const DenoiserFn& denoiser,
                                int seq_len, Rng& rng,
                                ReverseInit init = ReverseInit::kUniform,
                                const std::vector<int>* x0_for_seed = nullptr,
                                std::vector<std::vector<int>>* trace = nullptr);

}  // namespace gdiff
