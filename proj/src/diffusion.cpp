#include "gdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "gdiff/errors.hpp"

namespace gdiff {

namespace {
// Entries in [-1e-15, 0) are rounding noise from the cumulative product.
double clamp_prob(double p) { return (p < 0.0 && p >= -1e-15) ? 0.0 : p; }
}  // namespace

TransitionSchedule::TransitionSchedule(int vocab_size, int num_steps)
    : vocab(vocab_size), steps(num_steps) {
  if (vocab < 2) throw ConfigError("schedule: vocabulary size must be at least 2");
  if (steps < 1) throw ConfigError("schedule: need at least one timestep");
  step_stay.resize(static_cast<size_t>(steps));
  step_flip.resize(static_cast<size_t>(steps));
  cum_coef.resize(static_cast<size_t>(steps));
  double prod = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double stay = 1.0 - static_cast<double>(t + 1) / steps;
    const double flip = (1.0 - stay) / (vocab - 1);
    step_stay[static_cast<size_t>(t)] = stay;
    step_flip[static_cast<size_t>(t)] = flip;
    prod *= stay - flip;
    cum_coef[static_cast<size_t>(t)] = prod;
  }
}

void TransitionSchedule::check_step(int t) const {
  if (t < 0 || t >= steps) {
    throw IndexError("timestep " + std::to_string(t) + " outside [0, " +
                     std::to_string(steps) + ")");
  }
}

void TransitionSchedule::check_token(int token) const {
  if (token < 0 || token >= vocab) {
    throw IndexError("token " + std::to_string(token) + " outside vocabulary [0, " +
                     std::to_string(vocab) + ")");
  }
}

Tensor TransitionSchedule::step_matrix(int t) const {
  check_step(t);
  const double stay = step_stay[static_cast<size_t>(t)];
  const double flip = step_flip[static_cast<size_t>(t)];
  Tensor q({vocab, vocab});
  for (int i = 0; i < vocab; ++i) {
    for (int j = 0; j < vocab; ++j) q.at(i, j) = i == j ? stay : flip;
  }
  return q;
}

std::vector<double> TransitionSchedule::cumulative_row(int t, int x0_token) const {
  check_step(t);
  check_token(x0_token);
  const double c = cum_coef[static_cast<size_t>(t)];
  const double off = (1.0 - c) / vocab;
  std::vector<double> row(static_cast<size_t>(vocab), clamp_prob(off));
  row[static_cast<size_t>(x0_token)] = clamp_prob(c + off);
  return row;
}

double TransitionSchedule::cumulative_entry(int t, int x0_token, int xt_token) const {
  check_step(t);
  check_token(x0_token);
  check_token(xt_token);
  const double c = cum_coef[static_cast<size_t>(t)];
  const double off = (1.0 - c) / vocab;
  return clamp_prob(x0_token == xt_token ? c + off : off);
}

std::vector<double> TransitionSchedule::posterior_row(int t, int xt_token, int x0_token) const {
  if (t < 1) {
    throw IndexError("posterior: t must be at least 1, got " + std::to_string(t));
  }
  check_step(t);
  check_token(xt_token);
  check_token(x0_token);
  const double stay = step_stay[static_cast<size_t>(t)];
  const double flip = step_flip[static_cast<size_t>(t)];
  std::vector<double> row(static_cast<size_t>(vocab));
  double total = 0.0;
  for (int j = 0; j < vocab; ++j) {
    const double step_term = j == xt_token ? stay : flip;
    const double cum_term = cumulative_entry(t - 1, x0_token, j);
    row[static_cast<size_t>(j)] = step_term * cum_term;
    total += row[static_cast<size_t>(j)];
  }
  for (double& p : row) p /= total;
  return row;
}

TokenSequence TransitionSchedule::corrupt(const TokenSequence& x0, int t, Rng& rng) const {
  check_step(t);
  TokenSequence out = x0;
  for (size_t pos = 0; pos < x0.tokens.size(); ++pos) {
    const std::vector<double> row = cumulative_row(t, x0.tokens[pos]);
    out.tokens[pos] = rng.categorical(row);
  }
  return out;
}

std::vector<int> reverse_sample(const TransitionSchedule& schedule, const DenoiserFn& denoiser,
                                int seq_len, Rng& rng, ReverseInit init,
                                const std::vector<int>* x0_for_seed,
                                std::vector<std::vector<int>>* trace) {
  const int k = schedule.vocab;
  const int t_top = schedule.steps - 1;
  std::vector<int> x(static_cast<size_t>(seq_len));
  if (init == ReverseInit::kQSeeded) {
    if (x0_for_seed == nullptr || static_cast<int>(x0_for_seed->size()) != seq_len) {
      throw ConfigError("reverse_sample: q-seeded init requires a clean sequence of length " +
                        std::to_string(seq_len));
    }
    for (int pos = 0; pos < seq_len; ++pos) {
      const std::vector<double> row =
          schedule.cumulative_row(t_top, (*x0_for_seed)[static_cast<size_t>(pos)]);
      x[static_cast<size_t>(pos)] = rng.categorical(row);
    }
  } else {
    for (int pos = 0; pos < seq_len; ++pos) {
      x[static_cast<size_t>(pos)] = rng.uniform_int(0, k - 1);
    }
  }
  if (trace) trace->push_back(x);

  auto run_denoiser = [&](int t) {
    Tensor probs = denoiser(x, t);
    if (probs.ndim() != 2 || probs.shape[0] != seq_len || probs.shape[1] != k) {
      throw ConfigError("reverse_sample: denoiser returned shape " + probs.shape_str() +
                        ", expected [" + std::to_string(seq_len) + "x" + std::to_string(k) +
                        "]");
    }
    return probs;
  };

  auto mixture = [&](const Tensor& probs, int pos, int t) {
    // p(x_{t-1} = j | x_t) = sum_i p_hat(x_0 = i) q(x_{t-1} = j | x_t, x_0 = i)
    std::vector<double> mix(static_cast<size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
      const double w = probs.at(pos, i);
      if (w == 0.0) continue;
      const std::vector<double> post = schedule.posterior_row(t, x[static_cast<size_t>(pos)], i);
      for (int j = 0; j < k; ++j) mix[static_cast<size_t>(j)] += w * post[static_cast<size_t>(j)];
    }
    return mix;
  };

  for (int t = t_top; t >= 2; --t) {
    const Tensor probs = run_denoiser(t);
    for (int pos = 0; pos < seq_len; ++pos) {
      const std::vector<double> mix = mixture(probs, pos, t);
      x[static_cast<size_t>(pos)] = rng.categorical(mix);
    }
    if (trace) trace->push_back(x);
  }

  // Final emission: the clean-sequence estimate is read off deterministically
  // (ties broken toward the lower token index).
  if (schedule.steps >= 2) {
    const Tensor probs = run_denoiser(1);
    for (int pos = 0; pos < seq_len; ++pos) {
      const std::vector<double> mix = mixture(probs, pos, 1);
      int best = 0;
      for (int j = 1; j < k; ++j) {
        if (mix[static_cast<size_t>(j)] > mix[static_cast<size_t>(best)]) best = j;
      }
      x[static_cast<size_t>(pos)] = best;
    }
  } else {
    const Tensor probs = run_denoiser(0);
    for (int pos = 0; pos < seq_len; ++pos) {
      int best = 0;
      for (int j = 1; j < k; ++j) {
        if (probs.at(pos, j) > probs.at(pos, best)) best = j;
      }
      x[static_cast<size_t>(pos)] = best;
    }
  }
  if (trace) trace->push_back(x);
  return x;
}

}  // namespace gdiff
