#include "gdiff/rng.hpp"

#include <cmath>

#include "gdiff/errors.hpp"

namespace gdiff {

uint64_t mix_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // u1 in (0, 1] so the log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int Rng::uniform_int(int lo, int hi) {
  if (hi < lo) throw IndexError("uniform_int: empty range");
  uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
  int v = lo + static_cast<int>(static_cast<uint64_t>(uniform() * static_cast<double>(span)));
  return v > hi ? hi : v;
}

int Rng::categorical(const double* weights, int k) {
  if (k <= 0) throw IndexError("categorical: empty weight vector");
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    double w = weights[i];
    if (w < 0.0) {
      // Tolerate negative rounding noise only.
      if (w < -1e-12) throw IndexError("categorical: negative weight");
      w = 0.0;
    }
    total += w;
  }
  if (total <= 0.0) throw IndexError("categorical: all weights zero");
  double u = uniform() * total;
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    acc += weights[i] > 0.0 ? weights[i] : 0.0;
    if (u < acc) return i;
  }
  return k - 1;
}

}  // namespace gdiff
