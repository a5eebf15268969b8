#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "inkuba/model.hpp"

namespace test_util {

inline inkuba::ModelConfig toy_config() {
  inkuba::ModelConfig cfg;
  cfg.hidden_size = 8;
  cfg.intermediate_size = 12;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 8;
  cfg.attention_tile = 3;
  return cfg;
}

// Params with O(1) activations everywhere, so every gradient path carries
// signal well above finite-difference noise.
inline inkuba::ParamStore<double> lively_params(const inkuba::ModelConfig& cfg, uint64_t seed) {
  auto p = inkuba::init_params<double>(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& t : p.tensors()) {
    if (t.shape.size() == 1) {
      for (auto& x : t.data) x = 1.0 + n(rng);
    } else {
      for (auto& x : t.data) x *= 15.0;
    }
  }
  return p;
}

inline inkuba::TokenBatch random_batch(const inkuba::ModelConfig& cfg, int batch, int seq,
                                       uint64_t seed, bool with_padding) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> id(0, cfg.vocab_size - 1);
  inkuba::TokenBatch b;
  b.batch = batch;
  b.seq = seq;
  for (int i = 0; i < batch * seq; ++i) b.ids.push_back(id(rng));
  if (with_padding) {
    b.loss_mask.assign(static_cast<size_t>(batch) * seq, 1);
    // Last row ends in two pad positions.
    for (int t = seq - 2; t < seq; ++t) {
      b.loss_mask[static_cast<size_t>(batch - 1) * seq + t] = 0;
      b.ids[static_cast<size_t>(batch - 1) * seq + t] = inkuba::kPadId;
    }
  }
  return b;
}

struct GradCheckResult {
  double worst_rel_error = 0;
  std::string worst_tensor;
  size_t coordinates = 0;
};

// |a - n| / max(|a|, |n|, 1e-6) over `per_tensor` random coordinates of each
// tensor, n from central differences with step h.
inline GradCheckResult grad_check(const inkuba::ModelConfig& cfg,
                                  const inkuba::ParamStore<double>& params,
                                  const inkuba::TokenBatch& batch, int per_tensor, uint64_t seed,
                                  double h = 1e-5) {
  const auto analytic = inkuba::loss_and_grads<double>(cfg, params, batch).grads;
  std::mt19937_64 rng(seed);
  GradCheckResult r;
  auto probe = params;
  for (size_t ti = 0; ti < params.tensors().size(); ++ti) {
    const auto& t = params.tensors()[ti];
    std::uniform_int_distribution<size_t> pick(0, t.data.size() - 1);
    const int count = std::min<int>(per_tensor, static_cast<int>(t.data.size()));
    for (int c = 0; c < count; ++c) {
      const size_t i = pick(rng);
      auto& x = probe.tensors()[ti].data[i];
      const double orig = x;
      x = orig + h;
      const double lp = inkuba::loss_only<double>(cfg, probe, batch);
      x = orig - h;
      const double lm = inkuba::loss_only<double>(cfg, probe, batch);
      x = orig;
      const double numeric = (lp - lm) / (2 * h);
      const double a = analytic.tensors()[ti].data[i];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      if (rel > r.worst_rel_error) {
        r.worst_rel_error = rel;
        r.worst_tensor = t.name;
      }
      ++r.coordinates;
    }
  }
  return r;
}

}  // namespace test_util
