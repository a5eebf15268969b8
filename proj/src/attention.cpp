#include "inkuba/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "inkuba/error.hpp"

namespace inkuba {

template <typename T>
void AttentionInputs<T>::validate() const {
  if (n_heads < 1 || seq < 1 || head_dim < 1) {
    throw Error(ErrorKind::ConfigInvalid, "attention shape must be positive");
  }
  if (tile_size < 1) {
    throw Error(ErrorKind::ConfigInvalid, "attention tile_size must be >= 1");
  }
  const size_t n = size();
  if (q.size() != n || k.size() != n || v.size() != n) {
    throw Error(ErrorKind::ConfigInvalid,
                "attention inputs disagree with shape " + std::to_string(n_heads) +
                    "x" + std::to_string(seq) + "x" + std::to_string(head_dim));
  }
}

namespace {

template <typename T>
T dot(const T* a, const T* b, int n) {
  T acc = 0;
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// Causal softmax rows for one head: probs[t][s] for s <= t.
template <typename T>
void head_probabilities(const T* q, const T* k, int seq, int d, T scale,
                        T* probs) {
  for (int t = 0; t < seq; ++t) {
    T* row = probs + static_cast<size_t>(t) * seq;
    T max_score = -std::numeric_limits<T>::infinity();
    for (int s = 0; s <= t; ++s) {
      row[s] = scale * dot(q + static_cast<size_t>(t) * d,
                           k + static_cast<size_t>(s) * d, d);
      max_score = std::max(max_score, row[s]);
    }
    T denom = 0;
    for (int s = 0; s <= t; ++s) {
      row[s] = std::exp(row[s] - max_score);
      denom += row[s];
    }
    for (int s = 0; s <= t; ++s) row[s] /= denom;
    for (int s = t + 1; s < seq; ++s) row[s] = 0;
  }
}

}  // namespace

template <typename T>
std::vector<T> attention_weights(const AttentionInputs<T>& in) {
  in.validate();
  const int seq = in.seq;
  const int d = in.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const size_t head_stride = static_cast<size_t>(seq) * d;
  std::vector<T> probs(static_cast<size_t>(in.n_heads) * seq * seq);
  for (int h = 0; h < in.n_heads; ++h) {
    head_probabilities(in.q.data() + h * head_stride, in.k.data() + h * head_stride,
                       seq, d, scale,
                       probs.data() + static_cast<size_t>(h) * seq * seq);
  }
  return probs;
}

template <typename T>
std::vector<T> naive_attention(const AttentionInputs<T>& in) {
  const std::vector<T> probs = attention_weights(in);
  const int seq = in.seq;
  const int d = in.head_dim;
  const size_t head_stride = static_cast<size_t>(seq) * d;
  std::vector<T> out(in.size(), T(0));
  for (int h = 0; h < in.n_heads; ++h) {
    const T* p = probs.data() + static_cast<size_t>(h) * seq * seq;
    const T* v = in.v.data() + h * head_stride;
    T* o = out.data() + h * head_stride;
    for (int t = 0; t < seq; ++t) {
      for (int s = 0; s <= t; ++s) {
        const T w = p[static_cast<size_t>(t) * seq + s];
        for (int j = 0; j < d; ++j) o[t * d + j] += w * v[s * d + j];
      }
    }
  }
  return out;
}

template <typename T>
std::vector<T> streaming_attention(const AttentionInputs<T>& in,
                                   StreamingStats* stats) {
  in.validate();
  const int seq = in.seq;
  const int d = in.head_dim;
  const int tile = std::min(in.tile_size, seq);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const size_t head_stride = static_cast<size_t>(seq) * d;
  constexpr T kNegInf = -std::numeric_limits<T>::infinity();

  std::vector<T> out(in.size());
  std::vector<T> scores(static_cast<size_t>(tile) * tile);
  std::vector<T> row_max(static_cast<size_t>(tile));
  std::vector<T> row_denom(static_cast<size_t>(tile));
  std::vector<T> acc(static_cast<size_t>(tile) * d);
  if (stats != nullptr) {
    stats->peak_score_buffer_bytes = scores.size() * sizeof(T);
    stats->tiles_visited = 0;
  }

  for (int h = 0; h < in.n_heads; ++h) {
    const T* q = in.q.data() + h * head_stride;
    const T* k = in.k.data() + h * head_stride;
    const T* v = in.v.data() + h * head_stride;
    T* o = out.data() + h * head_stride;

    for (int q0 = 0; q0 < seq; q0 += tile) {
      const int q1 = std::min(q0 + tile, seq);
      std::fill(row_max.begin(), row_max.end(), kNegInf);
      std::fill(row_denom.begin(), row_denom.end(), T(0));
      std::fill(acc.begin(), acc.end(), T(0));

      // Key tiles strictly after the last query row are fully masked.
      for (int k0 = 0; k0 < q1; k0 += tile) {
        const int k1 = std::min(k0 + tile, seq);
        if (stats != nullptr) ++stats->tiles_visited;
        for (int t = q0; t < q1; ++t) {
          const int r = t - q0;
          const int last = std::min(k1, t + 1);
          if (last <= k0) continue;
          T* srow = scores.data() + static_cast<size_t>(r) * tile;
          T tile_max = kNegInf;
          for (int s = k0; s < last; ++s) {
            const T sc = scale * dot(q + static_cast<size_t>(t) * d,
                                     k + static_cast<size_t>(s) * d, d);
            srow[s - k0] = sc;
            tile_max = std::max(tile_max, sc);
          }
          const T new_max = std::max(row_max[r], tile_max);
          const T correction =
              row_max[r] == kNegInf ? T(0) : std::exp(row_max[r] - new_max);
          T* a = acc.data() + static_cast<size_t>(r) * d;
          for (int j = 0; j < d; ++j) a[j] *= correction;
          T denom = row_denom[r] * correction;
          for (int s = k0; s < last; ++s) {
            const T p = std::exp(srow[s - k0] - new_max);
            denom += p;
            const T* vs = v + static_cast<size_t>(s) * d;
            for (int j = 0; j < d; ++j) a[j] += p * vs[j];
          }
          row_denom[r] = denom;
          row_max[r] = new_max;
        }
      }
      for (int t = q0; t < q1; ++t) {
        const int r = t - q0;
        const T inv = T(1) / row_denom[r];
        const T* a = acc.data() + static_cast<size_t>(r) * d;
        for (int j = 0; j < d; ++j) o[static_cast<size_t>(t) * d + j] = a[j] * inv;
      }
    }
  }
  return out;
}

template <typename T>
AttentionGrads<T> attention_backward(const AttentionInputs<T>& in,
                                     std::span<const T> d_out) {
  in.validate();
  if (d_out.size() != in.size()) {
    throw Error(ErrorKind::ConfigInvalid, "attention d_out has the wrong size");
  }
  const int seq = in.seq;
  const int d = in.head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  const size_t head_stride = static_cast<size_t>(seq) * d;

  AttentionGrads<T> g{std::vector<T>(in.size(), T(0)),
                      std::vector<T>(in.size(), T(0)),
                      std::vector<T>(in.size(), T(0))};
  std::vector<T> probs(static_cast<size_t>(seq) * seq);
  std::vector<T> dp(static_cast<size_t>(seq));

  for (int h = 0; h < in.n_heads; ++h) {
    const T* q = in.q.data() + h * head_stride;
    const T* k = in.k.data() + h * head_stride;
    const T* v = in.v.data() + h * head_stride;
    const T* dout = d_out.data() + h * head_stride;
    T* dq = g.dq.data() + h * head_stride;
    T* dk = g.dk.data() + h * head_stride;
    T* dv = g.dv.data() + h * head_stride;

    head_probabilities(q, k, seq, d, scale, probs.data());
    for (int t = 0; t < seq; ++t) {
      const T* p = probs.data() + static_cast<size_t>(t) * seq;
      const T* dot_row = dout + static_cast<size_t>(t) * d;
      // dV[s] += P[t,s] dO[t]; dP[t,s] = dO[t] . V[s]
      T weighted = 0;
      for (int s = 0; s <= t; ++s) {
        T* dvs = dv + static_cast<size_t>(s) * d;
        for (int j = 0; j < d; ++j) dvs[j] += p[s] * dot_row[j];
        dp[s] = dot(dot_row, v + static_cast<size_t>(s) * d, d);
        weighted += p[s] * dp[s];
      }
      // dS = P (dP - sum_s P dP); scores = scale * q.k
      for (int s = 0; s <= t; ++s) {
        const T ds = p[s] * (dp[s] - weighted) * scale;
        if (ds == T(0)) continue;
        const T* ks = k + static_cast<size_t>(s) * d;
        const T* qt = q + static_cast<size_t>(t) * d;
        T* dqt = dq + static_cast<size_t>(t) * d;
        T* dks = dk + static_cast<size_t>(s) * d;
        for (int j = 0; j < d; ++j) {
          dqt[j] += ds * ks[j];
          dks[j] += ds * qt[j];
        }
      }
    }
  }
  return g;
}

template struct AttentionInputs<float>;
template struct AttentionInputs<double>;
template std::vector<float> attention_weights(const AttentionInputs<float>&);
template std::vector<double> attention_weights(const AttentionInputs<double>&);
template std::vector<float> naive_attention(const AttentionInputs<float>&);
template std::vector<double> naive_attention(const AttentionInputs<double>&);
template std::vector<float> streaming_attention(const AttentionInputs<float>&,
                                                StreamingStats*);
template std::vector<double> streaming_attention(const AttentionInputs<double>&,
                                                 StreamingStats*);
template AttentionGrads<float> attention_backward(const AttentionInputs<float>&,
                                                  std::span<const float>);
template AttentionGrads<double> attention_backward(const AttentionInputs<double>&,
                                                   std::span<const double>);

}  // namespace inkuba
