#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace inkuba {

// Q, K, V are laid out [n_heads x seq x head_dim], row-major. Attention is
// causal: query t sees keys 0..t.
template <typename T>
struct AttentionInputs {
  std::span<const T> q;
  std::span<const T> k;
  std::span<const T> v;
  int n_heads = 1;
  int seq = 1;
  int head_dim = 1;
  int tile_size = 64;

  size_t size() const {
    return static_cast<size_t>(n_heads) * static_cast<size_t>(seq) *
           static_cast<size_t>(head_dim);
  }
  void validate() const;
};

inline constexpr int kDefaultAttentionTile = 64;

template <typename T>
struct AttentionGrads {
  std::vector<T> dq;
  std::vector<T> dk;
  std::vector<T> dv;
};

struct StreamingStats {
  size_t peak_score_buffer_bytes = 0;
  size_t tiles_visited = 0;
};

// Reference: materializes the full seq x seq probability matrix per head.
template <typename T>
std::vector<T> naive_attention(const AttentionInputs<T>& in);

// Softmax probabilities [n_heads x seq x seq]; entries above the diagonal are 0.
template <typename T>
std::vector<T> attention_weights(const AttentionInputs<T>& in);

// Tiled online-softmax kernel. Score memory is one tile_size x tile_size
// block; the running max and denominator rescale the accumulator per tile.
template <typename T>
std::vector<T> streaming_attention(const AttentionInputs<T>& in,
                                   StreamingStats* stats = nullptr);

// Gradients of the causal softmax attention function (recomputes scores).
template <typename T>
AttentionGrads<T> attention_backward(const AttentionInputs<T>& in,
                                     std::span<const T> d_out);

}  // namespace inkuba
