#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "inkuba/attention.hpp"
#include "inkuba/tokenizer.hpp"

namespace inkuba {

// Decoder hyperparameters. Defaults are the 0.4B configuration.
struct ModelConfig {
  int hidden_size = 2048;
  int intermediate_size = 5632;
  int n_heads = 32;
  int n_layers = 8;
  double rmsnorm_eps = 1e-5;
  int max_seq_len = 2048;
  int vocab_size = 61788;
  bool share_ffn = true;
  bool tie_embeddings = false;
  double rope_theta = 10000.0;
  int attention_tile = kDefaultAttentionTile;

  int head_dim() const { return hidden_size / n_heads; }
  void validate() const;

  // Flat key=value form, e.g. `hidden_size=2048`.
  std::string to_text() const;
  static ModelConfig from_text(std::string_view text);
  static ModelConfig load(const std::filesystem::path& path);
};

// Closed form: V*H + L*4H^2 + 3*H*I*(shared ? 1 : L) + (2L+1)*H + (tied ? 0 : H*V).
int64_t count_params(const ModelConfig& cfg);

template <typename T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;

  size_t numel() const { return data.size(); }
};

// Named parameter tensors in a fixed order derived from the config.
template <typename T>
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(const ModelConfig& cfg);  // zero-filled

  std::vector<Tensor<T>>& tensors() { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const { return tensors_; }

  Tensor<T>& at(std::string_view name);
  const Tensor<T>& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  size_t total_size() const;
  void fill(T value);
  // this += other, tensor by tensor in order.
  void add(const ParamStore& other);
  void scale(T factor);
  bool all_finite() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& t : tensors_) {
      out.tensors().push_back(
          {t.name, t.shape, std::vector<U>(t.data.begin(), t.data.end())});
    }
    return out;
  }

 private:
  std::vector<Tensor<T>> tensors_;
};

// Tensor names used by the model.
namespace param_names {
inline constexpr std::string_view kEmbedding = "tok_embeddings";
inline constexpr std::string_view kFinalNorm = "norm";
inline constexpr std::string_view kLmHead = "lm_head";
std::string attention_norm(int layer);
std::string ffn_norm(int layer);
std::string wq(int layer);
std::string wk(int layer);
std::string wv(int layer);
std::string wo(int layer);
// layer < 0 names the shared block.
std::string w_gate(int layer);
std::string w_up(int layer);
std::string w_down(int layer);
}  // namespace param_names

// Truncated normal (std 0.02, cut at 2 std) for matrices, ones for norms.
template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, uint64_t seed);

// Rows of token ids. loss_mask (optional, same size as ids) marks real tokens;
// the target for position t is ids[t+1] when t+1 is a real token.
struct TokenBatch {
  int batch = 0;
  int seq = 0;
  std::vector<TokenId> ids;
  std::vector<uint8_t> loss_mask;

  TokenId id(int b, int t) const { return ids[static_cast<size_t>(b) * seq + t]; }
  bool is_real(int b, int t) const {
    return loss_mask.empty() || loss_mask[static_cast<size_t>(b) * seq + t] != 0;
  }
  bool has_target(int b, int t) const { return t + 1 < seq && is_real(b, t + 1); }
  size_t target_count() const;
  void validate(const ModelConfig& cfg) const;
};

enum class AttentionKernel { Naive, Streaming };

// out = w * x / sqrt(mean(x^2) + eps)
template <typename T>
void rmsnorm(std::span<const T> x, std::span<const T> w, double eps, std::span<T> out);

// x [H]; W_gate, W_up [H x I]; W_down [I x H]. Returns W_down(silu(x W_gate) * (x W_up)).
template <typename T>
std::vector<T> swiglu(std::span<const T> x, std::span<const T> w_gate,
                      std::span<const T> w_up, std::span<const T> w_down, int hidden,
                      int intermediate);

// Rotates dimension pairs (2i, 2i+1) of each row of x [seq x head_dim] by
// positions[row] * theta^(-2i/head_dim). inverse=true applies the transpose.
template <typename T>
void apply_rope(std::span<T> x, int head_dim, std::span<const int> positions,
                double theta, bool inverse = false);

// Logits [batch x seq x vocab].
template <typename T>
std::vector<T> forward(const ModelConfig& cfg, const ParamStore<T>& params,
                       const TokenBatch& batch,
                       AttentionKernel kernel = AttentionKernel::Streaming);

template <typename T>
struct LossAndGrads {
  double loss = 0;
  size_t target_count = 0;
  ParamStore<T> grads;
};

// Mean next-token cross-entropy and its gradient from the hand-written
// backward pass. Rows are differentiated independently and summed in row
// order, so the result does not depend on `threads`.
template <typename T>
LossAndGrads<T> loss_and_grads(const ModelConfig& cfg, const ParamStore<T>& params,
                               const TokenBatch& batch, int threads = 1);

// Mean cross-entropy only.
template <typename T>
double loss_only(const ModelConfig& cfg, const ParamStore<T>& params,
                 const TokenBatch& batch);

}  // namespace inkuba
