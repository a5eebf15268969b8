#include "inkuba/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "inkuba/error.hpp"
#include "inkuba/kv_config.hpp"
#include "inkuba/text.hpp"

namespace inkuba {

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw Error(ErrorKind::ConfigInvalid, msg);
  };
  if (hidden_size <= 0 || intermediate_size <= 0 || n_heads <= 0 ||
      n_layers <= 0 || max_seq_len <= 0 || vocab_size <= 0) {
    fail("model sizes must be positive");
  }
  if (hidden_size % n_heads != 0) fail("hidden_size must be divisible by n_heads");
  if (head_dim() % 2 != 0) fail("head_dim must be even for rotary embeddings");
  if (!(rmsnorm_eps >= 0)) fail("rmsnorm_eps must be non-negative");
  if (!(rope_theta > 0)) fail("rope_theta must be positive");
  if (attention_tile < 1) fail("attention_tile must be >= 1");
}

std::string ModelConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "hidden_size=" << hidden_size << "\n"
      << "intermediate_size=" << intermediate_size << "\n"
      << "num_attention_heads=" << n_heads << "\n"
      << "num_hidden_layers=" << n_layers << "\n"
      << "rmsnorm_eps=" << rmsnorm_eps << "\n"
      << "max_seq_length=" << max_seq_len << "\n"
      << "vocab_size=" << vocab_size << "\n"
      << "share_ffn=" << (share_ffn ? "true" : "false") << "\n"
      << "tie_embeddings=" << (tie_embeddings ? "true" : "false") << "\n"
      << "rope_theta=" << rope_theta << "\n"
      << "attention_tile=" << attention_tile << "\n";
  return out.str();
}

ModelConfig ModelConfig::from_text(std::string_view text) {
  const KeyValueConfig kv = KeyValueConfig::parse(text);
  kv.require_known({"hidden_size", "intermediate_size", "num_attention_heads",
                    "num_hidden_layers", "rmsnorm_eps", "max_seq_length",
                    "vocab_size", "share_ffn", "tie_embeddings", "rope_theta",
                    "attention_tile"});
  ModelConfig c;
  c.hidden_size = static_cast<int>(kv.get_int("hidden_size", c.hidden_size));
  c.intermediate_size =
      static_cast<int>(kv.get_int("intermediate_size", c.intermediate_size));
  c.n_heads = static_cast<int>(kv.get_int("num_attention_heads", c.n_heads));
  c.n_layers = static_cast<int>(kv.get_int("num_hidden_layers", c.n_layers));
  c.rmsnorm_eps = kv.get_double("rmsnorm_eps", c.rmsnorm_eps);
  c.max_seq_len = static_cast<int>(kv.get_int("max_seq_length", c.max_seq_len));
  c.vocab_size = static_cast<int>(kv.get_int("vocab_size", c.vocab_size));
  c.share_ffn = kv.get_bool("share_ffn", c.share_ffn);
  c.tie_embeddings = kv.get_bool("tie_embeddings", c.tie_embeddings);
  c.rope_theta = kv.get_double("rope_theta", c.rope_theta);
  c.attention_tile = static_cast<int>(kv.get_int("attention_tile", c.attention_tile));
  c.validate();
  return c;
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  return from_text(read_file(path));
}

int64_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t v = cfg.vocab_size;
  const int64_t h = cfg.hidden_size;
  const int64_t i = cfg.intermediate_size;
  const int64_t l = cfg.n_layers;
  const int64_t embedding = v * h;
  const int64_t attention = l * 4 * h * h;
  const int64_t ffn = 3 * h * i * (cfg.share_ffn ? 1 : l);
  const int64_t norms = (2 * l + 1) * h;
  const int64_t head = cfg.tie_embeddings ? 0 : h * v;
  return embedding + attention + ffn + norms + head;
}

// ---------------------------------------------------------------------------
// Parameter store

namespace param_names {
namespace {
std::string layer_prefix(int layer) { return "layers." + std::to_string(layer) + "."; }
std::string ffn_prefix(int layer) {
  return layer < 0 ? std::string("ffn.") : layer_prefix(layer) + "ffn.";
}
}  // namespace
std::string attention_norm(int layer) { return layer_prefix(layer) + "attention_norm"; }
std::string ffn_norm(int layer) { return layer_prefix(layer) + "ffn_norm"; }
std::string wq(int layer) { return layer_prefix(layer) + "attention.wq"; }
std::string wk(int layer) { return layer_prefix(layer) + "attention.wk"; }
std::string wv(int layer) { return layer_prefix(layer) + "attention.wv"; }
std::string wo(int layer) { return layer_prefix(layer) + "attention.wo"; }
std::string w_gate(int layer) { return ffn_prefix(layer) + "w_gate"; }
std::string w_up(int layer) { return ffn_prefix(layer) + "w_up"; }
std::string w_down(int layer) { return ffn_prefix(layer) + "w_down"; }
}  // namespace param_names

template <typename T>
ParamStore<T>::ParamStore(const ModelConfig& cfg) {
  cfg.validate();
  const int h = cfg.hidden_size;
  const int i = cfg.intermediate_size;
  auto add = [&](std::string name, std::vector<int> shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    tensors_.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
  };
  namespace pn = param_names;
  add(std::string(pn::kEmbedding), {cfg.vocab_size, h});
  for (int l = 0; l < cfg.n_layers; ++l) {
    add(pn::attention_norm(l), {h});
    add(pn::wq(l), {h, h});
    add(pn::wk(l), {h, h});
    add(pn::wv(l), {h, h});
    add(pn::wo(l), {h, h});
    add(pn::ffn_norm(l), {h});
    if (!cfg.share_ffn) {
      add(pn::w_gate(l), {h, i});
      add(pn::w_up(l), {h, i});
      add(pn::w_down(l), {i, h});
    }
  }
  if (cfg.share_ffn) {
    add(pn::w_gate(-1), {h, i});
    add(pn::w_up(-1), {h, i});
    add(pn::w_down(-1), {i, h});
  }
  add(std::string(pn::kFinalNorm), {h});
  if (!cfg.tie_embeddings) add(std::string(pn::kLmHead), {h, cfg.vocab_size});
}

template <typename T>
Tensor<T>& ParamStore<T>::at(std::string_view name) {
  for (auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw Error(ErrorKind::DataInvalid, "no parameter named " + std::string(name));
}

template <typename T>
const Tensor<T>& ParamStore<T>::at(std::string_view name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

template <typename T>
bool ParamStore<T>::contains(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const Tensor<T>& t) { return t.name == name; });
}

template <typename T>
size_t ParamStore<T>::total_size() const {
  size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

template <typename T>
void ParamStore<T>::fill(T value) {
  for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), value);
}

template <typename T>
void ParamStore<T>::add(const ParamStore& other) {
  if (other.tensors_.size() != tensors_.size()) {
    throw Error(ErrorKind::DataInvalid, "parameter stores differ in layout");
  }
  for (size_t n = 0; n < tensors_.size(); ++n) {
    auto& dst = tensors_[n].data;
    const auto& src = other.tensors_[n].data;
    if (dst.size() != src.size()) {
      throw Error(ErrorKind::DataInvalid, "tensor " + tensors_[n].name + " size differs");
    }
    for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

template <typename T>
void ParamStore<T>::scale(T factor) {
  for (auto& t : tensors_) {
    for (auto& x : t.data) x *= factor;
  }
}

template <typename T>
bool ParamStore<T>::all_finite() const {
  for (const auto& t : tensors_) {
    for (T x : t.data) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, uint64_t seed) {
  ParamStore<T> store(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (auto& t : store.tensors()) {
    if (t.shape.size() == 1) {
      std::fill(t.data.begin(), t.data.end(), T(1));
      continue;
    }
    for (auto& x : t.data) {
      double draw = normal(rng);
      while (std::abs(draw) > 0.04) draw = normal(rng);
      x = static_cast<T>(draw);
    }
  }
  return store;
}

size_t TokenBatch::target_count() const {
  size_t n = 0;
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < seq; ++t) n += has_target(b, t) ? 1 : 0;
  }
  return n;
}

void TokenBatch::validate(const ModelConfig& cfg) const {
  if (batch < 1 || seq < 1) throw Error(ErrorKind::DataInvalid, "empty token batch");
  if (seq > cfg.max_seq_len) {
    throw Error(ErrorKind::ContextTooLong,
                "sequence length " + std::to_string(seq) + " exceeds max_seq_len " +
                    std::to_string(cfg.max_seq_len));
  }
  if (ids.size() != static_cast<size_t>(batch) * seq) {
    throw Error(ErrorKind::DataInvalid, "token batch size disagrees with its shape");
  }
  if (!loss_mask.empty() && loss_mask.size() != ids.size()) {
    throw Error(ErrorKind::DataInvalid, "loss mask size disagrees with ids");
  }
  for (TokenId id : ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw Error(ErrorKind::IdOutOfRange,
                  "token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(cfg.vocab_size));
    }
  }
}

// ---------------------------------------------------------------------------
// Primitive ops

namespace {

// C[m x n] = A[m x k] B[k x n]
template <typename T>
void matmul(const T* a, const T* b, T* c, int m, int k, int n) {
  std::fill(c, c + static_cast<size_t>(m) * n, T(0));
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T aip = a[static_cast<size_t>(i) * k + p];
      if (aip == T(0)) continue;
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C[k x n] += A[m x k]^T B[m x n]
template <typename T>
void matmul_at_b_acc(const T* a, const T* b, T* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * k;
    const T* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T ap = arow[p];
      if (ap == T(0)) continue;
      T* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += ap * brow[j];
    }
  }
}

// C[m x k] = A[m x n] B[k x n]^T
template <typename T>
void matmul_a_bt(const T* a, const T* b, T* c, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T* brow = b + static_cast<size_t>(p) * n;
      T acc = 0;
      for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[static_cast<size_t>(i) * k + p] = acc;
    }
  }
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
T silu(T x) {
  return x * sigmoid(x);
}

// Row-wise RMSNorm over rows x width; stores 1/rms per row.
template <typename T>
void rmsnorm_rows(const T* x, const T* w, double eps, int rows, int width, T* out,
                  T* inv_rms) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<size_t>(r) * width;
    T sum_sq = 0;
    for (int j = 0; j < width; ++j) sum_sq += xr[j] * xr[j];
    const T inv = T(1) / std::sqrt(sum_sq / static_cast<T>(width) + static_cast<T>(eps));
    inv_rms[r] = inv;
    T* o = out + static_cast<size_t>(r) * width;
    for (int j = 0; j < width; ++j) o[j] = w[j] * xr[j] * inv;
  }
}

// dx += d(out)/dx applied to dy; dw += d(out)/dw applied to dy.
template <typename T>
void rmsnorm_rows_backward(const T* x, const T* w, const T* inv_rms, const T* dy,
                           int rows, int width, T* dx, T* dw) {
  for (int r = 0; r < rows; ++r) {
    const T* xr = x + static_cast<size_t>(r) * width;
    const T* dyr = dy + static_cast<size_t>(r) * width;
    T* dxr = dx + static_cast<size_t>(r) * width;
    const T inv = inv_rms[r];
    T proj = 0;
    for (int j = 0; j < width; ++j) {
      dw[j] += dyr[j] * xr[j] * inv;
      proj += dyr[j] * w[j] * xr[j];
    }
    const T coeff = inv * inv * inv * proj / static_cast<T>(width);
    for (int j = 0; j < width; ++j) dxr[j] += inv * w[j] * dyr[j] - coeff * xr[j];
  }
}

// [seq x hidden] <-> [heads x seq x head_dim]
template <typename T>
void split_heads(const T* x, T* out, int seq, int heads, int head_dim) {
  const int hidden = heads * head_dim;
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < seq; ++t) {
      std::copy_n(x + static_cast<size_t>(t) * hidden + h * head_dim, head_dim,
                  out + (static_cast<size_t>(h) * seq + t) * head_dim);
    }
  }
}

template <typename T>
void merge_heads(const T* x, T* out, int seq, int heads, int head_dim) {
  const int hidden = heads * head_dim;
  for (int h = 0; h < heads; ++h) {
    for (int t = 0; t < seq; ++t) {
      std::copy_n(x + (static_cast<size_t>(h) * seq + t) * head_dim, head_dim,
                  out + static_cast<size_t>(t) * hidden + h * head_dim);
    }
  }
}

}  // namespace

template <typename T>
void rmsnorm(std::span<const T> x, std::span<const T> w, double eps, std::span<T> out) {
  if (x.size() != w.size() || out.size() != x.size()) {
    throw Error(ErrorKind::ConfigInvalid, "rmsnorm shapes disagree");
  }
  T inv = 0;
  rmsnorm_rows(x.data(), w.data(), eps, 1, static_cast<int>(x.size()), out.data(), &inv);
}

template <typename T>
std::vector<T> swiglu(std::span<const T> x, std::span<const T> w_gate,
                      std::span<const T> w_up, std::span<const T> w_down, int hidden,
                      int intermediate) {
  const size_t hi = static_cast<size_t>(hidden) * intermediate;
  if (x.size() != static_cast<size_t>(hidden) || w_gate.size() != hi ||
      w_up.size() != hi || w_down.size() != hi) {
    throw Error(ErrorKind::ConfigInvalid, "swiglu shapes disagree");
  }
  std::vector<T> g(static_cast<size_t>(intermediate));
  std::vector<T> u(static_cast<size_t>(intermediate));
  matmul(x.data(), w_gate.data(), g.data(), 1, hidden, intermediate);
  matmul(x.data(), w_up.data(), u.data(), 1, hidden, intermediate);
  for (int j = 0; j < intermediate; ++j) g[j] = silu(g[j]) * u[j];
  std::vector<T> out(static_cast<size_t>(hidden));
  matmul(g.data(), w_down.data(), out.data(), 1, intermediate, hidden);
  return out;
}

template <typename T>
void apply_rope(std::span<T> x, int head_dim, std::span<const int> positions,
                double theta, bool inverse) {
  if (head_dim % 2 != 0) {
    throw Error(ErrorKind::ConfigInvalid, "rotary embedding needs an even head_dim");
  }
  if (x.size() != positions.size() * static_cast<size_t>(head_dim)) {
    throw Error(ErrorKind::ConfigInvalid, "rotary embedding shape disagrees");
  }
  const int pairs = head_dim / 2;
  for (size_t row = 0; row < positions.size(); ++row) {
    T* r = x.data() + row * static_cast<size_t>(head_dim);
    for (int i = 0; i < pairs; ++i) {
      const double freq = std::pow(theta, -2.0 * i / head_dim);
      const double angle = positions[row] * freq * (inverse ? -1.0 : 1.0);
      const T c = static_cast<T>(std::cos(angle));
      const T s = static_cast<T>(std::sin(angle));
      const T a = r[2 * i];
      const T b = r[2 * i + 1];
      r[2 * i] = a * c - b * s;
      r[2 * i + 1] = a * s + b * c;
    }
  }
}

// ---------------------------------------------------------------------------
// Transformer forward / backward

namespace {

template <typename T>
struct LayerWeights {
  const Tensor<T>* attention_norm;
  const Tensor<T>* wq;
  const Tensor<T>* wk;
  const Tensor<T>* wv;
  const Tensor<T>* wo;
  const Tensor<T>* ffn_norm;
  const Tensor<T>* w_gate;
  const Tensor<T>* w_up;
  const Tensor<T>* w_down;
};

template <typename T>
struct Weights {
  const Tensor<T>* embedding;
  std::vector<LayerWeights<T>> layers;
  const Tensor<T>* final_norm;
  const Tensor<T>* lm_head;  // null when tied
};

template <typename T>
Weights<T> resolve(const ModelConfig& cfg, const ParamStore<T>& p) {
  namespace pn = param_names;
  Weights<T> w;
  w.embedding = &p.at(pn::kEmbedding);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const int f = cfg.share_ffn ? -1 : l;
    w.layers.push_back({&p.at(pn::attention_norm(l)), &p.at(pn::wq(l)), &p.at(pn::wk(l)),
                        &p.at(pn::wv(l)), &p.at(pn::wo(l)), &p.at(pn::ffn_norm(l)),
                        &p.at(pn::w_gate(f)), &p.at(pn::w_up(f)), &p.at(pn::w_down(f))});
  }
  w.final_norm = &p.at(pn::kFinalNorm);
  w.lm_head = cfg.tie_embeddings ? nullptr : &p.at(pn::kLmHead);
  return w;
}

template <typename T>
T* mut(const Tensor<T>* t) {
  return const_cast<T*>(t->data.data());
}

template <typename T>
struct LayerCache {
  std::vector<T> x_in, h1, inv1, q, k, v, attn, o, x_mid, h2, inv2, g, u, a;
};

template <typename T>
struct RowCache {
  std::vector<LayerCache<T>> layers;
  std::vector<T> x_final, hf, invf;
};

// Runs one sequence; fills logits [seq x vocab] and, when cache is given,
// every activation needed by the backward pass.
template <typename T>
void forward_row(const ModelConfig& cfg, const Weights<T>& w,
                 std::span<const TokenId> ids, AttentionKernel kernel, T* logits,
                 RowCache<T>* cache) {
  const int seq = static_cast<int>(ids.size());
  const int hd = cfg.hidden_size;
  const int im = cfg.intermediate_size;
  const int nh = cfg.n_heads;
  const int dh = cfg.head_dim();
  const size_t sh = static_cast<size_t>(seq) * hd;
  const size_t si = static_cast<size_t>(seq) * im;

  std::vector<int> positions(static_cast<size_t>(seq));
  for (int t = 0; t < seq; ++t) positions[t] = t;

  std::vector<T> x(sh);
  for (int t = 0; t < seq; ++t) {
    std::copy_n(w.embedding->data.data() + static_cast<size_t>(ids[t]) * hd, hd,
                x.data() + static_cast<size_t>(t) * hd);
  }

  LayerCache<T> scratch;
  if (cache != nullptr) cache->layers.resize(static_cast<size_t>(cfg.n_layers));
  std::vector<T> tmp_q(sh), tmp_k(sh), tmp_v(sh), proj(sh);

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights<T>& lw = w.layers[static_cast<size_t>(l)];
    LayerCache<T>& c = cache != nullptr ? cache->layers[static_cast<size_t>(l)] : scratch;
    c.x_in = x;
    c.h1.resize(sh);
    c.inv1.resize(static_cast<size_t>(seq));
    rmsnorm_rows(x.data(), lw.attention_norm->data.data(), cfg.rmsnorm_eps, seq, hd,
                 c.h1.data(), c.inv1.data());

    matmul(c.h1.data(), lw.wq->data.data(), tmp_q.data(), seq, hd, hd);
    matmul(c.h1.data(), lw.wk->data.data(), tmp_k.data(), seq, hd, hd);
    matmul(c.h1.data(), lw.wv->data.data(), tmp_v.data(), seq, hd, hd);
    c.q.resize(sh);
    c.k.resize(sh);
    c.v.resize(sh);
    split_heads(tmp_q.data(), c.q.data(), seq, nh, dh);
    split_heads(tmp_k.data(), c.k.data(), seq, nh, dh);
    split_heads(tmp_v.data(), c.v.data(), seq, nh, dh);
    for (int h = 0; h < nh; ++h) {
      const size_t off = static_cast<size_t>(h) * seq * dh;
      apply_rope<T>(std::span<T>(c.q.data() + off, static_cast<size_t>(seq) * dh), dh,
                    positions, cfg.rope_theta);
      apply_rope<T>(std::span<T>(c.k.data() + off, static_cast<size_t>(seq) * dh), dh,
                    positions, cfg.rope_theta);
    }
    AttentionInputs<T> in{c.q, c.k, c.v, nh, seq, dh, cfg.attention_tile};
    c.attn = kernel == AttentionKernel::Streaming ? streaming_attention(in)
                                                  : naive_attention(in);
    c.o.resize(sh);
    merge_heads(c.attn.data(), c.o.data(), seq, nh, dh);
    matmul(c.o.data(), lw.wo->data.data(), proj.data(), seq, hd, hd);
    for (size_t j = 0; j < sh; ++j) x[j] += proj[j];
    c.x_mid = x;

    c.h2.resize(sh);
    c.inv2.resize(static_cast<size_t>(seq));
    rmsnorm_rows(x.data(), lw.ffn_norm->data.data(), cfg.rmsnorm_eps, seq, hd,
                 c.h2.data(), c.inv2.data());
    c.g.resize(si);
    c.u.resize(si);
    c.a.resize(si);
    matmul(c.h2.data(), lw.w_gate->data.data(), c.g.data(), seq, hd, im);
    matmul(c.h2.data(), lw.w_up->data.data(), c.u.data(), seq, hd, im);
    for (size_t j = 0; j < si; ++j) c.a[j] = silu(c.g[j]) * c.u[j];
    matmul(c.a.data(), lw.w_down->data.data(), proj.data(), seq, im, hd);
    for (size_t j = 0; j < sh; ++j) x[j] += proj[j];
  }

  std::vector<T> hf(sh), invf(static_cast<size_t>(seq));
  rmsnorm_rows(x.data(), w.final_norm->data.data(), cfg.rmsnorm_eps, seq, hd, hf.data(),
               invf.data());
  if (w.lm_head != nullptr) {
    matmul(hf.data(), w.lm_head->data.data(), logits, seq, hd, cfg.vocab_size);
  } else {
    matmul_a_bt(hf.data(), w.embedding->data.data(), logits, seq, hd, cfg.vocab_size);
  }
  if (cache != nullptr) {
    cache->x_final = std::move(x);
    cache->hf = std::move(hf);
    cache->invf = std::move(invf);
  }
}

// Sum of cross-entropy over targets in row b; writes dlogits = dL/dlogits
// with the loss scaled by 1/normalizer.
template <typename T>
double cross_entropy_row(const TokenBatch& batch, int b, int vocab, const T* logits,
                         T* dlogits, double normalizer) {
  double total = 0;
  for (int t = 0; t < batch.seq; ++t) {
    const T* row = logits + static_cast<size_t>(t) * vocab;
    T* drow = dlogits != nullptr ? dlogits + static_cast<size_t>(t) * vocab : nullptr;
    if (!batch.has_target(b, t)) {
      if (drow != nullptr) std::fill(drow, drow + vocab, T(0));
      continue;
    }
    const TokenId target = batch.id(b, t + 1);
    double max_logit = row[0];
    for (int j = 1; j < vocab; ++j) max_logit = std::max(max_logit, double(row[j]));
    double denom = 0;
    for (int j = 0; j < vocab; ++j) denom += std::exp(double(row[j]) - max_logit);
    const double log_z = max_logit + std::log(denom);
    total += log_z - double(row[target]);
    if (drow != nullptr) {
      for (int j = 0; j < vocab; ++j) {
        drow[j] = static_cast<T>(std::exp(double(row[j]) - log_z) / normalizer);
      }
      drow[target] -= static_cast<T>(1.0 / normalizer);
    }
  }
  return total;
}

template <typename T>
void backward_row(const ModelConfig& cfg, const Weights<T>& w, const Weights<T>& gw,
                  std::span<const TokenId> ids, const RowCache<T>& cache,
                  const T* dlogits) {
  const int seq = static_cast<int>(ids.size());
  const int hd = cfg.hidden_size;
  const int im = cfg.intermediate_size;
  const int nh = cfg.n_heads;
  const int dh = cfg.head_dim();
  const int vocab = cfg.vocab_size;
  const size_t sh = static_cast<size_t>(seq) * hd;
  const size_t si = static_cast<size_t>(seq) * im;

  std::vector<int> positions(static_cast<size_t>(seq));
  for (int t = 0; t < seq; ++t) positions[t] = t;

  // Head.
  std::vector<T> dhf(sh);
  if (w.lm_head != nullptr) {
    matmul_at_b_acc(cache.hf.data(), dlogits, mut(gw.lm_head), seq, hd, vocab);
    matmul_a_bt(dlogits, w.lm_head->data.data(), dhf.data(), seq, vocab, hd);
  } else {
    // logits = hf E^T: dE += dlogits^T hf, dhf = dlogits E
    matmul_at_b_acc(dlogits, cache.hf.data(), mut(gw.embedding), seq, vocab, hd);
    matmul(dlogits, w.embedding->data.data(), dhf.data(), seq, vocab, hd);
  }
  std::vector<T> dx(sh, T(0));
  rmsnorm_rows_backward(cache.x_final.data(), w.final_norm->data.data(),
                        cache.invf.data(), dhf.data(), seq, hd, dx.data(),
                        mut(gw.final_norm));

  std::vector<T> da(si), dg(si), du(si), dh2(sh), tmp(sh), dattn(sh), dhead(sh);
  std::vector<T> dq(sh), dk(sh), dv(sh), dh1(sh);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerWeights<T>& lw = w.layers[static_cast<size_t>(l)];
    const LayerWeights<T>& gl = gw.layers[static_cast<size_t>(l)];
    const LayerCache<T>& c = cache.layers[static_cast<size_t>(l)];

    // x_out = x_mid + a W_down
    matmul_at_b_acc(c.a.data(), dx.data(), mut(gl.w_down), seq, im, hd);
    matmul_a_bt(dx.data(), lw.w_down->data.data(), da.data(), seq, hd, im);
    for (size_t j = 0; j < si; ++j) {
      const T sg = sigmoid(c.g[j]);
      du[j] = da[j] * c.g[j] * sg;
      dg[j] = da[j] * c.u[j] * sg * (T(1) + c.g[j] * (T(1) - sg));
    }
    matmul_at_b_acc(c.h2.data(), dg.data(), mut(gl.w_gate), seq, hd, im);
    matmul_at_b_acc(c.h2.data(), du.data(), mut(gl.w_up), seq, hd, im);
    matmul_a_bt(dg.data(), lw.w_gate->data.data(), dh2.data(), seq, im, hd);
    matmul_a_bt(du.data(), lw.w_up->data.data(), tmp.data(), seq, im, hd);
    for (size_t j = 0; j < sh; ++j) dh2[j] += tmp[j];
    // dx now becomes d(x_mid).
    rmsnorm_rows_backward(c.x_mid.data(), lw.ffn_norm->data.data(), c.inv2.data(),
                          dh2.data(), seq, hd, dx.data(), mut(gl.ffn_norm));

    // x_mid = x_in + o W_o
    matmul_at_b_acc(c.o.data(), dx.data(), mut(gl.wo), seq, hd, hd);
    matmul_a_bt(dx.data(), lw.wo->data.data(), dattn.data(), seq, hd, hd);
    split_heads(dattn.data(), dhead.data(), seq, nh, dh);
    AttentionInputs<T> in{c.q, c.k, c.v, nh, seq, dh, cfg.attention_tile};
    AttentionGrads<T> ag = attention_backward<T>(in, dhead);
    for (int h = 0; h < nh; ++h) {
      const size_t off = static_cast<size_t>(h) * seq * dh;
      apply_rope<T>(std::span<T>(ag.dq.data() + off, static_cast<size_t>(seq) * dh), dh,
                    positions, cfg.rope_theta, /*inverse=*/true);
      apply_rope<T>(std::span<T>(ag.dk.data() + off, static_cast<size_t>(seq) * dh), dh,
                    positions, cfg.rope_theta, /*inverse=*/true);
    }
    merge_heads(ag.dq.data(), dq.data(), seq, nh, dh);
    merge_heads(ag.dk.data(), dk.data(), seq, nh, dh);
    merge_heads(ag.dv.data(), dv.data(), seq, nh, dh);
    matmul_at_b_acc(c.h1.data(), dq.data(), mut(gl.wq), seq, hd, hd);
    matmul_at_b_acc(c.h1.data(), dk.data(), mut(gl.wk), seq, hd, hd);
    matmul_at_b_acc(c.h1.data(), dv.data(), mut(gl.wv), seq, hd, hd);
    matmul_a_bt(dq.data(), lw.wq->data.data(), dh1.data(), seq, hd, hd);
    matmul_a_bt(dk.data(), lw.wk->data.data(), tmp.data(), seq, hd, hd);
    for (size_t j = 0; j < sh; ++j) dh1[j] += tmp[j];
    matmul_a_bt(dv.data(), lw.wv->data.data(), tmp.data(), seq, hd, hd);
    for (size_t j = 0; j < sh; ++j) dh1[j] += tmp[j];
    // dx becomes d(x_in).
    rmsnorm_rows_backward(c.x_in.data(), lw.attention_norm->data.data(), c.inv1.data(),
                          dh1.data(), seq, hd, dx.data(), mut(gl.attention_norm));
  }

  T* demb = mut(gw.embedding);
  for (int t = 0; t < seq; ++t) {
    T* row = demb + static_cast<size_t>(ids[t]) * hd;
    const T* src = dx.data() + static_cast<size_t>(t) * hd;
    for (int j = 0; j < hd; ++j) row[j] += src[j];
  }
}

}  // namespace

template <typename T>
std::vector<T> forward(const ModelConfig& cfg, const ParamStore<T>& params,
                       const TokenBatch& batch, AttentionKernel kernel) {
  cfg.validate();
  batch.validate(cfg);
  const Weights<T> w = resolve(cfg, params);
  const size_t row_logits = static_cast<size_t>(batch.seq) * cfg.vocab_size;
  std::vector<T> logits(row_logits * batch.batch);
  for (int b = 0; b < batch.batch; ++b) {
    std::span<const TokenId> ids(batch.ids.data() + static_cast<size_t>(b) * batch.seq,
                                 static_cast<size_t>(batch.seq));
    forward_row(cfg, w, ids, kernel, logits.data() + b * row_logits,
                static_cast<RowCache<T>*>(nullptr));
  }
  return logits;
}

template <typename T>
double loss_only(const ModelConfig& cfg, const ParamStore<T>& params,
                 const TokenBatch& batch) {
  const std::vector<T> logits = forward(cfg, params, batch);
  const size_t n = batch.target_count();
  if (n == 0) throw Error(ErrorKind::DataInvalid, "batch has no prediction targets");
  const size_t row_logits = static_cast<size_t>(batch.seq) * cfg.vocab_size;
  double total = 0;
  for (int b = 0; b < batch.batch; ++b) {
    total += cross_entropy_row<T>(batch, b, cfg.vocab_size,
                                  logits.data() + b * row_logits, nullptr, 1.0);
  }
  const double loss = total / static_cast<double>(n);
  if (!std::isfinite(loss)) throw Error(ErrorKind::NumericalDivergence, "loss is not finite");
  return loss;
}

template <typename T>
LossAndGrads<T> loss_and_grads(const ModelConfig& cfg, const ParamStore<T>& params,
                               const TokenBatch& batch, int threads) {
  cfg.validate();
  batch.validate(cfg);
  const size_t n = batch.target_count();
  if (n == 0) throw Error(ErrorKind::DataInvalid, "batch has no prediction targets");
  const Weights<T> w = resolve(cfg, params);
  const double normalizer = static_cast<double>(n);
  const size_t row_logits = static_cast<size_t>(batch.seq) * cfg.vocab_size;

  std::vector<ParamStore<T>> row_grads(static_cast<size_t>(batch.batch));
  std::vector<double> row_loss(static_cast<size_t>(batch.batch), 0.0);

  auto run_row = [&](int b) {
    std::span<const TokenId> ids(batch.ids.data() + static_cast<size_t>(b) * batch.seq,
                                 static_cast<size_t>(batch.seq));
    RowCache<T> cache;
    std::vector<T> logits(row_logits), dlogits(row_logits);
    forward_row(cfg, w, ids, AttentionKernel::Streaming, logits.data(), &cache);
    row_loss[b] = cross_entropy_row<T>(batch, b, cfg.vocab_size, logits.data(),
                                       dlogits.data(), normalizer);
    ParamStore<T>& g = row_grads[static_cast<size_t>(b)];
    g = ParamStore<T>(cfg);
    const Weights<T> gw = resolve(cfg, g);
    backward_row(cfg, w, gw, ids, cache, dlogits.data());
  };

  const int workers = std::clamp(threads, 1, batch.batch);
  if (workers == 1) {
    for (int b = 0; b < batch.batch; ++b) run_row(b);
  } else {
    std::vector<std::jthread> pool;
    for (int worker = 0; worker < workers; ++worker) {
      pool.emplace_back([&, worker] {
        for (int b = worker; b < batch.batch; b += workers) run_row(b);
      });
    }
  }

  LossAndGrads<T> result;
  result.target_count = n;
  result.grads = std::move(row_grads[0]);
  double total = row_loss[0];
  for (int b = 1; b < batch.batch; ++b) {
    result.grads.add(row_grads[static_cast<size_t>(b)]);
    total += row_loss[static_cast<size_t>(b)];
  }
  result.loss = total / normalizer;
  if (!std::isfinite(result.loss)) {
    throw Error(ErrorKind::NumericalDivergence, "loss is not finite");
  }
  return result;
}

#define INKUBA_INSTANTIATE(T)                                                            \
  template class ParamStore<T>;                                                        \
  template ParamStore<T> init_params<T>(const ModelConfig&, uint64_t);                 \
  template void rmsnorm<T>(std::span<const T>, std::span<const T>, double, std::span<T>); \
  template std::vector<T> swiglu<T>(std::span<const T>, std::span<const T>,            \
                                    std::span<const T>, std::span<const T>, int, int); \
  template void apply_rope<T>(std::span<T>, int, std::span<const int>, double, bool);  \
  template std::vector<T> forward<T>(const ModelConfig&, const ParamStore<T>&,         \
                                     const TokenBatch&, AttentionKernel);              \
  template double loss_only<T>(const ModelConfig&, const ParamStore<T>&,               \
                               const TokenBatch&);                                     \
  template LossAndGrads<T> loss_and_grads<T>(const ModelConfig&, const ParamStore<T>&, \
                                             const TokenBatch&, int);

INKUBA_INSTANTIATE(float)
INKUBA_INSTANTIATE(double)

#undef INKUBA_INSTANTIATE

}  // namespace inkuba
