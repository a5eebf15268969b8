#include "inkuba/trainer.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "inkuba/binary_io.hpp"
#include "inkuba/error.hpp"
#include "inkuba/kv_config.hpp"
#include "inkuba/text.hpp"

namespace inkuba {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::ConfigInvalid, msg); };
  if (total_steps < 1) fail("total_steps must be >= 1");
  if (warmup_steps < 0 || warmup_steps > total_steps) {
    fail("warmup_steps must lie in [0, total_steps]");
  }
  if (!(peak_lr > 0)) fail("peak_lr must be positive");
  if (!(min_lr_ratio >= 0 && min_lr_ratio <= 1)) fail("min_lr_ratio must lie in [0, 1]");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    fail("adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (batch_size < 1 || grad_accum_steps < 1) fail("batch sizes must be >= 1");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  if (threads < 1) fail("threads must be >= 1");
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "peak_lr=" << peak_lr << "\n"
      << "warmup_steps=" << warmup_steps << "\n"
      << "total_steps=" << total_steps << "\n"
      << "min_lr_ratio=" << min_lr_ratio << "\n"
      << "weight_decay=" << weight_decay << "\n"
      << "beta1=" << beta1 << "\n"
      << "beta2=" << beta2 << "\n"
      << "adam_eps=" << adam_eps << "\n"
      << "batch_size=" << batch_size << "\n"
      << "grad_accum_steps=" << grad_accum_steps << "\n"
      << "seed=" << seed << "\n"
      << "checkpoint_every=" << checkpoint_every << "\n"
      << "grad_clip=" << grad_clip << "\n"
      << "threads=" << threads << "\n";
  return out.str();
}

TrainConfig TrainConfig::from_text(std::string_view text) {
  const KeyValueConfig kv = KeyValueConfig::parse(text);
  kv.require_known({"peak_lr", "warmup_steps", "total_steps", "min_lr_ratio",
                    "weight_decay", "beta1", "beta2", "adam_eps", "batch_size",
                    "grad_accum_steps", "seed", "checkpoint_every", "grad_clip",
                    "threads"});
  TrainConfig c;
  c.peak_lr = kv.get_double("peak_lr", c.peak_lr);
  c.warmup_steps = static_cast<int>(kv.get_int("warmup_steps", c.warmup_steps));
  c.total_steps = static_cast<int>(kv.get_int("total_steps", c.total_steps));
  c.min_lr_ratio = kv.get_double("min_lr_ratio", c.min_lr_ratio);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.grad_accum_steps = static_cast<int>(kv.get_int("grad_accum_steps", c.grad_accum_steps));
  c.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.checkpoint_every = static_cast<int>(kv.get_int("checkpoint_every", c.checkpoint_every));
  c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
  c.threads = static_cast<int>(kv.get_int("threads", c.threads));
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  return from_text(read_file(path));
}

double lr_at(int64_t step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw Error(ErrorKind::ConfigInvalid,
                "step " + std::to_string(step) + " outside [0, total_steps]");
  }
  if (step < cfg.warmup_steps) {
    return cfg.peak_lr * static_cast<double>(step) / cfg.warmup_steps;
  }
  const int64_t decay_steps = cfg.total_steps - cfg.warmup_steps;
  if (decay_steps == 0) return cfg.peak_lr;
  const double progress = static_cast<double>(step - cfg.warmup_steps) / decay_steps;
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return cfg.peak_lr * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * cosine);
}

template <typename T>
AdamMoments<T> zero_moments(const ParamStore<T>& like) {
  AdamMoments<T> m{like, like};
  m.m.fill(T(0));
  m.v.fill(T(0));
  return m;
}

template <typename T>
void adamw_step(ParamStore<T>& params, const ParamStore<T>& grads,
                AdamMoments<T>& moments, int64_t step, double lr,
                const TrainConfig& cfg) {
  if (step < 1) throw Error(ErrorKind::ConfigInvalid, "adam step is 1-based");
  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const T decay = static_cast<T>(1.0 - lr * cfg.weight_decay);
  const T b1 = static_cast<T>(cfg.beta1);
  const T b2 = static_cast<T>(cfg.beta2);
  auto& pt = params.tensors();
  const auto& gt = grads.tensors();
  auto& mt = moments.m.tensors();
  auto& vt = moments.v.tensors();
  if (gt.size() != pt.size() || mt.size() != pt.size() || vt.size() != pt.size()) {
    throw Error(ErrorKind::DataInvalid, "optimizer state does not match parameters");
  }
  for (size_t n = 0; n < pt.size(); ++n) {
    auto& p = pt[n].data;
    const auto& g = gt[n].data;
    auto& m = mt[n].data;
    auto& v = vt[n].data;
    for (size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const double m_hat = m[j] / bias1;
      const double v_hat = v[j] / bias2;
      const T update = static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps));
      p[j] = p[j] * decay - update;
      if (!std::isfinite(p[j])) {
        throw Error(ErrorKind::NumericalDivergence,
                    "non-finite update in tensor " + pt[n].name);
      }
    }
  }
}

template <typename T>
double clip_grad_norm(ParamStore<T>& grads, double max_norm) {
  double sum_sq = 0;
  for (const auto& t : grads.tensors()) {
    for (T g : t.data) sum_sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sum_sq);
  if (!std::isfinite(norm)) {
    throw Error(ErrorKind::NumericalDivergence, "gradient norm is not finite");
  }
  if (max_norm > 0 && norm > max_norm) {
    grads.scale(static_cast<T>(max_norm / norm));
  }
  return norm;
}

template AdamMoments<float> zero_moments(const ParamStore<float>&);
template AdamMoments<double> zero_moments(const ParamStore<double>&);
template void adamw_step(ParamStore<float>&, const ParamStore<float>&,
                         AdamMoments<float>&, int64_t, double, const TrainConfig&);
template void adamw_step(ParamStore<double>&, const ParamStore<double>&,
                         AdamMoments<double>&, int64_t, double, const TrainConfig&);
template double clip_grad_norm(ParamStore<float>&, double);
template double clip_grad_norm(ParamStore<double>&, double);

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::string_view kCheckpointMagic = "INKUBACK";
constexpr uint32_t kCheckpointVersion = 1;

void write_tensor(ByteWriter& out, const std::string& name, const Tensor<float>& t) {
  out.str(name);
  out.u32(static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) out.u32(static_cast<uint32_t>(d));
  for (float x : t.data) out.f32(x);
}

Tensor<float> read_tensor(ByteReader& in) {
  Tensor<float> t;
  t.name = in.str();
  const uint32_t ndim = in.u32();
  size_t n = 1;
  for (uint32_t i = 0; i < ndim; ++i) {
    t.shape.push_back(static_cast<int>(in.u32()));
    n *= static_cast<size_t>(t.shape.back());
  }
  t.data.resize(n);
  for (auto& x : t.data) x = in.f32();
  return t;
}

void load_into(ParamStore<float>& store, const std::vector<Tensor<float>>& loaded,
               std::string_view prefix) {
  for (auto& t : store.tensors()) {
    const std::string want = std::string(prefix) + t.name;
    auto it = std::find_if(loaded.begin(), loaded.end(),
                           [&](const Tensor<float>& l) { return l.name == want; });
    if (it == loaded.end()) {
      throw Error(ErrorKind::DataInvalid, "checkpoint lacks tensor " + want);
    }
    if (it->shape != t.shape) {
      throw Error(ErrorKind::DataInvalid, "checkpoint tensor " + want + " has wrong shape");
    }
    t.data = it->data;
  }
}

}  // namespace

std::string Checkpoint::serialize() const {
  ByteWriter out;
  out.bytes(kCheckpointMagic);
  out.u32(kCheckpointVersion);
  out.str(model.to_text());
  out.u64(static_cast<uint64_t>(step));
  out.u8(moments.has_value() ? 1 : 0);
  const size_t count = params.tensors().size() * (moments.has_value() ? 3 : 1);
  out.u32(static_cast<uint32_t>(count));
  for (const auto& t : params.tensors()) write_tensor(out, t.name, t);
  if (moments.has_value()) {
    for (const auto& t : moments->m.tensors()) write_tensor(out, "adam_m." + t.name, t);
    for (const auto& t : moments->v.tensors()) write_tensor(out, "adam_v." + t.name, t);
  }
  return out.take();
}

Checkpoint Checkpoint::parse(std::string_view bytes) {
  ByteReader in(bytes);
  if (in.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw Error(ErrorKind::DataInvalid, "not a checkpoint file");
  }
  if (const uint32_t version = in.u32(); version != kCheckpointVersion) {
    throw Error(ErrorKind::DataInvalid,
                "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.model = ModelConfig::from_text(in.str());
  ckpt.step = static_cast<int64_t>(in.u64());
  const bool has_moments = in.u8() != 0;
  const uint32_t count = in.u32();
  std::vector<Tensor<float>> loaded;
  loaded.reserve(count);
  for (uint32_t i = 0; i < count; ++i) loaded.push_back(read_tensor(in));
  if (!in.done()) throw Error(ErrorKind::DataInvalid, "trailing bytes in checkpoint");

  ckpt.params = ParamStore<float>(ckpt.model);
  load_into(ckpt.params, loaded, "");
  if (has_moments) {
    AdamMoments<float> m{ParamStore<float>(ckpt.model), ParamStore<float>(ckpt.model)};
    load_into(m.m, loaded, "adam_m.");
    load_into(m.v, loaded, "adam_v.");
    ckpt.moments = std::move(m);
  }
  const size_t expected = ckpt.params.tensors().size() * (has_moments ? 3 : 1);
  if (expected != count) {
    throw Error(ErrorKind::DataInvalid, "checkpoint has unexpected extra tensors");
  }
  return ckpt;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  write_file(path, serialize());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return parse(read_file(path));
}

std::string checkpoint_name(int64_t step) {
  return fmt::format("step-{:08d}.ckpt", step);
}

std::string trace_csv(const std::vector<TraceRow>& rows) {
  std::string out = "step,loss,lr\n";
  for (const auto& r : rows) out += fmt::format("{},{},{}\n", r.step, r.loss, r.lr);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

Trainer::Trainer(ModelConfig model, TrainConfig train, Shard data)
    : model_(std::move(model)), train_(std::move(train)), data_(std::move(data)) {
  model_.validate();
  train_.validate();
  if (data_.rows() == 0) throw Error(ErrorKind::TrainingDataEmpty, "no training rows");
  if (data_.seq_len > model_.max_seq_len) {
    throw Error(ErrorKind::ContextTooLong,
                "shard rows of " + std::to_string(data_.seq_len) +
                    " tokens exceed max_seq_len " + std::to_string(model_.max_seq_len));
  }
  for (TokenId id : data_.tokens) {
    if (id < 0 || id >= model_.vocab_size) {
      throw Error(ErrorKind::VocabMismatch,
                  "shard token " + std::to_string(id) + " outside model vocabulary of " +
                      std::to_string(model_.vocab_size));
    }
  }
  params_ = init_params<float>(model_, train_.seed);
  moments_ = zero_moments(params_);
}

void Trainer::resume(const Checkpoint& ckpt) {
  if (ckpt.model.to_text() != model_.to_text()) {
    throw Error(ErrorKind::ConfigInvalid, "checkpoint model config differs from run config");
  }
  if (!ckpt.moments.has_value()) {
    throw Error(ErrorKind::DataInvalid, "checkpoint has no optimizer moments to resume");
  }
  params_ = ckpt.params;
  moments_ = *ckpt.moments;
  step_ = ckpt.step;
}

const std::vector<uint32_t>& Trainer::epoch_order(int64_t epoch) const {
  if (epoch != cached_epoch_) {
    cached_order_.resize(data_.rows());
    std::iota(cached_order_.begin(), cached_order_.end(), 0u);
    std::mt19937_64 rng(train_.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(epoch + 1)));
    std::shuffle(cached_order_.begin(), cached_order_.end(), rng);
    cached_epoch_ = epoch;
  }
  return cached_order_;
}

TokenBatch Trainer::batch_for(int64_t step, int micro) const {
  const auto rows = static_cast<int64_t>(data_.rows());
  const int seq = data_.seq_len;
  TokenBatch batch;
  batch.batch = train_.batch_size;
  batch.seq = seq;
  batch.ids.reserve(static_cast<size_t>(batch.batch) * seq);
  batch.loss_mask.reserve(batch.ids.capacity());
  const int64_t base =
      ((step - 1) * train_.grad_accum_steps + micro) * static_cast<int64_t>(train_.batch_size);
  for (int i = 0; i < train_.batch_size; ++i) {
    const int64_t cursor = base + i;
    const uint32_t row = epoch_order(cursor / rows)[static_cast<size_t>(cursor % rows)];
    const size_t off = static_cast<size_t>(row) * seq;
    batch.ids.insert(batch.ids.end(), data_.tokens.begin() + off,
                     data_.tokens.begin() + off + seq);
    batch.loss_mask.insert(batch.loss_mask.end(), data_.mask.begin() + off,
                           data_.mask.begin() + off + seq);
  }
  return batch;
}

TraceRow Trainer::step() {
  if (finished()) throw Error(ErrorKind::ConfigInvalid, "training already finished");
  const int64_t step = step_ + 1;

  std::vector<LossAndGrads<float>> micro;
  size_t targets = 0;
  for (int a = 0; a < train_.grad_accum_steps; ++a) {
    micro.push_back(loss_and_grads(model_, params_, batch_for(step, a), train_.threads));
    targets += micro.back().target_count;
  }
  // Token-weighted combination of micro-batch means, in micro-batch order.
  ParamStore<float> grads = std::move(micro[0].grads);
  double loss = micro[0].loss * static_cast<double>(micro[0].target_count);
  grads.scale(static_cast<float>(static_cast<double>(micro[0].target_count) / targets));
  for (size_t a = 1; a < micro.size(); ++a) {
    micro[a].grads.scale(
        static_cast<float>(static_cast<double>(micro[a].target_count) / targets));
    grads.add(micro[a].grads);
    loss += micro[a].loss * static_cast<double>(micro[a].target_count);
  }
  loss /= static_cast<double>(targets);

  all_reduce_(grads);
  clip_grad_norm(grads, train_.grad_clip);
  const double lr = lr_at(step, train_);
  adamw_step(params_, grads, moments_, step, lr, train_);
  step_ = step;
  return {step, loss, lr};
}

Checkpoint Trainer::checkpoint(bool with_moments) const {
  Checkpoint ckpt;
  ckpt.model = model_;
  ckpt.step = step_;
  ckpt.params = params_;
  if (with_moments) ckpt.moments = moments_;
  return ckpt;
}

namespace {

std::vector<TraceRow> read_trace(const std::filesystem::path& path, int64_t up_to) {
  std::vector<TraceRow> rows;
  if (!std::filesystem::exists(path)) return rows;
  const auto lines = read_lines(path);
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    TraceRow r;
    std::istringstream in(lines[i]);
    char comma = 0;
    in >> r.step >> comma >> r.loss >> comma >> r.lr;
    if (!in) throw Error(ErrorKind::DataInvalid, "malformed trace line: " + lines[i]);
    if (r.step <= up_to) rows.push_back(r);
  }
  return rows;
}

}  // namespace

std::vector<TraceRow> run_training(const ModelConfig& model, const TrainConfig& train,
                                   const Shard& data, const TrainRunOptions& options) {
  Trainer trainer(model, train, data);
  std::vector<TraceRow> trace;
  const auto trace_path = options.out_dir / "trace.csv";
  if (options.resume_from.has_value()) {
    trainer.resume(Checkpoint::load(*options.resume_from));
    trace = read_trace(trace_path, trainer.current_step());
    spdlog::info("resumed from {} at step {}", options.resume_from->string(),
                 trainer.current_step());
  }
  std::filesystem::create_directories(options.out_dir);
  const int64_t last =
      options.stop_after > 0 ? std::min<int64_t>(options.stop_after, train.total_steps)
                             : train.total_steps;
  while (trainer.current_step() < last) {
    const TraceRow row = trainer.step();
    trace.push_back(row);
    spdlog::debug("step {} loss {:.6f} lr {:.3e}", row.step, row.loss, row.lr);
    const bool cadence =
        train.checkpoint_every > 0 && row.step % train.checkpoint_every == 0;
    if (cadence || row.step == last) {
      trainer.checkpoint(true).save(options.out_dir / checkpoint_name(row.step));
      write_file(trace_path, trace_csv(trace));
    }
  }
  write_file(trace_path, trace_csv(trace));
  return trace;
}

// ---------------------------------------------------------------------------
// Carbon

namespace {
void check_query(const CarbonQuery& q) {
  if (q.gpu_count < 0 || q.wall_hours < 0 || q.device_power_kw < 0 ||
      q.grid_intensity < 0) {
    throw Error(ErrorKind::ConfigInvalid, "carbon query fields must be non-negative");
  }
  if (q.pue < 1) throw Error(ErrorKind::ConfigInvalid, "pue must be >= 1");
}
}  // namespace

double energy_kwh(const CarbonQuery& q) {
  check_query(q);
  return q.gpu_count * q.wall_hours * q.device_power_kw * q.pue;
}

double estimate_carbon(const CarbonQuery& q) { return energy_kwh(q) * q.grid_intensity; }

double implied_grid_intensity(const CarbonQuery& q, double target_kg) {
  const double energy = energy_kwh(q);
  if (energy <= 0) throw Error(ErrorKind::ConfigInvalid, "query has zero energy");
  return target_kg / energy;
}

}  // namespace inkuba
