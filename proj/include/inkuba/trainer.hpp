#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "inkuba/model.hpp"
#include "inkuba/shard.hpp"

namespace inkuba {

struct TrainConfig {
  double peak_lr = 3e-4;
  int warmup_steps = 100;
  int total_steps = 1000;
  double min_lr_ratio = 0.1;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  int batch_size = 8;
  int grad_accum_steps = 1;
  uint64_t seed = 1234;
  int checkpoint_every = 0;  // 0: final checkpoint only
  double grad_clip = 1.0;    // global L2 norm; <= 0 disables
  int threads = 1;

  void validate() const;
  std::string to_text() const;
  static TrainConfig from_text(std::string_view text);
  static TrainConfig load(const std::filesystem::path& path);
};

// Linear warmup 0 -> peak over warmup_steps, then cosine decay to
// peak * min_lr_ratio at total_steps.
double lr_at(int64_t step, const TrainConfig& cfg);

template <typename T>
struct AdamMoments {
  ParamStore<T> m;
  ParamStore<T> v;
};

template <typename T>
AdamMoments<T> zero_moments(const ParamStore<T>& like);

// One AdamW update with bias correction for 1-based `step`:
// p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps).
template <typename T>
void adamw_step(ParamStore<T>& params, const ParamStore<T>& grads,
                AdamMoments<T>& moments, int64_t step, double lr,
                const TrainConfig& cfg);

// Scales grads so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(ParamStore<T>& grads, double max_norm);

struct Checkpoint {
  ModelConfig model;
  int64_t step = 0;
  ParamStore<float> params;
  std::optional<AdamMoments<float>> moments;

  std::string serialize() const;
  static Checkpoint parse(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

struct TraceRow {
  int64_t step = 0;
  double loss = 0;
  double lr = 0;
};

std::string trace_csv(const std::vector<TraceRow>& rows);

// Hook applied to the accumulated gradient before clipping. A sharded
// data-parallel run replaces it with a cross-process sum; the single-process
// default leaves gradients unchanged.
using GradientAllReduce = std::function<void(ParamStore<float>&)>;

class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, Shard data);

  // Restores parameters, moments and step counter.
  void resume(const Checkpoint& ckpt);

  // Runs optimizer step `step() + 1`.
  TraceRow step();
  int64_t current_step() const { return step_; }
  bool finished() const { return step_ >= train_.total_steps; }

  Checkpoint checkpoint(bool with_moments = true) const;
  const ParamStore<float>& params() const { return params_; }
  const ModelConfig& model_config() const { return model_; }

  // Rows used by micro-batch `micro` of 1-based step `step`.
  TokenBatch batch_for(int64_t step, int micro) const;

  void set_all_reduce(GradientAllReduce hook) { all_reduce_ = std::move(hook); }

 private:
  const std::vector<uint32_t>& epoch_order(int64_t epoch) const;

  ModelConfig model_;
  TrainConfig train_;
  Shard data_;
  ParamStore<float> params_;
  AdamMoments<float> moments_;
  int64_t step_ = 0;
  GradientAllReduce all_reduce_ = [](ParamStore<float>&) {};
  mutable int64_t cached_epoch_ = -1;
  mutable std::vector<uint32_t> cached_order_;
};

struct TrainRunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume_from;
  // Stop after this step even if total_steps is larger (0: run to the end).
  int64_t stop_after = 0;
};

// Runs training, writing trace.csv and step-%08d.ckpt files to out_dir.
std::vector<TraceRow> run_training(const ModelConfig& model, const TrainConfig& train,
                                   const Shard& data, const TrainRunOptions& options);

std::string checkpoint_name(int64_t step);

// Training footprint: gpu_count * wall_hours * device_power_kw * pue * grid_intensity.
struct CarbonQuery {
  double gpu_count = 1;
  double wall_hours = 1;
  double device_power_kw = 1;
  double pue = 1;
  double grid_intensity = 1;  // kgCO2e per kWh
};

double energy_kwh(const CarbonQuery& q);
double estimate_carbon(const CarbonQuery& q);
// Grid intensity at which the query's energy produces target_kg.
double implied_grid_intensity(const CarbonQuery& q, double target_kg);

}  // namespace inkuba
