// SPDX-License-Identifier: Apache-2.0
#ifndef NGPU_TRAIN_HPP
#define NGPU_TRAIN_HPP

#include <functional>
#include <optional>
#include <string>

#include "ngpu/model.hpp"

namespace ngpu {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-4;
};

/// Adam with bias correction. Moment tensors are created lazily on the
/// first step, in parameter-store order.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterStore& params, const ParameterStore& grads);

  const AdamConfig& config() const { return cfg_; }
  long long steps_taken() const { return t_; }
  ParameterStore& first_moments() { return m_; }
  ParameterStore& second_moments() { return v_; }
  void set_steps_taken(long long t) { t_ = t; }

 private:
  AdamConfig cfg_;
  ParameterStore m_, v_;
  long long t_ = 0;
};

// Returns the global L2 norm over all gradient tensors.
double global_norm(const ParameterStore& grads);
// Scales all gradients so the global norm is at most max_norm.
// Returns the pre-clip norm. Throws NumericError on non-finite gradients.
double clip_global_norm(ParameterStore& grads, double max_norm);

// --- checkpoints: little-endian binary with a field table and CRC-32 trailer ---

struct Checkpoint {
  uint32_t version = 1;
  uint64_t config_fingerprint = 0;
  uint64_t step = 0;
  int curriculum_len = 0;
  std::string rng_state;
  ParameterStore tensors;  // parameters plus optimizer moments ("adam.m/...", "adam.v/...")
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);  // throws IntegrityError

uint32_t crc32(const unsigned char* data, size_t len, uint32_t seed = 0);

// --- training loop ---

struct TrainConfig {
  int steps = 1000;
  int batch = 16;
  double clip_norm = 1.0;
  AdamConfig adam;
  int curriculum_start = 4;
  int max_len = 8;                // instance-size cap (length or digits)
  double curriculum_acc = 0.95;   // advance when the smoothed accuracy exceeds this
  uint64_t seed = 1;
  int checkpoint_every = 0;       // 0: only the final checkpoint
  int log_every = 10;
  std::string out_dir;            // empty: no files written
};

struct StepRecord {
  uint64_t step;
  double wall_ms;
  double loss;
  double per_symbol_acc;
  double seq_acc;
  int curriculum_len;
};

struct TrainResult {
  uint64_t steps_done = 0;
  double last_loss = 0.0;
  int curriculum_len = 0;
  double acc_ema = 0.0;   // smoothed accuracy driving the curriculum
  bool diverged = false;
  std::string rng_state;  // serialized training RNG at exit, for resume
};

using MetricsSink = std::function<void(const StepRecord&)>;

// Teacher-forced training per the recipe: sample batch, forward, backward,
// clip to clip_norm, Adam step. Deterministic given the seed (in f64 mode).
// Resumes from `resume` when given. Stops early when `stop_check` returns
// true (checked every log_every steps).
TrainResult train_loop(const ModelConfig& mcfg, const TaskSpec& task, const TrainConfig& tcfg,
                       ParameterStore& params, Adam& adam,
                       const MetricsSink& sink = nullptr,
                       const Checkpoint* resume = nullptr,
                       const std::function<bool(const StepRecord&)>& stop_check = nullptr);

// Builds a checkpoint of the current training state. The curriculum EMA is
// stored as the extra tensor "train/acc_ema" so a resumed run advances the
// curriculum exactly like an uninterrupted one.
Checkpoint make_checkpoint(const ModelConfig& mcfg, const ParameterStore& params, Adam& adam,
                           uint64_t step, int curriculum_len, const std::string& rng_state,
                           double acc_ema = 0.0);

// Copies the model tensors and optimizer moments of a loaded checkpoint back
// into a freshly built store and a fresh optimizer. Throws IntegrityError on
// missing tensors or shape mismatches.
void restore_params(const Checkpoint& ckpt, ParameterStore& params, Adam& adam);

}  // namespace ngpu

#endif  // NGPU_TRAIN_HPP
