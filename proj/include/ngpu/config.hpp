// SPDX-License-Identifier: Apache-2.0
#ifndef NGPU_CONFIG_HPP
#define NGPU_CONFIG_HPP

#include <map>
#include <string>

#include "ngpu/model.hpp"
#include "ngpu/train.hpp"

namespace ngpu {

// Everything a reproducible experiment needs. Populated in three layers:
// built-in defaults, then a key=value config file, then CLI flags.
struct ExperimentConfig {
  std::string variant = "baseline";
  std::string task = "copy:len=8,alphabet=16";
  int layers = 2;
  int width = 4;
  int channels = 32;
  int kernel = 3;
  int hidden = 32;
  int att_dim = 32;
  double dropout = 0.0;

  int steps = 1000;
  int batch = 16;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-4;
  double clip_norm = 1.0;
  int curriculum_start = 4;
  double curriculum_acc = 0.95;
  uint64_t seed = 1;
  int checkpoint_every = 0;
  int log_every = 10;
  std::string precision = "f64";
  std::string out_dir = "run";

  // Applies "key=value" pairs; '#' starts a comment. Unknown keys throw.
  void apply(const std::map<std::string, std::string>& kv);
  static std::map<std::string, std::string> parse_file(const std::string& path);

  ModelConfig model_config() const;   // vocab sizes filled from the task spec
  TrainConfig train_config() const;
  TaskSpec task_spec() const { return TaskSpec::parse(task); }
  void apply_precision() const;       // sets the run-wide precision mode
  std::string to_text() const;        // canonical key=value dump
};

}  // namespace ngpu

#endif  // NGPU_CONFIG_HPP
