// SPDX-License-Identifier: Apache-2.0
#include "ngpu/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ngpu {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int to_int(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + k + ": " + v);
  }
}

double to_double(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + k + ": " + v);
  }
}

uint64_t to_u64(const std::string& k, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad seed for " + k + ": " + v);
  }
}

}  // namespace

void ExperimentConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "variant") variant = v;
    else if (k == "task") task = v;
    else if (k == "layers") layers = to_int(k, v);
    else if (k == "width") width = to_int(k, v);
    else if (k == "channels") channels = to_int(k, v);
    else if (k == "kernel") kernel = to_int(k, v);
    else if (k == "hidden") hidden = to_int(k, v);
    else if (k == "att_dim") att_dim = to_int(k, v);
    else if (k == "dropout") dropout = to_double(k, v);
    else if (k == "steps") steps = to_int(k, v);
    else if (k == "batch") batch = to_int(k, v);
    else if (k == "lr") lr = to_double(k, v);
    else if (k == "beta1") beta1 = to_double(k, v);
    else if (k == "beta2") beta2 = to_double(k, v);
    else if (k == "epsilon") epsilon = to_double(k, v);
    else if (k == "clip_norm") clip_norm = to_double(k, v);
    else if (k == "curriculum_start") curriculum_start = to_int(k, v);
    else if (k == "curriculum_acc") curriculum_acc = to_double(k, v);
    else if (k == "seed") seed = to_u64(k, v);
    else if (k == "checkpoint_every") checkpoint_every = to_int(k, v);
    else if (k == "log_every") log_every = to_int(k, v);
    else if (k == "precision") precision = v;
    else if (k == "out_dir") out_dir = v;
    else throw std::invalid_argument("config: unknown key: " + k);
  }
}

std::map<std::string, std::string> ExperimentConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: missing '=' at " + path + ":" +
                                  std::to_string(lineno));
    std::string k = trim(line.substr(0, eq));
    std::string v = trim(line.substr(eq + 1));
    if (k.empty()) throw std::invalid_argument("config: empty key at " + path + ":" +
                                               std::to_string(lineno));
    kv[k] = v;
  }
  return kv;
}

ModelConfig ExperimentConfig::model_config() const {
  ModelConfig m;
  m.variant = variant_from_string(variant);
  m.layers = layers;
  m.width = width;
  m.channels = channels;
  m.kw = kernel;
  m.kh = kernel;
  const TaskSpec spec = task_spec();
  m.vocab_in = spec.vocab_size();
  m.vocab_out = spec.vocab_size();
  m.hidden = hidden;
  m.att_dim = att_dim;
  m.dropout = dropout;
  m.validate();
  return m;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig t;
  t.steps = steps;
  t.batch = batch;
  t.clip_norm = clip_norm;
  t.adam.lr = lr;
  t.adam.beta1 = beta1;
  t.adam.beta2 = beta2;
  t.adam.eps = epsilon;
  t.curriculum_start = curriculum_start;
  t.max_len = task_spec().max_size();
  t.curriculum_acc = curriculum_acc;
  t.seed = seed;
  t.checkpoint_every = checkpoint_every;
  t.log_every = log_every;
  t.out_dir = out_dir;
  return t;
}

void ExperimentConfig::apply_precision() const {
  if (precision == "f64") set_precision_mode(Precision::f64);
  else if (precision == "f32") set_precision_mode(Precision::f32);
  else throw std::invalid_argument("config: precision must be f64 or f32: " + precision);
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "variant=" << variant << '\n'
     << "task=" << task << '\n'
     << "layers=" << layers << '\n'
     << "width=" << width << '\n'
     << "channels=" << channels << '\n'
     << "kernel=" << kernel << '\n'
     << "hidden=" << hidden << '\n'
     << "att_dim=" << att_dim << '\n'
     << "dropout=" << dropout << '\n'
     << "steps=" << steps << '\n'
     << "batch=" << batch << '\n'
     << "lr=" << lr << '\n'
     << "beta1=" << beta1 << '\n'
     << "beta2=" << beta2 << '\n'
     << "epsilon=" << epsilon << '\n'
     << "clip_norm=" << clip_norm << '\n'
     << "curriculum_start=" << curriculum_start << '\n'
     << "curriculum_acc=" << curriculum_acc << '\n'
     << "seed=" << seed << '\n'
     << "checkpoint_every=" << checkpoint_every << '\n'
     << "log_every=" << log_every << '\n'
     << "precision=" << precision << '\n'
     << "out_dir=" << out_dir << '\n';
  return os.str();
}

}  // namespace ngpu
