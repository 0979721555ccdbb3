// SPDX-License-Identifier: Apache-2.0
#include "ngpu/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ngpu {

void Adam::step(ParameterStore& params, const ParameterStore& grads) {
  if (m_.count() == 0) {
    for (const auto& name : params.names()) {
      m_.add(name, Tensor::zeros_like(params.get(name)));
      v_.add(name, Tensor::zeros_like(params.get(name)));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const Precision prec = precision_mode();
  for (const auto& name : params.names()) {
    Tensor& p = params.get(name);
    const Tensor& g = grads.get(name);
    Tensor& m = m_.get(name);
    Tensor& v = v_.get(name);
    if (!p.same_shape(g)) throw ShapeError("Adam: gradient shape mismatch for " + name);
    for (int i = 0; i < p.size(); ++i) {
      const double gi = g.data()[i];
      m.data()[i] = round_prec(cfg_.beta1 * m.data()[i] + (1.0 - cfg_.beta1) * gi, prec);
      v.data()[i] = round_prec(cfg_.beta2 * v.data()[i] + (1.0 - cfg_.beta2) * gi * gi, prec);
      const double mhat = m.data()[i] / bc1;
      const double vhat = v.data()[i] / bc2;
      const double upd = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      if (!std::isfinite(upd))
        throw NumericError("Adam: non-finite update for parameter " + name);
      p.data()[i] = round_prec(p.data()[i] - upd, prec);
    }
  }
}

double global_norm(const ParameterStore& grads) {
  double sq = 0.0;
  for (const auto& name : grads.names()) {
    const Tensor& g = grads.get(name);
    for (int i = 0; i < g.size(); ++i) sq += g.data()[i] * g.data()[i];
  }
  return std::sqrt(sq);
}

double clip_global_norm(ParameterStore& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (!std::isfinite(norm)) throw NumericError("clip_global_norm: non-finite gradient norm");
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    const Precision prec = precision_mode();
    for (const auto& name : grads.names()) {
      Tensor& g = grads.get(name);
      for (int i = 0; i < g.size(); ++i) g.data()[i] = round_prec(g.data()[i] * scale, prec);
    }
  }
  return norm;
}

// --- checkpoint serialization ---

uint32_t crc32(const unsigned char* data, size_t len, uint32_t seed) {
  static uint32_t table[256];
  static bool init = false;
  if (!init) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    init = true;
  }
  uint32_t c = seed ^ 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

namespace {

constexpr char kMagic[8] = {'N', 'G', 'P', 'U', 'C', 'K', 'P', '1'};

template <class T>
void put(std::string& buf, const T& v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::string& buf, const std::string& s) {
  put(buf, static_cast<uint32_t>(s.size()));
  buf.append(s);
}

struct Reader {
  const unsigned char* p;
  size_t left;
  template <class T>
  T get() {
    if (left < sizeof(T)) throw IntegrityError("checkpoint: truncated field");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    left -= sizeof(T);
    return v;
  }
  std::string get_str() {
    const uint32_t n = get<uint32_t>();
    if (left < n) throw IntegrityError("checkpoint: truncated string");
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string buf;
  buf.append(kMagic, sizeof(kMagic));
  put(buf, ckpt.version);
  put(buf, ckpt.config_fingerprint);
  put(buf, ckpt.step);
  put(buf, static_cast<int32_t>(ckpt.curriculum_len));
  put_str(buf, ckpt.rng_state);
  put(buf, static_cast<uint32_t>(ckpt.tensors.count()));
  for (const auto& name : ckpt.tensors.names()) {
    const Tensor& t = ckpt.tensors.get(name);
    put_str(buf, name);
    put(buf, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape()) put(buf, static_cast<int32_t>(d));
    buf.append(reinterpret_cast<const char*>(t.data()), sizeof(double) * t.size());
  }
  const uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
  put(buf, crc);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 4) throw IntegrityError("checkpoint: file too short");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw IntegrityError("checkpoint: bad magic");
  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  const uint32_t crc =
      crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
  if (crc != stored_crc) throw IntegrityError("checkpoint: checksum mismatch");

  Reader r{reinterpret_cast<const unsigned char*>(buf.data()) + sizeof(kMagic),
           buf.size() - sizeof(kMagic) - 4};
  Checkpoint ckpt;
  ckpt.version = r.get<uint32_t>();
  if (ckpt.version != 1)
    throw IntegrityError("checkpoint: unsupported version " + std::to_string(ckpt.version));
  ckpt.config_fingerprint = r.get<uint64_t>();
  ckpt.step = r.get<uint64_t>();
  ckpt.curriculum_len = r.get<int32_t>();
  ckpt.rng_state = r.get_str();
  const uint32_t count = r.get<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_str();
    const uint32_t rank = r.get<uint32_t>();
    if (rank > 8) throw IntegrityError("checkpoint: implausible tensor rank");
    std::vector<int> shape;
    long long n = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.get<int32_t>());
      if (shape.back() <= 0) throw IntegrityError("checkpoint: bad dimension");
      n *= shape.back();
    }
    if (r.left < sizeof(double) * static_cast<size_t>(n))
      throw IntegrityError("checkpoint: truncated tensor data");
    std::vector<double> data(static_cast<size_t>(n));
    std::memcpy(data.data(), r.p, sizeof(double) * data.size());
    r.p += sizeof(double) * data.size();
    r.left -= sizeof(double) * data.size();
    ckpt.tensors.add(name, Tensor(std::move(shape), std::move(data)));
  }
  return ckpt;
}

Checkpoint make_checkpoint(const ModelConfig& mcfg, const ParameterStore& params, Adam& adam,
                           uint64_t step, int curriculum_len, const std::string& rng_state,
                           double acc_ema) {
  Checkpoint ckpt;
  ckpt.config_fingerprint = mcfg.fingerprint();
  ckpt.step = step;
  ckpt.curriculum_len = curriculum_len;
  ckpt.rng_state = rng_state;
  for (const auto& name : params.names()) ckpt.tensors.add(name, params.get(name));
  if (adam.first_moments().count() > 0) {
    for (const auto& name : params.names()) {
      ckpt.tensors.add("adam.m/" + name, adam.first_moments().get(name));
      ckpt.tensors.add("adam.v/" + name, adam.second_moments().get(name));
    }
  }
  ckpt.tensors.add("train/acc_ema", Tensor({1}, {acc_ema}));
  return ckpt;
}

void restore_params(const Checkpoint& ckpt, ParameterStore& params, Adam& adam) {
  const bool moments = ckpt.tensors.has("adam.m/" + params.names().front());
  for (const auto& name : params.names()) {
    if (!ckpt.tensors.has(name))
      throw IntegrityError("checkpoint: missing tensor " + name);
    const Tensor& src = ckpt.tensors.get(name);
    Tensor& dst = params.get(name);
    if (src.shape() != dst.shape())
      throw IntegrityError("checkpoint: shape mismatch for " + name);
    dst = src;
    if (moments) {
      if (!ckpt.tensors.has("adam.m/" + name) || !ckpt.tensors.has("adam.v/" + name))
        throw IntegrityError("checkpoint: missing optimizer moments for " + name);
      adam.first_moments().add(name, ckpt.tensors.get("adam.m/" + name));
      adam.second_moments().add(name, ckpt.tensors.get("adam.v/" + name));
    }
  }
  adam.set_steps_taken(static_cast<long long>(ckpt.step));
}

// --- training loop ---

TrainResult train_loop(const ModelConfig& mcfg, const TaskSpec& task, const TrainConfig& tcfg,
                       ParameterStore& params, Adam& adam, const MetricsSink& sink,
                       const Checkpoint* resume,
                       const std::function<bool(const StepRecord&)>& stop_check) {
  mcfg.validate();
  std::mt19937_64 rng(splitmix64(tcfg.seed));
  uint64_t start_step = 0;
  int cur_len = std::min(tcfg.curriculum_start, tcfg.max_len);
  if (resume) {
    std::istringstream is(resume->rng_state);
    is >> rng;
    if (!is) throw IntegrityError("train_loop: bad RNG state in checkpoint");
    start_step = resume->step;
    cur_len = resume->curriculum_len;
  }

  double acc_ema = 0.0;
  if (resume && resume->tensors.has("train/acc_ema"))
    acc_ema = resume->tensors.get("train/acc_ema")[0];
  TrainResult result;
  result.curriculum_len = cur_len;
  const auto t0 = std::chrono::steady_clock::now();

  for (uint64_t step = start_step; step < static_cast<uint64_t>(tcfg.steps); ++step) {
    // mostly the current curriculum size, with occasional smaller instances
    // to keep earlier sizes rehearsed; RNG consumption is fixed per step
    std::uniform_int_distribution<int> len_dist(1, cur_len);
    std::uniform_real_distribution<double> mix(0.0, 1.0);
    const int sampled = len_dist(rng);
    const int size = mix(rng) < 0.25 ? sampled : cur_len;

    // assemble the batch up front so RNG consumption is independent of model state
    std::vector<TaskSample> batch;
    batch.reserve(tcfg.batch);
    for (int b = 0; b < tcfg.batch; ++b) {
      TaskSample s = task.sample(tcfg.seed, rng(), size);
      if (task.variable_length()) s.target.push_back(Reserved::EOS);
      batch.push_back(std::move(s));
    }
    int mem_len = 1;
    for (const auto& s : batch)
      mem_len = std::max<int>(mem_len, std::max(s.input.size(), s.target.size()));

    ParameterStore grads;
    for (const auto& name : params.names()) grads.add(name, Tensor::zeros_like(params.get(name)));

    double loss_sum = 0.0;
    long long sym_hits = 0, sym_total = 0, seq_hits = 0;
    const double inv_batch = 1.0 / tcfg.batch;
    for (const auto& s : batch) {
      Tape tape;
      auto vars = make_leaves(tape, params);
      ForwardResult fwd = forward_loss(tape, mcfg, vars, s.input, s.target, mem_len, &rng, true);
      loss_sum += tape.value(fwd.loss)[0];
      bool seq_ok = true;
      for (size_t k = 0; k < s.target.size(); ++k) {
        const Tensor& l = tape.value(fwd.logits[k]);
        int best = 0;
        for (int i = 1; i < l.size(); ++i)
          if (l[i] > l[best]) best = i;
        if (best == s.target[k]) ++sym_hits; else seq_ok = false;
        ++sym_total;
      }
      if (seq_ok) ++seq_hits;
      Tape::Id scaled = tape.affine(fwd.loss, inv_batch, 0.0);
      tape.backward(scaled);
      for (const auto& [name, id] : vars) {
        Tensor& acc = grads.get(name);
        const Tensor& g = tape.grad(id);
        for (int i = 0; i < acc.size(); ++i) acc.data()[i] += g.data()[i];
      }
    }

    const double loss = loss_sum * inv_batch;
    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.steps_done = step;
      result.last_loss = loss;
      result.acc_ema = acc_ema;
      return result;
    }
    clip_global_norm(grads, tcfg.clip_norm);
    adam.step(params, grads);

    StepRecord rec;
    rec.step = step + 1;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rec.loss = loss;
    rec.per_symbol_acc = sym_total ? static_cast<double>(sym_hits) / sym_total : 0.0;
    rec.seq_acc = static_cast<double>(seq_hits) / tcfg.batch;
    rec.curriculum_len = cur_len;

    acc_ema = 0.9 * acc_ema + 0.1 * rec.per_symbol_acc;
    if (acc_ema > tcfg.curriculum_acc && cur_len < tcfg.max_len) {
      ++cur_len;
      acc_ema = 0.0;
    }

    result.steps_done = rec.step;
    result.last_loss = loss;
    result.curriculum_len = cur_len;

    if (!tcfg.out_dir.empty() && tcfg.checkpoint_every > 0 &&
        rec.step % static_cast<uint64_t>(tcfg.checkpoint_every) == 0) {
      std::ostringstream os;
      os << rng;
      save_checkpoint(tcfg.out_dir + "/ckpt_latest.bin",
                      make_checkpoint(mcfg, params, adam, rec.step, cur_len, os.str(), acc_ema));
    }

    const bool log_now = tcfg.log_every > 0 &&
                         (rec.step % tcfg.log_every == 0 || rec.step == static_cast<uint64_t>(tcfg.steps));
    if (log_now && sink) sink(rec);
    if (log_now && stop_check && stop_check(rec)) break;
  }
  std::ostringstream os;
  os << rng;
  result.rng_state = os.str();
  result.acc_ema = acc_ema;
  return result;
}

}  // namespace ngpu
