// SPDX-License-Identifier: Apache-2.0
//
// Single experiment binary. Subcommands: datagen, train, eval, gradcheck,
// decode. Every flag mirrors an ExperimentConfig field; precedence is
// built-in default < --config file < explicit flag.
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ngpu/config.hpp"
#include "ngpu/decode.hpp"
#include "ngpu/model.hpp"
#include "ngpu/nn.hpp"
#include "ngpu/train.hpp"

namespace {

using namespace ngpu;

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::string join_ids(const std::vector<int>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    os << v[i];
  }
  return os.str();
}

// Registers one kebab-case flag per ExperimentConfig field. Values land in
// `kv` only when the flag is given, so file values survive unset flags.
void add_config_flags(CLI::App* cmd, std::map<std::string, std::string>& kv,
                      std::string& config_path) {
  cmd->add_option("--config", config_path, "key=value config file, '#' comments");
  auto opt = [cmd, &kv](const std::string& flag, const std::string& key,
                        const std::string& help) {
    cmd->add_option_function<std::string>(
        flag, [&kv, key](const std::string& v) { kv[key] = v; }, help);
  };
  opt("--variant", "variant", "baseline|markovian|extended|attention");
  opt("--task", "task", "task spec, e.g. copy:len=8,alphabet=16");
  opt("--layers", "layers", "stacked cell layers l");
  opt("--width", "width", "state width w");
  opt("--channels", "channels", "state channels m");
  opt("--kernel", "kernel", "convolution kernel size");
  opt("--hidden", "hidden", "attention GRU width");
  opt("--att-dim", "att_dim", "attention scoring width");
  opt("--dropout", "dropout", "candidate dropout rate");
  opt("--steps", "steps", "training steps");
  opt("--batch", "batch", "batch size");
  opt("--lr", "lr", "Adam learning rate");
  opt("--beta1", "beta1", "Adam beta1");
  opt("--beta2", "beta2", "Adam beta2");
  opt("--epsilon", "epsilon", "Adam epsilon");
  opt("--clip-norm", "clip_norm", "global gradient norm cap");
  opt("--curriculum-start", "curriculum_start", "initial instance size");
  opt("--curriculum-acc", "curriculum_acc", "accuracy to advance the curriculum");
  opt("--seed", "seed", "run seed");
  opt("--checkpoint-every", "checkpoint_every", "periodic checkpoint interval, 0 = final only");
  opt("--log-every", "log_every", "metric emission interval");
  opt("--precision", "precision", "f64|f32");
  opt("--out-dir", "out_dir", "run directory");
}

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::map<std::string, std::string>& flag_kv) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg.apply(ExperimentConfig::parse_file(config_path));
  cfg.apply(flag_kv);
  cfg.apply_precision();
  return cfg;
}

// Rebuilds a parameter store for the config and fills it from the checkpoint,
// enforcing the config fingerprint.
Checkpoint load_model(const ExperimentConfig& cfg, const std::string& ckpt_path,
                      ModelConfig& mcfg, ParameterStore& params, Adam& adam) {
  mcfg = cfg.model_config();
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  if (ckpt.config_fingerprint != mcfg.fingerprint())
    throw IntegrityError("checkpoint fingerprint does not match the configured model");
  std::mt19937_64 rng(splitmix64(cfg.seed));
  build_params(mcfg, params, rng);
  restore_params(ckpt, params, adam);
  return ckpt;
}

// --- datagen ---

int cmd_datagen(const std::string& task, long long count, uint64_t seed, int size,
                const std::string& out) {
  TaskSpec spec = TaskSpec::parse(task);
  const int sz = size > 0 ? size : spec.max_size();
  std::vector<TaskSample> samples;
  samples.reserve(count);
  for (long long i = 0; i < count; ++i) {
    TaskSample s = spec.sample(seed, static_cast<uint64_t>(i), sz);
    if (spec.variable_length()) s.target.push_back(Reserved::EOS);
    samples.push_back(std::move(s));
  }
  std::ostringstream header;
  header << "task=" << spec.to_string() << " seed=" << seed << " count=" << count
         << " size=" << sz;
  write_dataset(out, header.str(), samples);
  return 0;
}

// --- train ---

int cmd_train(const ExperimentConfig& cfg, const std::string& resume_path) {
  ModelConfig mcfg = cfg.model_config();
  TrainConfig tcfg = cfg.train_config();
  TaskSpec task = cfg.task_spec();
  std::filesystem::create_directories(cfg.out_dir);

  ParameterStore params;
  Adam adam(tcfg.adam);
  Checkpoint resume;
  bool resuming = false;
  if (!resume_path.empty()) {
    resume = load_model(cfg, resume_path, mcfg, params, adam);
    resuming = true;
  } else {
    std::mt19937_64 rng(splitmix64(cfg.seed));
    build_params(mcfg, params, rng);
  }

  {
    std::ofstream mf(cfg.out_dir + "/manifest.txt");
    mf << "command=train\n" << cfg.to_text() << "fingerprint=" << mcfg.fingerprint() << '\n';
  }

  const std::string metrics_path = cfg.out_dir + "/metrics.csv";
  std::ofstream metrics(metrics_path, resuming ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::invalid_argument("train: cannot write " + metrics_path);
  // No wall-clock column: equal-seed runs must produce byte-identical files.
  if (!resuming) metrics << "step,loss,per_symbol_acc,seq_acc,curriculum_len\n";
  MetricsSink sink = [&metrics](const StepRecord& r) {
    metrics << r.step << ',' << fmt(r.loss) << ',' << fmt(r.per_symbol_acc) << ','
            << fmt(r.seq_acc) << ',' << r.curriculum_len << '\n';
    metrics.flush();
  };

  TrainResult res = train_loop(mcfg, task, tcfg, params, adam, sink,
                               resuming ? &resume : nullptr);

  Checkpoint final_ckpt = make_checkpoint(mcfg, params, adam, res.steps_done,
                                          res.curriculum_len, res.rng_state, res.acc_ema);
  const std::string ckpt_path = cfg.out_dir + "/ckpt_final.bin";
  save_checkpoint(ckpt_path, final_ckpt);
  {
    std::ofstream side(ckpt_path + ".txt");
    side << cfg.to_text() << "fingerprint=" << mcfg.fingerprint() << '\n'
         << "step=" << res.steps_done << '\n';
  }
  if (res.diverged) throw NumericError("training diverged (non-finite loss)");
  std::cout << "trained " << res.steps_done << " steps, last_loss=" << fmt(res.last_loss)
            << ", curriculum_len=" << res.curriculum_len << '\n';
  return 0;
}

// --- eval ---

int cmd_eval(const ExperimentConfig& cfg, const std::string& ckpt_path,
             const std::string& dataset_path, bool with_bleu, int bucket_width,
             const std::string& out_path) {
  ModelConfig mcfg;
  ParameterStore params;
  Adam adam;
  load_model(cfg, ckpt_path, mcfg, params, adam);
  TaskSpec task = cfg.task_spec();
  std::vector<TaskSample> samples = read_dataset(dataset_path);
  if (samples.empty()) throw std::invalid_argument("eval: empty dataset");

  PerplexityReport ppl = per_word_perplexity(mcfg, params, samples);

  const int eos = task.variable_length() ? Reserved::EOS : -1;
  long long sym_hits = 0, sym_total = 0, seq_hits = 0;
  std::vector<std::vector<int>> decodes;
  std::vector<int> src_lens;
  std::vector<double> per_sample_acc;
  for (const auto& s : samples) {
    DecodeResult d = greedy_decode(mcfg, params, s.input, static_cast<int>(s.target.size()), eos);
    long long hits = 0;
    for (size_t k = 0; k < s.target.size(); ++k)
      if (k < d.tokens.size() && d.tokens[k] == s.target[k]) ++hits;
    sym_hits += hits;
    sym_total += static_cast<long long>(s.target.size());
    if (d.tokens == s.target) ++seq_hits;
    per_sample_acc.push_back(static_cast<double>(hits) / s.target.size());
    src_lens.push_back(static_cast<int>(s.input.size()));
    decodes.push_back(std::move(d.tokens));
  }

  std::ostringstream os;
  os << "metric,value\n"
     << "log_perplexity," << fmt(ppl.log_perplexity) << '\n'
     << "perplexity," << fmt(ppl.perplexity) << '\n'
     << "per_symbol_acc," << fmt(static_cast<double>(sym_hits) / sym_total) << '\n'
     << "seq_acc," << fmt(static_cast<double>(seq_hits) / samples.size()) << '\n';
  if (with_bleu) {
    std::vector<std::vector<int>> refs;
    for (const auto& s : samples) refs.push_back(s.target);
    os << "bleu," << fmt(bleu(decodes, refs)) << '\n';
  }

  if (out_path.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream f(out_path);
    if (!f) throw std::invalid_argument("eval: cannot write " + out_path);
    f << os.str();
  }
  if (bucket_width > 0) {
    LengthBucketReport rep = length_bucket_report(src_lens, per_sample_acc, bucket_width);
    if (out_path.empty()) {
      std::cout << rep.to_csv();
    } else {
      std::ofstream f(out_path + ".buckets.csv");
      if (!f) throw std::invalid_argument("eval: cannot write " + out_path + ".buckets.csv");
      f << rep.to_csv();
    }
  }
  return 0;
}

// --- decode ---

int cmd_decode(const ExperimentConfig& cfg, const std::string& ckpt_path,
               const std::string& input_path, int beam, bool do_length_search, int out_len,
               const std::string& out_path) {
  ModelConfig mcfg;
  ParameterStore params;
  Adam adam;
  load_model(cfg, ckpt_path, mcfg, params, adam);
  TaskSpec task = cfg.task_spec();
  const int eos = task.variable_length() ? Reserved::EOS : -1;
  std::vector<TaskSample> samples = read_dataset(input_path);

  std::ostringstream os;
  os << "index,length,total_log_prob,tokens\n";
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    DecodeResult d;
    if (do_length_search) {
      d = length_search(mcfg, params, s.input, eos);
    } else {
      int len = out_len > 0 ? out_len
                            : (s.target.empty() ? static_cast<int>(s.input.size())
                                                : static_cast<int>(s.target.size()));
      d = beam > 1 ? beam_decode(mcfg, params, s.input, len, beam, eos)
                   : greedy_decode(mcfg, params, s.input, len, eos);
    }
    os << i << ',' << d.tokens.size() << ',' << fmt(d.total_log_prob) << ','
       << join_ids(d.tokens) << '\n';
  }
  if (out_path.empty()) {
    std::cout << os.str();
  } else {
    std::ofstream f(out_path);
    if (!f) throw std::invalid_argument("decode: cannot write " + out_path);
    f << os.str();
  }
  return 0;
}

// --- gradcheck ---

Tensor rnd(std::vector<int> shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = d(rng);
  return t;
}

struct Check {
  std::string name;
  double tolerance;
  GraphBuilder build;
  std::map<std::string, Tensor> point;
};

std::vector<Check> primitive_checks(std::mt19937_64& rng) {
  std::vector<Check> checks;
  {
    Check c{"elementwise", 1e-6, nullptr, {}};
    c.point["a"] = rnd({2, 3}, rng);
    c.point["b"] = rnd({2, 3}, rng);
    c.build = [](Tape& t, const std::map<std::string, Tape::Id>& v) {
      Tape::Id a = v.at("a"), b = v.at("b");
      Tape::Id x = t.mul(t.sigmoid(a), t.tanh(b));
      Tape::Id y = t.square(t.sub(a, b));
      return t.sum(t.add(x, t.affine(y, 0.5, 0.1)));
    };
    checks.push_back(std::move(c));
  }
  {
    Check c{"conv_same", 1e-6, nullptr, {}};
    c.point["U"] = rnd({3, 3, 2, 2}, rng);
    c.point["s"] = rnd({2, 3, 2}, rng);
    c.build = [](Tape& t, const std::map<std::string, Tape::Id>& v) {
      return t.sum(t.square(t.conv_same(v.at("U"), v.at("s"))));
    };
    checks.push_back(std::move(c));
  }
  {
    Check c{"matvec_matmul", 1e-6, nullptr, {}};
    c.point["A"] = rnd({3, 4}, rng);
    c.point["B"] = rnd({4, 2}, rng);
    c.point["x"] = rnd({4}, rng);
    c.point["y"] = rnd({3}, rng);
    c.build = [](Tape& t, const std::map<std::string, Tape::Id>& v) {
      Tape::Id mm = t.sum(t.square(t.matmul(v.at("A"), v.at("B"))));
      Tape::Id mv = t.sum(t.tanh(t.matvec(v.at("A"), v.at("x"))));
      Tape::Id mt = t.sum(t.tanh(t.matvec_t(v.at("A"), v.at("y"))));
      return t.add(mm, t.add(mv, mt));
    };
    checks.push_back(std::move(c));
  }
  {
    Check c{"softmax_nll", 1e-6, nullptr, {}};
    c.point["A"] = rnd({5, 3}, rng);
    c.point["x"] = rnd({3}, rng);
    c.build = [](Tape& t, const std::map<std::string, Tape::Id>& v) {
      Tape::Id logits = t.matvec(v.at("A"), v.at("x"));
      return t.add(t.nll(logits, 2), t.sum(t.square(t.softmax_vec(logits))));
    };
    checks.push_back(std::move(c));
  }
  {
    Check c{"structure", 1e-6, nullptr, {}};
    c.point["s"] = rnd({2, 3, 2}, rng);
    c.point["v"] = rnd({2}, rng);
    c.point["E"] = rnd({4, 3}, rng);
    c.build = [](Tape& t, const std::map<std::string, Tape::Id>& v) {
      Tape::Id s2 = t.overwrite_column(v.at("s"), 1, v.at("v"));
      Tape::Id col = t.slice_column(s2, 1);
      Tape::Id e = t.embed_row(v.at("E"), 2);
      Tape::Id cat = t.concat(t.sum(t.square(col)), t.sum(t.tanh(e)));
      return t.sum(t.mul(cat, cat));
    };
    checks.push_back(std::move(c));
  }
  return checks;
}

std::vector<Check> cell_checks(std::mt19937_64& rng) {
  std::vector<Check> checks;
  ParameterStore ps;
  add_cgru_params(ps, "c.", 3, 3, 2, rng);
  add_dcgru_params(ps, "d.", 3, 3, 2, rng);
  {
    Check c{"cgru_step", 1e-5, nullptr, {}};
    for (const auto& n : ps.names())
      if (n.rfind("c.", 0) == 0) c.point[n] = ps.get(n);
    c.point["s"] = rnd({2, 3, 2}, rng);
    c.build = [](Tape& t, const std::map<std::string, Tape::Id>& v) {
      Tape::Id out = cgru_step(t, cgru_vars(v, "c."), v.at("s"));
      return t.sum(t.square(out));
    };
    checks.push_back(std::move(c));
  }
  {
    Check c{"dcgru_step", 1e-5, nullptr, {}};
    for (const auto& n : ps.names())
      if (n.rfind("d.", 0) == 0) c.point[n] = ps.get(n);
    c.point["s"] = rnd({2, 3, 2}, rng);
    c.point["p"] = rnd({2, 3, 2}, rng);
    c.build = [](Tape& t, const std::map<std::string, Tape::Id>& v) {
      Tape::Id out = dcgru_step(t, dcgru_vars(v, "d."), v.at("s"), v.at("p"));
      return t.sum(t.square(out));
    };
    checks.push_back(std::move(c));
  }
  return checks;
}

std::vector<Check> model_checks(std::mt19937_64& rng) {
  std::vector<Check> checks;
  const std::vector<int> input = {4, 5, 4};
  const std::vector<int> target = {5, 4, 5};
  for (Variant var : {Variant::baseline, Variant::markovian, Variant::extended,
                      Variant::attention}) {
    ModelConfig mcfg;
    mcfg.variant = var;
    mcfg.layers = 2;
    mcfg.width = 4;
    mcfg.channels = 4;
    mcfg.vocab_in = 6;
    mcfg.vocab_out = 6;
    mcfg.hidden = 6;
    mcfg.att_dim = 6;
    ParameterStore ps;
    build_params(mcfg, ps, rng);
    Check c{"model_" + to_string(var), 1e-4, nullptr, {}};
    for (const auto& n : ps.names()) c.point[n] = ps.get(n);
    c.build = [mcfg, input, target](Tape& t, const std::map<std::string, Tape::Id>& v) {
      return forward_loss(t, mcfg, v, input, target, 3, nullptr, false).loss;
    };
    checks.push_back(std::move(c));
  }
  return checks;
}

int cmd_gradcheck(const ExperimentConfig& cfg, const std::string& components) {
  if (cfg.precision != "f64")
    throw std::invalid_argument("gradcheck: requires precision=f64");
  std::mt19937_64 rng(splitmix64(cfg.seed));
  std::vector<Check> checks;
  std::stringstream ss(components);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part == "primitives") {
      auto c = primitive_checks(rng);
      std::move(c.begin(), c.end(), std::back_inserter(checks));
    } else if (part == "cells") {
      auto c = cell_checks(rng);
      std::move(c.begin(), c.end(), std::back_inserter(checks));
    } else if (part == "models") {
      auto c = model_checks(rng);
      std::move(c.begin(), c.end(), std::back_inserter(checks));
    } else if (!part.empty()) {
      throw std::invalid_argument("gradcheck: unknown component " + part);
    }
  }
  std::cout << "component,max_rel_err,tolerance,status\n";
  bool all_ok = true;
  for (const auto& c : checks) {
    const double err = gradcheck(c.build, c.point);
    const bool ok = err < c.tolerance;
    all_ok = all_ok && ok;
    std::cout << c.name << ',' << fmt(err) << ',' << fmt(c.tolerance) << ','
              << (ok ? "pass" : "FAIL") << '\n';
  }
  if (!all_ok) throw NumericError("gradcheck: tolerance exceeded");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolutional gated recurrent sequence models: data, training, evaluation"};
  app.require_subcommand(1);

  // datagen
  auto* dg = app.add_subcommand("datagen", "generate a dataset file");
  std::string dg_task = "copy:len=8,alphabet=16", dg_out;
  long long dg_count = 1000;
  uint64_t dg_seed = 1;
  int dg_size = 0;
  dg->add_option("--task", dg_task, "task spec");
  dg->add_option("--count", dg_count, "number of samples");
  dg->add_option("--seed", dg_seed, "generator seed");
  dg->add_option("--size", dg_size, "instance size, 0 = task maximum");
  dg->add_option("--out", dg_out, "output path")->required();

  // shared config flags
  std::map<std::string, std::string> tr_kv, ev_kv, gc_kv, de_kv;
  std::string tr_cfgfile, ev_cfgfile, gc_cfgfile, de_cfgfile;

  auto* tr = app.add_subcommand("train", "train a model");
  add_config_flags(tr, tr_kv, tr_cfgfile);
  std::string tr_resume;
  tr->add_option("--resume", tr_resume, "checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  add_config_flags(ev, ev_kv, ev_cfgfile);
  std::string ev_ckpt, ev_data, ev_out;
  bool ev_bleu = false;
  int ev_buckets = 0;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--dataset", ev_data, "dataset path")->required();
  ev->add_flag("--bleu", ev_bleu, "also report corpus BLEU-4");
  ev->add_option("--buckets", ev_buckets, "length-bucket width, 0 = off");
  ev->add_option("--out", ev_out, "report path, empty = stdout");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_config_flags(gc, gc_kv, gc_cfgfile);
  std::string gc_components = "primitives,cells,models";
  gc->add_option("--components", gc_components, "comma list: primitives,cells,models");

  auto* de = app.add_subcommand("decode", "decode a dataset with a checkpoint");
  add_config_flags(de, de_kv, de_cfgfile);
  std::string de_ckpt, de_input, de_out;
  int de_beam = 0, de_outlen = 0;
  bool de_greedy = false, de_lsearch = false;
  de->add_option("--checkpoint", de_ckpt, "checkpoint path")->required();
  de->add_option("--input", de_input, "dataset path")->required();
  de->add_flag("--greedy", de_greedy, "greedy decoding (default)");
  de->add_option("--beam", de_beam, "beam width");
  de->add_flag("--length-search", de_lsearch, "search output sizes in [n, 2n]");
  de->add_option("--out-len", de_outlen, "output length, 0 = target (or input) size");
  de->add_option("--out", de_out, "output path, empty = stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (dg->parsed()) return cmd_datagen(dg_task, dg_count, dg_seed, dg_size, dg_out);
    if (tr->parsed()) return cmd_train(resolve_config(tr_cfgfile, tr_kv), tr_resume);
    if (ev->parsed())
      return cmd_eval(resolve_config(ev_cfgfile, ev_kv), ev_ckpt, ev_data, ev_bleu,
                      ev_buckets, ev_out);
    if (gc->parsed()) return cmd_gradcheck(resolve_config(gc_cfgfile, gc_kv), gc_components);
    if (de->parsed())
      return cmd_decode(resolve_config(de_cfgfile, de_kv), de_ckpt, de_input, de_beam,
                        de_lsearch, de_outlen, de_out);
  } catch (const ngpu::IntegrityError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ngpu::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
