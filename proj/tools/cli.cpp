#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "synth/bench.hpp"
#include "synth/checkpoint.hpp"
#include "synth/cost_model.hpp"
#include "synth/errors.hpp"
#include "synth/exports.hpp"
#include "synth/run_config.hpp"
#include "synth/trainer.hpp"

namespace synth::cli {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One run per output directory at a time.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw Error("output directory " + dir.string() + " is locked by another run (remove " + path_.string() +
                        " if it is stale)");
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

RunConfig load_config_or_usage(const std::string& path) {
  try {
    return load_run_config(path);
  } catch (const ConfigError& e) {
    throw UsageError(path + ": " + e.what());
  } catch (const MaxLengthError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

SynthesizerSpec variant_or_usage(const std::string& text) {
  try {
    return parse_variant(text);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

std::string metrics_line(std::size_t step, const EvalMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["loss"] = m.loss;
  j["ppl"] = m.ppl();
  j["tok_acc"] = m.tok_acc;
  j["seq_acc"] = m.seq_acc;
  return j.dump();
}

struct TrainArgs {
  std::string config;
  std::string out_dir;
  bool resume = false;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_config_or_usage(a.config);
  if (!a.out_dir.empty()) cfg.out_dir = a.out_dir;
  const fs::path dir = cfg.out_dir;
  fs::create_directories(dir);
  DirLock lock(dir);

  const fs::path ckpt_path = dir / "checkpoint.bin";
  auto run = [&] {
    TrainRun r(cfg.model, cfg.task, cfg.train);
    if (a.resume && fs::exists(ckpt_path)) restore_run(r, cfg, load_checkpoint(ckpt_path));
    return r;
  }();
  write_text(dir / "config.cfg", emit_run_config(cfg));

  auto persist = [&] {
    write_text(dir / "metrics.jsonl", run.log().to_jsonl());
    save_checkpoint(ckpt_path, checkpoint_from_run(run, cfg));
  };
  auto report = [&] {
    if (a.quiet || run.log().records.empty()) return;
    const auto& r = run.log().records.back();
    out << "step " << r.step << " loss " << r.loss << " ppl " << r.ppl << " tok_acc " << r.tok_acc << " seq_acc "
        << r.seq_acc << " secs " << r.secs << '\n';
  };
  std::size_t reported = run.log().records.size();
  while (run.run_until(run.step() + cfg.train.eval_every)) {
    if (run.log().records.size() != reported) {
      reported = run.log().records.size();
      report();
      persist();
    }
  }
  if (run.log().records.size() != reported) report();
  persist();
  if (!a.quiet) out << "checkpoint " << ckpt_path.string() << '\n';
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const TrainRun run = resume_run(ckpt);
  out << metrics_line(run.step(), run.evaluate_now()) << '\n';
  return kExitOk;
}

struct InspectArgs {
  std::string checkpoint;
  std::string config;
  std::string out_dir;
  std::string role;
  int layer = -1;
  int head = -1;
  std::size_t bins = kDefaultHistogramBins;
  std::size_t sample = 0;
};

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  if (a.checkpoint.empty() == a.config.empty()) throw UsageError("inspect needs exactly one of --checkpoint or --config");
  TrainRun run = a.checkpoint.empty() ? [&] {
    const RunConfig cfg = load_config_or_usage(a.config);
    return TrainRun(cfg.model, cfg.task, cfg.train);
  }()
                                      : resume_run(load_checkpoint(a.checkpoint));
  const ModelConfig& mc = run.model_config();
  std::vector<std::string> roles;
  if (!a.role.empty()) {
    roles.push_back(a.role);
  } else {
    if (mc.mode != ModelMode::Decoder) roles.push_back("encoder");
    if (mc.mode != ModelMode::Encoder) roles.push_back("decoder");
    if (mc.mode == ModelMode::EncoderDecoder) roles.push_back("cross");
  }
  if (a.layer >= 0 && static_cast<std::size_t>(a.layer) >= mc.layers) {
    throw ConfigError("layer " + std::to_string(a.layer) + " out of range (" + std::to_string(mc.layers) +
                      " layers)");
  }
  if (a.head >= 0 && static_cast<std::size_t>(a.head) >= mc.heads) {
    throw ConfigError("head " + std::to_string(a.head) + " out of range (" + std::to_string(mc.heads) + " heads)");
  }
  const fs::path dir = a.out_dir;
  fs::create_directories(dir);
  DirLock lock(dir);
  const Batch& batch = run.validation().front();
  for (const auto& role : roles) {
    for (std::size_t l = 0; l < mc.layers; ++l) {
      if (a.layer >= 0 && static_cast<std::size_t>(a.layer) != l) continue;
      for (std::size_t h = 0; h < mc.heads; ++h) {
        if (a.head >= 0 && static_cast<std::size_t>(a.head) != h) continue;
        out << export_attention(run.model(), batch, role, l, h, dir, a.sample).string() << '\n';
      }
    }
  }
  const fs::path hist = dir / "histograms.json";
  export_histogram(run.model(), run.validation(), a.bins, hist, run.step());
  out << hist.string() << '\n';
  return kExitOk;
}

struct BenchArgs {
  std::vector<std::string> variants{"dot_product", "random"};
  std::vector<std::size_t> lengths{64, 128, 256, 512};
  std::size_t d = 64;
  std::size_t heads = 1;
  std::size_t batch = 1;
  std::size_t reps = 5;
  bool backward = false;
  std::string csv;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  BenchConfig bc;
  for (const auto& v : a.variants) bc.variants.push_back(variant_or_usage(v));
  bc.lengths = a.lengths;
  bc.model_dim = a.d;
  bc.heads = a.heads;
  bc.batch = a.batch;
  bc.repetitions = a.reps;
  bc.with_backward = a.backward;
  const std::string text = bench_csv(bench(bc));
  if (!a.csv.empty()) write_text(a.csv, text);
  out << text;
  return kExitOk;
}

struct ParamsArgs {
  std::vector<std::string> variants;
  std::string config;
  std::size_t n = 64;
  std::size_t d = 64;
  std::size_t heads = 1;
  std::size_t k = 8;
  std::size_t fd_a = 0;
  std::size_t fd_b = 0;
  bool table = false;
};

int cmd_params(const ParamsArgs& a, std::ostream& out) {
  if (!a.config.empty()) {
    const RunConfig cfg = load_config_or_usage(a.config);
    const ModelConfig& m = cfg.model;
    std::vector<SynthesizerSpec> specs;
    if (m.mode != ModelMode::Decoder) specs.push_back(m.encoder_attention);
    if (m.mode != ModelMode::Encoder) specs.push_back(m.decoder_attention);
    out << cost_table_csv(cost_table(specs, m.d_model, m.max_len, m.heads));
    return kExitOk;
  }
  if (a.variants.empty()) throw UsageError("params needs --variant or --config");
  if (a.heads == 0 || a.d % a.heads != 0) throw UsageError("--d must be divisible by --heads");
  std::vector<SynthesizerSpec> specs;
  for (const auto& v : a.variants) {
    SynthesizerSpec s = variant_or_usage(v);
    auto set = [&](SynthesizerSpec& x) {
      x.k = a.k;
      x.a = a.fd_a;
      x.b = a.fd_b;
    };
    set(s);
    for (auto& m : s.members) set(m);
    s = s.with_dims(a.n, a.d, a.d / a.heads);
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    specs.push_back(s);
  }
  if (a.table) {
    out << cost_table_csv(cost_table(specs, a.d, a.n, a.heads));
  } else {
    for (const auto& s : specs) out << param_count(s) << '\n';
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synthesizer attention variants: training, evaluation, cost model and analysis exports", "synth"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("--config", train_args.config, "run config (key = value)")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_args.out_dir, "output directory (overrides out_dir)");
  train->add_flag("--resume", train_args.resume, "continue from <out>/checkpoint.bin when present");
  train->add_flag("--quiet", train_args.quiet, "no progress lines");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on its validation split");
  eval->add_option("--checkpoint", eval_args.checkpoint)->required()->check(CLI::ExistingFile);

  InspectArgs inspect_args;
  auto* inspect = app.add_subcommand("inspect", "export attention heatmaps (CSV) and weight histograms (JSON)");
  inspect->add_option("--checkpoint", inspect_args.checkpoint)->check(CLI::ExistingFile);
  inspect->add_option("--config", inspect_args.config, "inspect an untrained model")->check(CLI::ExistingFile);
  inspect->add_option("--out", inspect_args.out_dir)->required();
  inspect->add_option("--role", inspect_args.role)->check(CLI::IsMember({"encoder", "decoder", "cross"}));
  inspect->add_option("--layer", inspect_args.layer)->check(CLI::NonNegativeNumber);
  inspect->add_option("--head", inspect_args.head)->check(CLI::NonNegativeNumber);
  inspect->add_option("--bins", inspect_args.bins)->check(CLI::Range(2, 1 << 20));
  inspect->add_option("--sample", inspect_args.sample, "batch row to export");

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "time one attention layer per variant and length");
  bench_cmd->add_option("--variants", bench_args.variants)->delimiter(',');
  bench_cmd->add_option("--lengths", bench_args.lengths)->delimiter(',');
  bench_cmd->add_option("--d", bench_args.d);
  bench_cmd->add_option("--heads", bench_args.heads);
  bench_cmd->add_option("--batch", bench_args.batch);
  bench_cmd->add_option("--reps", bench_args.reps)->check(CLI::Range(3, 1 << 20));
  bench_cmd->add_flag("--backward", bench_args.backward, "time forward + backward");
  bench_cmd->add_option("--csv", bench_args.csv, "also write the table here");

  ParamsArgs params_args;
  auto* params = app.add_subcommand("params", "synthesizer parameter count per head");
  params->add_option("--variant", params_args.variants, "variant name(s), comma separated")->delimiter(',');
  params->add_option("--config", params_args.config)->check(CLI::ExistingFile);
  params->add_option("--n", params_args.n, "maximum length N");
  params->add_option("--d", params_args.d, "model width");
  params->add_option("--heads", params_args.heads);
  params->add_option("--k", params_args.k, "factorized random rank");
  params->add_option("--fd-a", params_args.fd_a);
  params->add_option("--fd-b", params_args.fd_b);
  params->add_flag("--table", params_args.table, "CSV with FLOPs at L = N");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "synth: " << e.what() << "\n";
    err << "run 'synth --help' for usage\n";
    return kExitUsage;
  }

  try {
    if (train->parsed()) return cmd_train(train_args, out);
    if (eval->parsed()) return cmd_eval(eval_args, out);
    if (inspect->parsed()) return cmd_inspect(inspect_args, out);
    if (bench_cmd->parsed()) return cmd_bench(bench_args, out);
    if (params->parsed()) return cmd_params(params_args, out);
  } catch (const UsageError& e) {
    err << "synth: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "synth: error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace synth::cli
