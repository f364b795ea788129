#include "synth/run_config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "synth/errors.hpp"

namespace synth {
namespace {

struct AttentionOptions {
  std::string variant = "dot_product";
  std::size_t k = 8;
  std::size_t fd_a = 0;
  std::size_t fd_b = 0;
  bool scale_dot = true;
  bool mixture_learnable = true;
};

void apply_options(SynthesizerSpec& spec, const AttentionOptions& o) {
  spec.k = o.k;
  spec.a = o.fd_a;
  spec.b = o.fd_b;
  spec.scale_dot = o.scale_dot;
  spec.learnable_weights = o.mixture_learnable;
  for (auto& m : spec.members) apply_options(m, o);
}

AttentionOptions options_of(const SynthesizerSpec& spec) {
  return {spec.name(), spec.k, spec.a, spec.b, spec.scale_dot, spec.learnable_weights};
}

SynthesizerSpec build_spec(const AttentionOptions& o, const ModelConfig& m) {
  SynthesizerSpec spec = parse_variant(o.variant);
  apply_options(spec, o);
  return spec.with_dims(m.max_len, m.d_model, m.heads == 0 ? 0 : m.d_model / m.heads);
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

class Reader {
 public:
  explicit Reader(std::map<std::string, std::pair<std::string, int>> values) : values_(std::move(values)) {}

  template <class T>
  void get(const std::string& key, T& out) {
    auto it = values_.find(key);
    if (it == values_.end()) return;
    used_.insert(key);
    const auto& [text, line] = it->second;
    out = convert<T>(key, text, line);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void reject_unused() const {
    for (const auto& [key, v] : values_) {
      if (!used_.count(key)) throw ConfigError("line " + std::to_string(v.second) + ": unknown key '" + key + "'");
    }
  }

 private:
  template <class T>
  static T convert(const std::string& key, const std::string& text, int line) {
    auto fail = [&](const char* what) {
      return ConfigError("line " + std::to_string(line) + ": " + key + " expects " + what + ", got '" + text + "'");
    };
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true") return true;
      if (text == "false") return false;
      throw fail("true or false");
    } else {
      T value{};
      const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
      if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw fail(std::is_floating_point_v<T> ? "a number" : "a non-negative integer");
      }
      return value;
    }
  }

  std::map<std::string, std::pair<std::string, int>> values_;
  std::set<std::string> used_;
};

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (model.vocab < model_vocab(task)) {
    throw ConfigError("model_vocab " + std::to_string(model.vocab) + " is smaller than the task's " +
                      std::to_string(model_vocab(task)));
  }
  if (formatted_length(task, model.mode) > model.max_len) {
    throw MaxLengthError("task sequences of length " + std::to_string(formatted_length(task, model.mode)) +
                         " exceed max_len " + std::to_string(model.max_len));
  }
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

RunConfig default_run_config(const SynthesizerSpec& variant) {
  RunConfig c;
  c.model = fit_model_to_task(c.model, c.task);
  AttentionOptions o = options_of(variant);
  c.model.encoder_attention = build_spec(o, c.model);
  c.model.decoder_attention = build_spec(o, c.model);
  return c;
}

RunConfig parse_run_config(std::string_view text) {
  std::map<std::string, std::pair<std::string, int>> values;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (const auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    std::string key = trim(std::string_view(line).substr(0, eq));
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!values.emplace(key, std::make_pair(value, line_no)).second) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }

  Reader r(std::move(values));
  RunConfig c;

  std::string s;
  s = std::string(task_name(c.task.kind));
  r.get("task", s);
  c.task.kind = parse_task(s);
  r.get("vocab", c.task.vocab);
  r.get("seq_len", c.task.seq_len);
  r.get("data_seed", c.task.seed);
  r.get("train_size", c.task.train_size);
  r.get("val_size", c.task.val_size);

  ModelConfig& m = c.model;
  s = std::string(mode_name(m.mode));
  r.get("mode", s);
  m.mode = parse_mode(s);
  r.get("layers", m.layers);
  r.get("d_model", m.d_model);
  r.get("heads", m.heads);
  r.get("ffn_dim", m.ffn_dim);
  m.vocab = model_vocab(c.task);
  r.get("model_vocab", m.vocab);
  m.max_len = formatted_length(c.task, m.mode);
  r.get("max_len", m.max_len);
  r.get("dropout", m.dropout);
  r.get("tie_embeddings", m.tie_embeddings);
  r.get("share_synthesizers", m.share_synthesizers);
  s = std::string(kind_name(m.cross_attention));
  r.get("cross_attention", s);
  const SynthesizerSpec cross = parse_variant(s);
  if (cross.kind != SynthKind::DotProduct) throw ConfigError("cross_attention must be dot_product; got '" + s + "'");
  m.cross_attention = cross.kind;

  AttentionOptions shared;
  r.get("variant", shared.variant);
  r.get("k", shared.k);
  r.get("fd_a", shared.fd_a);
  r.get("fd_b", shared.fd_b);
  r.get("scale_dot", shared.scale_dot);
  r.get("mixture_learnable", shared.mixture_learnable);
  for (const std::string prefix : {"encoder_", "decoder_"}) {
    AttentionOptions o = shared;
    r.get(prefix + "variant", o.variant);
    r.get(prefix + "k", o.k);
    r.get(prefix + "fd_a", o.fd_a);
    r.get(prefix + "fd_b", o.fd_b);
    r.get(prefix + "scale_dot", o.scale_dot);
    r.get(prefix + "mixture_learnable", o.mixture_learnable);
    (prefix == "encoder_" ? m.encoder_attention : m.decoder_attention) = build_spec(o, m);
  }

  TrainConfig& t = c.train;
  r.get("steps", t.steps);
  r.get("eval_every", t.eval_every);
  r.get("batch_size", t.batch_size);
  r.get("lr", t.adam.lr);
  r.get("beta1", t.adam.beta1);
  r.get("beta2", t.adam.beta2);
  r.get("eps", t.adam.eps);
  r.get("warmup_steps", t.adam.warmup_steps);
  r.get("early_stop_seq_acc", t.early_stop_seq_acc);
  r.get("early_stop_tok_acc", t.early_stop_tok_acc);
  r.get("model_seed", t.model_seed);
  r.get("out_dir", c.out_dir);

  r.reject_unused();
  c.validate();
  return c;
}

std::string emit_run_config(const RunConfig& c) {
  std::string out = "# synth run config\n";
  auto put = [&out](std::string_view key, const std::string& value) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  };
  auto num = [](auto v) { return std::to_string(v); };
  auto flag = [](bool v) { return std::string(v ? "true" : "false"); };

  out += "\n# task\n";
  put("task", std::string(task_name(c.task.kind)));
  put("vocab", num(c.task.vocab));
  put("seq_len", num(c.task.seq_len));
  put("data_seed", num(c.task.seed));
  put("train_size", num(c.task.train_size));
  put("val_size", num(c.task.val_size));

  const ModelConfig& m = c.model;
  out += "\n# model\n";
  put("mode", std::string(mode_name(m.mode)));
  put("layers", num(m.layers));
  put("d_model", num(m.d_model));
  put("heads", num(m.heads));
  put("ffn_dim", num(m.ffn_dim));
  put("model_vocab", num(m.vocab));
  put("max_len", num(m.max_len));
  put("dropout", format_double(m.dropout));
  put("tie_embeddings", flag(m.tie_embeddings));
  put("share_synthesizers", flag(m.share_synthesizers));
  put("cross_attention", std::string(kind_name(m.cross_attention)));
  for (const auto& [prefix, spec] : {std::pair<std::string, const SynthesizerSpec*>{"encoder_", &m.encoder_attention},
                                     {"decoder_", &m.decoder_attention}}) {
    const AttentionOptions o = options_of(*spec);
    put(prefix + "variant", o.variant);
    put(prefix + "k", num(o.k));
    put(prefix + "fd_a", num(o.fd_a));
    put(prefix + "fd_b", num(o.fd_b));
    put(prefix + "scale_dot", flag(o.scale_dot));
    put(prefix + "mixture_learnable", flag(o.mixture_learnable));
  }

  const TrainConfig& t = c.train;
  out += "\n# training\n";
  put("steps", num(t.steps));
  put("eval_every", num(t.eval_every));
  put("batch_size", num(t.batch_size));
  put("lr", format_double(t.adam.lr));
  put("beta1", format_double(t.adam.beta1));
  put("beta2", format_double(t.adam.beta2));
  put("eps", format_double(t.adam.eps));
  put("warmup_steps", num(t.adam.warmup_steps));
  put("early_stop_seq_acc", format_double(t.early_stop_seq_acc));
  put("early_stop_tok_acc", format_double(t.early_stop_tok_acc));
  put("model_seed", num(t.model_seed));
  put("out_dir", c.out_dir);
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

}  // namespace synth
