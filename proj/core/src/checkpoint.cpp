#include "synth/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "synth/errors.hpp"
#include "synth/rng.hpp"

namespace synth {
namespace {

constexpr std::string_view kMagic = "SYNTHCKP";
constexpr std::size_t kPreamble = 8 + 4 + 8 + 8;

std::uint64_t fnv1a(std::string_view bytes) { return stream_id(bytes); }

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

void put_tensor(std::string& payload, const StoredTensor& t) {
  for (double x : t.data) put_u64(payload, std::bit_cast<std::uint64_t>(x));
}

std::string first_difference(const RunConfig& a, const RunConfig& b) {
  std::istringstream sa(emit_run_config(a)), sb(emit_run_config(b));
  std::string la, lb;
  while (std::getline(sa, la)) {
    if (!std::getline(sb, lb)) return la;
    if (la != lb) return "'" + lb + "' in the checkpoint vs '" + la + "'";
  }
  return "config fields not expressible in the config file";
}

std::vector<StoredTensor> stored_moments(const TrainRun& run, const std::map<std::string, std::vector<double>>& moments) {
  std::vector<StoredTensor> out;
  for (const auto& p : run.model().params().entries()) {
    auto it = moments.find(p.name);
    if (it == moments.end()) continue;
    out.push_back({p.name, p.tensor.shape(), it->second});
  }
  return out;
}

}  // namespace

Checkpoint checkpoint_from_run(const TrainRun& run, const RunConfig& config) {
  Checkpoint c;
  c.config = config;
  for (const auto& p : run.model().params().entries()) {
    const auto d = p.tensor.data();
    c.params.push_back({p.name, p.tensor.shape(), std::vector<double>(d.begin(), d.end())});
  }
  c.adam_step = run.optimizer().step;
  c.adam_m = stored_moments(run, run.optimizer().m);
  c.adam_v = stored_moments(run, run.optimizer().v);
  c.step = run.step();
  c.elapsed_secs = run.elapsed_secs();
  c.finished = run.finished();
  c.log = run.log();
  c.data_seed = run.task().seed;
  c.model_seed = run.train_config().model_seed;
  return c;
}

void restore_run(TrainRun& run, const RunConfig& config, const Checkpoint& ckpt) {
  RunConfig written = ckpt.config;
  written.out_dir = config.out_dir;  // a run may move between directories
  if (!(written == config)) {
    throw CheckpointError("checkpoint was written under a different config: " + first_difference(config, ckpt.config));
  }
  if (run.model_config() != config.model || !(run.task() == config.task) || !(run.train_config() == config.train)) {
    throw CheckpointError("run does not match the config it is restored under");
  }
  auto& entries = run.model().params().entries();
  if (entries.size() != ckpt.params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ckpt.params.size()) + " tensors, model has " +
                          std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& stored = ckpt.params[i];
    if (stored.name != entries[i].name || stored.shape != entries[i].tensor.shape()) {
      throw CheckpointError("tensor mismatch: checkpoint has " + stored.name + " " + shape_string(stored.shape) +
                            ", model has " + entries[i].name + " " + shape_string(entries[i].tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    std::memcpy(entries[i].tensor.mutable_data().data(), ckpt.params[i].data.data(),
                ckpt.params[i].data.size() * sizeof(double));
  }
  AdamState& adam = run.optimizer();
  adam.step = ckpt.adam_step;
  adam.m.clear();
  adam.v.clear();
  for (const auto& t : ckpt.adam_m) adam.m[t.name] = t.data;
  for (const auto& t : ckpt.adam_v) adam.v[t.name] = t.data;
  run.restore(ckpt.step, ckpt.elapsed_secs, ckpt.log, ckpt.finished);
}

TrainRun resume_run(const Checkpoint& ckpt) {
  TrainRun run(ckpt.config.model, ckpt.config.task, ckpt.config.train);
  restore_run(run, ckpt.config, ckpt);
  return run;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string payload;
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  auto add = [&](const std::string& name, const StoredTensor& t) {
    if (shape_numel(t.shape) != t.data.size()) throw CheckpointError("tensor " + name + ": shape does not match data");
    manifest.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.data.size();
    put_tensor(payload, t);
  };
  for (const auto& t : c.params) add(t.name, t);
  for (const auto& t : c.adam_m) add("adam.m/" + t.name, t);
  for (const auto& t : c.adam_v) add("adam.v/" + t.name, t);

  nlohmann::ordered_json log = nlohmann::ordered_json::array();
  {
    std::istringstream lines(c.log.to_jsonl());
    std::string line;
    while (std::getline(lines, line)) log.push_back(nlohmann::ordered_json::parse(line));
  }

  nlohmann::ordered_json h;
  h["format"] = "synth-checkpoint";
  h["version"] = c.version;
  h["config"] = emit_run_config(c.config);
  h["step"] = c.step;
  h["elapsed_secs"] = c.elapsed_secs;
  h["finished"] = c.finished;
  h["rng"] = {{"data_seed", c.data_seed}, {"model_seed", c.model_seed}, {"counter", c.step}};
  h["adam_step"] = c.adam_step;
  h["metric_log"] = log;
  h["tensors"] = manifest;
  h["payload_bytes"] = payload.size();
  h["payload_checksum"] = fnv1a(payload);
  const std::string header = h.dump(1);

  std::string out(kMagic);
  put_u32(out, c.version);
  put_u64(out, header.size());
  put_u64(out, fnv1a(header));
  out += header;
  out += payload;
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  if (bytes.size() < kPreamble) throw CheckpointError("checkpoint truncated: " + std::to_string(bytes.size()) + " bytes");
  if (bytes.substr(0, 8) != kMagic) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = get_le(bytes, 12, 8);
  const std::uint64_t header_sum = get_le(bytes, 20, 8);
  if (header_len > bytes.size() - kPreamble) throw CheckpointError("checkpoint truncated inside the header");
  const std::string_view header = bytes.substr(kPreamble, header_len);
  if (fnv1a(header) != header_sum) throw CheckpointError("checkpoint header checksum mismatch");

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(kPreamble + header_len);
  try {
    const auto payload_bytes = h.at("payload_bytes").get<std::uint64_t>();
    if (payload.size() != payload_bytes) {
      throw CheckpointError("checkpoint payload is " + std::to_string(payload.size()) + " bytes, header says " +
                            std::to_string(payload_bytes) + " (truncated or padded file)");
    }
    if (fnv1a(payload) != h.at("payload_checksum").get<std::uint64_t>()) {
      throw CheckpointError("checkpoint payload checksum mismatch");
    }

    Checkpoint c;
    c.version = version;
    c.config = parse_run_config(h.at("config").get<std::string>());
    c.step = h.at("step").get<std::size_t>();
    c.elapsed_secs = h.at("elapsed_secs").get<double>();
    c.finished = h.at("finished").get<bool>();
    c.data_seed = h.at("rng").at("data_seed").get<std::uint64_t>();
    c.model_seed = h.at("rng").at("model_seed").get<std::uint64_t>();
    c.adam_step = h.at("adam_step").get<std::uint64_t>();
    std::string jsonl;
    for (const auto& r : h.at("metric_log")) jsonl += r.dump() + "\n";
    c.log = MetricLog::from_jsonl(jsonl);

    for (const auto& entry : h.at("tensors")) {
      StoredTensor t;
      std::string name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::size_t n = shape_numel(t.shape);
      if ((offset + n) * 8 > payload.size()) throw CheckpointError("tensor " + name + " runs past the payload");
      t.data.resize(n);
      for (std::size_t i = 0; i < n; ++i) t.data[i] = std::bit_cast<double>(get_le(payload, (offset + i) * 8, 8));
      if (name.starts_with("adam.m/")) {
        t.name = name.substr(7);
        c.adam_m.push_back(std::move(t));
      } else if (name.starts_with("adam.v/")) {
        t.name = name.substr(7);
        c.adam_v.push_back(std::move(t));
      } else {
        t.name = std::move(name);
        c.params.push_back(std::move(t));
      }
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config echo is invalid: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace synth
