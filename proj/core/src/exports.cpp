#include "synth/exports.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <tuple>

#include <json.hpp>

#include "synth/errors.hpp"

namespace synth {
namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("failed writing " + path.string());
}

// Inspection on for one forward, restored afterwards.
const std::vector<AttentionRecord>& inspect_forward(Transformer& model, const Batch& batch) {
  model.set_inspect(true);
  try {
    model.forward(batch);
  } catch (...) {
    model.set_inspect(false);
    throw;
  }
  return model.attention_records();
}

}  // namespace

std::string attention_filename(std::string_view role, std::size_t layer, std::size_t head, std::string_view variant) {
  std::string v(variant);
  std::replace(v.begin(), v.end(), ':', '-');
  return "attention_" + std::string(role) + "_layer" + std::to_string(layer) + "_head" + std::to_string(head) + "_" +
         v + ".csv";
}

std::string attention_csv(const Tensor& weights, std::size_t sample, std::size_t head) {
  if (weights.rank() != 4) throw DimensionError("attention_csv: expected [b,h,L,Lk] weights, got " +
                                                shape_string(weights.shape()));
  const std::size_t b = weights.dim(0), h = weights.dim(1), l = weights.dim(2), lk = weights.dim(3);
  if (sample >= b) throw ConfigError("sample " + std::to_string(sample) + " out of range (batch " + std::to_string(b) + ")");
  if (head >= h) throw ConfigError("head " + std::to_string(head) + " out of range (" + std::to_string(h) + " heads)");
  const auto d = weights.data().subspan((sample * h + head) * l * lk, l * lk);
  std::string out;
  char buf[40];
  for (std::size_t i = 0; i < l; ++i) {
    for (std::size_t j = 0; j < lk; ++j) {
      if (j) out += ',';
      auto res = std::to_chars(buf, buf + sizeof buf, d[i * lk + j], std::chars_format::general, 9);
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

std::filesystem::path export_attention(Transformer& model, const Batch& batch, std::string_view role,
                                       std::size_t layer, std::size_t head, const std::filesystem::path& dir,
                                       std::size_t sample) {
  if (role != "encoder" && role != "decoder" && role != "cross") {
    throw ConfigError("unknown attention role '" + std::string(role) + "' (expected encoder, decoder or cross)");
  }
  const ModelConfig& cfg = model.config();
  if (head >= cfg.heads) {
    throw ConfigError("head " + std::to_string(head) + " out of range (" + std::to_string(cfg.heads) + " heads)");
  }
  std::string variant;
  if (role == "cross") {
    variant = std::string(kind_name(cfg.cross_attention));
  } else {
    variant = model.self_attention(role == "decoder", layer).spec().name();  // throws on a bad layer
  }
  const auto& records = inspect_forward(model, batch);
  const AttentionRecord* found = nullptr;
  for (const auto& r : records) {
    if (r.role == role && r.layer == layer) found = &r;
  }
  if (!found) {
    model.set_inspect(false);
    throw ConfigError("no " + std::string(role) + " attention at layer " + std::to_string(layer) + " in a " +
                      std::string(mode_name(cfg.mode)) + " model");
  }
  const std::string text = attention_csv(found->weights, sample, head);
  model.set_inspect(false);
  std::filesystem::create_directories(dir);
  const auto path = dir / attention_filename(role, layer, head, variant);
  write_file(path, text);
  return path;
}

std::vector<HistogramExport> attention_histograms(Transformer& model, const std::vector<Batch>& batches,
                                                  std::size_t bins, std::size_t step) {
  if (bins < 2) throw ConfigError("histogram bins must be >= 2");
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) edges[i] = static_cast<double>(i) / static_cast<double>(bins);

  std::map<std::tuple<int, std::size_t, std::size_t>, HistogramExport> table;  // (encoder first, layer, head)
  for (const auto& batch : batches) {
    const auto& records = inspect_forward(model, batch);
    for (const auto& r : records) {
      if (r.role == "cross") continue;
      const std::size_t h = r.weights.dim(1);
      const std::size_t per_head = r.weights.dim(2) * r.weights.dim(3);
      const std::size_t b = r.weights.dim(0);
      const auto d = r.weights.data();
      for (std::size_t head = 0; head < h; ++head) {
        auto& rec = table[{r.role == "encoder" ? 0 : 1, r.layer, head}];
        if (rec.counts.empty()) {
          rec = {r.layer, head, r.role, edges, std::vector<std::uint64_t>(bins, 0), step};
        }
        for (std::size_t s = 0; s < b; ++s) {
          const std::size_t base = (s * h + head) * per_head;
          for (std::size_t i = 0; i < per_head; ++i) {
            const double w = std::clamp(d[base + i], 0.0, 1.0);
            rec.counts[std::min(bins - 1, static_cast<std::size_t>(w * static_cast<double>(bins)))]++;
          }
        }
      }
    }
  }
  model.set_inspect(false);
  std::vector<HistogramExport> out;
  for (auto& [key, rec] : table) out.push_back(std::move(rec));
  return out;
}

std::string histograms_json(const std::vector<HistogramExport>& records) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["layer"] = r.layer;
    j["head"] = r.head;
    j["role"] = r.role;
    j["step"] = r.step;
    j["edges"] = r.edges;
    j["counts"] = r.counts;
    arr.push_back(std::move(j));
  }
  nlohmann::ordered_json doc;
  doc["histograms"] = std::move(arr);
  return doc.dump(1) + "\n";
}

std::vector<HistogramExport> export_histogram(Transformer& model, const std::vector<Batch>& batches, std::size_t bins,
                                              const std::filesystem::path& path, std::size_t step) {
  auto records = attention_histograms(model, batches, bins, step);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file(path, histograms_json(records));
  return records;
}

}  // namespace synth
