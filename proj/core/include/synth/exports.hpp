#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "synth/model.hpp"

namespace synth {

/// attention_<role>_layer<l>_head<h>_<variant>.csv (':' in a variant name becomes '-').
std::string attention_filename(std::string_view role, std::size_t layer, std::size_t head, std::string_view variant);

/// L x Lk post-softmax weights, one row per line, comma separated, 9
/// significant digits, '\n' line endings, independent of the C locale.
std::string attention_csv(const Tensor& weights, std::size_t sample, std::size_t head);

/// Runs the model on `batch` with inspection on and writes the weights of
/// one (role, layer, head) for batch row `sample` into `dir`. role is
/// "encoder", "decoder" or "cross". Returns the written path.
std::filesystem::path export_attention(Transformer& model, const Batch& batch, std::string_view role,
                                       std::size_t layer, std::size_t head, const std::filesystem::path& dir,
                                       std::size_t sample = 0);

struct HistogramExport {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::string role;  // encoder or decoder self-attention
  std::vector<double> edges;            // bins + 1, uniform over [0, 1]
  std::vector<std::uint64_t> counts;    // bins
  std::size_t step = 0;
};

inline constexpr std::size_t kDefaultHistogramBins = 50;

/// Self-attention weight histograms per (role, layer, head) over all entries
/// of all batches. Throws ConfigError for bins < 2.
std::vector<HistogramExport> attention_histograms(Transformer& model, const std::vector<Batch>& batches,
                                                  std::size_t bins = kDefaultHistogramBins, std::size_t step = 0);

std::string histograms_json(const std::vector<HistogramExport>& records);

/// attention_histograms + histograms_json written to `path`.
std::vector<HistogramExport> export_histogram(Transformer& model, const std::vector<Batch>& batches, std::size_t bins,
                                              const std::filesystem::path& path, std::size_t step = 0);

}  // namespace synth
