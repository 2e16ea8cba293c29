#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "aem/metrics.hpp"
#include "aem/train.hpp"

namespace aem::study {

inline constexpr const char* kCsvHeader = "protocol,setting,seed,sad,mse,grad,conn,extra";

/// One result line. `extra` holds ';'-separated key=value pairs and never a comma.
struct StudyRow {
  std::string protocol, setting;
  std::uint64_t seed = 0;
  double sad = 0, mse = 0, grad = 0, conn = 0;
  std::string extra;
  bool operator==(const StudyRow&) const = default;
};

StudyRow make_row(std::string protocol, std::string setting, std::uint64_t seed, const metrics::MetricReport& m,
                  std::string extra);
std::string format_row(const StudyRow& row);
StudyRow parse_row(const std::string& line);
void write_csv(const std::filesystem::path& path, const std::vector<StudyRow>& rows);
std::vector<StudyRow> read_csv(const std::filesystem::path& path);
/// Value of `key` in a row's extra field, empty when absent.
std::string extra_value(const std::string& extra, const std::string& key);

/// What every protocol stamps on its rows.
struct StudyContext {
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// Tiles of size x size (clamped to the image) at the given stride, blended
/// with Hann feather weights where tiles overlap and weight 1 where they do
/// not. Throws std::invalid_argument for size < 32 or stride < 1.
Plane predict_tiled(const ModelWeights<float>& w, const RGBImage& image, const Trimap& trimap, Index size,
                    Index stride);

/// Mean report over samples; tile == 0 predicts whole images, otherwise
/// tiles of that size at stride tile / 2.
metrics::MetricReport evaluate_model(const ModelWeights<float>& w, const std::vector<data::CompositeSample>& samples,
                                     Index tile = 0);

/// One row per tile size (setting "tile=S") plus a final "whole" row.
std::vector<StudyRow> patch_inference_study(const ModelWeights<float>& w,
                                            const std::vector<data::CompositeSample>& samples,
                                            const std::vector<Index>& sizes, const StudyContext& ctx);

struct TrainingPlan {
  Index patch_size = 0, steps = 0;
  bool operator==(const TrainingPlan&) const = default;
};

/// Equal pixel budget: steps(s) = base_steps * (max_size / s)^2, rounded to
/// nearest. Throws when a size fails to cover one epoch of `dataset_size`
/// samples at `batch` per step, or when fewer than two sizes are given.
std::vector<TrainingPlan> training_plan(const std::vector<Index>& sizes, Index base_steps, Index batch,
                                        Index dataset_size);

struct ERFMap {
  Plane values;  // mean |d out(center) / d input|, normalized to max 1
  double area = 0;  // pixels with value > 0.01
};

/// forward(image, probe) maps a [1,3,H,W] image to a [1,1,H,W] output.
using ProbeForward = std::function<Tensor<float>(const Tensor<float>&, Index)>;
ERFMap erf_map(const ProbeForward& forward, const std::vector<RGBImage>& probes);
/// ERF of the pre-clip model output on `probes` synthetic composites of side `size`.
ERFMap erf_map(const ModelWeights<float>& w, Index size, Index probes, std::uint64_t seed);

struct PatchTrainingResult {
  std::vector<StudyRow> rows;
  std::vector<ERFMap> erf;  // one per size when erf_probes > 0
};

/// Trains one model per plan entry from the same init, evaluates each on
/// `eval`. With erf_probes > 0 also measures each model's ERF at erf_size.
PatchTrainingResult patch_training_study(const AEMatterConfig& config, const train::TrainConfig& base,
                                         const std::vector<data::CompositeSample>& train_set,
                                         const std::vector<data::CompositeSample>& eval,
                                         const std::vector<TrainingPlan>& plan, const StudyContext& ctx,
                                         Index erf_probes = 0, Index erf_size = 64);

/// Rows sorted by d; extra carries unk=<unknown pixel count over the set>.
/// Each row predicts and scores with trimaps rebuilt from alpha at d.
std::vector<StudyRow> trimap_robustness_study(const ModelWeights<float>& w,
                                              const std::vector<data::CompositeSample>& samples,
                                              std::vector<double> distances, const StudyContext& ctx);

/// The model config with every second stem / detail-fusion conv at kernel k.
AEMatterConfig kernel_variant(const AEMatterConfig& config, Index k);
std::vector<StudyRow> kernel_size_study(const AEMatterConfig& config, const train::TrainConfig& base,
                                        const std::vector<data::CompositeSample>& train_set,
                                        const std::vector<data::CompositeSample>& eval,
                                        const std::vector<Index>& kernels, const StudyContext& ctx);

// Output helpers.

struct Series {
  std::string name;
  std::vector<double> x, y;
};

void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<Series>& series);
/// 8-bit binary PGM of values clamped to [0,1].
void write_pgm(const std::filesystem::path& path, const Plane& p);
Plane read_pgm(const std::filesystem::path& path);

/// "non-decreasing", "non-increasing", "flat" or "mixed" for y in x order.
std::string trend_direction(const std::vector<double>& y);

}  // namespace aem::study
