#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aem/study.hpp"

namespace aem::cli {

/// Bad flags, unknown keys or values: exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct StudySettings {
  std::vector<Index> tile_sizes{32, 48};
  std::vector<Index> patch_sizes{32, 64};
  std::vector<double> distances{0, 2, 5, 10};
  std::vector<Index> kernels{1, 3, 5};
  Index base_steps = 60;  // steps at the largest training patch
  Index eval_count = 4;
  Index erf_probes = 2;
  std::vector<std::uint64_t> seeds{0};
};

/// Everything a run depends on. `train.seed` also seeds model init.
struct RunConfig {
  AEMatterConfig model = AEMatterConfig::small();
  std::string model_preset = "small";
  train::TrainConfig train;
  Index checkpoint_every = 50;
  data::SynthSpec synth;
  Index synth_count = 8;
  std::string dataset_root;  // empty: synthesize in memory from `synth`
  StudySettings study;
};

/// Flat key=value text with [model], [train], [data] and [study] sections.
/// '#' starts a comment. Unknown sections or keys raise UsageError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical text; parse_config(format_config(c)) reproduces c.
std::string format_config(const RunConfig& c);
/// 16 hex digits of FNV-1a over the canonical text and the seed.
std::string config_hash(const RunConfig& c);

/// The training samples a config describes.
std::vector<data::CompositeSample> load_training_set(const RunConfig& c);

struct TrainOutcome {
  std::filesystem::path checkpoint, loss_log;
  std::vector<train::StepRecord> log;
};

/// Trains into `out` (checkpoint.aemt, loss.csv, config.ini). With `resume`
/// the step counter, moments and weights come from that checkpoint and new
/// loss rows are appended. On a non-finite loss the last saved checkpoint is
/// kept and NumericError propagates. `max_steps` >= 0 stops this invocation
/// early (after saving), leaving the rest of the schedule for a resume.
TrainOutcome cmd_train(const RunConfig& c, const std::filesystem::path& out,
                       const std::optional<std::filesystem::path>& resume = std::nullopt, Index max_steps = -1);

/// Writes `synth_count` samples from `synth` as a dataset directory.
void cmd_synth(const RunConfig& c, const std::filesystem::path& out);

/// Rebuilds the model from a checkpoint's stored config.
ModelWeights<float> load_model(const std::filesystem::path& checkpoint);

/// Alpha for one image; with tta_hflip the mean of the plain and the
/// unflipped horizontally flipped prediction.
Plane infer(const ModelWeights<float>& w, const RGBImage& image, const Trimap& trimap, bool tta_hflip);
void cmd_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
               const std::filesystem::path& trimap, const std::filesystem::path& out, bool tta_hflip);

/// Scores every <id>.png of gt_dir. One row per id plus a "mean" row.
/// Throws DataError naming the ids whose prediction or trimap is missing.
std::vector<std::pair<std::string, metrics::MetricReport>> cmd_eval(const std::filesystem::path& pred_dir,
                                                                    const std::filesystem::path& gt_dir,
                                                                    const std::filesystem::path& trimap_dir,
                                                                    const std::filesystem::path& out_csv,
                                                                    const std::string& hash);

inline const std::vector<std::string> kProtocols{"patch-infer", "patch-train", "trimap", "kernel", "erf"};

/// Human-readable plan of what a study would run.
std::string study_plan(const std::string& protocol, const RunConfig& c);
/// Runs a protocol for every configured seed into `out`: rows.csv, plot.svg,
/// and ERF heatmaps for erf. patch-infer and trimap use `checkpoint` when
/// given, otherwise they first train per [train].
std::vector<study::StudyRow> cmd_study(const std::string& protocol, const RunConfig& c,
                                       const std::filesystem::path& out,
                                       const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

/// runs/<YYYYmmdd-HHMMSS>[-n] under root, created.
std::filesystem::path timestamped_dir(const std::filesystem::path& root);

/// Full command line. Exit codes: 0 success, 1 usage error, 2 runtime error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace aem::cli
