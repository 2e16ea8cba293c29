#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "aem/cli.hpp"

namespace aem::cli {

namespace {

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t& off) {
  if (off + 4 > b.size()) throw CheckpointError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(b[off + k]) << (8 * k);
  off += 4;
  return v;
}

std::uint64_t read_u64(const std::vector<std::uint8_t>& b, std::size_t& off) {
  const std::uint64_t lo = read_u32(b, off);
  return lo | (static_cast<std::uint64_t>(read_u32(b, off)) << 32);
}

// Trailing sections without needing a matching parameter set.
std::vector<CheckpointSection> peek_sections(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::string(bytes.begin(), bytes.begin() + 4) != "AEMT") {
    throw CheckpointError("not a checkpoint (bad magic)");
  }
  std::size_t off = 8;
  decode_tensors(bytes, off);
  std::vector<CheckpointSection> out;
  while (off < bytes.size()) {
    const auto n = read_u32(bytes, off);
    if (off + n > bytes.size()) throw CheckpointError("truncated section tag");
    CheckpointSection s;
    s.tag.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.begin() + static_cast<std::ptrdiff_t>(off + n));
    off += n;
    const auto len = read_u64(bytes, off);
    if (len > bytes.size() - off) throw CheckpointError("truncated section '" + s.tag + "'");
    s.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                     bytes.begin() + static_cast<std::ptrdiff_t>(off + len));
    off += len;
    out.push_back(std::move(s));
  }
  return out;
}

CheckpointSection config_section(const RunConfig& c) {
  const std::string text = format_config(c);
  return {"config", std::vector<std::uint8_t>(text.begin(), text.end())};
}

void save_run_checkpoint(const std::filesystem::path& path, const ModelWeights<float>& w, const train::Trainer& t,
                         const RunConfig& c) {
  auto sections = t.state_sections();
  sections.push_back(config_section(c));
  save_checkpoint(path, w.params, sections);
}

std::string metrics_line(const std::string& id, const metrics::MetricReport& m, const std::string& hash) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g,%s", id.c_str(), m.sad, m.mse, m.grad, m.conn, hash.c_str());
  return buf;
}

ModelWeights<float> trained_model(const RunConfig& c) {
  auto w = build_model<float>(c.model, c.train.seed);
  train::Trainer t(w, load_training_set(c), c.train);
  while (!t.done()) t.step();
  return w;
}

std::vector<data::CompositeSample> held_out(const RunConfig& c) {
  data::SynthSpec spec = c.synth;
  spec.seed = c.synth.seed + 7919;
  return data::synth_dataset(spec, c.study.eval_count);
}


double setting_number(const std::string& setting) {
  const auto eq = setting.find('=');
  return eq == std::string::npos ? 0.0 : std::stod(setting.substr(eq + 1));
}

}  // namespace

std::vector<data::CompositeSample> load_training_set(const RunConfig& c) {
  if (!c.dataset_root.empty()) return data::read_dataset(c.dataset_root);
  return data::synth_dataset(c.synth, c.synth_count);
}

void cmd_synth(const RunConfig& c, const std::filesystem::path& out) {
  if (std::filesystem::exists(out) && !std::filesystem::is_directory(out)) {
    throw data::DataError("output path " + out.string() + " exists and is not a directory");
  }
  try {
    std::filesystem::create_directories(out);
  } catch (const std::filesystem::filesystem_error& e) {
    throw data::DataError("cannot create " + out.string() + ": " + e.what());
  }
  data::write_dataset(out, data::synth_dataset(c.synth, c.synth_count));
}

TrainOutcome cmd_train(const RunConfig& c, const std::filesystem::path& out,
                       const std::optional<std::filesystem::path>& resume, Index max_steps) {
  std::filesystem::create_directories(out);
  {
    std::ofstream cfg(out / "config.ini");
    cfg << format_config(c);
  }
  auto w = build_model<float>(c.model, c.train.seed);
  train::Trainer trainer(w, load_training_set(c), c.train);
  TrainOutcome result{out / "checkpoint.aemt", out / "loss.csv", {}};
  const std::string hash = config_hash(c);

  std::ofstream log;
  if (resume) {
    trainer.restore(load_checkpoint(*resume, w.params));
    log.open(result.loss_log, std::ios::app);
  } else {
    log.open(result.loss_log);
    log << train::kLossLogHeader << ",hash\n";
  }
  if (!log) throw std::runtime_error("cannot write " + result.loss_log.string());
  // Always leave a loadable checkpoint behind, even if step 0 diverges.
  if (!resume) save_run_checkpoint(result.checkpoint, w, trainer, c);

  for (Index run = 0; !trainer.done() && (max_steps < 0 || run < max_steps); ++run) {
    const auto rec = trainer.step();  // NumericError leaves the last checkpoint in place
    result.log.push_back(rec);
    log << train::format_step(rec) << ',' << hash << '\n' << std::flush;
    if (trainer.current_step() % c.checkpoint_every == 0 || trainer.done() || run + 1 == max_steps) {
      save_run_checkpoint(result.checkpoint, w, trainer, c);
    }
  }
  return result;
}

ModelWeights<float> load_model(const std::filesystem::path& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) throw CheckpointError("checkpoint " + checkpoint.string() + " not found");
  const auto bytes = read_file_bytes(checkpoint);
  const auto sections = peek_sections(bytes);
  const auto it = std::find_if(sections.begin(), sections.end(), [](const auto& s) { return s.tag == "config"; });
  if (it == sections.end()) throw CheckpointError(checkpoint.string() + " carries no model config");
  const RunConfig c = parse_config(std::string(it->payload.begin(), it->payload.end()));
  auto w = build_model<float>(c.model, c.train.seed);
  deserialize_checkpoint(bytes, w.params);
  return w;
}

Plane infer(const ModelWeights<float>& w, const RGBImage& image, const Trimap& trimap, bool tta_hflip) {
  if (image.height != trimap.height || image.width != trimap.width) {
    throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) + " but trimap is " +
                     std::to_string(trimap.height) + "x" + std::to_string(trimap.width));
  }
  Plane a = train::predict(w, image, trimap);
  if (!tta_hflip) return a;
  data::CompositeSample s;
  s.image = image;
  s.trimap = trimap;
  s.alpha = Plane(image.height, image.width);
  const auto f = data::flip_sample(s);
  s.alpha = train::predict(w, f.image, f.trimap);
  const Plane b = data::flip_sample(s).alpha;
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = 0.5f * (a.data[i] + b.data[i]);
  return a;
}

void cmd_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
               const std::filesystem::path& trimap, const std::filesystem::path& out, bool tta_hflip) {
  const auto w = load_model(checkpoint);
  data::save_png(out, infer(w, data::load_png_rgb(image), data::load_png_trimap(trimap), tta_hflip));
}

std::vector<std::pair<std::string, metrics::MetricReport>> cmd_eval(const std::filesystem::path& pred_dir,
                                                                    const std::filesystem::path& gt_dir,
                                                                    const std::filesystem::path& trimap_dir,
                                                                    const std::filesystem::path& out_csv,
                                                                    const std::string& hash) {
  if (!std::filesystem::is_directory(gt_dir)) throw data::DataError("ground-truth directory " + gt_dir.string() + " not found");
  std::vector<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(gt_dir))
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw data::DataError("no .png files in " + gt_dir.string());
  std::string missing;
  for (const auto& id : ids)
    if (!std::filesystem::exists(pred_dir / (id + ".png")) || !std::filesystem::exists(trimap_dir / (id + ".png"))) {
      missing += " " + id;
    }
  if (!missing.empty()) throw data::DataError("missing prediction or trimap for ids:" + missing);

  std::vector<std::pair<std::string, metrics::MetricReport>> rows;
  std::vector<metrics::MetricReport> all;
  for (const auto& id : ids) {
    const auto m = metrics::evaluate(data::load_png_gray(pred_dir / (id + ".png")),
                                     data::load_png_gray(gt_dir / (id + ".png")),
                                     data::load_png_trimap(trimap_dir / (id + ".png")));
    rows.emplace_back(id, m);
    all.push_back(m);
  }
  rows.emplace_back("mean", metrics::mean_report(all));
  if (out_csv.has_parent_path()) std::filesystem::create_directories(out_csv.parent_path());
  std::ofstream o(out_csv);
  if (!o) throw std::runtime_error("cannot write " + out_csv.string());
  o << "id,sad,mse,grad,conn,hash\n";
  for (const auto& [id, m] : rows) o << metrics_line(id, m, hash) << '\n';
  return rows;
}

std::string study_plan(const std::string& protocol, const RunConfig& c) {
  const auto& s = c.study;
  std::ostringstream o;
  auto seeds = [&] {
    std::string out;
    for (auto x : s.seeds) out += (out.empty() ? "" : ",") + std::to_string(x);
    return out;
  };
  o << "protocol " << protocol << ", seeds " << seeds() << ", held-out samples " << s.eval_count << "\n";
  if (protocol == "patch-infer" || protocol == "trimap") {
    o << "model: trained for " << c.train.steps << " steps at patch " << c.train.patch_size
      << " unless a checkpoint is given\n";
    if (protocol == "patch-infer") {
      for (Index t : s.tile_sizes) o << "  tile " << t << " stride " << t / 2 << "\n";
      o << "  whole image\n";
    } else {
      for (double d : s.distances) o << "  trimap dilation " << d << "\n";
    }
  } else if (protocol == "patch-train" || protocol == "erf") {
    const auto n = c.dataset_root.empty() ? c.synth_count : static_cast<Index>(data::read_manifest(c.dataset_root).size());
    for (const auto& p : study::training_plan(s.patch_sizes, s.base_steps, c.train.batch_size, n)) {
      o << "  patch " << p.patch_size << ": " << p.steps << " steps";
      if (protocol == "erf") o << ", ERF over " << s.erf_probes << " probes";
      o << "\n";
    }
  } else if (protocol == "kernel") {
    for (Index k : s.kernels) {
      o << "  kernel " << k << ": " << count_parameters(build_model<float>(study::kernel_variant(c.model, k), 0).params)
        << " parameters, " << c.train.steps << " steps\n";
    }
  } else {
    std::string valid;
    for (const auto& p : kProtocols) valid += " " + p;
    throw UsageError("unknown protocol '" + protocol + "'; valid:" + valid);
  }
  return o.str();
}

std::vector<study::StudyRow> cmd_study(const std::string& protocol, const RunConfig& c,
                                       const std::filesystem::path& out,
                                       const std::optional<std::filesystem::path>& checkpoint) {
  study_plan(protocol, c);  // validates the protocol and the plan
  std::filesystem::create_directories(out);
  {
    std::ofstream cfg(out / "config.ini");
    cfg << format_config(c);
  }
  const auto eval = held_out(c);
  std::vector<study::StudyRow> rows;
  std::vector<study::Series> series;
  std::ofstream trends(out / "trend.txt");
  std::string x_label, y_label = "MSE (x1e3)";

  for (std::uint64_t seed : c.study.seeds) {
    RunConfig rc = c;
    rc.train.seed = seed;
    const study::StudyContext ctx{config_hash(rc), seed};
    std::vector<study::StudyRow> part;
    if (protocol == "patch-infer" || protocol == "trimap") {
      const auto w = checkpoint ? load_model(*checkpoint) : trained_model(rc);
      if (protocol == "patch-infer") {
        part = study::patch_inference_study(w, eval, c.study.tile_sizes, ctx);
        x_label = "inference tile size (whole image last)";
      } else {
        part = study::trimap_robustness_study(w, eval, c.study.distances, ctx);
        x_label = "trimap dilation distance";
      }
    } else if (protocol == "patch-train" || protocol == "erf") {
      const auto train_set = load_training_set(rc);
      const auto plan = study::training_plan(c.study.patch_sizes, c.study.base_steps, c.train.batch_size,
                                             static_cast<Index>(train_set.size()));
      const bool with_erf = protocol == "erf";
      auto res = study::patch_training_study(c.model, rc.train, train_set, eval, plan, ctx,
                                             with_erf ? c.study.erf_probes : 0, c.synth.canvas);
      part = res.rows;
      for (auto& r : part) r.protocol = protocol;
      x_label = "training patch size";
      if (with_erf) {
        y_label = "ERF area (pixels)";
        for (std::size_t i = 0; i < plan.size(); ++i) {
          const std::string stem = "erf_seed" + std::to_string(seed) + "_patch" + std::to_string(plan[i].patch_size);
          study::write_pgm(out / (stem + ".pgm"), res.erf[i].values);
          data::save_png(out / (stem + ".png"), res.erf[i].values);
        }
      }
    } else {
      part = study::kernel_size_study(c.model, rc.train, load_training_set(rc), eval, c.study.kernels, ctx);
      x_label = "fusion kernel size";
    }

    study::Series s{"seed " + std::to_string(seed), {}, {}};
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto& r = part[i];
      const double x = r.setting == "whole" ? static_cast<double>(c.synth.canvas) : setting_number(r.setting);
      s.x.push_back(x);
      s.y.push_back(protocol == "erf" ? std::stod(study::extra_value(r.extra, "erf_area")) : r.mse);
    }
    trends << "seed " << seed << ": " << (protocol == "erf" ? "erf_area" : "mse") << " "
           << study::trend_direction(s.y) << " over " << x_label << "\n";
    series.push_back(std::move(s));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  study::write_csv(out / "rows.csv", rows);
  study::write_svg_plot(out / "plot.svg", protocol, x_label, y_label, series);
  return rows;
}

std::filesystem::path timestamped_dir(const std::filesystem::path& root) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  auto dir = root / buf;
  for (int n = 1; std::filesystem::exists(dir); ++n) dir = root / (std::string(buf) + "-" + std::to_string(n));
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace aem::cli
