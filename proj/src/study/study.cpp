#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "aem/study.hpp"

namespace aem::study {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_extra(std::initializer_list<std::pair<std::string, std::string>> kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    if (!out.empty()) out += ';';
    out += k + "=" + v;
  }
  return out;
}

// Tile origins along one axis: every stride, plus a final tile flush with the end.
std::vector<Index> tile_starts(Index extent, Index tile, Index stride) {
  std::vector<Index> s;
  for (Index p = 0; p + tile < extent; p += stride) s.push_back(p);
  if (s.empty() || s.back() != extent - tile) s.push_back(extent - tile);
  return s;
}

std::vector<double> feather(Index tile, bool overlapping) {
  std::vector<double> w(static_cast<std::size_t>(tile), 1.0);
  if (overlapping)
    for (Index i = 0; i < tile; ++i) {
      const double s = std::sin(std::numbers::pi * (i + 0.5) / static_cast<double>(tile));
      w[static_cast<std::size_t>(i)] = s * s;
    }
  return w;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

}  // namespace

StudyRow make_row(std::string protocol, std::string setting, std::uint64_t seed, const metrics::MetricReport& m,
                  std::string extra) {
  return {std::move(protocol), std::move(setting), seed, m.sad, m.mse, m.grad, m.conn, std::move(extra)};
}

std::string format_row(const StudyRow& r) {
  for (const auto* field : {&r.protocol, &r.setting, &r.extra})
    if (field->find_first_of(",\n") != std::string::npos) {
      throw std::invalid_argument("study row field '" + *field + "' contains a comma or newline");
    }
  return r.protocol + "," + r.setting + "," + std::to_string(r.seed) + "," + num(r.sad) + "," + num(r.mse) + "," +
         num(r.grad) + "," + num(r.conn) + "," + r.extra;
}

StudyRow parse_row(const std::string& line) {
  // The first seven commas delimit fields; the rest of the line is `extra`.
  std::vector<std::string> f;
  std::size_t pos = 0;
  for (int k = 0; k < 7; ++k) {
    const auto comma = line.find(',', pos);
    if (comma == std::string::npos) throw std::invalid_argument("study row needs 8 fields: " + line);
    f.push_back(line.substr(pos, comma - pos));
    pos = comma + 1;
  }
  f.push_back(line.substr(pos));
  StudyRow r;
  r.protocol = f[0];
  r.setting = f[1];
  try {
    r.seed = std::stoull(f[2]);
    r.sad = std::stod(f[3]);
    r.mse = std::stod(f[4]);
    r.grad = std::stod(f[5]);
    r.conn = std::stod(f[6]);
  } catch (const std::exception&) {
    throw std::invalid_argument("study row has a malformed number: " + line);
  }
  r.extra = f[7];
  return r;
}

void write_csv(const std::filesystem::path& path, const std::vector<StudyRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kCsvHeader << '\n';
  for (const auto& r : rows) out << format_row(r) << '\n';
  if (!out) throw std::runtime_error("error writing " + path.string());
}

std::vector<StudyRow> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::runtime_error(path.string() + ": unexpected header");
  std::vector<StudyRow> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(parse_row(line));
  return rows;
}

std::string extra_value(const std::string& extra, const std::string& key) {
  std::stringstream ss(extra);
  std::string kv;
  while (std::getline(ss, kv, ';')) {
    const auto eq = kv.find('=');
    if (eq != std::string::npos && kv.substr(0, eq) == key) return kv.substr(eq + 1);
  }
  return {};
}

Plane predict_tiled(const ModelWeights<float>& w, const RGBImage& image, const Trimap& trimap, Index size,
                    Index stride) {
  if (size < 32) throw std::invalid_argument("predict_tiled: tile size " + std::to_string(size) + " is below 32");
  if (stride < 1) throw std::invalid_argument("predict_tiled: stride must be positive");
  const Index H = image.height, W = image.width;
  if (trimap.height != H || trimap.width != W) throw ShapeError("predict_tiled: image and trimap sizes differ");
  const Index th = std::min(size, H), tw = std::min(size, W);
  const auto wy = feather(th, stride < th), wx = feather(tw, stride < tw);
  std::vector<double> acc(static_cast<std::size_t>(H * W), 0.0), wsum(acc.size(), 0.0);
  for (Index top : tile_starts(H, th, stride))
    for (Index left : tile_starts(W, tw, stride)) {
      data::CompositeSample s;
      s.image = image;
      s.alpha = Plane(H, W);
      s.trimap = trimap;
      const auto tile = data::crop_sample(s, top, left, th, tw);
      const Plane p = train::predict(w, tile.image, tile.trimap);
      for (Index y = 0; y < th; ++y)
        for (Index x = 0; x < tw; ++x) {
          const double k = wy[static_cast<std::size_t>(y)] * wx[static_cast<std::size_t>(x)];
          const auto i = static_cast<std::size_t>((top + y) * W + left + x);
          acc[i] += k * p.at(y, x);
          wsum[i] += k;
        }
    }
  Plane out(H, W);
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / wsum[i]);
  return out;
}

metrics::MetricReport evaluate_model(const ModelWeights<float>& w, const std::vector<data::CompositeSample>& samples,
                                     Index tile) {
  std::vector<metrics::MetricReport> reports;
  for (const auto& s : samples) {
    const Plane p = tile == 0 ? train::predict(w, s.image, s.trimap)
                              : predict_tiled(w, s.image, s.trimap, tile, std::max<Index>(1, tile / 2));
    reports.push_back(metrics::evaluate(p, s.alpha, s.trimap));
  }
  return metrics::mean_report(reports);
}

std::vector<StudyRow> patch_inference_study(const ModelWeights<float>& w,
                                            const std::vector<data::CompositeSample>& samples,
                                            const std::vector<Index>& sizes, const StudyContext& ctx) {
  for (Index s : sizes)
    if (s < 32) throw std::invalid_argument("patch inference: tile size " + std::to_string(s) + " is below 32");
  std::vector<StudyRow> rows;
  for (Index s : sizes) {
    rows.push_back(make_row("patch-infer", "tile=" + std::to_string(s), ctx.seed, evaluate_model(w, samples, s),
                            join_extra({{"hash", ctx.config_hash}, {"stride", std::to_string(s / 2)}})));
  }
  rows.push_back(make_row("patch-infer", "whole", ctx.seed, evaluate_model(w, samples, 0),
                          join_extra({{"hash", ctx.config_hash}})));
  return rows;
}

std::vector<TrainingPlan> training_plan(const std::vector<Index>& sizes, Index base_steps, Index batch,
                                        Index dataset_size) {
  if (sizes.size() < 2) throw std::invalid_argument("patch training: need at least two patch sizes");
  if (base_steps < 1 || batch < 1) throw std::invalid_argument("patch training: steps and batch must be positive");
  const Index largest = *std::max_element(sizes.begin(), sizes.end());
  std::vector<TrainingPlan> plan;
  for (Index s : sizes) {
    if (s < 32) throw std::invalid_argument("patch training: patch size " + std::to_string(s) + " is below 32");
    const double ratio = static_cast<double>(largest) / static_cast<double>(s);
    const Index steps = std::llround(static_cast<double>(base_steps) * ratio * ratio);
    if (steps * batch < dataset_size) {
      throw std::invalid_argument("patch training: " + std::to_string(steps) + " steps of " + std::to_string(batch) +
                                  " do not cover one epoch of " + std::to_string(dataset_size) + " samples");
    }
    plan.push_back({s, steps});
  }
  return plan;
}

ERFMap erf_map(const ProbeForward& forward, const std::vector<RGBImage>& probes) {
  if (probes.empty()) throw std::invalid_argument("erf: no probes");
  const Index H = probes[0].height, W = probes[0].width, HW = H * W;
  const Index cy = H / 2, cx = W / 2;
  std::vector<double> acc(static_cast<std::size_t>(HW), 0.0);
  for (std::size_t k = 0; k < probes.size(); ++k) {
    if (probes[k].height != H || probes[k].width != W) throw ShapeError("erf: probes differ in size");
    Tape<float> tape;
    TapeScope<float> scope(tape);
    Tensor<float> img = to_tensor<float>(probes[k]);
    img.set_requires_grad(true);
    const Tensor<float> out = forward(img, static_cast<Index>(k));
    if (out.shape() != Shape{1, 1, H, W}) throw ShapeError("erf: forward returned " + shape_str(out.shape()));
    tape.backward(ops::sum(ops::slice(ops::slice(out, 2, cy, 1), 3, cx, 1)));
    if (!img.has_grad()) continue;
    const auto g = img.grad();
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < HW; ++i) acc[static_cast<std::size_t>(i)] += std::abs(g[static_cast<std::size_t>(c * HW + i)]);
  }
  const double peak = *std::max_element(acc.begin(), acc.end());
  ERFMap m;
  m.values = Plane(H, W);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double v = peak > 0 ? acc[i] / peak : 0.0;
    m.values.data[i] = static_cast<float>(v);
    m.area += v > 0.01;
  }
  return m;
}

ERFMap erf_map(const ModelWeights<float>& w, Index size, Index probes, std::uint64_t seed) {
  data::SynthSpec spec;
  spec.seed = seed;
  spec.canvas = size;
  const auto samples = data::synth_dataset(spec, probes);
  std::vector<RGBImage> images;
  for (const auto& s : samples) images.push_back(s.image);
  return erf_map(
      [&](const Tensor<float>& img, Index k) {
        return model_forward_full(img, to_tensor<float>(samples[static_cast<std::size_t>(k)].trimap), w).raw;
      },
      images);
}

PatchTrainingResult patch_training_study(const AEMatterConfig& config, const train::TrainConfig& base,
                                         const std::vector<data::CompositeSample>& train_set,
                                         const std::vector<data::CompositeSample>& eval,
                                         const std::vector<TrainingPlan>& plan, const StudyContext& ctx,
                                         Index erf_probes, Index erf_size) {
  PatchTrainingResult result;
  for (const auto& entry : plan) {
    auto w = build_model<float>(config, ctx.seed);
    train::TrainConfig cfg = base;
    cfg.patch_size = entry.patch_size;
    cfg.steps = entry.steps;
    cfg.seed = ctx.seed;
    train::Trainer trainer(w, train_set, cfg);
    double last = 0;
    while (!trainer.done()) last = trainer.step().total;
    std::string extra = join_extra({{"hash", ctx.config_hash},
                                    {"steps", std::to_string(entry.steps)},
                                    {"final_loss", num(last)}});
    if (erf_probes > 0) {
      result.erf.push_back(erf_map(w, erf_size, erf_probes, ctx.seed + 1000003));
      extra += ";erf_area=" + num(result.erf.back().area);
    }
    result.rows.push_back(make_row("patch-train", "patch=" + std::to_string(entry.patch_size), ctx.seed,
                                   evaluate_model(w, eval, 0), extra));
  }
  return result;
}

std::vector<StudyRow> trimap_robustness_study(const ModelWeights<float>& w,
                                              const std::vector<data::CompositeSample>& samples,
                                              std::vector<double> distances, const StudyContext& ctx) {
  std::sort(distances.begin(), distances.end());
  std::vector<StudyRow> rows;
  for (double d : distances) {
    auto regenerated = samples;
    Index unknown = 0;
    for (auto& s : regenerated) {
      s.trimap = data::make_trimap(s.alpha, d);
      unknown += s.trimap.unknown_count();
    }
    rows.push_back(make_row("trimap", "d=" + num(d), ctx.seed, evaluate_model(w, regenerated, 0),
                            join_extra({{"hash", ctx.config_hash}, {"unk", std::to_string(unknown)}})));
  }
  return rows;
}

AEMatterConfig kernel_variant(const AEMatterConfig& config, Index k) {
  AEMatterConfig c = config;
  c.fusion_kernel = k;
  c.validate();
  return c;
}

std::vector<StudyRow> kernel_size_study(const AEMatterConfig& config, const train::TrainConfig& base,
                                        const std::vector<data::CompositeSample>& train_set,
                                        const std::vector<data::CompositeSample>& eval,
                                        const std::vector<Index>& kernels, const StudyContext& ctx) {
  if (kernels.size() < 2) throw std::invalid_argument("kernel study: need at least two kernel sizes");
  std::vector<StudyRow> rows;
  for (Index k : kernels) {
    auto w = build_model<float>(kernel_variant(config, k), ctx.seed);
    train::TrainConfig cfg = base;
    cfg.seed = ctx.seed;
    train::Trainer trainer(w, train_set, cfg);
    double last = 0;
    while (!trainer.done()) last = trainer.step().total;
    rows.push_back(make_row("kernel", "k=" + std::to_string(k), ctx.seed, evaluate_model(w, eval, 0),
                            join_extra({{"hash", ctx.config_hash},
                                        {"params", std::to_string(count_parameters(w.params))},
                                        {"final_loss", num(last)}})));
  }
  return rows;
}

void write_svg_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                    const std::string& y_label, const std::vector<Series>& series) {
  const double W = 640, H = 400, ml = 70, mr = 150, mt = 40, mb = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::invalid_argument("plot: series '" + s.name + "' has mismatched x and y");
    for (double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
    for (double v : s.y) y0 = std::min(y0, v), y1 = std::max(y1, v);
  }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x0 -= 1, x1 += 1;
  if (y1 == y0) y0 -= 1, y1 += 1;
  auto px = [&](double v) { return ml + (v - x0) / (x1 - x0) * (W - ml - mr); };
  auto py = [&](double v) { return H - mb - (v - y0) / (y1 - y0) * (H - mt - mb); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream o(path);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title) << "</text>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4, yv = y0 + (y1 - y0) * t / 4;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", xv);
    o << "<text x=\"" << px(xv) << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\">" << buf << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.4g", yv);
    o << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
  }
  o << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xml_escape(x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (mt + H - mb) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
    << (mt + H - mb) / 2 << ")\">" << xml_escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 6];
    o << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) o << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    o << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
    o << "<text x=\"" << W - mr + 10 << "\" y=\"" << mt + 16 * (k + 1) << "\" fill=\"" << c << "\">" << xml_escape(s.name)
      << "</text>\n";
  }
  o << "</svg>\n";
}

void write_pgm(const std::filesystem::path& path, const Plane& p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream o(path, std::ios::binary);
  if (!o) throw std::runtime_error("cannot write " + path.string());
  o << "P5\n" << p.width << ' ' << p.height << "\n255\n";
  for (float v : p.data) o.put(static_cast<char>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f)));
}

Plane read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  Index w = 0, h = 0, maxval = 0;
  if (!(in >> magic >> w >> h >> maxval) || magic != "P5" || maxval != 255 || w < 1 || h < 1) {
    throw std::runtime_error(path.string() + ": not an 8-bit binary PGM");
  }
  in.get();
  Plane p(h, w);
  for (auto& v : p.data) {
    const int c = in.get();
    if (c == EOF) throw std::runtime_error(path.string() + ": truncated PGM");
    v = static_cast<float>(c) / 255.f;
  }
  return p;
}

std::string trend_direction(const std::vector<double>& y) {
  bool up = false, down = false;
  for (std::size_t i = 1; i < y.size(); ++i) {
    up |= y[i] > y[i - 1];
    down |= y[i] < y[i - 1];
  }
  if (up && down) return "mixed";
  if (up) return "non-decreasing";
  if (down) return "non-increasing";
  return "flat";
}

}  // namespace aem::study
