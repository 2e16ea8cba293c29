#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "aem/cli.hpp"

namespace aem::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename V>
std::string list(const V& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(v)>>) out += num(v);
    else out += std::to_string(v);
  }
  return out;
}

const std::map<std::string, data::ShapeFamily>& family_names() {
  static const std::map<std::string, data::ShapeFamily> m{{"disk", data::ShapeFamily::disk},
                                                          {"ring", data::ShapeFamily::ring},
                                                          {"blob", data::ShapeFamily::blob},
                                                          {"strokes", data::ShapeFamily::strokes},
                                                          {"gradient", data::ShapeFamily::gradient}};
  return m;
}

std::string family_name(data::ShapeFamily f) {
  for (const auto& [name, fam] : family_names())
    if (fam == f) return name;
  return "?";
}

struct Value {
  std::string key, text;

  long long integer() const {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size() || text.empty()) throw UsageError(key + ": expected an integer, got '" + text + "'");
    return v;
  }
  double real() const {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != text.size() || text.empty()) throw UsageError(key + ": expected a number, got '" + text + "'");
    return v;
  }
  bool boolean() const {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw UsageError(key + ": expected true or false, got '" + text + "'");
  }
  std::vector<std::string> items() const {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(trim(part));
    if (out.empty()) throw UsageError(key + ": empty list");
    return out;
  }
  std::vector<Index> ints() const {
    std::vector<Index> out;
    for (const auto& s : items()) out.push_back(Value{key, s}.integer());
    return out;
  }
  std::vector<double> reals() const {
    std::vector<double> out;
    for (const auto& s : items()) out.push_back(Value{key, s}.real());
    return out;
  }
  template <std::size_t N>
  std::array<Index, N> fixed() const {
    const auto v = ints();
    if (v.size() != N) throw UsageError(key + ": expected " + std::to_string(N) + " values");
    std::array<Index, N> a{};
    std::copy(v.begin(), v.end(), a.begin());
    return a;
  }
};

AEMatterConfig preset(const std::string& name) {
  if (name == "toy") return AEMatterConfig::toy();
  if (name == "reduced") return AEMatterConfig::reduced();
  if (name == "small") return AEMatterConfig::small();
  throw UsageError("model.preset: expected toy, reduced or small, got '" + name + "'");
}

void apply(RunConfig& c, const std::string& section, const Value& v) {
  const std::string& k = v.key.substr(v.key.find('.') + 1);
  auto& m = c.model;
  auto& t = c.train;
  auto& d = c.synth;
  auto& s = c.study;
  if (section == "model") {
    if (k == "preset") return;  // applied first
    if (k == "stem") m.stem = v.fixed<2>();
    else if (k == "stages") m.stages = v.fixed<4>();
    else if (k == "blocks") m.blocks = v.fixed<4>();
    else if (k == "heads") m.heads = v.fixed<4>();
    else if (k == "window") m.window = v.integer();
    else if (k == "aeal_count") m.aeal.count = v.integer();
    else if (k == "aeal_context") m.aeal.context_dim = v.integer();
    else if (k == "aeal_band") m.aeal.band = v.integer();
    else if (k == "aeal_heads") m.aeal.heads = v.integer();
    else if (k == "aeal_res_kernel") m.aeal_res_kernel = v.integer();
    else if (k == "decoder_blocks") m.decoder_blocks = v.integer();
    else if (k == "fusion_kernel") m.fusion_kernel = v.integer();
    else throw UsageError("unknown key " + v.key);
  } else if (section == "train") {
    if (k == "patch_size") t.patch_size = v.integer();
    else if (k == "steps") t.steps = v.integer();
    else if (k == "batch_size") t.batch_size = v.integer();
    else if (k == "lr") t.optimizer.lr = v.real();
    else if (k == "warmup_steps") t.optimizer.warmup_steps = v.integer();
    else if (k == "seed") t.seed = static_cast<std::uint64_t>(v.integer());
    else if (k == "augment") t.augment = v.boolean();
    else if (k == "flip_probability") t.augmentation.flip_probability = v.real();
    else if (k == "scale_min") t.augmentation.scale_min = v.real();
    else if (k == "scale_max") t.augmentation.scale_max = v.real();
    else if (k == "brightness") t.augmentation.brightness = v.real();
    else if (k == "charbonnier_eps") t.loss.charbonnier.epsilon = v.real();
    else if (k == "pyramid_levels") t.loss.pyramid_levels = v.integer();
    else if (k == "checkpoint_every") c.checkpoint_every = v.integer();
    else throw UsageError("unknown key " + v.key);
  } else if (section == "data") {
    if (k == "root") c.dataset_root = v.text;
    else if (k == "count") c.synth_count = v.integer();
    else if (k == "seed") d.seed = static_cast<std::uint64_t>(v.integer());
    else if (k == "canvas") d.canvas = v.integer();
    else if (k == "trimap_radius") d.trimap_radius = v.real();
    else if (k == "supersample") d.supersample = v.integer();
    else if (k == "min_shapes") d.min_shapes = v.integer();
    else if (k == "max_shapes") d.max_shapes = v.integer();
    else if (k == "families") {
      d.families.clear();
      for (const auto& name : v.items()) {
        auto it = family_names().find(name);
        if (it == family_names().end()) throw UsageError(v.key + ": unknown shape family '" + name + "'");
        d.families.push_back(it->second);
      }
    } else throw UsageError("unknown key " + v.key);
  } else if (section == "study") {
    if (k == "tile_sizes") s.tile_sizes = v.ints();
    else if (k == "patch_sizes") s.patch_sizes = v.ints();
    else if (k == "distances") s.distances = v.reals();
    else if (k == "kernels") s.kernels = v.ints();
    else if (k == "base_steps") s.base_steps = v.integer();
    else if (k == "eval_count") s.eval_count = v.integer();
    else if (k == "erf_probes") s.erf_probes = v.integer();
    else if (k == "seeds") {
      s.seeds.clear();
      for (Index x : v.ints()) s.seeds.push_back(static_cast<std::uint64_t>(x));
    } else throw UsageError("unknown key " + v.key);
  } else {
    throw UsageError("unknown section [" + section + "]");
  }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, Value>> entries;
  std::stringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw UsageError("config line " + std::to_string(lineno) + ": unclosed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty()) throw UsageError("config line " + std::to_string(lineno) + ": key outside a section");
    entries.push_back({section, Value{section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1))}});
  }
  RunConfig c;
  for (const auto& [sec, v] : entries)
    if (v.key == "model.preset") {
      c.model = preset(v.text);
      c.model_preset = v.text;
    }
  for (const auto& [sec, v] : entries) apply(c, sec, v);
  try {
    c.model.validate();
    c.train.validate();
  } catch (const UsageError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (c.checkpoint_every < 1 || c.synth_count < 1 || c.study.eval_count < 1 || c.study.seeds.empty() ||
      c.study.base_steps < 1 || c.study.erf_probes < 1) {
    throw UsageError("config: counts, checkpoint_every, base_steps and erf_probes must be positive; seeds non-empty");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  const auto& d = c.synth;
  const auto& s = c.study;
  std::ostringstream o;
  o << "[model]\npreset = " << c.model_preset << "\nstem = " << list(m.stem) << "\nstages = " << list(m.stages)
    << "\nblocks = " << list(m.blocks) << "\nheads = " << list(m.heads) << "\nwindow = " << m.window
    << "\naeal_count = " << m.aeal.count << "\naeal_context = " << m.aeal.context_dim << "\naeal_band = " << m.aeal.band
    << "\naeal_heads = " << m.aeal.heads << "\naeal_res_kernel = " << m.aeal_res_kernel
    << "\ndecoder_blocks = " << m.decoder_blocks << "\nfusion_kernel = " << m.fusion_kernel << "\n\n";
  o << "[train]\npatch_size = " << t.patch_size << "\nsteps = " << t.steps << "\nbatch_size = " << t.batch_size
    << "\nlr = " << num(t.optimizer.lr) << "\nwarmup_steps = " << t.optimizer.warmup_steps << "\nseed = " << t.seed
    << "\naugment = " << (t.augment ? "true" : "false") << "\nflip_probability = " << num(t.augmentation.flip_probability)
    << "\nscale_min = " << num(t.augmentation.scale_min) << "\nscale_max = " << num(t.augmentation.scale_max)
    << "\nbrightness = " << num(t.augmentation.brightness) << "\ncharbonnier_eps = " << num(t.loss.charbonnier.epsilon)
    << "\npyramid_levels = " << t.loss.pyramid_levels << "\ncheckpoint_every = " << c.checkpoint_every << "\n\n";
  std::string fams;
  for (auto f : d.families) fams += (fams.empty() ? "" : ",") + family_name(f);
  o << "[data]\n";
  if (!c.dataset_root.empty()) o << "root = " << c.dataset_root << "\n";
  o << "count = " << c.synth_count << "\nseed = " << d.seed << "\ncanvas = " << d.canvas
    << "\ntrimap_radius = " << num(d.trimap_radius) << "\nsupersample = " << d.supersample
    << "\nmin_shapes = " << d.min_shapes << "\nmax_shapes = " << d.max_shapes << "\nfamilies = " << fams << "\n\n";
  o << "[study]\ntile_sizes = " << list(s.tile_sizes) << "\npatch_sizes = " << list(s.patch_sizes)
    << "\ndistances = " << list(s.distances) << "\nkernels = " << list(s.kernels) << "\nbase_steps = " << s.base_steps
    << "\neval_count = " << s.eval_count << "\nerf_probes = " << s.erf_probes << "\nseeds = " << list(s.seeds) << "\n";
  return o.str();
}

std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const std::string text = format_config(c) + "#seed=" + std::to_string(c.train.seed);
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace aem::cli
