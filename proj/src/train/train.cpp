#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "aem/train.hpp"

namespace aem::train {

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

std::uint64_t get_u64(const std::vector<std::uint8_t>& in) {
  if (in.size() != 8) throw CheckpointError("step section must hold exactly 8 bytes");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(in[static_cast<std::size_t>(k)]) << (8 * k);
  return v;
}

const CheckpointSection* find_section(const std::vector<CheckpointSection>& sections, const std::string& tag) {
  for (const auto& s : sections)
    if (s.tag == tag) return &s;
  return nullptr;
}

}  // namespace

double learning_rate(const OptimizerConfig& cfg, Index step, Index total_steps) {
  if (step < cfg.warmup_steps) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
  const Index decay = std::max<Index>(1, total_steps - cfg.warmup_steps);
  const double progress = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(decay));
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
void Adam<T>::step(ParameterSet<T>& params, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params.items()) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    auto& m = m_[p.name];
    auto& v = v_[p.name];
    const auto n = static_cast<std::size_t>(p.tensor.numel());
    if (m.empty()) {
      m.assign(n, 0.0);
      v.assign(n, 0.0);
    }
    auto g = p.tensor.grad();
    auto x = p.tensor.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      m[i] = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * gi * gi;
      x[i] = static_cast<T>(x[i] - lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps));
    }
  }
}

template <typename T>
std::vector<std::uint8_t> Adam<T>::state_bytes() const {
  std::vector<std::pair<std::string, Tensor<double>>> named;
  named.emplace_back("t", Tensor<double>({1}, std::vector<double>{static_cast<double>(t_)}));
  for (const auto& [name, m] : m_) {
    named.emplace_back("m:" + name, Tensor<double>({static_cast<Index>(m.size())}, m));
    named.emplace_back("v:" + name, Tensor<double>({static_cast<Index>(m.size())}, v_.at(name)));
  }
  return encode_tensors(named);
}

template <typename T>
void Adam<T>::load_state(const std::vector<std::uint8_t>& bytes) {
  std::size_t off = 0;
  const auto stored = decode_tensors(bytes, off);
  if (off != bytes.size()) throw CheckpointError("optimizer section has trailing bytes");
  std::map<std::string, std::vector<double>> m, v;
  Index t = -1;
  for (const auto& s : stored) {
    if (s.name == "t" && s.values.size() == 1) {
      t = static_cast<Index>(s.values[0]);
    } else if (s.name.rfind("m:", 0) == 0) {
      m[s.name.substr(2)] = s.values;
    } else if (s.name.rfind("v:", 0) == 0) {
      v[s.name.substr(2)] = s.values;
    } else {
      throw CheckpointError("unexpected optimizer entry '" + s.name + "'");
    }
  }
  if (t < 0) throw CheckpointError("optimizer section lacks its step count");
  for (const auto& [name, vals] : m)
    if (!v.count(name) || v[name].size() != vals.size()) throw CheckpointError("optimizer moments disagree for " + name);
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

void TrainConfig::validate() const {
  if (patch_size < 32) throw std::invalid_argument("train: patch size must be at least 32");
  if (steps < 1 || batch_size < 1) throw std::invalid_argument("train: steps and batch size must be positive");
  if (!(optimizer.lr > 0) || optimizer.warmup_steps < 0) throw std::invalid_argument("train: lr must be positive");
  if (!(loss.charbonnier.epsilon > 0) || loss.pyramid_levels < 1) throw std::invalid_argument("train: bad loss config");
}

std::string format_step(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g", static_cast<long long>(r.step), r.lr, r.total,
                r.l1, r.charbonnier, r.laplacian);
  return buf;
}

std::vector<Index> batch_indices(std::uint64_t seed, Index step, Index batch, Index n) {
  if (n < 1) throw std::invalid_argument("batch_indices: empty dataset");
  std::vector<Index> out;
  Index cached_epoch = -1;
  std::vector<Index> perm(static_cast<std::size_t>(n));
  for (Index b = 0; b < batch; ++b) {
    const Index p = step * batch + b, epoch = p / n;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), Index{0});
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(epoch), 0x9e3779b9u};
      std::mt19937_64 rng(seq);
      // Fisher-Yates with raw draws; std::shuffle's use of the engine is unspecified.
      for (Index i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng() % static_cast<std::uint64_t>(i + 1)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[static_cast<std::size_t>(p % n)]);
  }
  return out;
}

Batch make_batch(const std::vector<data::CompositeSample>& samples) {
  std::vector<RGBImage> images;
  std::vector<Trimap> trimaps;
  std::vector<Plane> alphas;
  for (const auto& s : samples) {
    images.push_back(s.image);
    trimaps.push_back(s.trimap);
    alphas.push_back(s.alpha);
  }
  return {stack_images<float>(images), stack_trimaps<float>(trimaps), stack_planes<float>(alphas)};
}

Plane predict(const ModelWeights<float>& w, const RGBImage& image, const Trimap& trimap) {
  NoGradScope<float> off;
  return plane_from_tensor(model_forward(to_tensor<float>(image), to_tensor<float>(trimap), w));
}

Trainer::Trainer(ModelWeights<float>& weights, std::vector<data::CompositeSample> samples, TrainConfig cfg)
    : weights_(&weights), samples_(std::move(samples)), cfg_(std::move(cfg)), adam_(cfg_.optimizer) {
  cfg_.validate();
  if (samples_.empty()) throw std::invalid_argument("train: no samples");
  for (const auto& s : samples_)
    if (s.alpha.height < cfg_.patch_size || s.alpha.width < cfg_.patch_size) {
      throw std::invalid_argument("train: patch size " + std::to_string(cfg_.patch_size) + " exceeds a " +
                                  std::to_string(s.alpha.height) + "x" + std::to_string(s.alpha.width) + " sample");
    }
}

StepRecord Trainer::step() {
  const auto idx = batch_indices(cfg_.seed, step_, cfg_.batch_size, static_cast<Index>(samples_.size()));
  std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                    static_cast<std::uint32_t>(step_), static_cast<std::uint32_t>(step_ >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<data::CompositeSample> chosen;
  for (Index i : idx) {
    data::CompositeSample s = data::sample_patch(samples_[static_cast<std::size_t>(i)], cfg_.patch_size, rng);
    if (cfg_.augment) s = data::augment(s, cfg_.augmentation, rng);
    chosen.push_back(std::move(s));
  }
  const Batch b = make_batch(chosen);

  ParameterSet<float>& params = weights_->params;
  params.zero_grad();
  Tape<float> tape;
  StepRecord rec;
  rec.step = step_;
  rec.lr = learning_rate(cfg_.optimizer, step_, cfg_.steps);
  {
    TapeScope<float> scope(tape);
    const auto pred = model_forward(b.image, b.trimap, *weights_);
    const auto mask = loss::TrimapMask<float>::from_trimap(b.trimap);
    const auto l = loss::total_loss(pred, b.alpha, mask, cfg_.loss);
    rec.total = l.total.item();
    rec.l1 = l.l1.item();
    rec.charbonnier = l.charbonnier.item();
    rec.laplacian = l.laplacian.item();
    if (!std::isfinite(rec.total)) throw NumericError("non-finite loss at step " + std::to_string(step_));
    tape.backward(l.total);
  }
  for (const auto& p : params.items())
    for (float g : p.tensor.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in " + p.name + " at step " + std::to_string(step_));
  adam_.step(params, rec.lr);
  ++step_;
  return rec;
}

std::vector<CheckpointSection> Trainer::state_sections() const {
  CheckpointSection step{"train.step", {}};
  put_u64(step.payload, static_cast<std::uint64_t>(step_));
  return {step, CheckpointSection{"train.adam", adam_.state_bytes()}};
}

void Trainer::restore(const std::vector<CheckpointSection>& sections) {
  const auto* step = find_section(sections, "train.step");
  const auto* adam = find_section(sections, "train.adam");
  if (!step || !adam) throw CheckpointError("checkpoint has no training state to resume from");
  const auto s = static_cast<Index>(get_u64(step->payload));
  adam_.load_state(adam->payload);
  step_ = s;
}

}  // namespace aem::train
