#include "pirt/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pirt/error.hpp"

namespace pirt {

namespace {

constexpr char kCheckpointMagic[4] = {'P', 'I', 'R', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

void write_named(std::ostream& out, const std::vector<NamedTensor>& items) {
  write_u64(out, items.size());
  for (const auto& item : items) {
    write_string(out, item.name);
    write_tensor(out, item.tensor);
  }
}

void read_named(std::istream& in, const std::vector<NamedTensor>& into, const char* what) {
  std::uint64_t n = read_u64(in);
  if (n != into.size()) {
    throw ConfigError(std::string("checkpoint has ") + std::to_string(n) + " " + what + ", model expects " +
                      std::to_string(into.size()));
  }
  for (const auto& item : into) {
    std::string name = read_string(in);
    Tensor t = read_tensor(in);
    if (name != item.name) throw ConfigError("checkpoint entry '" + name + "' where '" + item.name + "' was expected");
    if (t.shape() != item.tensor.shape()) {
      throw ConfigError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) + ", model expects " +
                        shape_str(item.tensor.shape()));
    }
    Tensor dst_t = item.tensor;
    auto dst = dst_t.mutable_data();
    std::copy(t.data().begin(), t.data().end(), dst.begin());
  }
}

RunConfig read_header(std::istream& in, const std::filesystem::path& path) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw FormatError("bad checkpoint magic at offset 0 in " + path.string());
  }
  std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) + " at offset 4");
  }
  RunConfig cfg;
  cfg.apply_text(read_string(in), path.string() + " (config echo)");
  return cfg;
}

std::string model_echo(const RunConfig& c) {
  std::istringstream in(c.echo());
  std::string line, out;
  while (std::getline(in, line)) {
    if (line.rfind("model.", 0) == 0) out += line + "\n";
  }
  return out;
}

}  // namespace

double scheduled_lr(const ScheduleConfig& s, double base, std::size_t epoch) {
  if (epoch < s.warmup) return base * static_cast<double>(epoch + 1) / static_cast<double>(s.warmup);
  if (epoch < s.decay_start) return base;
  std::size_t span = s.epochs > s.decay_start + 1 ? s.epochs - 1 - s.decay_start : 0;
  double t = span == 0 ? 1.0 : std::min(1.0, static_cast<double>(epoch - s.decay_start) / static_cast<double>(span));
  return s.floor + (base - s.floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// --- optimizer -------------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, const OptimConfig& config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    auto w = p.mutable_data();
    bool has = p.has_grad();
    std::span<const double> g = has ? std::span<const double>(p.grad()) : std::span<const double>();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      double gj = has ? g[j] : 0.0;
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
      double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
      w[j] -= lr * (update + config_.weight_decay * w[j]);
    }
    p.zero_grad();
  }
}

void Adam::save(std::ostream& out) const {
  write_u64(out, t_);
  write_u64(out, params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    write_tensor(out, Tensor(params_[i].shape(), m_[i]));
    write_tensor(out, Tensor(params_[i].shape(), v_[i]));
  }
}

void Adam::load(std::istream& in) {
  t_ = read_u64(in);
  if (read_u64(in) != params_.size()) throw ConfigError("checkpoint optimizer state does not match the model");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor m = read_tensor(in), v = read_tensor(in);
    if (m.numel() != m_[i].size() || v.numel() != v_[i].size()) {
      throw ConfigError("checkpoint optimizer moment " + std::to_string(i) + " has the wrong size");
    }
    m_[i].assign(m.data().begin(), m.data().end());
    v_[i].assign(v.data().begin(), v.data().end());
  }
}

// --- sampling ----------------------------------------------------------------------

PkSampler::PkSampler(std::span<const int> labels, std::size_t p, std::size_t k) : p_(p), k_(k) {
  for (std::size_t i = 0; i < labels.size(); ++i) members_[labels[i]].push_back(i);
  for (const auto& [id, m] : members_) ids_.push_back(id);
  if (p_ > ids_.size()) {
    throw ConfigError("batch.p=" + std::to_string(p_) + " exceeds the " + std::to_string(ids_.size()) +
                      " training identities");
  }
  if (p_ * k_ > labels.size()) {
    throw ConfigError("batch of " + std::to_string(p_ * k_) + " exceeds the " + std::to_string(labels.size()) +
                      " training samples");
  }
}

std::vector<std::size_t> PkSampler::draw(std::mt19937_64& rng) const {
  std::vector<std::size_t> order(ids_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < p_; ++i) {
    std::vector<std::size_t> pool = members_.at(ids_[order[i]]);
    if (pool.size() >= k_) {
      shuffle(pool, rng);
      out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k_));
    } else {
      for (std::size_t j = 0; j < k_; ++j) {
        auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size()));
        out.push_back(pool[std::min(pick, pool.size() - 1)]);
      }
    }
  }
  return out;
}

Batch make_batch(std::span<const SynthSample> samples, std::span<const std::size_t> indices,
                 const HeatmapOptions& pose, std::span<const int> labels) {
  if (indices.empty()) throw ContractError("empty batch");
  const SynthSample& first = samples[indices[0]];
  std::size_t H = first.height, W = first.width;
  std::vector<double> pixels;
  pixels.reserve(indices.size() * H * W * 3);
  Batch b;
  for (std::size_t i : indices) {
    const SynthSample& s = samples[i];
    if (s.height != H || s.width != W) throw DimensionError("batch mixes image sizes");
    pixels.insert(pixels.end(), s.image.begin(), s.image.end());
    b.heatmaps.push_back(sample_heatmaps(s, pose));
    b.labels.push_back(labels.empty() ? s.identity : labels[i]);
  }
  b.images = Tensor({indices.size(), H, W, 3}, std::move(pixels));
  return b;
}

std::string EpochMetrics::json() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["lr"] = lr;
  j["L_local"] = local;
  j["L_global"] = global;
  j["L"] = total;
  j["steps"] = steps;
  return j.dump();
}

// --- trainer -------------------------------------------------------------------------

Trainer::Trainer(RunConfig config, const std::vector<SynthSample>& samples) : config_(std::move(config)) {
  config_.validate();
  std::set<int> ids;
  for (const auto& s : samples) {
    if (s.split != Split::Train) continue;
    train_.push_back(s);
    ids.insert(s.identity);
  }
  if (train_.empty()) throw ConfigError("dataset has no training samples");
  std::map<int, int> class_of;
  for (int id : ids) class_of.emplace(id, static_cast<int>(class_of.size()));
  for (const auto& s : train_) labels_.push_back(class_of.at(s.identity));
  config_.model.image_h = train_[0].height;
  config_.model.image_w = train_[0].width;
  config_.model.num_classes = ids.size();
  model_ = std::make_unique<PirtModel>(config_.model, config_.seed);
  adam_ = std::make_unique<Adam>(model_->registry().param_tensors(), config_.optim);
  sampler_ = std::make_unique<PkSampler>(labels_, config_.batch.p, config_.batch.k);
  rng_.seed(config_.seed ^ 0x5eed5eed5eed5eedULL);
}

std::size_t Trainer::steps_per_epoch() const {
  if (config_.batch.steps_per_epoch) return config_.batch.steps_per_epoch;
  return std::max<std::size_t>(1, train_.size() / (config_.batch.p * config_.batch.k));
}

EpochMetrics Trainer::run_epoch() {
  EpochMetrics m;
  m.lr = scheduled_lr(config_.schedule, config_.optim.lr, epoch_);
  m.steps = steps_per_epoch();
  for (std::size_t step = 0; step < m.steps; ++step) {
    std::uint64_t batch_seed = rng_();
    std::mt19937_64 brng(batch_seed);
    std::vector<std::size_t> idx = sampler_->draw(brng);
    std::vector<SynthSample> picked;
    picked.reserve(idx.size());
    std::vector<int> labels;
    for (std::size_t i : idx) {
      picked.push_back(config_.augment ? augment(train_[i], brng) : train_[i]);
      labels.push_back(labels_[i]);
    }
    std::vector<std::size_t> order(picked.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Batch batch = make_batch(picked, order, config_.pose, labels);

    Tape tape;
    TapeGuard guard(tape);
    ForwardContext ctx{Mode::Train, &brng};
    ModelOutput out = model_->forward(batch.images, batch.heatmaps, ctx);
    LossBreakdown loss = loss_total(out, batch.labels, config_.model.margin);
    double total = loss.total.item();
    if (!std::isfinite(total)) {
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch_ + 1) + " step " + std::to_string(step + 1) +
                         " (batch seed " + std::to_string(batch_seed) + ")");
    }
    tape.backward(loss.total);
    adam_->step(m.lr);
    m.local += loss.local.item();
    m.global += loss.global.item();
    m.total += total;
    step_losses_.push_back(total);
  }
  double n = static_cast<double>(m.steps);
  m.local /= n;
  m.global /= n;
  m.total /= n;
  m.epoch = ++epoch_;
  return m;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_string(out, config_.echo());
  ParamRegistry reg = model_->registry();
  write_named(out, reg.params);
  write_named(out, reg.buffers);
  adam_->save(out);
  write_u64(out, epoch_);
  std::ostringstream rng;
  rng << rng_;
  write_string(out, rng.str());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + path.string());
  RunConfig saved = read_header(in, path);
  if (model_echo(saved) != model_echo(config_)) {
    throw ConfigError("checkpoint " + path.string() + " was written for a different model configuration");
  }
  ParamRegistry reg = model_->registry();
  read_named(in, reg.params, "parameters");
  read_named(in, reg.buffers, "buffers");
  adam_->load(in);
  epoch_ = read_u64(in);
  std::istringstream rng(read_string(in));
  rng >> rng_;
  if (!rng) throw FormatError("corrupt RNG state in checkpoint " + path.string());
}

std::vector<EpochMetrics> train_run(const RunConfig& config, const std::vector<SynthSample>& samples,
                                    const std::filesystem::path& out, const std::filesystem::path& resume) {
  Trainer trainer(config, samples);
  if (!resume.empty()) trainer.load_checkpoint(resume);
  std::filesystem::create_directories(out);
  std::ofstream log(out / "metrics.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw FormatError("cannot write " + (out / "metrics.jsonl").string());
  std::vector<EpochMetrics> history;
  while (!trainer.done()) {
    EpochMetrics m = trainer.run_epoch();
    log << m.json() << '\n';
    log.flush();
    history.push_back(m);
    if (config.save_interval && m.epoch % config.save_interval == 0 && !trainer.done()) {
      trainer.save_checkpoint(out / ("checkpoint_e" + std::to_string(m.epoch) + ".bin"));
    }
  }
  trainer.save_checkpoint(out / "checkpoint.bin");
  return history;
}

LoadedModel load_model(const std::filesystem::path& checkpoint) {
  std::ifstream in(checkpoint, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint " + checkpoint.string());
  LoadedModel lm;
  lm.config = read_header(in, checkpoint);
  lm.model = std::make_unique<PirtModel>(lm.config.model, lm.config.seed);
  ParamRegistry reg = lm.model->registry();
  read_named(in, reg.params, "parameters");
  read_named(in, reg.buffers, "buffers");
  return lm;
}

}  // namespace pirt
