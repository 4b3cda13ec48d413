#include "pirt/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "pirt/error.hpp"
#include "pirt/grad_check.hpp"
#include "pirt/train.hpp"

namespace pirt {

std::vector<SynthSample> select_split(const std::vector<SynthSample>& samples, Split split) {
  std::vector<SynthSample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [&](const SynthSample& s) { return s.split == split; });
  return out;
}

std::vector<EmbeddingRecord> embed_samples(PirtModel& model, const std::vector<SynthSample>& samples,
                                           const HeatmapOptions& pose, std::size_t batch_size) {
  if (batch_size == 0) throw ContractError("embedding batch size must be positive");
  std::vector<EmbeddingRecord> out;
  ForwardContext ctx{Mode::Eval, nullptr};
  for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
    std::size_t end = std::min(samples.size(), begin + batch_size);
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
    Batch batch = make_batch(samples, idx, pose);
    ModelOutput o = model.forward(batch.images, batch.heatmaps, ctx);
    Tensor global = o.retrieval_global();
    std::size_t C = global.dim(1);
    auto gd = global.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      EmbeddingRecord r;
      r.identity = samples[idx[b]].identity;
      r.camera = samples[idx[b]].camera;
      r.global.assign(gd.begin() + static_cast<std::ptrdiff_t>(b * C), gd.begin() + static_cast<std::ptrdiff_t>((b + 1) * C));
      if (o.has_pose) {
        for (std::size_t g = 0; g < kNumGroups; ++g) {
          auto nd = o.neck[kPoseHead0 + g].data();
          r.groups[g].assign(nd.begin() + static_cast<std::ptrdiff_t>(b * C),
                             nd.begin() + static_cast<std::ptrdiff_t>((b + 1) * C));
          r.confidences[g] = o.combined.data()[b * kNumGroups + g];
        }
        r.visible = o.group_visible[b];
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

EvalReport evaluate_embeddings(const std::vector<EmbeddingRecord>& queries,
                               const std::vector<EmbeddingRecord>& gallery, const MatchParams& match,
                               std::size_t k_max) {
  EvalReport report = match_and_evaluate(queries, gallery, match, k_max);
  if (!report.skipped.empty()) {
    std::string list;
    for (std::size_t q : report.skipped) list += (list.empty() ? "" : ", ") + std::to_string(q);
    throw ContractError("queries without a valid gallery match: " + list);
  }
  return report;
}

// --- gradient verification -------------------------------------------------------

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = (2.0 * uniform01(rng) - 1.0) * scale;
  return Tensor(shape, std::move(v));
}

/// Scalar probe of a tensor: sum(y * r) with a fixed random r.
struct Probe {
  Tensor r;
  Tensor operator()(const Tensor& y) const { return sum(mul(y, r)); }
};

Probe probe_for(const Shape& shape, std::mt19937_64& rng) { return Probe{random_tensor(shape, rng)}; }

// y = relu(x) on the way forward, but twice the true gradient on the way back.
Tensor corrupted_relu(const Tensor& x) {
  std::vector<double> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, xd[i]);
  bool grad = x.requires_grad() && Tape::active() != nullptr;
  Tensor y(x.shape(), std::move(out), grad);
  if (grad) {
    Tape::active()->record({x}, y, [x, y]() {
      std::vector<double> g(x.numel());
      auto gy = y.grad();
      auto xd2 = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = xd2[i] > 0 ? 2.0 * gy[i] : 0.0;
      x.accumulate_grad(g);
    });
  }
  return y;
}

ModelConfig micro_model() {
  ModelConfig mc;
  mc.image_h = 16;
  mc.image_w = 8;
  mc.channels = 8;
  mc.heads = 2;
  mc.n_units = 1;
  mc.ffn_hidden = 16;
  mc.num_classes = 2;
  return mc;
}

struct MicroBatch {
  Tensor images;
  std::vector<HeatmapStack> heatmaps;
  std::vector<int> labels;
};

MicroBatch micro_batch(std::uint64_t seed) {
  SynthConfig sc;
  sc.n_identities = 2;
  sc.images_per_identity = 2;
  sc.n_train_ids = 2;
  sc.height = 16;
  sc.width = 8;
  sc.occlusion_prob = 0.5;
  sc.seed = seed;
  auto samples = generate_dataset(sc);
  std::vector<std::size_t> idx{0, 1, 2, 3};
  Batch b = make_batch(samples, idx, HeatmapOptions{});
  return {b.images, b.heatmaps, b.labels};
}

using Case = std::function<double(std::uint64_t seed, double eps)>;

double check(const std::function<Tensor()>& f, std::vector<Tensor> leaves, double eps) {
  return grad_check(f, leaves, eps);
}

std::vector<std::tuple<std::string, double, Case>> gradcheck_cases() {
  std::vector<std::tuple<std::string, double, Case>> cases;
  auto push = [&](std::string name, double tol, Case c) { cases.emplace_back(std::move(name), tol, std::move(c)); };

  push("matmul", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng);
    Probe p = probe_for({3, 5}, rng);
    return check([&] { return p(matmul(a, b)); }, {a, b}, eps);
  });
  push("elementwise (add/mul/div/sigmoid/exp/log/sqrt)", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({2, 3}, rng), b = random_tensor({3}, rng);
    Probe p = probe_for({2, 3}, rng);
    return check(
        [&] {
          Tensor pos = add_scalar(exp(a), 0.5);
          Tensor y = div(mul(sigmoid(a), b), pos);
          return p(add(y, log(sqrt(add_scalar(mul(a, a), 1.0)))));
        },
        {a, b}, eps);
  });
  push("relu", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({4, 5}, rng);
    Probe p = probe_for({4, 5}, rng);
    return check([&] { return p(relu(a)); }, {a}, eps);
  });
  push("conv2d 3x3", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 5, 4, 3}, rng), w = random_tensor({3, 3, 3, 4}, rng), b = random_tensor({4}, rng);
    Probe p1 = probe_for({2, 5, 4, 4}, rng), p2 = probe_for({2, 3, 2, 4}, rng);
    return check([&] { return add(p1(conv2d(x, w, b, 1)), p2(conv2d(x, w, b, 2))); }, {x, w, b}, eps);
  });
  push("conv2d 1x1", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 3, 2, 4}, rng), w = random_tensor({1, 1, 4, 3}, rng), b = random_tensor({3}, rng);
    Probe p = probe_for({2, 3, 2, 3}, rng);
    return check([&] { return p(conv2d(x, w, b, 1)); }, {x, w, b}, eps);
  });
  push("max_pool2d", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 6, 4, 3}, rng);
    Probe p = probe_for({2, 3, 2, 3}, rng);
    return check([&] { return p(max_pool2d(x, PoolWindow{3, 3, 2, 2, 1, 1})); }, {x}, eps);
  });
  push("avg_pool2d / global_avg_pool", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 6, 4, 3}, rng);
    Probe p = probe_for({2, 3, 2, 3}, rng), q = probe_for({2, 3}, rng);
    return check([&] { return add(p(avg_pool2d(x, PoolWindow{3, 3, 2, 2, 1, 1})), q(global_avg_pool(x))); }, {x},
                 eps);
  });
  push("batch_norm", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({3, 2, 2, 4}, rng), g = random_tensor({4}, rng), b = random_tensor({4}, rng);
    Probe p = probe_for({3, 2, 2, 4}, rng);
    RunningStats st = RunningStats::init(4);
    return check([&] { return p(batch_norm(x, g, b, st, Mode::Train)); }, {x, g, b}, eps);
  });
  push("instance_norm", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({2, 3, 2, 4}, rng), g = random_tensor({4}, rng), b = random_tensor({4}, rng);
    Probe p = probe_for({2, 3, 2, 4}, rng);
    RunningStats st = RunningStats::init(4);
    return check([&] { return p(instance_norm(x, g, b, st, Mode::Train)); }, {x, g, b}, eps);
  });
  push("layer_norm", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({3, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    Probe p = probe_for({3, 6}, rng);
    return check([&] { return p(layer_norm(x, g, b)); }, {x, g, b}, eps);
  });
  push("softmax / log_softmax", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({3, 5}, rng, 2.0);
    Probe p = probe_for({3, 5}, rng), q = probe_for({3, 5}, rng);
    return check([&] { return add(p(softmax(x, 1)), q(log_softmax(x, 0))); }, {x}, eps);
  });
  push("concat / chunk / slice / transpose / reshape", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor a = random_tensor({2, 4, 3}, rng), b = random_tensor({2, 2, 3}, rng);
    Probe p = probe_for({3, 6, 2}, rng);
    return check(
        [&] {
          auto parts = chunk(a, 2, 1);
          std::vector<Tensor> pieces{parts[1], b, slice(parts[0], 1, 0, 1), slice(parts[0], 1, 1, 2)};
          Tensor c = concat(pieces, 1);  // [2,6,3]
          return p(transpose(reshape(c, {2, 6, 3}), 0, 2));
        },
        {a, b}, eps);
  });
  push("sum / mean / max / gather", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({3, 4}, rng);
    Probe p = probe_for({3, 1}, rng), q = probe_for({4}, rng), r = probe_for({3}, rng);
    return check(
        [&] {
          return add(add(p(sum(x, 1, true)), q(mean(x, 0))),
                     add(r(max(x, 1).values), sum(gather(x, std::vector<std::size_t>{0, 5, 11}, {3}))));
        },
        {x}, eps);
  });
  push("dropout (train, fixed seed)", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor x = random_tensor({4, 6}, rng);
    Probe p = probe_for({4, 6}, rng);
    return check(
        [&] {
          std::mt19937_64 drop(s + 100);
          ForwardContext ctx{Mode::Train, &drop};
          return p(dropout(x, 0.3, ctx));
        },
        {x}, eps);
  });
  push("mhsa", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    MhsaParams m = MhsaParams::init(8, 2, rng);
    Tensor x = random_tensor({2, 4, 8}, rng);
    Probe p = probe_for({2, 4, 8}, rng);
    ParamRegistry reg;
    m.collect("mhsa", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(x);
    ForwardContext ctx{Mode::Eval, nullptr};
    return check([&] { return p(mhsa(x, m, ctx)); }, leaves, eps);
  });
  push("ffn", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    FfnParams f = FfnParams::init(6, 10, 0.1, rng);
    Tensor x = random_tensor({4, 6}, rng);
    Probe p = probe_for({4, 6}, rng);
    ParamRegistry reg;
    f.collect("ffn", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(x);
    return check(
        [&] {
          std::mt19937_64 drop(s + 7);
          ForwardContext ctx{Mode::Train, &drop};
          return p(ffn(x, f, ctx));
        },
        leaves, eps);
  });
  push("transformer unit", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    TransformerUnit u = TransformerUnit::init(8, 2, 12, 0.1, rng);
    Tensor x = random_tensor({2, 5, 8}, rng);
    Probe p = probe_for({2, 5, 8}, rng);
    ParamRegistry reg;
    u.collect("unit", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(x);
    return check(
        [&] {
          std::mt19937_64 drop(s + 11);
          ForwardContext ctx{Mode::Train, &drop};
          return p(transformer_unit(x, u, ctx));
        },
        leaves, eps);
  });
  push("backbone", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    BackboneParams bp = BackboneParams::init(8, rng);
    Tensor x = random_tensor({2, 8, 8, 3}, rng);
    Probe p = probe_for({2, 2, 2, 8}, rng);
    ParamRegistry reg;
    bp.collect("backbone", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(x);
    return check([&] { return p(backbone_forward(x, bp, Mode::Train)); }, leaves, eps);
  });
  push("IRM", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    IrmParams ip = IrmParams::init(8, 4, 2, 0.1, rng);
    Tensor f = random_tensor({2, 4, 2, 8}, rng);
    Tensor mask = random_tensor({2, 4, 2, 1}, rng);
    Probe p = probe_for({2, 4, 2, 8}, rng);
    ParamRegistry reg;
    ip.collect("irm", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(f);
    return check(
        [&] {
          std::mt19937_64 drop(s + 13);
          ForwardContext ctx{Mode::Train, &drop};
          return p(irm_forward(f, mask, ip, ctx));
        },
        leaves, eps);
  });
  push("IRT (pose groups, shared stack)", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    TransformerStack st = TransformerStack::init(2, 8, 2, 12, 0.1, rng);
    PartTokenSet tokens;
    tokens.kind = PartKind::Pose;
    tokens.tokens = random_tensor({2, kNumKeypoints, 8}, rng);
    for (std::size_t k = 0; k < kNumKeypoints; ++k) tokens.groups.push_back(keypoint_group(k));
    tokens.visible.assign(2, std::vector<bool>(kNumKeypoints, true));
    Probe p = probe_for({2, kNumGroups, 8}, rng);
    ParamRegistry reg;
    st.collect("irt", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(tokens.tokens);
    return check(
        [&] {
          std::mt19937_64 drop(s + 17);
          ForwardContext ctx{Mode::Train, &drop};
          return p(group_embed(irt_forward(tokens, st, ctx), tokens.groups));
        },
        leaves, eps);
  });
  push("CSM + confidence weighting", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    CsmParams cp = CsmParams::init(8, rng);
    // Redraw until no hidden ReLU input sits within the finite-difference reach of its kink.
    Tensor pose_hat;
    for (int attempt = 0; attempt < 100; ++attempt) {
      pose_hat = random_tensor({2, kNumGroups, 8}, rng);
      auto pre = linear(pose_hat, cp.l1).data();
      if (std::all_of(pre.begin(), pre.end(), [](double v) { return std::abs(v) > 1e-3; })) break;
    }
    std::vector<double> sv(2 * kNumGroups);
    for (auto& v : sv) v = 0.05 + 0.9 * uniform01(rng);
    Tensor scores({2, kNumGroups}, sv);
    Probe p = probe_for({2, kNumGroups, 8}, rng), q = probe_for({2, kNumGroups}, rng);
    ParamRegistry reg;
    cp.collect("csm", reg);
    auto leaves = reg.param_tensors();
    leaves.push_back(pose_hat);
    return check(
        [&] {
          auto r = apply_confidence(pose_hat, csm_scores(pose_hat, cp), scores);
          return add(p(r.weighted), q(r.combined));
        },
        leaves, eps);
  });
  push("cross_entropy", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor logits = random_tensor({4, 5}, rng, 3.0);
    std::vector<int> labels{0, 3, 4, 1};
    return check([&] { return cross_entropy(logits, labels); }, {logits}, eps);
  });
  push("hard_triplet", 1e-4, [](std::uint64_t s, double eps) {
    std::mt19937_64 rng(s);
    Tensor emb = random_tensor({8, 6}, rng);
    std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
    return check([&] { return hard_triplet(emb, labels, 0.3); }, {emb}, eps);
  });
  push("full loss (4-image micro-batch)", 1e-4, [](std::uint64_t s, double eps) {
    PirtModel model(micro_model(), s);
    MicroBatch mb = micro_batch(s);
    auto leaves = model.registry().param_tensors();
    return check(
        [&] {
          std::mt19937_64 drop(s + 19);
          ForwardContext ctx{Mode::Train, &drop};
          return loss_total(model.forward(mb.images, mb.heatmaps, ctx), mb.labels, 0.3).total;
        },
        leaves, eps);
  });
  return cases;
}

}  // namespace

std::vector<GradcheckRow> run_gradcheck(const GradcheckOptions& options) {
  std::vector<GradcheckRow> rows;
  for (auto& [name, tol, fn] : gradcheck_cases()) {
    GradcheckRow row{name, 0.0, tol};
    for (auto seed : options.seeds) row.error = std::max(row.error, fn(seed, options.eps));
    rows.push_back(row);
  }
  if (options.negative_control) {
    GradcheckRow row{"negative control (corrupted relu backward)", 0.0, 1e-4};
    for (auto seed : options.seeds) {
      std::mt19937_64 rng(seed);
      Tensor a = random_tensor({4, 5}, rng);
      Probe p = probe_for({4, 5}, rng);
      row.error = std::max(row.error, check([&] { return p(corrupted_relu(a)); }, {a}, options.eps));
    }
    rows.push_back(row);
  }
  return rows;
}

void print_gradcheck(const std::vector<GradcheckRow>& rows, std::ostream& out) {
  char line[160];
  std::snprintf(line, sizeof line, "%-48s %12s %10s  %s\n", "component", "max rel err", "tolerance", "status");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-48s %12.3e %10.0e  %s\n", r.name.c_str(), r.error, r.tolerance,
                  r.passed() ? "PASS" : "FAIL");
    out << line;
  }
}

// --- ablations -------------------------------------------------------------------

TrainedEmbeddings train_and_embed(const RunConfig& config, const std::vector<SynthSample>& samples) {
  Trainer trainer(config, samples);
  while (!trainer.done()) trainer.run_epoch();
  TrainedEmbeddings out;
  out.query = embed_samples(trainer.model(), select_split(samples, Split::Query), config.pose);
  out.gallery = embed_samples(trainer.model(), select_split(samples, Split::Gallery), config.pose);
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw ContractError("median of an empty set");
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const std::vector<SynthSample>& samples,
                                      const std::vector<std::string>& axes, const std::vector<std::uint64_t>& seeds,
                                      std::ostream* progress) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  struct Variant {
    std::string name;
    bool pose, intra, inter;
    std::size_t n_units;
  };
  std::map<std::string, TrainedEmbeddings> cache;
  auto trained = [&](const Variant& v, std::uint64_t seed) -> const TrainedEmbeddings& {
    std::string key = std::to_string(v.pose) + std::to_string(v.intra) + std::to_string(v.inter) + "/" +
                      std::to_string(v.n_units) + "/" + std::to_string(seed);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    RunConfig c = config;
    c.model.use_pose = v.pose;
    c.model.use_intra = v.intra;
    c.model.use_inter = v.inter;
    c.model.n_units = v.n_units;
    c.seed = seed;
    if (progress) *progress << "training " << v.name << " (seed " << seed << ")\n" << std::flush;
    return cache.emplace(key, train_and_embed(c, samples)).first->second;
  };
  auto score = [&](const std::string& axis, const std::string& name, std::uint64_t seed, const TrainedEmbeddings& e,
                   const MatchParams& match) {
    EvalReport r = evaluate_embeddings(e.query, e.gallery, match, config.k_max);
    return AblationRow{axis, name, seed, r.mAP, r.cmc[0]};
  };

  std::size_t units = config.model.n_units;
  std::vector<AblationRow> rows;
  for (const auto& axis : axes) {
    if (axis == "components") {
      std::vector<Variant> variants{{"baseline", false, false, false, units},
                                    {"+P", true, false, false, units},
                                    {"+P+Intra", true, true, false, units},
                                    {"+P+Intra+Inter (full)", true, true, true, units}};
      for (const auto& v : variants)
        for (auto seed : seeds) rows.push_back(score(axis, v.name, seed, trained(v, seed), config.match));
    } else if (axis == "n_units") {
      for (std::size_t n = 1; n <= 4; ++n) {
        Variant v{"N=" + std::to_string(n), true, true, true, n};
        for (auto seed : seeds) rows.push_back(score(axis, v.name, seed, trained(v, seed), config.match));
      }
    } else if (axis == "score_mode") {
      Variant full{"+P+Intra+Inter (full)", true, true, true, units};
      for (ScoreMode m : {ScoreMode::None, ScoreMode::Q, ScoreMode::G, ScoreMode::QG}) {
        MatchParams match = config.match;
        match.score_mode = m;
        for (auto seed : seeds) rows.push_back(score(axis, score_mode_name(m), seed, trained(full, seed), match));
      }
    } else {
      throw ConfigError("unknown ablation axis '" + axis + "' (expected components, n_units or score_mode)");
    }
  }
  return rows;
}

std::vector<AblationSummary> summarize(const std::vector<AblationRow>& rows) {
  std::vector<AblationSummary> out;
  for (const auto& r : rows) {
    bool seen = std::any_of(out.begin(), out.end(),
                            [&](const AblationSummary& s) { return s.axis == r.axis && s.variant == r.variant; });
    if (seen) continue;
    std::vector<double> maps, r1;
    for (const auto& q : rows) {
      if (q.axis != r.axis || q.variant != r.variant) continue;
      maps.push_back(q.mAP);
      r1.push_back(q.rank1);
    }
    out.push_back({r.axis, r.variant, median(maps), median(r1)});
  }
  return out;
}

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::vector<AblationSummary>& summary,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out.precision(17);
  out << "axis,variant,seed,mAP,rank1\n";
  for (const auto& r : rows) out << r.axis << ',' << r.variant << ',' << r.seed << ',' << r.mAP << ',' << r.rank1 << '\n';
  for (const auto& s : summary) {
    out << s.axis << ',' << s.variant << ",median," << s.median_mAP << ',' << s.median_rank1 << '\n';
  }
}

void print_ablation(const std::vector<AblationSummary>& summary, std::ostream& out) {
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %-24s %10s %10s\n", "axis", "variant", "mAP", "rank-1");
  out << line;
  for (const auto& s : summary) {
    std::snprintf(line, sizeof line, "%-12s %-24s %9.2f%% %9.2f%%\n", s.axis.c_str(), s.variant.c_str(),
                  100.0 * s.median_mAP, 100.0 * s.median_rank1);
    out << line;
  }
}

}  // namespace pirt
