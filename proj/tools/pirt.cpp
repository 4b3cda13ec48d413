// pirt command-line front end: gen-data, train, embed, eval, gradcheck, ablate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "pirt/config.hpp"
#include "pirt/error.hpp"
#include "pirt/harness.hpp"
#include "pirt/retrieval.hpp"
#include "pirt/synth.hpp"
#include "pirt/train.hpp"

namespace fs = std::filesystem;
using namespace pirt;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config_path, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
  cmd->add_option_function<std::uint64_t>(
      "--seed",
      [&c](const std::uint64_t& v) {
        c.seed = v;
        c.seed_given = true;
      },
      "seed");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
}

RunConfig build_config(const Common& c) {
  RunConfig config;
  if (!c.config_path.empty()) config.apply_file(c.config_path);
  for (std::size_t i = 0; i < c.overrides.size(); ++i) config.apply_text(c.overrides[i], "--set #" + std::to_string(i + 1));
  if (c.seed_given) config.seed = c.seed;
  return config;
}

std::vector<SynthSample> dataset_for(const RunConfig& config) {
  if (!config.data_path.empty()) return load_dataset(config.data_path);
  config.data.validate();
  return generate_dataset(config.data);
}

void print_report(const EvalReport& r) {
  auto at = [&](std::size_t k) { return k <= r.cmc.size() ? r.cmc[k - 1] : r.cmc.back(); };
  std::printf("queries %zu  mAP %.2f%%  CMC@1 %.2f%%  CMC@5 %.2f%%  CMC@10 %.2f%%\n", r.n_queries, 100.0 * r.mAP,
              100.0 * at(1), 100.0 * at(5), 100.0 * at(10));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-guided part transformer for occluded person re-identification"};
  app.require_subcommand(1);

  Common gen_c, train_c, embed_c, eval_c, grad_c, ablate_c;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark (--seed sets data.seed)");
  add_common(gen, gen_c, true);

  auto* train = app.add_subcommand("train", "train a model; writes metrics.jsonl and checkpoint.bin");
  add_common(train, train_c, true);
  std::string resume;
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);

  auto* embed = app.add_subcommand("embed", "eval-mode embeddings of one split");
  add_common(embed, embed_c, true);
  std::string checkpoint, split_name = "gallery";
  embed->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  embed->add_option("--split", split_name, "train, query or gallery");
  std::string data_override;
  embed->add_option("--data", data_override, "dataset directory (default: the checkpoint's data settings)");

  auto* eval = app.add_subcommand("eval", "rank, re-rank and score query embeddings against a gallery");
  add_common(eval, eval_c, false);
  std::string query_base, gallery_base;
  eval->add_option("--query", query_base, "query embedding base path (without .jsonl)")->required();
  eval->add_option("--gallery", gallery_base, "gallery embedding base path (without .jsonl)")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer and the full loss");
  add_common(grad, grad_c, false);
  bool negative_control = false;
  grad->add_flag("--negative-control", negative_control, "add a row with a deliberately wrong backward rule");

  auto* ablate = app.add_subcommand("ablate", "train and compare model variants");
  add_common(ablate, ablate_c, true);
  std::string axes = "components,n_units,score_mode";
  ablate->add_option("--axes", axes, "comma-separated: components, n_units, score_mode");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      RunConfig config = build_config(gen_c);
      if (gen_c.seed_given) config.data.seed = gen_c.seed;
      config.data.validate();
      auto samples = generate_dataset(config.data);
      save_dataset(samples, gen_c.out, &config.data);
      std::printf("wrote %zu samples to %s\n", samples.size(), gen_c.out.c_str());
    } else if (*train) {
      RunConfig config = build_config(train_c);
      config.validate();
      auto samples = dataset_for(config);
      auto log = train_run(config, samples, train_c.out, resume);
      for (const auto& m : log) std::printf("%s\n", m.json().c_str());
    } else if (*embed) {
      LoadedModel loaded = load_model(checkpoint);
      RunConfig config = loaded.config;
      if (!embed_c.config_path.empty() || !embed_c.overrides.empty()) {
        RunConfig user = build_config(embed_c);
        config.data = user.data;
        config.data_path = user.data_path;
      }
      if (!data_override.empty()) config.data_path = data_override;
      auto samples = select_split(dataset_for(config), parse_split(split_name));
      auto records = embed_samples(*loaded.model, samples, config.pose);
      fs::create_directories(embed_c.out);
      save_embeddings(records, fs::path(embed_c.out) / split_name);
      std::printf("wrote %zu records to %s\n", records.size(), (fs::path(embed_c.out) / split_name).c_str());
    } else if (*eval) {
      RunConfig config = build_config(eval_c);
      config.validate();
      auto queries = load_embeddings(query_base);
      auto gallery = load_embeddings(gallery_base);
      EvalReport report = evaluate_embeddings(queries, gallery, config.match, config.k_max);
      print_report(report);
      if (!eval_c.out.empty()) {
        fs::create_directories(eval_c.out);
        write_report_csv(report, fs::path(eval_c.out) / "report.csv");
        write_report_json(report, fs::path(eval_c.out) / "report.json");
      }
    } else if (*grad) {
      build_config(grad_c);
      GradcheckOptions options;
      options.negative_control = negative_control;
      auto rows = run_gradcheck(options);
      print_gradcheck(rows, std::cout);
      if (!grad_c.out.empty()) {
        fs::create_directories(grad_c.out);
        std::ofstream table(fs::path(grad_c.out) / "gradcheck.txt");
        print_gradcheck(rows, table);
      }
      for (const auto& r : rows) {
        if (!r.passed()) return 2;
      }
    } else if (*ablate) {
      RunConfig config = build_config(ablate_c);
      config.validate();
      auto samples = dataset_for(config);
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = 0; i < config.ablate_seeds; ++i) seeds.push_back(config.seed + i);
      auto rows = run_ablation(config, samples, split_list(axes), seeds, &std::cerr);
      auto summary = summarize(rows);
      print_ablation(summary, std::cout);
      fs::create_directories(ablate_c.out);
      write_ablation_csv(rows, summary, fs::path(ablate_c.out) / "ablation.csv");
    }
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
