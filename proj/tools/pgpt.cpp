// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: gen-data, train, infer, eval, inspect.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "pgpt/pipeline/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pgpt;

namespace {

PipelineConfig load_config(const fs::path& path) {
  try {
    return config_from_json(read_json_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

int gen_data(const fs::path& spec_path, const fs::path& out) {
  SyntheticSpec spec;
  try {
    spec = spec_from_json(read_json_file(spec_path));
  } catch (const ConfigError& e) {
    throw ConfigError(spec_path.string() + ": " + e.what());
  }
  const auto corpus = generate_synthetic_corpus(spec);
  write_dataset(out, corpus);
  std::size_t frames = 0;
  for (const auto& u : corpus.utterances) frames += u.bundle.frames();
  std::cout << "wrote " << corpus.utterances.size() << " utterances (" << frames << " frames) to " << out.string() << "\n";
  return 0;
}

int train(const std::string& stage_name_arg, const fs::path& config_path, const fs::path& data_dir, const fs::path& out,
          const std::string& tokenizer_arg, bool quiet) {
  const StageTag stage = stage_from_name(stage_name_arg);
  const auto cfg = load_config(config_path);
  const auto data = load_dataset(data_dir);
  ProgressFn progress;
  if (!quiet) {
    progress = [](const std::string& s, std::size_t step, std::size_t total, double loss) {
      std::cerr << s << " step " << step << "/" << total << " loss " << loss << "\n";
    };
  }
  StageResult result;
  if (stage == StageTag::tokenizer) {
    result = train_tokenizer(cfg, data, progress);
  } else {
    const fs::path tok_path = tokenizer_arg.empty() ? out.parent_path() / "tokenizer.ckpt" : fs::path(tokenizer_arg);
    if (!fs::exists(tok_path)) {
      throw CheckpointError(std::string(stage_name(stage)) + " training needs a tokenizer checkpoint; not found at " +
                            tok_path.string() + " (use --tokenizer)");
    }
    const auto tok = load_checkpoint(tok_path);
    if (stage == StageTag::ar) result = train_ar(cfg, data, tok, progress);
    else if (stage == StageTag::nar) result = train_nar(cfg, data, tok, progress);
    else result = train_flow(cfg, data, tok, progress);
  }
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  save_checkpoint(out, result.checkpoint);
  const fs::path report_path = out.string() + ".report.json";
  write_json_file(report_path, to_json(result.report));
  std::cout << stage_name(stage) << ": " << result.report.steps << " steps in " << result.report.seconds
            << " s, final loss " << result.report.final_loss << "\n"
            << "metrics: " << result.report.metrics.dump() << "\n"
            << "wrote " << out.string() << " and " << report_path.string() << "\n";
  return 0;
}

int infer_cmd(const std::string& text, const fs::path& ref, const fs::path& ckpt_dir, std::uint64_t seed,
              std::size_t top_k, double temperature, std::size_t steps, const fs::path& out) {
  const auto pipeline = load_pipeline(ckpt_dir);
  InferOptions options;
  options.seed = seed;
  options.top_k = top_k;
  options.temperature = temperature;
  options.solver_steps = steps > 0 ? steps : pipeline.config.options.solver_steps;
  const auto reference = load_features(ref);
  const auto result = infer_text(pipeline, text, reference, options);
  if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
  write_inference(out, result);
  check_inference_file(out, pipeline.config);
  Json meta = {{"text", text},
               {"reference", ref.string()},
               {"frames", result.mel.rows},
               {"mel_dim", result.mel.cols},
               {"terminated", result.terminated},
               {"truncated", result.truncated},
               {"seed", seed},
               {"top_k", top_k},
               {"temperature", temperature},
               {"solver_steps", options.solver_steps}};
  write_json_file(out.string() + ".json", meta);
  std::cout << "wrote " << result.mel.rows << " mel frames to " << out.string() << (result.truncated ? " (truncated)" : "")
            << "\n";
  return 0;
}

int eval_cmd(const fs::path& data_dir, const fs::path& ckpt_dir, const fs::path& report, std::size_t inference) {
  const auto pipeline = load_pipeline(ckpt_dir);
  const auto data = load_dataset(data_dir);
  EvalOptions options;
  options.inference_utterances = inference;
  const auto r = evaluate(pipeline, data, options);
  if (!report.parent_path().empty()) fs::create_directories(report.parent_path());
  write_json_file(report, to_json(r));
  const std::string text = format_report(r);
  std::ofstream(report.string() + ".txt") << text;
  std::cout << text;
  return 0;
}

int inspect(const fs::path& path) {
  const auto c = load_checkpoint(path);
  const auto bytes = detail::read_file(path);
  std::cout << "file: " << path.string() << " (" << bytes.size() << " bytes)\n"
            << "format version: " << kCheckpointVersion << "\n"
            << "stage: " << stage_name(c.stage) << "\n"
            << "step: " << c.step << "\n"
            << "rng: seed " << c.rng.seed << " stream " << c.rng.stream << " counter " << c.rng.counter << " lane "
            << c.rng.lane << "\n";
  const auto cfg = checkpoint_config(c);
  std::cout << "profile: " << cfg.profile << "\n";
  // Rebuilding the stage model from the snapshot checks every blob.
  switch (c.stage) {
    case StageTag::tokenizer: load_tokenizer_model(c); break;
    case StageTag::ar: load_ar(c); break;
    case StageTag::nar:
      if (!c.metadata.value("skipped", false)) load_nar(c);
      break;
    case StageTag::flow: load_flow(c); break;
  }
  std::size_t total = 0;
  std::cout << "blobs: " << c.blobs.size() << "\n";
  for (const auto& b : c.blobs) {
    std::string dims;
    for (auto d : b.dims) dims += (dims.empty() ? "" : "x") + std::to_string(d);
    std::cout << "  " << b.name << " [" << dims << "]\n";
    total += b.data.size();
  }
  std::cout << "values: " << total << "\n"
            << "metadata: " << c.metadata.dump() << "\n"
            << "config: " << c.config.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parallel GPT toy pipeline"};
  app.require_subcommand(1);

  std::string spec, out_dir;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic corpus directory");
  gen->add_option("--spec", spec, "Corpus spec JSON")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string stage, config, data, out_ckpt, tokenizer;
  bool quiet = false;
  auto* tr = app.add_subcommand("train", "Train one stage");
  tr->add_option("--stage", stage, "tokenizer | ar | nar | flow")->required()->check(
      CLI::IsMember({"tokenizer", "ar", "nar", "flow"}));
  tr->add_option("--config", config, "Pipeline config JSON")->required();
  tr->add_option("--data", data, "Corpus directory")->required();
  tr->add_option("--out", out_ckpt, "Output checkpoint")->required();
  tr->add_option("--tokenizer", tokenizer, "Tokenizer checkpoint (default: tokenizer.ckpt next to --out)");
  tr->add_flag("--quiet", quiet, "No progress lines");

  std::string text, ref, ckpt_dir, out_file;
  std::uint64_t seed = 0;
  std::size_t top_k = 8, steps = 0;
  double temperature = 1.0;
  auto* inf = app.add_subcommand("infer", "Synthesize mel frames for a text");
  inf->add_option("--text", text, "Input text")->required();
  inf->add_option("--ref", ref, "Reference feature file")->required();
  inf->add_option("--ckpt-dir", ckpt_dir, "Directory with the four stage checkpoints")->required();
  inf->add_option("--seed", seed, "Sampling seed")->required();
  inf->add_option("--top-k", top_k, "Top-k for AR sampling")->required()->check(CLI::PositiveNumber);
  inf->add_option("--temperature", temperature, "AR sampling temperature")->check(CLI::PositiveNumber);
  inf->add_option("--steps", steps, "Euler steps (default: config)");
  inf->add_option("--out", out_file, "Output feature file")->required();

  std::string eval_data, eval_ckpt, report;
  std::size_t inference = 8;
  auto* ev = app.add_subcommand("eval", "Evaluate the trained pipeline on a corpus");
  ev->add_option("--data", eval_data, "Corpus directory")->required();
  ev->add_option("--ckpt-dir", eval_ckpt, "Directory with the four stage checkpoints")->required();
  ev->add_option("--report", report, "Report JSON path")->required();
  ev->add_option("--inference", inference, "Utterances for full greedy inference");

  std::string inspect_path;
  auto* ins = app.add_subcommand("inspect", "Describe a checkpoint");
  ins->add_option("--ckpt", inspect_path, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    if (*gen) return gen_data(spec, out_dir);
    if (*tr) return train(stage, config, data, out_ckpt, tokenizer, quiet);
    if (*inf) return infer_cmd(text, ref, ckpt_dir, seed, top_k, temperature, steps, out_file);
    if (*ev) return eval_cmd(eval_data, eval_ckpt, report, inference);
    if (*ins) return inspect(inspect_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "pgpt: error: %s\n", e.what());
    return 1;
  }
  return 1;
}
