// Copyright 2026 The numlens Authors
// SPDX-License-Identifier: Apache-2.0

// numlens: configuration-driven early-decoding experiments.
//
//   numlens run --config exp.json            full pipeline
//   numlens gen-data|lens|metrics|intervene|report --config exp.json
//   numlens synth-model --family gpt2 --out DIR
//
// Exit codes: 0 success, 1 configuration error, 2 model/load error,
// 3 runtime failure.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "numlens/experiment.hpp"
#include "numlens/synthetic.hpp"

namespace {

using namespace numlens;

struct Overrides {
  std::string output_dir;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> k;
  std::optional<bool> svg;
  std::optional<bool> keep_distributions;
  std::string model_id, model_config, model_weights, vocab, merges;
};

void add_overrides(CLI::App* cmd, std::string& config_path, Overrides& o) {
  cmd->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
  cmd->add_option("--output-dir", o.output_dir, "overrides output_dir");
  cmd->add_option("--workers", o.workers, "overrides workers");
  cmd->add_option("--k", o.k, "overrides lens.k");
  cmd->add_flag("--svg,!--no-svg", o.svg, "overrides svg");
  cmd->add_flag("--keep-distributions,!--no-keep-distributions", o.keep_distributions,
                "overrides lens.keep_distributions");
  cmd->add_option("--model-id", o.model_id, "overrides model.id");
  cmd->add_option("--model-config", o.model_config, "overrides model.config");
  cmd->add_option("--model-weights", o.model_weights, "overrides model.weights");
  cmd->add_option("--vocab", o.vocab, "overrides model.vocab");
  cmd->add_option("--merges", o.merges, "overrides model.merges");
}

ExperimentConfig load_config(const std::string& path, const Overrides& o) {
  ExperimentConfig c = ExperimentConfig::from_file(path);
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (o.workers) c.workers = *o.workers;
  if (o.k) c.k = *o.k;
  if (o.svg) c.svg = *o.svg;
  if (o.keep_distributions) c.keep_distributions = *o.keep_distributions;
  if (!o.model_id.empty()) c.model.id = o.model_id;
  if (!o.model_config.empty()) c.model.config = o.model_config;
  if (!o.model_weights.empty()) c.model.weights = o.model_weights;
  if (!o.vocab.empty()) c.model.vocab = o.vocab;
  if (!o.merges.empty()) c.model.merges = o.merges;
  return c;
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::Config: return 1;
    case ErrorKind::Load: return 2;
    case ErrorKind::Runtime:
    case ErrorKind::Input: return 3;
  }
  return 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"numlens: early-decoding and interchange experiments on decoder-only transformers"};
  app.set_version_flag("--version", std::string(NUMLENS_VERSION));
  app.require_subcommand(1);

  std::string config_path;
  Overrides o;
  const std::vector<std::pair<std::string, std::string>> stages = {
      {"gen-data", "generate the arithmetic datasets"},
      {"lens", "run lens sweeps (generates data as needed)"},
      {"metrics", "write per-figure metric CSVs"},
      {"intervene", "run the planned interchange sweeps"},
      {"report", "write summary.json, optional SVGs and the manifest"},
      {"run", "full pipeline"},
  };
  std::map<std::string, CLI::App*> cmds;
  for (const auto& [name, help] : stages) {
    cmds[name] = app.add_subcommand(name, help);
    add_overrides(cmds[name], config_path, o);
  }

  std::string family = "gpt2", synth_out;
  ModelConfig synth;
  synth.n_layers = 2;
  synth.d_model = 16;
  synth.n_heads = 2;
  synth.d_ff = 64;
  synth.vocab_size = 50257;
  synth.max_context = 64;
  std::uint64_t synth_seed = 1;
  bool synth_f16 = false;
  auto* sm = app.add_subcommand("synth-model", "write a random-weight checkpoint (config.json + model.safetensors)");
  sm->add_option("--family", family, "gpt2 | gpt_neox")->check(CLI::IsMember({"gpt2", "gpt_neox"}));
  sm->add_option("--out", synth_out, "output directory")->required();
  sm->add_option("--layers", synth.n_layers);
  sm->add_option("--d-model", synth.d_model);
  sm->add_option("--heads", synth.n_heads);
  sm->add_option("--d-ff", synth.d_ff);
  sm->add_option("--vocab-size", synth.vocab_size);
  sm->add_option("--max-context", synth.max_context);
  sm->add_option("--seed", synth_seed);
  sm->add_flag("--f16", synth_f16, "store weights as float16");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Usage errors count as configuration errors; --help and --version exit 0.
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (sm->parsed()) {
      if (family == "gpt_neox") {
        synth.family = Family::ParallelRotary;
        synth.rotary_fraction = 0.25;
        synth.activation = Activation::GeluErf;
        synth.tied_lm_head = false;
      }
      synth.d_head = synth.n_heads ? synth.d_model / synth.n_heads : 0;
      write_synthetic_checkpoint(synth_out, synth, synth_seed, synth_f16 ? DType::F16 : DType::F32);
      return 0;
    }

    std::string which;
    for (const auto& [name, cmd] : cmds) {
      if (cmd->parsed()) which = name;
    }
    Experiment exp(load_config(config_path, o));
    exp.set_logger([](const std::string& m) { std::cerr << "numlens: " << m << '\n'; });
    if (which == "gen-data") {
      exp.generate_datasets();
    } else if (which == "lens") {
      exp.run_lens();
    } else if (which == "metrics") {
      exp.compute_metrics();
    } else if (which == "intervene") {
      exp.run_interventions();
    } else if (which == "report") {
      exp.compute_metrics();
      exp.write_report();
    } else {
      exp.run_all();
      return 0;
    }
    exp.write_manifest();
    return 0;
  } catch (const Error& e) {
    std::cerr << "numlens: error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "numlens: error: " << e.what() << '\n';
    return 3;
  }
}
