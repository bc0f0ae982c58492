#pragma once

#include <string>

#include "masdt/config.hpp"

namespace masdt {

struct CliOptions {
  bool force = false;        // permit overwriting existing outputs
  bool trace = false;        // evaluate also writes per-frame scores
  bool from_scratch = false; // finetune without a pretraining checkpoint
  std::string branch;        // restrict pretrain/finetune/gradcam to one branch
};

// Pipeline stages. Each reads/writes under cfg.out and throws on missing
// inputs or refused overwrites.
void run_synth(const RunConfig& cfg, const CliOptions& opt);
void run_flow(const RunConfig& cfg, const CliOptions& opt);
void run_pretrain(const RunConfig& cfg, const CliOptions& opt);
void run_finetune(const RunConfig& cfg, const CliOptions& opt);
void run_evaluate(const RunConfig& cfg, const CliOptions& opt);
void run_gradcam(const RunConfig& cfg, const CliOptions& opt);
void run_alpha_sweep(const RunConfig& cfg, const CliOptions& opt);
void run_ablate(const RunConfig& cfg, const CliOptions& opt);

// Known subcommand names, in help order.
const std::vector<std::string>& subcommands();

// Logs seed and config fingerprint, runs the stage, reports errors on
// stderr. Returns a process exit status (0 ok, 1 failure, 2 unknown name).
int dispatch(const std::string& subcommand, const RunConfig& cfg, const CliOptions& opt);

}  // namespace masdt
