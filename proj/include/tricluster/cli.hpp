#pragma once

#include <string>

namespace tricluster {

// Shared option surface of the command-line entry points. Overrides are
// applied on top of the parsed config file.
struct CliOptions {
  std::string config_path;
  std::string checkpoint_path;
  std::string data_path;
  std::string out_dir;
  std::string run_dir;        // curves input
  std::string precision;      // "", "fixed" or "fast"
  long long seed = -1;        // -1 keeps the config value
};

// train: run the configured training loop (resuming from --checkpoint when
// given); writes checkpoints, the JSONL epoch log and a CSV summary, prints
// the final NMI/ACC/ARI.
int cmd_train(const CliOptions& opts);

// eval: cluster a dataset with the target network of a checkpoint and print
// and write NMI/ACC/ARI.
int cmd_eval(const CliOptions& opts);

// ablate: run the published architecture/loss/asymmetry variants and write a
// comparison CSV.
int cmd_ablate(const CliOptions& opts);

// curves: convert a run's epoch log into a per-epoch CSV for plotting.
int cmd_curves(const CliOptions& opts);

}  // namespace tricluster
