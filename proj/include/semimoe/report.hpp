#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semimoe/config.hpp"
#include "semimoe/data.hpp"
#include "semimoe/training.hpp"

namespace semimoe {

// Experiment matrix: (ablation × repeat) training cells, aggregated into
// mean ± std rows. Cells are independent and run on a small worker pool;
// each is fully seeded, so scheduling does not affect results.

// Known ablation names: full, seg+sdf, seg+bnd, single_gate, linear_sum,
// supervised_only. Throws on anything else.
TrainConfig apply_ablation(TrainConfig cfg, const std::string& ablation);

struct MatrixRepeat {
  uint64_t seed = 0;
  int64_t fold = 0;
};

struct CellResult {
  std::string ablation;
  MatrixRepeat repeat;
  bool ok = false;
  std::string error;
  TrainSummary summary;
};

struct AblationRow {
  std::string ablation;
  int64_t n_ok = 0;
  double mean_best_dice = 0.0, std_best_dice = 0.0;
  double mean_best_jaccard = 0.0, std_best_jaccard = 0.0;
  double mean_final_dice = 0.0, std_final_dice = 0.0;
  std::vector<CellResult> cells;
};

struct EvalReport {
  std::vector<AblationRow> rows;  // input ablation order
  std::string base_digest;
};

// Runs every (ablation × repeat) cell. out_root may be empty (no run
// directories written); otherwise each cell writes into
// out_root/<ablation>__s<seed>_f<fold>/. Cell failures are recorded and
// the matrix continues.
EvalReport run_matrix(const TrainConfig& base, const std::vector<std::string>& ablations,
                      const std::vector<MatrixRepeat>& repeats, const Dataset& ds,
                      const std::string& out_root, int64_t workers);

// Population mean / standard deviation (the documented convention for
// the ± entries).
double mean_of(const std::vector<double>& xs);
double std_of(const std::vector<double>& xs);

std::string format_report_text(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& dir);

// Renders loss curves, sigma trajectories, gate-weight utilization and
// the test-Dice curve from a run's metrics.jsonl into PNG charts.
void render_run_plots(const std::string& run_dir, const std::string& out_dir);

}  // namespace semimoe
