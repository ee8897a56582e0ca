#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsclab/bounds.hpp"
#include "dsclab/metrics.hpp"
#include "dsclab/scorers.hpp"
#include "dsclab/student.hpp"
#include "dsclab/synthgen.hpp"

namespace dsclab {

// Configuration problems (bad file, bad key, bad value) map to exit code 2;
// numerical aborts map to 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  GeneratorSpec gen;
  TeacherSpec teacher;  // input_dim / xy_dims / seed are overwritten per cell
  TrainConfig train;    // lambda_tgt / seed are overwritten per cell
  std::vector<int> trunk_widths = {64, 64, 32};  // hidden widths, last = feature dim
  std::vector<double> lambda_grid = {0.0, 0.5, 1.0, 1.5, 2.0};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<ScorerKind> scorers;  // empty selects the full roster
  ScorerConfig scorer_cfg;
  double far_multiplier = 3.0;  // far probe shift = multiplier * ood_domain_shift
  int n_bound_pairs = 10000;
  std::string out_dir = "out";
  bool write_artifacts = true;  // datasets, teacher stats, student models

  std::vector<ScorerKind> scorer_roster() const;
  std::vector<int> trunk_dims() const;  // input dim prepended
  void validate() const;                // throws ConfigError
};

// Plain-text key=value config, '#' comments, blank lines ignored. Unknown
// keys, malformed values, and duplicate keys are ConfigErrors naming the
// line. An empty file yields all defaults.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
ExperimentConfig parse_config(const std::string& path);

// The documented key list, one "key  default  meaning" line each.
std::string config_key_help();

struct ReportRow {
  std::string backbone;  // ce (lambda == 0) or tgt
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::string split;   // indomain | outdomain
  std::string scorer;
  double fpr95 = 0.0;
  double fpr98 = 0.0;
  double auroc = 0.0;
  double aupr_in = 0.0;
  double aupr_out = 0.0;
  double accuracy = 0.0;  // ID test accuracy of the backbone
  double r_eff = 0.0;     // ID test feature geometry of the backbone
  double pr = 0.0;
  double rho_k = 0.0;
  double rho_within = 0.0;
};

struct GeometryRow {
  std::string backbone;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  GeometryTraceRow point;
};

struct BoundRow {
  std::string instance;
  BoundReport report;
};

// Everything one (lambda, seed) grid cell produces. Diagnostics that the
// CSVs do not carry (nullspace audits) ride along for direct inspection.
struct CellResult {
  std::vector<ReportRow> rows;        // one per scorer per split
  std::vector<GeometryRow> geometry;  // training trace
  std::vector<BoundRow> bounds;       // theorem + two proposition checks
  NullspaceAudit audit_indomain;
  NullspaceAudit audit_outdomain;
};

// Runs one grid cell end to end: generate, teacher-embed, train, fit the
// scorer roster on ID train, evaluate both OOD splits, audit geometry, check
// bounds. artifacts_dir nonempty: writes student model (and, when this cell
// owns the seed's first lambda, datasets and teacher stats) underneath it.
CellResult run_cell(const ExperimentConfig& cfg, double lambda, std::uint64_t seed,
                    const std::string& artifacts_dir);

struct RunResult {
  std::vector<ReportRow> rows;
  std::vector<GeometryRow> geometry;
  std::vector<BoundRow> bounds;
};

// Full grid. Cells are independent; jobs > 1 runs them on a worker pool and
// merges results in deterministic (lambda, seed) order, so outputs are
// byte-identical regardless of jobs. Throws with cell context on any abort.
RunResult run_experiment(const ExperimentConfig& cfg, int jobs = 1);

std::string report_csv(const std::vector<ReportRow>& rows);
std::string geometry_csv(const std::vector<GeometryRow>& rows);
std::string bounds_csv(const std::vector<BoundRow>& rows);

// Parses a report.csv produced by report_csv; rejects unknown headers.
std::vector<ReportRow> parse_report_csv(const std::string& text);

struct SummaryRow {
  std::string backbone;  // tgt rows pool every lambda > 0
  std::string scorer;
  std::string split;
  int n = 0;  // rows aggregated; 1 flags a std of zero by construction
  double fpr95_mean = 0.0, fpr95_std = 0.0;
  double fpr98_mean = 0.0, fpr98_std = 0.0;
  double auroc_mean = 0.0, auroc_std = 0.0;
  double aupr_in_mean = 0.0, aupr_in_std = 0.0;
  double aupr_out_mean = 0.0, aupr_out_std = 0.0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double r_eff_mean = 0.0, r_eff_std = 0.0;
  // Paired against the ce row of the same (scorer, split); tgt rows only.
  bool has_improvement = false;
  double fpr95_reduction_pp = 0.0;  // (ce_mean - tgt_mean) * 100, larger = better
  double r_eff_increase = 0.0;      // tgt_mean - ce_mean
};

// Mean and unbiased (n-1) std across rows sharing (backbone, scorer, split).
// Rejects an empty input and ragged groups (mixed grids).
std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows);
std::string summary_csv(const std::vector<SummaryRow>& rows);

// Writes report.csv, geometry.csv, bounds.csv, summary.csv into out_dir.
// also_json additionally writes report.json.
void write_run_outputs(const RunResult& result, const std::string& out_dir,
                       bool also_json);

}  // namespace dsclab
