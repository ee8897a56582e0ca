#include "dsclab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "dsclab/io.hpp"
#include "dsclab/residual.hpp"
#include "dsclab/rng.hpp"
#include "dsclab/specmath.hpp"

#include "json.hpp"

namespace dsclab {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void bad_value(const std::string& origin, int line, const std::string& key,
                            const std::string& what) {
  std::ostringstream msg;
  msg << origin << ":" << line << ": key '" << key << "': " << what;
  throw ConfigError(msg.str());
}

double to_double(const std::string& origin, int line, const std::string& key,
                 const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing junk");
    return x;
  } catch (const std::exception&) {
    bad_value(origin, line, key, "malformed number '" + v + "'");
  }
}

int to_int(const std::string& origin, int line, const std::string& key,
           const std::string& v) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing junk");
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
      throw std::out_of_range("int");
    }
    return static_cast<int>(x);
  } catch (const std::exception&) {
    bad_value(origin, line, key, "malformed integer '" + v + "'");
  }
}

bool to_bool(const std::string& origin, int line, const std::string& key,
             const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  bad_value(origin, line, key, "expected 0/1/true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : v) {
    if (ch == ',') {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

std::vector<double> to_double_list(const std::string& origin, int line,
                                   const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& p : split_list(v)) {
    if (p.empty()) bad_value(origin, line, key, "empty list element");
    out.push_back(to_double(origin, line, key, p));
  }
  return out;
}

std::vector<int> to_int_list(const std::string& origin, int line,
                             const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const std::string& p : split_list(v)) {
    if (p.empty()) bad_value(origin, line, key, "empty list element");
    out.push_back(to_int(origin, line, key, p));
  }
  return out;
}

std::vector<std::uint64_t> to_u64_list(const std::string& origin, int line,
                                       const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const std::string& p : split_list(v)) {
    if (p.empty()) bad_value(origin, line, key, "empty list element");
    try {
      std::size_t used = 0;
      const unsigned long long x = std::stoull(p, &used);
      if (used != p.size()) throw std::invalid_argument("trailing junk");
      out.push_back(static_cast<std::uint64_t>(x));
    } catch (const std::exception&) {
      bad_value(origin, line, key, "malformed integer '" + p + "'");
    }
  }
  return out;
}

}  // namespace

std::vector<ScorerKind> ExperimentConfig::scorer_roster() const {
  if (!scorers.empty()) return scorers;
  return all_scorer_kinds();
}

std::vector<int> ExperimentConfig::trunk_dims() const {
  std::vector<int> dims;
  dims.push_back(gen.input_dim());
  dims.insert(dims.end(), trunk_widths.begin(), trunk_widths.end());
  return dims;
}

void ExperimentConfig::validate() const {
  try {
    gen.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("generator: ") + e.what());
  }
  TeacherSpec ts = teacher;
  ts.input_dim = gen.input_dim();
  ts.xy_dims = gen.d_y;
  try {
    ts.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("teacher: ") + e.what());
  }
  if (trunk_widths.empty()) throw ConfigError("trunk_widths must be nonempty");
  for (int w : trunk_widths) {
    if (w <= 0) throw ConfigError("trunk widths must be positive");
  }
  if (lambda_grid.empty()) throw ConfigError("lambda_grid must be nonempty");
  for (double l : lambda_grid) {
    if (!(l >= 0.0)) throw ConfigError("lambda values must be >= 0");
  }
  if (std::set<double>(lambda_grid.begin(), lambda_grid.end()).size() !=
      lambda_grid.size()) {
    throw ConfigError("duplicate lambda values");
  }
  if (seeds.empty()) throw ConfigError("seed list must be nonempty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("duplicate seeds");
  }
  if (far_multiplier <= 0.0) throw ConfigError("far_multiplier must be positive");
  if (n_bound_pairs < 1) throw ConfigError("n_bound_pairs must be >= 1");
  if (train.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (train.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (train.lr < 0.0) throw ConfigError("lr must be >= 0");
  if (train.momentum < 0.0 || train.momentum >= 1.0) {
    throw ConfigError("momentum must be in [0, 1)");
  }
  if (train.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (train.prototype_momentum < 0.0 || train.prototype_momentum >= 1.0) {
    throw ConfigError("prototype_momentum must be in [0, 1)");
  }
  if (out_dir.empty()) throw ConfigError("out_dir must be nonempty");
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  std::set<std::string> seen;

  while (std::getline(in, raw)) {
    ++line;
    const std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string stripped = trim(raw);
    if (stripped.empty()) continue;
    const std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      std::ostringstream msg;
      msg << origin << ":" << line << ": expected key = value, got '" << stripped << "'";
      throw ConfigError(msg.str());
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) bad_value(origin, line, "(empty)", "missing key");
    if (value.empty()) bad_value(origin, line, key, "missing value");
    if (!seen.insert(key).second) bad_value(origin, line, key, "duplicate key");

    if (key == "d_y") cfg.gen.d_y = to_int(origin, line, key, value);
    else if (key == "d_d") cfg.gen.d_d = to_int(origin, line, key, value);
    else if (key == "c_total") cfg.gen.c_total = to_int(origin, line, key, value);
    else if (key == "c_train") cfg.gen.c_train = to_int(origin, line, key, value);
    else if (key == "sigma") cfg.gen.within_class_spread = to_double(origin, line, key, value);
    else if (key == "anchor_scale") cfg.gen.anchor_scale = to_double(origin, line, key, value);
    else if (key == "domain_jitter") cfg.gen.domain_jitter = to_double(origin, line, key, value);
    else if (key == "shift") cfg.gen.ood_domain_shift = to_double(origin, line, key, value);
    else if (key == "n_per_split") cfg.gen.n_per_split = to_int(origin, line, key, value);
    else if (key == "domain_value") cfg.gen.domain_value = to_double_list(origin, line, key, value);
    else if (key == "far_multiplier") cfg.far_multiplier = to_double(origin, line, key, value);
    else if (key == "teacher_hidden") cfg.teacher.hidden = to_int(origin, line, key, value);
    else if (key == "teacher_dim") cfg.teacher.out_dim = to_int(origin, line, key, value);
    else if (key == "teacher_xy_rank") cfg.teacher.xy_rank = to_int(origin, line, key, value);
    else if (key == "teacher_xy_scale") cfg.teacher.xy_scale = to_double(origin, line, key, value);
    else if (key == "teacher_xd_scale") cfg.teacher.xd_scale = to_double(origin, line, key, value);
    else if (key == "trunk_dims") cfg.trunk_widths = to_int_list(origin, line, key, value);
    else if (key == "lr") cfg.train.lr = to_double(origin, line, key, value);
    else if (key == "momentum") cfg.train.momentum = to_double(origin, line, key, value);
    else if (key == "weight_decay") cfg.train.weight_decay = to_double(origin, line, key, value);
    else if (key == "batch_size") cfg.train.batch_size = to_int(origin, line, key, value);
    else if (key == "epochs") cfg.train.epochs = to_int(origin, line, key, value);
    else if (key == "record_geometry_every") cfg.train.record_geometry_every = to_int(origin, line, key, value);
    else if (key == "prototype_momentum") cfg.train.prototype_momentum = to_double(origin, line, key, value);
    else if (key == "stop_trunk_gradient") cfg.train.stop_trunk_gradient = to_bool(origin, line, key, value);
    else if (key == "prototype_mode") {
      if (value == "precomputed") cfg.train.prototype_mode = PrototypeMode::precomputed;
      else if (value == "ema") cfg.train.prototype_mode = PrototypeMode::ema;
      else bad_value(origin, line, key, "expected precomputed|ema, got '" + value + "'");
    }
    else if (key == "lambda_grid") cfg.lambda_grid = to_double_list(origin, line, key, value);
    else if (key == "seeds") cfg.seeds = to_u64_list(origin, line, key, value);
    else if (key == "scorers") {
      cfg.scorers.clear();
      for (const std::string& name : split_list(value)) {
        try {
          cfg.scorers.push_back(scorer_from_name(name));
        } catch (const std::exception& e) {
          bad_value(origin, line, key, e.what());
        }
      }
    }
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "write_artifacts") cfg.write_artifacts = to_bool(origin, line, key, value);
    else if (key == "n_bound_pairs") cfg.n_bound_pairs = to_int(origin, line, key, value);
    else if (key == "energy_temperature") cfg.scorer_cfg.energy_temperature = to_double(origin, line, key, value);
    else if (key == "mds_shrink") cfg.scorer_cfg.mds_shrink = to_double(origin, line, key, value);
    else if (key == "mds_per_class") cfg.scorer_cfg.mds_per_class = to_bool(origin, line, key, value);
    else if (key == "knn_k") cfg.scorer_cfg.knn_k = to_int(origin, line, key, value);
    else if (key == "knn_normalize") cfg.scorer_cfg.knn_normalize = to_bool(origin, line, key, value);
    else if (key == "vim_dim") cfg.scorer_cfg.vim_subspace_dim = to_int(origin, line, key, value);
    else if (key == "react_percentile") cfg.scorer_cfg.react_percentile = to_double(origin, line, key, value);
    else if (key == "react_per_dim") cfg.scorer_cfg.react_per_dim = to_bool(origin, line, key, value);
    else if (key == "scale_percentile") cfg.scorer_cfg.scale_percentile = to_double(origin, line, key, value);
    else if (key == "nci_gamma") cfg.scorer_cfg.nci_gamma = to_double(origin, line, key, value);
    else {
      std::ostringstream msg;
      msg << origin << ":" << line << ": unknown key '" << key << "'";
      throw ConfigError(msg.str());
    }
  }
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_config_text(text, path);
}

std::string config_key_help() {
  return
      "d_y                   16       class-feature dims\n"
      "d_d                   16       domain-feature dims\n"
      "c_total               9        total classes (train + withheld)\n"
      "c_train               6        training classes\n"
      "sigma                 0.1      within-class spread around anchors\n"
      "anchor_scale          0.35     simplex anchor scale\n"
      "domain_value          1,...    training-domain vector (d_d values)\n"
      "domain_jitter         0.25     x_d jitter around domain_value\n"
      "shift                 3.0      out-of-domain x_d shift magnitude\n"
      "n_per_split           2000     samples per split\n"
      "far_multiplier        3.0      far-probe shift = multiplier * shift\n"
      "teacher_hidden        64       teacher hidden width\n"
      "teacher_dim           48       teacher output dim m\n"
      "teacher_xy_rank       1        rank of the teacher x_y pathway\n"
      "teacher_xy_scale      1.0      gain of the teacher x_y pathway\n"
      "teacher_xd_scale      1.0      gain of the teacher x_d pathway\n"
      "trunk_dims            64,64,32 student hidden widths (last = feature dim)\n"
      "lr                    0.02     SGD learning rate\n"
      "momentum              0.9      SGD momentum\n"
      "weight_decay          0.02     decoupled weight decay\n"
      "batch_size            128      minibatch size\n"
      "epochs                300      training epochs\n"
      "record_geometry_every 50       trace cadence (epochs)\n"
      "prototype_mode        precomputed  precomputed|ema teacher prototypes\n"
      "prototype_momentum    0.9      EMA momentum (ema mode)\n"
      "stop_trunk_gradient   0        ablation: detach domain loss from trunk\n"
      "lambda_grid           0,0.5,1,1.5,2  teacher-guidance strengths\n"
      "seeds                 1,2,3,4,5      root seeds\n"
      "scorers               (all)    subset of msp,ebo,mds,knn,vim,react,scale,nci,whiten,teacher_mds\n"
      "out_dir               out      output directory\n"
      "write_artifacts       1        write datasets/models next to reports\n"
      "n_bound_pairs         10000    Monte-Carlo pairs for the discrepancy plug-in\n"
      "energy_temperature    1.0      energy score temperature\n"
      "mds_shrink            auto     covariance shrinkage (<=0 selects auto)\n"
      "mds_per_class         0        per-class covariances instead of pooled\n"
      "knn_k                 10       kth neighbor\n"
      "knn_normalize         1        l2-normalize features for knn\n"
      "vim_dim               auto     principal subspace dim (<=0 selects C-1)\n"
      "react_percentile      90       clamp percentile\n"
      "react_per_dim         0        per-dimension clamp\n"
      "scale_percentile      85       kept-mass percentile\n"
      "nci_gamma             0.1      norm-term weight\n";
}

namespace {

std::string backbone_name(double lambda) { return lambda == 0.0 ? "ce" : "tgt"; }

std::string instance_name(double lambda, std::uint64_t seed) {
  std::ostringstream s;
  s << backbone_name(lambda) << "_lambda" << format_double(lambda) << "_seed" << seed;
  return s.str();
}

}  // namespace

CellResult run_cell(const ExperimentConfig& cfg, double lambda, std::uint64_t seed,
                    const std::string& artifacts_dir) {
  GeneratorSpec gen = cfg.gen;
  gen.seed = seed;
  const DatasetBundle bundle = gen_single_domain(gen);
  const FeatureMatrix far = gen_far_ood(gen, cfg.far_multiplier);

  TeacherSpec ts = cfg.teacher;
  ts.input_dim = gen.input_dim();
  ts.xy_dims = gen.d_y;
  ts.seed = seed;
  const SyntheticTeacher teacher = make_teacher(ts);
  const FeatureMatrix teacher_train = teacher_embed(teacher, bundle.train);

  TrainConfig tc = cfg.train;
  tc.lambda_tgt = lambda;
  tc.seed = seed;
  MLPStudent init = make_student(cfg.trunk_dims(), gen.c_train, ts.out_dim, seed);
  const ProbeSet probe{bundle.id_test, far};
  TrainResult trained = train(std::move(init), bundle.train, teacher_train, tc, &probe);
  const MLPStudent& student = trained.student;

  const Embedded train_emb = embed(student, bundle.train);
  const Embedded id_emb = embed(student, bundle.id_test);
  const Embedded in_emb = embed(student, bundle.indomain_ood);
  const Embedded out_emb = embed(student, bundle.outdomain_ood);
  const FeatureMatrix teacher_id = teacher_embed(teacher, bundle.id_test);
  const FeatureMatrix teacher_in = teacher_embed(teacher, bundle.indomain_ood);
  const FeatureMatrix teacher_out = teacher_embed(teacher, bundle.outdomain_ood);

  const double acc = accuracy(student, bundle.id_test);
  const CovarianceSplit id_split = covariance_split(id_emb.feats);
  const int k_cls = std::max(1, gen.c_train - 1);
  const SpectralSummary id_summary = spectral_summary(id_split, {k_cls});

  const std::string backbone = backbone_name(lambda);
  const std::string instance = instance_name(lambda, seed);

  CellResult cell;

  const LinearHead head = student.head();
  ScorerTrainData train_data;
  train_data.feats = &train_emb.feats;
  train_data.logits = &train_emb.logits;
  train_data.head = &head;
  train_data.teacher_feats = &teacher_train;

  ScorerEvalData id_eval{&id_emb.feats.data, &id_emb.logits, &teacher_id.data};
  ScorerEvalData in_eval{&in_emb.feats.data, &in_emb.logits, &teacher_in.data};
  ScorerEvalData out_eval{&out_emb.feats.data, &out_emb.logits, &teacher_out.data};

  const std::pair<const char*, const ScorerEvalData*> split_pairs[] = {
      {"indomain", &in_eval}, {"outdomain", &out_eval}};
  for (const auto& [split_name, ood_eval] : split_pairs) {
    for (ScorerKind kind : cfg.scorer_roster()) {
      const FittedScorer fitted = fit_scorer(kind, train_data, cfg.scorer_cfg);
      const ScoreVector id_scores = apply_scorer(fitted, id_eval);
      const ScoreVector ood_scores = apply_scorer(fitted, *ood_eval);
      const EvalRecord ev = evaluate_scores(id_scores, ood_scores);

      ReportRow row;
      row.backbone = backbone;
      row.lambda = lambda;
      row.seed = seed;
      row.split = split_name;
      row.scorer = scorer_name(kind);
      row.fpr95 = ev.fpr_at_95;
      row.fpr98 = ev.fpr_at_98;
      row.auroc = ev.auroc;
      row.aupr_in = ev.aupr_in;
      row.aupr_out = ev.aupr_out;
      row.accuracy = acc;
      row.r_eff = id_summary.r_eff;
      row.pr = id_summary.pr;
      row.rho_k = id_summary.rho_k.at(k_cls);
      row.rho_within = id_summary.rho_within;
      cell.rows.push_back(std::move(row));
    }
  }

  for (const GeometryTraceRow& point : trained.trace) {
    cell.geometry.push_back({backbone, lambda, seed, point});
  }

  // Bound checks against the domain-shifted split, projector from the
  // ID-train feature covariance.
  const CovarianceSplit train_split = covariance_split(train_emb.feats);
  const Projector proj = class_subspace(train_split, k_cls);
  const FittedScorer knn_euclid = fit_knn(train_emb.feats, cfg.scorer_cfg.knn_k, false);
  cell.bounds.push_back({instance, check_theorem1(id_emb.feats, out_emb.feats,
                                                  knn_euclid, proj, cfg.n_bound_pairs,
                                                  seed)});
  cell.bounds.push_back({instance, check_prop1(id_emb.feats, out_emb.feats, head, proj,
                                               LogitScore::energy, cfg.n_bound_pairs,
                                               seed)});
  cell.bounds.push_back({instance, check_prop1(id_emb.feats, out_emb.feats, head, proj,
                                               LogitScore::msp, cfg.n_bound_pairs,
                                               seed)});

  cell.audit_indomain = nullspace_audit(id_emb.feats, in_emb.feats, proj);
  cell.audit_outdomain = nullspace_audit(id_emb.feats, out_emb.feats, proj);

  if (!artifacts_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path base(artifacts_dir);
    fs::create_directories(base / "models");
    save_student(student, (base / "models" / (instance + ".dscm")).string());
    if (lambda == cfg.lambda_grid.front()) {
      const fs::path data_dir = base / "datasets" / ("seed" + std::to_string(seed));
      fs::create_directories(data_dir);
      save_features(bundle.train, (data_dir / "train.dscf").string());
      save_features(bundle.id_test, (data_dir / "id_test.dscf").string());
      save_features(bundle.indomain_ood, (data_dir / "indomain_ood.dscf").string());
      save_features(bundle.outdomain_ood, (data_dir / "outdomain_ood.dscf").string());
      save_features(far, (data_dir / "far_ood.dscf").string());
      write_text_file((data_dir / "manifest.txt").string(),
                      dataset_manifest(gen, bundle));
      save_teacher_stats(teacher_stats(teacher_train),
                         (base / "models" / ("teacher_seed" + std::to_string(seed) +
                                             ".dsct")).string());
    }
  }

  return cell;
}

RunResult run_experiment(const ExperimentConfig& cfg, int jobs) {
  cfg.validate();

  struct Cell {
    double lambda;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double lambda : cfg.lambda_grid) {
    for (std::uint64_t seed : cfg.seeds) cells.push_back({lambda, seed});
  }

  const std::string artifacts_dir = cfg.write_artifacts ? cfg.out_dir : "";
  if (!artifacts_dir.empty()) std::filesystem::create_directories(artifacts_dir);

  std::vector<CellResult> results(cells.size());
  std::vector<std::string> errors(cells.size());

  const auto run_one = [&](std::size_t i) {
    try {
      results[i] = run_cell(cfg, cells[i].lambda, cells[i].seed, artifacts_dir);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "lambda=" << format_double(cells[i].lambda) << " seed=" << cells[i].seed
          << ": " << e.what();
      errors[i] = msg.str();
    }
  };

  const int worker_count =
      std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
  if (worker_count == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(worker_count));
    for (int w = 0; w < worker_count; ++w) {
      workers.emplace_back([&] {
        for (;;) {
          const std::size_t i = next.fetch_add(1);
          if (i >= cells.size()) return;
          run_one(i);
        }
      });
    }
    for (std::thread& t : workers) t.join();
  }

  for (const std::string& err : errors) {
    if (!err.empty()) throw std::runtime_error(err);
  }

  RunResult merged;
  for (const CellResult& cell : results) {
    merged.rows.insert(merged.rows.end(), cell.rows.begin(), cell.rows.end());
    merged.geometry.insert(merged.geometry.end(), cell.geometry.begin(),
                           cell.geometry.end());
    merged.bounds.insert(merged.bounds.end(), cell.bounds.begin(), cell.bounds.end());
  }
  return merged;
}

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "backbone,lambda,seed,split,scorer,fpr95,fpr98,auroc,aupr_in,aupr_out,"
         "accuracy,r_eff,pr,rho_k,rho_within\n";
  for (const ReportRow& r : rows) {
    out << r.backbone << ',' << format_double(r.lambda) << ',' << r.seed << ','
        << r.split << ',' << r.scorer << ',' << format_double(r.fpr95) << ','
        << format_double(r.fpr98) << ',' << format_double(r.auroc) << ','
        << format_double(r.aupr_in) << ',' << format_double(r.aupr_out) << ','
        << format_double(r.accuracy) << ',' << format_double(r.r_eff) << ','
        << format_double(r.pr) << ',' << format_double(r.rho_k) << ','
        << format_double(r.rho_within) << '\n';
  }
  return out.str();
}

std::string geometry_csv(const std::vector<GeometryRow>& rows) {
  std::ostringstream out;
  out << "backbone,lambda,seed,epoch,r_eff,pr,rho_k,rho_within,fpr95_mds_far\n";
  for (const GeometryRow& r : rows) {
    out << r.backbone << ',' << format_double(r.lambda) << ',' << r.seed << ','
        << r.point.epoch << ',' << format_double(r.point.r_eff) << ','
        << format_double(r.point.pr) << ',' << format_double(r.point.rho_k) << ','
        << format_double(r.point.rho_within) << ','
        << format_double(r.point.fpr95_mds_far) << '\n';
  }
  return out.str();
}

std::string bounds_csv(const std::vector<BoundRow>& rows) {
  std::ostringstream out;
  out << bound_report_csv_header() << '\n';
  for (const BoundRow& r : rows) {
    out << bound_report_csv_row(r.instance, r.report) << '\n';
  }
  return out.str();
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("report csv: empty file");
  const std::string expected =
      "backbone,lambda,seed,split,scorer,fpr95,fpr98,auroc,aupr_in,aupr_out,"
      "accuracy,r_eff,pr,rho_k,rho_within";
  if (line != expected) throw ConfigError("report csv: unexpected header '" + line + "'");

  std::vector<ReportRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_list(line);
    if (f.size() != 15) {
      throw ConfigError("report csv line " + std::to_string(line_no) +
                        ": expected 15 fields");
    }
    ReportRow r;
    r.backbone = f[0];
    r.lambda = to_double("report csv", line_no, "lambda", f[1]);
    r.seed = to_u64_list("report csv", line_no, "seed", f[2])[0];
    r.split = f[3];
    r.scorer = f[4];
    r.fpr95 = to_double("report csv", line_no, "fpr95", f[5]);
    r.fpr98 = to_double("report csv", line_no, "fpr98", f[6]);
    r.auroc = to_double("report csv", line_no, "auroc", f[7]);
    r.aupr_in = to_double("report csv", line_no, "aupr_in", f[8]);
    r.aupr_out = to_double("report csv", line_no, "aupr_out", f[9]);
    r.accuracy = to_double("report csv", line_no, "accuracy", f[10]);
    r.r_eff = to_double("report csv", line_no, "r_eff", f[11]);
    r.pr = to_double("report csv", line_no, "pr", f[12]);
    r.rho_k = to_double("report csv", line_no, "rho_k", f[13]);
    r.rho_within = to_double("report csv", line_no, "rho_within", f[14]);
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

struct Stats {
  double mean = 0.0;
  double std_dev = 0.0;
};

Stats mean_std(const std::vector<double>& v) {
  Stats s;
  const double n = static_cast<double>(v.size());
  for (double x : v) s.mean += x;
  s.mean /= n;
  if (v.size() > 1) {
    double acc = 0.0;
    for (double x : v) acc += (x - s.mean) * (x - s.mean);
    s.std_dev = std::sqrt(acc / (n - 1.0));
  }
  return s;
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ConfigError("summarize: no rows");

  std::map<std::tuple<std::string, std::string, std::string>, std::vector<const ReportRow*>>
      groups;
  for (const ReportRow& r : rows) {
    groups[{r.backbone, r.scorer, r.split}].push_back(&r);
  }

  // Ragged groups mean rows from incompatible grids were mixed.
  std::map<std::string, std::set<std::size_t>> sizes_per_backbone;
  for (const auto& [key, members] : groups) {
    sizes_per_backbone[std::get<0>(key)].insert(members.size());
  }
  for (const auto& [backbone, sizes] : sizes_per_backbone) {
    if (sizes.size() > 1) {
      throw ConfigError("summarize: mixed incompatible grids (backbone " + backbone +
                        ")");
    }
  }

  std::vector<SummaryRow> out;
  for (const auto& [key, members] : groups) {
    SummaryRow s;
    s.backbone = std::get<0>(key);
    s.scorer = std::get<1>(key);
    s.split = std::get<2>(key);
    s.n = static_cast<int>(members.size());
    const auto collect = [&members](auto getter) {
      std::vector<double> v;
      v.reserve(members.size());
      for (const ReportRow* r : members) v.push_back(getter(*r));
      return v;
    };
    const Stats fpr95 = mean_std(collect([](const ReportRow& r) { return r.fpr95; }));
    const Stats fpr98 = mean_std(collect([](const ReportRow& r) { return r.fpr98; }));
    const Stats auroc_s = mean_std(collect([](const ReportRow& r) { return r.auroc; }));
    const Stats aupr_in = mean_std(collect([](const ReportRow& r) { return r.aupr_in; }));
    const Stats aupr_out = mean_std(collect([](const ReportRow& r) { return r.aupr_out; }));
    const Stats acc = mean_std(collect([](const ReportRow& r) { return r.accuracy; }));
    const Stats r_eff = mean_std(collect([](const ReportRow& r) { return r.r_eff; }));
    s.fpr95_mean = fpr95.mean;
    s.fpr95_std = fpr95.std_dev;
    s.fpr98_mean = fpr98.mean;
    s.fpr98_std = fpr98.std_dev;
    s.auroc_mean = auroc_s.mean;
    s.auroc_std = auroc_s.std_dev;
    s.aupr_in_mean = aupr_in.mean;
    s.aupr_in_std = aupr_in.std_dev;
    s.aupr_out_mean = aupr_out.mean;
    s.aupr_out_std = aupr_out.std_dev;
    s.accuracy_mean = acc.mean;
    s.accuracy_std = acc.std_dev;
    s.r_eff_mean = r_eff.mean;
    s.r_eff_std = r_eff.std_dev;
    out.push_back(std::move(s));
  }

  // Pair each tgt row with the ce row of the same (scorer, split).
  for (SummaryRow& s : out) {
    if (s.backbone != "tgt") continue;
    for (const SummaryRow& ce : out) {
      if (ce.backbone == "ce" && ce.scorer == s.scorer && ce.split == s.split) {
        s.has_improvement = true;
        s.fpr95_reduction_pp = (ce.fpr95_mean - s.fpr95_mean) * 100.0;
        s.r_eff_increase = s.r_eff_mean - ce.r_eff_mean;
        break;
      }
    }
  }
  return out;
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream out;
  out << "# aggregation: mean and sample std (n-1) across report rows per "
         "(backbone,scorer,split); tgt pools every lambda > 0; "
         "fpr95_reduction_pp = (ce_mean - tgt_mean) * 100; "
         "r_eff_increase = tgt_mean - ce_mean\n";
  out << "backbone,scorer,split,n,fpr95_mean,fpr95_std,fpr98_mean,fpr98_std,"
         "auroc_mean,auroc_std,aupr_in_mean,aupr_in_std,aupr_out_mean,aupr_out_std,"
         "accuracy_mean,accuracy_std,r_eff_mean,r_eff_std,fpr95_reduction_pp,"
         "r_eff_increase\n";
  for (const SummaryRow& s : rows) {
    out << s.backbone << ',' << s.scorer << ',' << s.split << ',' << s.n << ','
        << format_double(s.fpr95_mean) << ',' << format_double(s.fpr95_std) << ','
        << format_double(s.fpr98_mean) << ',' << format_double(s.fpr98_std) << ','
        << format_double(s.auroc_mean) << ',' << format_double(s.auroc_std) << ','
        << format_double(s.aupr_in_mean) << ',' << format_double(s.aupr_in_std) << ','
        << format_double(s.aupr_out_mean) << ',' << format_double(s.aupr_out_std) << ','
        << format_double(s.accuracy_mean) << ',' << format_double(s.accuracy_std) << ','
        << format_double(s.r_eff_mean) << ',' << format_double(s.r_eff_std) << ',';
    if (s.has_improvement) {
      out << format_double(s.fpr95_reduction_pp) << ','
          << format_double(s.r_eff_increase);
    } else {
      out << ',';
    }
    out << '\n';
  }
  return out.str();
}

void write_run_outputs(const RunResult& result, const std::string& out_dir,
                       bool also_json) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const fs::path base(out_dir);
  write_text_file((base / "report.csv").string(), report_csv(result.rows));
  write_text_file((base / "geometry.csv").string(), geometry_csv(result.geometry));
  write_text_file((base / "bounds.csv").string(), bounds_csv(result.bounds));
  write_text_file((base / "summary.csv").string(), summary_csv(summarize(result.rows)));

  if (also_json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const ReportRow& r : result.rows) {
      arr.push_back({{"backbone", r.backbone},
                     {"lambda", r.lambda},
                     {"seed", r.seed},
                     {"split", r.split},
                     {"scorer", r.scorer},
                     {"fpr95", r.fpr95},
                     {"fpr98", r.fpr98},
                     {"auroc", r.auroc},
                     {"aupr_in", r.aupr_in},
                     {"aupr_out", r.aupr_out},
                     {"accuracy", r.accuracy},
                     {"r_eff", r.r_eff},
                     {"pr", r.pr},
                     {"rho_k", r.rho_k},
                     {"rho_within", r.rho_within}});
    }
    write_text_file((base / "report.json").string(), arr.dump(2) + "\n");
  }
}

}  // namespace dsclab
