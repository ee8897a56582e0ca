// Command-line driver. Subcommands mirror the pipeline stages so every stage
// is also testable standalone on serialized artifacts:
//   generate  datasets (.dscf + manifest)
//   train     one student on a generated dataset
//   audit     geometry + nullspace diagnostics of a trained student
//   score     fit one scorer, score all splits
//   eval      metrics from a scores.csv
//   bounds    inequality checks for a trained student
//   run       the full grid -> report/geometry/bounds/summary CSVs
//   summarize aggregate an existing report.csv
// Exit codes: 0 success, 2 config error, 3 numerical abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "dsclab/harness.hpp"
#include "dsclab/io.hpp"
#include "dsclab/residual.hpp"
#include "dsclab/rng.hpp"
#include "dsclab/specmath.hpp"

namespace fs = std::filesystem;
using namespace dsclab;

namespace {

std::vector<double> parse_doubles(const std::string& csv, const std::string& what) {
  std::vector<double> out;
  std::istringstream in(csv);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument("trailing junk");
    } catch (const std::exception&) {
      throw ConfigError(what + ": malformed number '" + part + "'");
    }
  }
  if (out.empty()) throw ConfigError(what + ": empty list");
  return out;
}

ExperimentConfig load_config(const std::string& config_path) {
  if (config_path.empty()) return ExperimentConfig{};
  return parse_config(config_path);
}

FeatureMatrix load_split(const std::string& data_dir, const std::string& name) {
  const fs::path p = fs::path(data_dir) / (name + ".dscf");
  if (!fs::exists(p)) throw ConfigError("missing " + p.string());
  return load_features(p.string());
}

// Seed recorded by `generate`; lets later stages rebuild the matching teacher.
std::optional<std::uint64_t> manifest_seed(const std::string& data_dir) {
  const fs::path p = fs::path(data_dir) / "manifest.txt";
  if (!fs::exists(p)) return std::nullopt;
  std::istringstream in(read_text_file(p.string()));
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("seed=", 0) == 0) {
      return static_cast<std::uint64_t>(std::stoull(line.substr(5)));
    }
  }
  return std::nullopt;
}

SyntheticTeacher teacher_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  TeacherSpec ts = cfg.teacher;
  ts.input_dim = cfg.gen.input_dim();
  ts.xy_dims = cfg.gen.d_y;
  ts.seed = seed;
  return make_teacher(ts);
}

int cmd_generate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed) {
  ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  GeneratorSpec gen = cfg.gen;
  gen.seed = seed.value_or(cfg.seeds.front());

  const DatasetBundle bundle = gen_single_domain(gen);
  const FeatureMatrix far = gen_far_ood(gen, cfg.far_multiplier);
  fs::create_directories(out_dir);
  const fs::path base(out_dir);
  save_features(bundle.train, (base / "train.dscf").string());
  save_features(bundle.id_test, (base / "id_test.dscf").string());
  save_features(bundle.indomain_ood, (base / "indomain_ood.dscf").string());
  save_features(bundle.outdomain_ood, (base / "outdomain_ood.dscf").string());
  save_features(far, (base / "far_ood.dscf").string());
  write_text_file((base / "manifest.txt").string(), dataset_manifest(gen, bundle));
  std::cout << "wrote 5 splits + manifest to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              double lambda, std::optional<std::uint64_t> seed_opt,
              const std::string& out_dir) {
  ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  const std::uint64_t seed =
      seed_opt ? *seed_opt : manifest_seed(data_dir).value_or(cfg.seeds.front());

  const FeatureMatrix train_inputs = load_split(data_dir, "train");
  if (static_cast<int>(train_inputs.d()) != cfg.gen.input_dim()) {
    throw ConfigError("data dims disagree with config input dim");
  }
  if (train_inputs.num_classes != cfg.gen.c_train) {
    throw ConfigError("data classes disagree with config c_train");
  }

  const SyntheticTeacher teacher = teacher_for(cfg, seed);
  const FeatureMatrix teacher_train = teacher_embed(teacher, train_inputs);

  TrainConfig tc = cfg.train;
  tc.lambda_tgt = lambda;
  tc.seed = seed;

  std::optional<ProbeSet> probe;
  const fs::path id_p = fs::path(data_dir) / "id_test.dscf";
  const fs::path far_p = fs::path(data_dir) / "far_ood.dscf";
  if (fs::exists(id_p) && fs::exists(far_p)) {
    probe = ProbeSet{load_features(id_p.string()), load_features(far_p.string())};
  }

  MLPStudent init = make_student(cfg.trunk_dims(), cfg.gen.c_train,
                                 cfg.teacher.out_dim, seed);
  TrainResult result = train(std::move(init), train_inputs, teacher_train, tc,
                             probe ? &*probe : nullptr);

  fs::create_directories(out_dir);
  const fs::path base(out_dir);
  save_student(result.student, (base / "student.dscm").string());
  write_text_file((base / "geometry.csv").string(), geometry_trace_csv(result.trace));
  save_teacher_stats(teacher_stats(teacher_train), (base / "teacher.dsct").string());
  std::cout << "trained lambda=" << format_double(lambda) << " seed=" << seed
            << " -> " << out_dir << "\n";
  return 0;
}

int cmd_audit(const std::string& model_path, const std::string& data_dir,
              const std::string& out_file) {
  const MLPStudent student = load_student(model_path);
  const FeatureMatrix id_test = load_split(data_dir, "id_test");
  const FeatureMatrix indomain = load_split(data_dir, "indomain_ood");
  const FeatureMatrix outdomain = load_split(data_dir, "outdomain_ood");
  const FeatureMatrix train_inputs = load_split(data_dir, "train");

  const Embedded id_emb = embed(student, id_test);
  const Embedded train_emb = embed(student, train_inputs);
  const CovarianceSplit split = covariance_split(id_emb.feats);
  const int c = id_test.num_classes;
  const int d = static_cast<int>(id_emb.feats.d());
  const SpectralSummary summary = spectral_summary(split, default_k_list(c, d));

  const Projector proj =
      class_subspace(covariance_split(train_emb.feats), std::max(1, c - 1));
  const Embedded in_emb = embed(student, indomain);
  const Embedded out_emb = embed(student, outdomain);
  const NullspaceAudit audit_in = nullspace_audit(id_emb.feats, in_emb.feats, proj);
  const NullspaceAudit audit_out = nullspace_audit(id_emb.feats, out_emb.feats, proj);

  std::ostringstream out;
  out << "r_eff=" << format_double(summary.r_eff) << "\n";
  out << "pr=" << format_double(summary.pr) << "\n";
  for (const auto& [k, rho] : summary.rho_k) {
    out << "rho_" << k << "=" << format_double(rho) << "\n";
  }
  out << "rho_within=" << format_double(summary.rho_within) << "\n";
  out << "accuracy=" << format_double(accuracy(student, id_test)) << "\n";
  out << "nullspace_indomain_id_mean=" << format_double(audit_in.id_mean) << "\n";
  out << "nullspace_indomain_ood_mean=" << format_double(audit_in.ood_mean) << "\n";
  out << "nullspace_indomain_separated=" << (audit_in.separated ? 1 : 0) << "\n";
  out << "nullspace_outdomain_id_mean=" << format_double(audit_out.id_mean) << "\n";
  out << "nullspace_outdomain_ood_mean=" << format_double(audit_out.ood_mean) << "\n";
  out << "nullspace_outdomain_separated=" << (audit_out.separated ? 1 : 0) << "\n";

  if (out_file.empty()) {
    std::cout << out.str();
  } else {
    write_text_file(out_file, out.str());
  }
  return 0;
}

int cmd_score(const std::string& config_path, const std::string& model_path,
              const std::string& data_dir, const std::string& scorer,
              std::optional<std::uint64_t> seed_opt, const std::string& out_dir) {
  ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  const ScorerKind kind = scorer_from_name(scorer);
  const MLPStudent student = load_student(model_path);

  const FeatureMatrix train_inputs = load_split(data_dir, "train");
  const FeatureMatrix id_test = load_split(data_dir, "id_test");
  const FeatureMatrix indomain = load_split(data_dir, "indomain_ood");
  const FeatureMatrix outdomain = load_split(data_dir, "outdomain_ood");

  const Embedded train_emb = embed(student, train_inputs);
  const Embedded id_emb = embed(student, id_test);
  const Embedded in_emb = embed(student, indomain);
  const Embedded out_emb = embed(student, outdomain);
  const LinearHead head = student.head();

  // The teacher is rebuilt from config + seed; the manifest's seed keeps it
  // aligned with the data unless overridden.
  const std::uint64_t seed =
      seed_opt ? *seed_opt : manifest_seed(data_dir).value_or(cfg.seeds.front());
  const SyntheticTeacher teacher = teacher_for(cfg, seed);
  const FeatureMatrix teacher_train = teacher_embed(teacher, train_inputs);
  const FeatureMatrix teacher_id = teacher_embed(teacher, id_test);
  const FeatureMatrix teacher_in = teacher_embed(teacher, indomain);
  const FeatureMatrix teacher_out = teacher_embed(teacher, outdomain);

  ScorerTrainData train_data;
  train_data.feats = &train_emb.feats;
  train_data.logits = &train_emb.logits;
  train_data.head = &head;
  train_data.teacher_feats = &teacher_train;
  const FittedScorer fitted = fit_scorer(kind, train_data, cfg.scorer_cfg);

  std::ostringstream csv;
  csv << "split,index,score\n";
  const auto emit = [&csv, &fitted](const char* split, const Embedded& emb,
                                    const FeatureMatrix& teacher_feats) {
    const ScorerEvalData eval{&emb.feats.data, &emb.logits, &teacher_feats.data};
    const ScoreVector scores = apply_scorer(fitted, eval);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      csv << split << ',' << i << ',' << format_double(scores[i]) << '\n';
    }
  };
  emit("id_test", id_emb, teacher_id);
  emit("indomain_ood", in_emb, teacher_in);
  emit("outdomain_ood", out_emb, teacher_out);

  fs::create_directories(out_dir);
  const fs::path base(out_dir);
  write_text_file((base / "scores.csv").string(), csv.str());
  save_scorer(fitted, (base / (scorer + ".dscs")).string());
  std::cout << "scored 3 splits with " << scorer << " -> " << out_dir << "\n";
  return 0;
}

int cmd_eval(const std::string& scores_path, const std::string& out_file) {
  std::istringstream in(read_text_file(scores_path));
  std::string line;
  if (!std::getline(in, line) || line != "split,index,score") {
    throw ConfigError("scores csv: unexpected header");
  }
  std::map<std::string, ScoreVector> by_split;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw ConfigError("scores csv line " + std::to_string(line_no) + ": bad row");
    }
    try {
      by_split[line.substr(0, c1)].push_back(std::stod(line.substr(c2 + 1)));
    } catch (const std::exception&) {
      throw ConfigError("scores csv line " + std::to_string(line_no) + ": bad score");
    }
  }
  if (!by_split.count("id_test")) throw ConfigError("scores csv: no id_test rows");

  std::ostringstream out;
  out << "split,fpr95,fpr98,auroc,aupr_in,aupr_out,n_id,n_ood\n";
  for (const auto& [split, scores] : by_split) {
    if (split == "id_test") continue;
    const EvalRecord ev = evaluate_scores(by_split.at("id_test"), scores);
    out << split << ',' << format_double(ev.fpr_at_95) << ','
        << format_double(ev.fpr_at_98) << ',' << format_double(ev.auroc) << ','
        << format_double(ev.aupr_in) << ',' << format_double(ev.aupr_out) << ','
        << ev.n_id << ',' << ev.n_ood << '\n';
  }
  if (out_file.empty()) {
    std::cout << out.str();
  } else {
    write_text_file(out_file, out.str());
  }
  return 0;
}

int cmd_bounds(const std::string& config_path, const std::string& model_path,
               const std::string& data_dir, std::optional<std::uint64_t> seed_opt,
               const std::string& out_file) {
  ExperimentConfig cfg = load_config(config_path);
  cfg.validate();
  const MLPStudent student = load_student(model_path);
  const FeatureMatrix train_inputs = load_split(data_dir, "train");
  const FeatureMatrix id_test = load_split(data_dir, "id_test");
  const FeatureMatrix outdomain = load_split(data_dir, "outdomain_ood");
  const std::uint64_t seed =
      seed_opt ? *seed_opt : manifest_seed(data_dir).value_or(cfg.seeds.front());

  const Embedded train_emb = embed(student, train_inputs);
  const Embedded id_emb = embed(student, id_test);
  const Embedded out_emb = embed(student, outdomain);
  const int k_cls = std::max(1, train_inputs.num_classes - 1);
  const Projector proj = class_subspace(covariance_split(train_emb.feats), k_cls);
  const FittedScorer knn_euclid =
      fit_knn(train_emb.feats, cfg.scorer_cfg.knn_k, false);
  const LinearHead head = student.head();

  std::ostringstream out;
  out << bound_report_csv_header() << '\n';
  out << bound_report_csv_row(
             "standalone",
             check_theorem1(id_emb.feats, out_emb.feats, knn_euclid, proj,
                            cfg.n_bound_pairs, seed))
      << '\n';
  out << bound_report_csv_row(
             "standalone",
             check_prop1(id_emb.feats, out_emb.feats, head, proj, LogitScore::energy,
                         cfg.n_bound_pairs, seed))
      << '\n';
  out << bound_report_csv_row(
             "standalone",
             check_prop1(id_emb.feats, out_emb.feats, head, proj, LogitScore::msp,
                         cfg.n_bound_pairs, seed))
      << '\n';
  if (out_file.empty()) {
    std::cout << out.str();
  } else {
    write_text_file(out_file, out.str());
  }
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_override,
            std::optional<std::uint64_t> seed_override, const std::string& lambda_csv,
            const std::string& scorers_csv, int jobs, const std::string& format) {
  ExperimentConfig cfg = load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (seed_override) cfg.seeds = {*seed_override};
  if (!lambda_csv.empty()) cfg.lambda_grid = parse_doubles(lambda_csv, "--lambda");
  if (!scorers_csv.empty()) {
    cfg.scorers.clear();
    std::istringstream in(scorers_csv);
    std::string name;
    while (std::getline(in, name, ',')) cfg.scorers.push_back(scorer_from_name(name));
  }
  if (format != "csv" && format != "json") {
    throw ConfigError("--format must be csv or json");
  }
  cfg.validate();

  const RunResult result = run_experiment(cfg, jobs);
  write_run_outputs(result, cfg.out_dir, format == "json");
  std::cout << result.rows.size() << " report rows, " << result.bounds.size()
            << " bound rows -> " << cfg.out_dir << "\n";
  return 0;
}

int cmd_summarize(const std::string& report_path, const std::string& out_file) {
  const std::vector<ReportRow> rows = parse_report_csv(read_text_file(report_path));
  const std::string csv = summary_csv(summarize(rows));
  if (out_file.empty()) {
    std::cout << csv;
  } else {
    write_text_file(out_file, csv);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale lab for domain-sensitivity collapse in OOD detection"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, model_path, scorer_name_arg;
  std::string scores_path, report_path, lambda_csv, scorers_csv, format = "csv";
  double lambda = 1.0;
  int jobs = 1;
  std::uint64_t seed_value = 0;
  bool seed_given = false;

  const auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_value, "root seed override")
        ->each([&](const std::string&) { seed_given = true; });
  };
  const auto seed_opt = [&]() -> std::optional<std::uint64_t> {
    if (seed_given) return seed_value;
    return std::nullopt;
  };

  CLI::App* gen = app.add_subcommand("generate", "write dataset splits + manifest");
  gen->add_option("--config", config_path, "config file");
  gen->add_option("--out", out_dir, "output directory")->required();
  add_seed(gen);

  CLI::App* tr = app.add_subcommand("train", "train one student on a dataset dir");
  tr->add_option("--config", config_path, "config file");
  tr->add_option("--data", data_dir, "dataset directory")->required();
  tr->add_option("--lambda", lambda, "teacher-guidance strength");
  tr->add_option("--out", out_dir, "output directory")->required();
  add_seed(tr);

  CLI::App* au = app.add_subcommand("audit", "geometry + nullspace diagnostics");
  au->add_option("--model", model_path, "student .dscm")->required();
  au->add_option("--data", data_dir, "dataset directory")->required();
  au->add_option("--out", out_dir, "output file (default stdout)");

  CLI::App* sc = app.add_subcommand("score", "fit one scorer and score all splits");
  sc->add_option("--config", config_path, "config file");
  sc->add_option("--model", model_path, "student .dscm")->required();
  sc->add_option("--data", data_dir, "dataset directory")->required();
  sc->add_option("--scorer", scorer_name_arg, "scorer name")->required();
  sc->add_option("--out", out_dir, "output directory")->required();
  add_seed(sc);

  CLI::App* ev = app.add_subcommand("eval", "metrics from a scores.csv");
  ev->add_option("--scores", scores_path, "scores.csv from `score`")->required();
  ev->add_option("--out", out_dir, "output file (default stdout)");

  CLI::App* bo = app.add_subcommand("bounds", "inequality checks for a student");
  bo->add_option("--config", config_path, "config file");
  bo->add_option("--model", model_path, "student .dscm")->required();
  bo->add_option("--data", data_dir, "dataset directory")->required();
  bo->add_option("--out", out_dir, "output file (default stdout)");
  add_seed(bo);

  CLI::App* ru = app.add_subcommand("run", "full experiment grid");
  ru->add_option("--config", config_path, "config file");
  ru->add_option("--out", out_dir, "output directory override");
  ru->add_option("--lambda", lambda_csv, "lambda grid override, e.g. 0,0.5,1");
  ru->add_option("--scorers", scorers_csv, "scorer roster override");
  ru->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  ru->add_option("--format", format, "csv | json (json adds report.json)");
  add_seed(ru);

  CLI::App* su = app.add_subcommand("summarize", "aggregate a report.csv");
  su->add_option("--report", report_path, "report.csv path")->required();
  su->add_option("--out", out_dir, "output file (default stdout)");

  CLI::App* keys = app.add_subcommand("config-keys", "print the config key list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_generate(config_path, out_dir, seed_opt());
    if (tr->parsed()) return cmd_train(config_path, data_dir, lambda, seed_opt(), out_dir);
    if (au->parsed()) return cmd_audit(model_path, data_dir, out_dir);
    if (sc->parsed())
      return cmd_score(config_path, model_path, data_dir, scorer_name_arg, seed_opt(),
                       out_dir);
    if (ev->parsed()) return cmd_eval(scores_path, out_dir);
    if (bo->parsed())
      return cmd_bounds(config_path, model_path, data_dir, seed_opt(), out_dir);
    if (ru->parsed())
      return cmd_run(config_path, out_dir, seed_opt(), lambda_csv, scorers_csv, jobs,
                     format);
    if (su->parsed()) return cmd_summarize(report_path, out_dir);
    if (keys->parsed()) {
      std::cout << config_key_help();
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "abort: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
