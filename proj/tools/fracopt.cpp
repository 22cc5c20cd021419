// fracopt command-line driver: every subcommand reads and writes files in a
// run directory and records what it did in <run>/manifest.json.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fracopt/features.hpp"
#include "fracopt/feature_table.hpp"
#include "fracopt/metrics.hpp"
#include "fracopt/offset.hpp"
#include "fracopt/recommend.hpp"
#include "fracopt/service.hpp"
#include "fracopt/stats.hpp"
#include "fracopt/stacked_model.hpp"
#include "fracopt/synthetic.hpp"
#include "fracopt/version.hpp"
#include "fracopt/welldata_io.hpp"
#include "fracopt/welldata_json.hpp"
#include "report.hpp"

namespace fs = std::filesystem;
using namespace fracopt;
using nlohmann::json;

namespace {

struct Common {
  fs::path run = "run";
  std::uint64_t seed = 0;
};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorKind::io, "cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ingestion, p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + p.string());
  out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

fs::path need(const Common& c, const std::string& name, const std::string& producer) {
  const auto p = c.run / name;
  if (!fs::exists(p)) throw Error(ErrorKind::precondition, p.string() + " not found; run `" + producer + "` first");
  return p;
}

Dataset load_dataset(const Common& c) { return ingest_csv(need(c, "dataset.csv", "ingest` or `synth")); }
StackedModel load_model(const Common& c) { return StackedModel::load(need(c, "model.json", "train")); }

// Manifest entries carry no timestamps and no absolute paths so that two
// runs with the same seed produce identical files.
void record_step(const Common& c, const std::string& command, const json& args, const std::vector<std::string>& outputs) {
  const auto p = c.run / "manifest.json";
  json m = fs::exists(p) ? read_json(p) : json::object();
  m["tool"] = "fracopt";
  m["version"] = kVersion;
  m["steps"][command] = {{"args", args}, {"seed", c.seed}, {"outputs", outputs}};
  write_json(p, m);
}

WellRecord load_pilot(const Dataset& ds, const std::string& id, const std::string& file) {
  if (!file.empty()) return record_from_json(read_json(file), ds);
  if (id.empty()) throw Error(ErrorKind::input, "give --pilot or --pilot-file");
  const WellRecord* w = ds.find(id);
  if (!w) throw Error(ErrorKind::input, "unknown pilot '" + id + "'");
  return *w;
}

std::vector<Method> parse_methods(const std::string& list) {
  std::vector<Method> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto m = parse_method(item);
    if (!m) throw Error(ErrorKind::input, "unknown method '" + item + "'");
    out.push_back(*m);
  }
  if (out.empty()) throw Error(ErrorKind::input, "no methods given");
  return out;
}

json ids_json(const FeatureTable& t, const std::vector<Eigen::Index>& rows) {
  json arr = json::array();
  for (auto r : rows) arr.push_back(t.ids[static_cast<std::size_t>(r)]);
  return arr;
}

FeatureTable rows_by_id(const FeatureTable& t, const json& ids) {
  std::map<std::string, Eigen::Index> pos;
  for (std::size_t i = 0; i < t.ids.size(); ++i) pos[t.ids[i]] = static_cast<Eigen::Index>(i);
  std::vector<Eigen::Index> rows;
  for (const auto& id : ids) {
    const auto it = pos.find(id.get<std::string>());
    if (it == pos.end()) throw Error(ErrorKind::precondition, "split names well " + id.dump() + " absent from dataset");
    rows.push_back(it->second);
  }
  return t.select_rows(rows);
}

void fill_missing(FeatureTable& t, const std::vector<double>& means) {
  for (Eigen::Index j = 0; j < t.cols(); ++j)
    for (Eigen::Index i = 0; i < t.rows(); ++i)
      if (is_missing(t.X(i, j))) t.X(i, j) = means[static_cast<std::size_t>(j)];
}

// ---------------------------------------------------------------- commands

void cmd_ingest(const Common& c, const std::string& input, const std::string& mapping_file) {
  ColumnMapping mapping;
  if (!mapping_file.empty()) {
    const auto j = read_json(mapping_file);
    if (j.contains("rename")) mapping.rename = j["rename"].get<std::map<std::string, std::string>>();
    if (j.contains("environment")) mapping.environment = j["environment"].get<std::vector<std::string>>();
    if (j.contains("aliases"))
      for (const auto& [k, v] : j["aliases"].items()) mapping.aliases.add(k, v.get<std::string>());
  }
  auto ds = ingest_csv(fs::path(input), mapping);
  ds.validate();
  fs::create_directories(c.run);
  write_csv(ds, c.run / "dataset.csv");
  std::size_t with_target = 0;
  for (const auto& w : ds.rows)
    if (!w.production.empty() && target_90d(w.production)) ++with_target;
  const json summary = {{"wells", ds.size()},
                        {"environment_features", ds.environment_names()},
                        {"wells_with_target", with_target}};
  write_json(c.run / "ingest.json", summary);
  record_step(c, "ingest", {{"input", fs::path(input).filename().string()}}, {"dataset.csv", "ingest.json"});
  std::cout << "ingested " << ds.size() << " wells (" << with_target << " with a 90-day target)\n";
}

void cmd_synth(const Common& c, std::size_t n, const SyntheticSpec& spec) {
  const auto field = generate_synthetic(n, c.seed, spec);
  fs::create_directories(c.run);
  write_csv(field.dataset, c.run / "dataset.csv");
  std::ostringstream truth;
  truth << "well_id,truth_90d,latent_cluster\n";
  for (std::size_t i = 0; i < field.dataset.rows.size(); ++i)
    truth << field.dataset.rows[i].well_id << ',' << format_double(field.truth[i]) << ',' << field.latent_cluster[i]
          << '\n';
  write_text(c.run / "truth.csv", truth.str());
  record_step(c, "synth",
              {{"n", n},
               {"noise", spec.noise},
               {"missing_fraction", spec.missing_fraction},
               {"n_clusters", spec.n_clusters}},
              {"dataset.csv", "truth.csv"});
  std::cout << "wrote " << n << " synthetic wells\n";
}

void cmd_features(const Common& c, const EliminationConfig& cfg, std::size_t rfe_keep, int bins) {
  const auto ds = load_dataset(c);
  const auto raw = build_feature_table(ds, FeatureEncoder::from_dataset(ds));
  const auto elim = eliminate(raw, cfg);

  std::optional<StackedModel> model;
  if (fs::exists(c.run / "model.json")) model = load_model(c);

  std::optional<RfeResult> rfe_result;
  if (rfe_keep > 0) {
    auto table = raw.select_columns(elim.retained);
    impute_column_means(table);
    const auto enc = FeatureEncoder::from_dataset(ds);
    const HyperPoint point = default_grid().front();
    const auto seed = c.seed;
    ModelTrainer trainer = [&](const FeatureTable& t) { return fit_stacked_fixed(t, point, seed, enc.select(t.names)); };
    rfe_result = rfe(trainer, table, rfe_keep, 1, c.seed);
  }
  const auto report = build_feature_report(raw, model ? &*model : nullptr, rfe_result ? &*rfe_result : nullptr, bins);

  json dropped = json::array();
  for (const auto& [name, reason] : elim.dropped) dropped.push_back({{"feature", name}, {"reason", reason}});
  json out = {{"retained", elim.retained}, {"dropped", dropped}, {"report", report.to_json()}};
  if (rfe_result) out["rfe_selected"] = rfe_result->retained_features();
  write_json(c.run / "features.json", out);
  write_text(c.run / "features.csv", report.to_csv());
  record_step(c, "features",
              {{"missing_thresh", cfg.missing_thresh},
               {"corr_thresh", cfg.corr_thresh},
               {"var_thresh", cfg.var_thresh},
               {"rfe_keep", rfe_keep},
               {"sobol_bins", bins}},
              {"features.json", "features.csv"});
  std::cout << elim.retained.size() << " features retained, " << elim.dropped.size() << " dropped\n";
}

void cmd_train(const Common& c, int folds, double holdout, bool selected) {
  const auto ds = load_dataset(c);
  auto enc = FeatureEncoder::from_dataset(ds);
  if (selected) {
    const auto f = read_json(need(c, "features.json", "features"));
    enc = enc.select(f.contains("rfe_selected") ? f["rfe_selected"].get<std::vector<std::string>>()
                                                : f.at("retained").get<std::vector<std::string>>());
  }
  const auto table = build_feature_table(ds, enc);
  if (table.rows() < 4) throw Error(ErrorKind::insufficient_data, "fewer than 4 wells with a 90-day target");
  const auto split = split_holdout(table.rows(), holdout, c.seed);
  auto train = table.select_rows(split.train);
  const auto means = impute_column_means(train);
  auto model = fit_stacked(train, default_grid(), folds, c.seed, enc);
  model.training_means = means;
  model.save(c.run / "model.json");

  write_json(c.run / "split.json", {{"holdout_fraction", holdout},
                                     {"seed", c.seed},
                                     {"train", ids_json(table, split.train)},
                                     {"test", ids_json(table, split.test)}});
  std::ostringstream cv;
  cv << "l2_lambda,max_depth,n_trees,learning_rate,mean_rmse\n";
  for (const auto& s : model.cv_scores)
    cv << format_double(s.point.l2_lambda) << ',' << s.point.boosting.max_depth << ',' << s.point.boosting.n_trees
       << ',' << format_double(s.point.boosting.learning_rate) << ',' << format_double(s.mean_rmse) << '\n';
  write_text(c.run / "cv.csv", cv.str());
  record_step(c, "train", {{"folds", folds}, {"holdout", holdout}, {"selected_features", selected}},
              {"model.json", "split.json", "cv.csv"});
  std::cout << "trained on " << train.rows() << " wells; selected lambda=" << format_double(model.selected.l2_lambda)
            << " depth=" << model.selected.boosting.max_depth << " trees=" << model.selected.boosting.n_trees << "\n";
}

void cmd_evaluate(const Common& c) {
  const auto ds = load_dataset(c);
  const auto model = load_model(c);
  const auto split = read_json(need(c, "split.json", "train"));
  const auto table = build_feature_table(ds, model.encoder);
  std::ostringstream csv;
  csv << "split," << metrics_csv_header() << '\n';
  for (const char* part : {"train", "test"}) {
    auto t = rows_by_id(table, split.at(part));
    if (t.rows() == 0) continue;
    fill_missing(t, model.training_means);
    csv << (std::string(part) == "test" ? "holdout" : "train") << ',' << metrics_csv_row(evaluate(model, t)) << '\n';
  }
  write_text(c.run / "metrics.csv", csv.str());
  record_step(c, "evaluate", json::object(), {"metrics.csv"});
  std::cout << csv.str();
}

void cmd_offsets(const Common& c, const std::string& pilot_id, const std::string& pilot_file, std::size_t n) {
  const auto ds = load_dataset(c);
  const auto pilot = load_pilot(ds, pilot_id, pilot_file);
  const auto payload = offsets_payload(ds, pilot, n, c.seed);
  write_json(c.run / "offsets.json", payload);
  std::vector<ScatterPoint> pts;
  for (const auto& p : payload["embedding"])
    pts.push_back({p["well_id"], p["x"], p["y"], p["label"], p["star"]});
  write_text(c.run / "offsets_scatter.csv", scatter_csv(pts));
  write_text(c.run / "offsets.svg", scatter_svg(pts, "Offset wells for " + pilot.well_id));
  record_step(c, "offsets", {{"pilot", pilot.well_id}, {"n", n}},
              {"offsets.json", "offsets_scatter.csv", "offsets.svg"});
  std::cout << "cluster of " << payload["cluster"]["members"].size() << " wells; top " << payload["offsets"].size()
            << " offsets written\n";
}

std::atomic<bool> g_cancel{false};

void cmd_optimize(const Common& c, const std::string& pilot_id, const std::string& pilot_file,
                  const std::string& methods, int budget) {
  const auto ds = load_dataset(c);
  const auto model = load_model(c);
  const auto pilot = load_pilot(ds, pilot_id, pilot_file);
  RecommendConfig cfg;
  cfg.methods = parse_methods(methods);
  cfg.budget = budget;
  cfg.seed = c.seed;
  cfg.cancel = &g_cancel;
  const auto rec = recommend(ds, model_response(model, ds.environment_names()), pilot, cfg);
  write_text(c.run / "comparison.csv", rec.comparison_csv());
  write_text(c.run / "percent.csv", rec.percent_csv());
  write_json(c.run / "optimize.json", rec.to_json());
  record_step(c, "optimize", {{"pilot", pilot.well_id}, {"methods", methods}, {"budget", budget}},
              {"comparison.csv", "percent.csv", "optimize.json"});
  std::cout << rec.comparison_csv();
}

void cmd_retro(const Common& c, const std::string& pilot_id, const std::string& pilot_file, const std::string& method,
               int budget) {
  const auto ds = load_dataset(c);
  const auto model = load_model(c);
  const auto pilot = load_pilot(ds, pilot_id, pilot_file);
  RecommendConfig cfg;
  cfg.retro_method = parse_methods(method).front();
  cfg.budget = budget;
  cfg.seed = c.seed;
  cfg.cancel = &g_cancel;
  const auto r = retrospective(ds, model_response(model, ds.environment_names()), pilot, cfg);
  write_json(c.run / "retro.json", r.to_json());
  record_step(c, "retro", {{"pilot", pilot.well_id}, {"method", method}, {"budget", budget}}, {"retro.json"});
  std::cout << "actual " << format_double(r.actual_value) << " m3, optimised " << format_double(r.optimized_value)
            << " m3, uplift " << format_double(r.uplift_pct) << "%" << (r.relaxed_bounds ? " (bounds relaxed)" : "")
            << "\n";
}

Service* g_service = nullptr;

void cmd_serve(const Common& c, const std::string& config_file, std::optional<int> port) {
  ServiceConfig cfg = config_file.empty() ? ServiceConfig{} : load_service_config(config_file);
  if (cfg.dataset_path.empty()) cfg.dataset_path = c.run / "dataset.csv";
  if (cfg.model_path.empty()) cfg.model_path = c.run / "model.json";
  if (config_file.empty()) cfg.state_dir = c.run / "service";
  apply_env_overrides(cfg);
  if (port) cfg.port = *port;
  auto service = Service::from_config(cfg, &std::clog);
  g_service = service.get();
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  service->run();
  g_service = nullptr;
}

void cmd_report(const Common& c) {
  if (!fs::exists(c.run)) throw Error(ErrorKind::precondition, "run directory " + c.run.string() + " does not exist");
  std::vector<std::string> outputs{"report.md"};
  ReportInputs in;
  auto load_text = [&](const char* name) -> std::optional<std::string> {
    const auto p = c.run / name;
    if (!fs::exists(p)) return std::nullopt;
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  in.metrics_csv = load_text("metrics.csv");
  in.comparison_csv = load_text("comparison.csv");
  in.percent_csv = load_text("percent.csv");
  if (fs::exists(c.run / "manifest.json")) in.manifest = read_json(c.run / "manifest.json");
  if (fs::exists(c.run / "optimize.json")) in.optimize = read_json(c.run / "optimize.json");
  if (fs::exists(c.run / "retro.json")) in.retro = read_json(c.run / "retro.json");
  if (fs::exists(c.run / "features.json")) in.features = read_json(c.run / "features.json");
  if (fs::exists(c.run / "offsets.json")) in.offsets = read_json(c.run / "offsets.json");
  in.has_offsets_svg = fs::exists(c.run / "offsets.svg");

  const auto bundle = build_report(in);
  for (const auto& [name, text] : bundle.files) {
    write_text(c.run / name, text);
    outputs.push_back(name);
  }
  write_text(c.run / "report.md", bundle.markdown);
  record_step(c, "report", json::object(), outputs);
  std::cout << "wrote " << (c.run / "report.md").string() << "\n";
}

int exit_code(ErrorKind kind) { return 3 + static_cast<int>(kind); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fracturing design recommendation pipeline"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  Common common;
  app.add_option("--run", common.run, "Run directory holding inputs and artifacts")->capture_default_str();
  app.add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();

  auto* ingest = app.add_subcommand("ingest", "Load a well CSV into the run directory");
  std::string input, mapping;
  ingest->add_option("input", input, "Well CSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--mapping", mapping, "JSON column mapping {rename, environment, aliases}")
      ->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic field");
  std::size_t n_wells = 500;
  SyntheticSpec spec;
  synth->add_option("--n", n_wells, "Number of wells")->capture_default_str();
  synth->add_option("--noise", spec.noise, "Noise sd as a fraction of the target spread")->capture_default_str();
  synth->add_option("--missing", spec.missing_fraction, "Share of blanked environment cells")->capture_default_str();
  synth->add_option("--clusters", spec.n_clusters, "Latent environment clusters")->capture_default_str();

  auto* features = app.add_subcommand("features", "Feature elimination, sensitivity and attribution report");
  EliminationConfig elim;
  std::size_t rfe_keep = 0;
  int bins = 16;
  features->add_option("--missing-thresh", elim.missing_thresh)->capture_default_str();
  features->add_option("--corr-thresh", elim.corr_thresh)->capture_default_str();
  features->add_option("--var-thresh", elim.var_thresh)->capture_default_str();
  features->add_option("--rfe", rfe_keep, "Run recursive elimination down to this many features (0 = off)")
      ->capture_default_str();
  features->add_option("--bins", bins, "Bins for first-order sensitivity")->capture_default_str();

  auto* train = app.add_subcommand("train", "Fit the stacked model");
  int folds = 5;
  double holdout = 0.3;
  bool selected = false;
  train->add_option("--folds", folds)->capture_default_str();
  train->add_option("--holdout", holdout, "Held-out share of wells")->capture_default_str()->check(CLI::Range(0.05, 0.9));
  train->add_flag("--selected", selected, "Use the features kept by `features`");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Metrics of the trained model on train and holdout wells");

  std::string pilot_id, pilot_file;
  auto add_pilot = [&](CLI::App* sub) {
    sub->add_option("--pilot", pilot_id, "Pilot well id from the dataset");
    sub->add_option("--pilot-file", pilot_file, "Pilot well as a JSON record")->check(CLI::ExistingFile);
  };
  auto* offsets = app.add_subcommand("offsets", "Pilot cluster, offset wells and embedding");
  add_pilot(offsets);
  std::size_t n_offsets = 10;
  offsets->add_option("--n", n_offsets, "Offset wells to list")->capture_default_str();

  auto* optimize = app.add_subcommand("optimize", "Recommend a design with several optimisers");
  add_pilot(optimize);
  std::string methods = "de,pso,local,sbo";
  int budget = 200;
  optimize->add_option("--methods", methods, "Comma-separated: de, pso, local, sbo, random")->capture_default_str();
  optimize->add_option("--budget", budget, "Objective evaluations per method")->capture_default_str();

  auto* retro = app.add_subcommand("retro", "Retrospective uplift for a well with a known design");
  add_pilot(retro);
  std::string retro_method = "sbo";
  retro->add_option("--method", retro_method)->capture_default_str();
  retro->add_option("--budget", budget)->capture_default_str();

  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  std::string config_file;
  std::optional<int> port;
  serve->add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
  serve->add_option("--port", port);

  auto* report = app.add_subcommand("report", "Markdown and SVG summary of a run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::signal(SIGINT, [](int) { g_cancel = true; });
  try {
    if (*ingest) cmd_ingest(common, input, mapping);
    else if (*synth) cmd_synth(common, n_wells, spec);
    else if (*features) cmd_features(common, elim, rfe_keep, bins);
    else if (*train) cmd_train(common, folds, holdout, selected);
    else if (*evaluate_cmd) cmd_evaluate(common);
    else if (*offsets) cmd_offsets(common, pilot_id, pilot_file, n_offsets);
    else if (*optimize) cmd_optimize(common, pilot_id, pilot_file, methods, budget);
    else if (*retro) cmd_retro(common, pilot_id, pilot_file, retro_method, budget);
    else if (*serve) cmd_serve(common, config_file, port);
    else if (*report) cmd_report(common);
  } catch (const Error& e) {
    std::cerr << "fracopt: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "fracopt: internal error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
