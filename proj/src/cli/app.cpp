#include "ucf/cli/app.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <unordered_map>

#include "ucf/error.hpp"
#include "ucf/io.hpp"
#include "ucf/numcore/rng.hpp"

namespace ucf::cli {

namespace fs = std::filesystem;

namespace {

void progress(const Options& opts, const std::string& msg) {
  if (!opts.quiet) std::cerr << msg << "\n";
}

void announce(const fs::path& path) { std::cout << path.string() << "\n"; }

void write_artifact(const Options& opts, const char* name, std::string_view text) {
  const fs::path path = opts.out / name;
  io::write_file_atomic(path, text);
  announce(path);
}

fs::path require(const Options& opts, const char* name) {
  const fs::path path = opts.out / name;
  if (!fs::exists(path)) throw MissingInputError(path.string());
  return path;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                        : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    if (end > start) out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

double parse_cell(const std::string& cell, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size()) {
    throw ParseError("expected a number, got '" + cell + "'", line);
  }
  return v;
}

std::string embeddings_to_csv(const data::Dataset& ds, const num::Matrix& z) {
  std::string out = "session_id";
  for (std::size_t j = 0; j < z.cols(); ++j) out += ",e" + std::to_string(j);
  out += "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += ds.samples[i].session_id;
    for (std::size_t j = 0; j < z.cols(); ++j) out += "," + io::format_double(z(i, j));
    out += "\n";
  }
  return out;
}

// Rows aligned with the dataset's sample order.
num::Matrix read_embeddings(const fs::path& path, const data::Dataset& ds) {
  const std::string text = io::read_text(path);
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError("empty embeddings file", 1);
  const auto header = split_csv_line(lines[0]);
  if (header.size() < 2 || header[0] != "session_id") {
    throw ParseError("embeddings header must start with session_id", 1);
  }
  const std::size_t dim = header.size() - 1;
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < ds.size(); ++i) row_of.emplace(ds.samples[i].session_id, i);

  num::Matrix z(ds.size(), dim);
  std::vector<char> seen(ds.size(), 0);
  for (std::size_t l = 1; l < lines.size(); ++l) {
    const auto cells = split_csv_line(lines[l]);
    if (cells.size() != dim + 1) throw ParseError("wrong number of columns", l + 1);
    const auto it = row_of.find(cells[0]);
    if (it == row_of.end()) {
      throw IntegrityError("embedding for unknown session '" + cells[0] + "'");
    }
    if (seen[it->second]) throw IntegrityError("duplicate embedding for '" + cells[0] + "'");
    seen[it->second] = 1;
    for (std::size_t j = 0; j < dim; ++j) z(it->second, j) = parse_cell(cells[j + 1], l + 1);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!seen[i]) {
      throw IntegrityError("no embedding for session '" + ds.samples[i].session_id + "'");
    }
  }
  return z;
}

num::Matrix gather_rows(const num::Matrix& m, const std::vector<std::size_t>& rows) {
  num::Matrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m(rows[r], c);
  }
  return out;
}

std::vector<int> truth_of(const data::Dataset& ds, const std::vector<std::size_t>& rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (std::size_t i : rows) y.push_back(ds.samples[i].ground_truth);
  return y;
}

void write_manifest(const RunConfig& cfg, const Options& opts, std::string_view command) {
  nlohmann::ordered_json m;
  m["command"] = std::string(command);
  m["seed"] = cfg.seed;
  m["config_digest"] = io::sha256_hex(cfg.canonical());
  nlohmann::ordered_json artifacts = nlohmann::ordered_json::object();
  for (const char* name :
       {kConfigFile, kDatasetFile, kStage1File, kStage2File, kTrainLogFile, kEmbeddingsFile,
        kMetricsFile, kScoresFile, kProjectionFile, kProjectionSvgFile, kReportFile,
        kRocSvgFile}) {
    const fs::path path = opts.out / name;
    if (fs::exists(path)) artifacts[name] = io::sha256_hex(io::read_bytes(path));
  }
  m["artifacts"] = std::move(artifacts);
  io::write_file_atomic(opts.out / kManifestFile, m.dump(2) + "\n");
}

// --- Commands ------------------------------------------------------------------

void cmd_generate(const RunConfig& cfg, const Options& opts) {
  data::PreprocessStats stats;
  const auto ds = data::preprocess(data::generate(cfg.gen_config()), &stats);
  progress(opts, "generate: " + std::to_string(ds.size()) + " samples (" +
                     std::to_string(stats.duplicates_removed) + " duplicates removed), " +
                     std::to_string(ds.train_positive_indices().size()) + " labeled positives, " +
                     std::to_string(ds.val_indices().size()) + " validation");
  write_artifact(opts, kDatasetFile, data::to_csv(ds));
}

void cmd_train(const RunConfig& cfg, const Options& opts) {
  const auto ds = data::load(require(opts, kDatasetFile));
  const auto tcfg = cfg.train_config();
  auto enc = encoder::init(cfg.encoder, cfg.seed_for("encoder.init"));
  auto report = [&](const trainer::EpochRecord& r) {
    char buf[160];
    if (r.stage == 1) {
      std::snprintf(buf, sizeof buf, "stage1 epoch %zu loss=%.6f raw_tau=%.4f v0=%.4f head_acc=%.3f",
                    r.epoch, r.mean_loss, r.raw_tau, r.v0_norm, r.head_acc);
    } else {
      std::snprintf(buf, sizeof buf, "stage2 epoch %zu triplet=%.6f head_acc=%.3f", r.epoch,
                    r.mean_loss, r.head_acc);
    }
    progress(opts, buf);
  };
  auto s1 = trainer::train_stage1(ds, std::move(enc), tcfg, {}, report);
  encoder::save(s1.encoder, opts.out / kStage1File);
  announce(opts.out / kStage1File);
  auto s2 = trainer::train_stage2(ds, s1.encoder, tcfg, report);
  encoder::save(s2.encoder, opts.out / kStage2File);
  announce(opts.out / kStage2File);
  trainer::TrainLog log = s1.log;
  log.append(s2.log);
  write_artifact(opts, kTrainLogFile, log.to_csv());
}

void cmd_embed(const RunConfig&, const Options& opts) {
  const auto ds = data::load(require(opts, kDatasetFile));
  const auto enc = encoder::load(require(opts, kStage2File));
  std::vector<std::size_t> all(ds.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto z = encoder::encode_batch(enc, ds.features(all));
  if (!z.all_finite()) throw NumericalError("embed: non-finite embedding");
  progress(opts, "embed: " + std::to_string(z.rows()) + " x " + std::to_string(z.cols()));
  write_artifact(opts, kEmbeddingsFile, embeddings_to_csv(ds, z));
}

void cmd_classify(const RunConfig& cfg, const Options& opts) {
  const auto dataset_path = require(opts, kDatasetFile);
  const auto embeddings_path = require(opts, kEmbeddingsFile);
  const auto ds = data::load(dataset_path);
  const auto z = read_embeddings(embeddings_path, ds);
  const auto val = ds.val_indices();
  const auto x = gather_rows(z, val);
  const auto y = truth_of(ds, val);
  const std::string digest = io::sha256_hex(io::read_bytes(dataset_path));

  std::vector<eval::MetricsReport> reports;
  for (auto kind : cfg.classifiers) {
    const auto it = cfg.hyper.find(kind);
    auto r = eval::kfold_cv(x, y, cfg.folds, kind,
                            it == cfg.hyper.end() ? downstream::Hyper{} : it->second,
                            cfg.seed_for("cv"));
    r.dataset_digest = digest;
    char buf[200];
    std::snprintf(buf, sizeof buf, "classify: %-19s acc=%.5f prec=%.5f rec=%.5f f1=%.5f auc=%.5f",
                  r.classifier.c_str(), r.aggregate.accuracy, r.aggregate.precision,
                  r.aggregate.recall, r.aggregate.f1, r.aggregate_auc);
    progress(opts, buf);
    reports.push_back(std::move(r));
  }
  write_artifact(opts, kMetricsFile, eval::reports_to_json(reports));

  std::string scores = "session_id,ground_truth";
  for (const auto& r : reports) scores += "," + r.classifier;
  scores += "\n";
  for (std::size_t i = 0; i < val.size(); ++i) {
    scores += ds.samples[val[i]].session_id + "," + std::to_string(y[i]);
    for (const auto& r : reports) scores += "," + io::format_double(r.out_of_fold_scores[i]);
    scores += "\n";
  }
  write_artifact(opts, kScoresFile, scores);
}

void cmd_project(const RunConfig& cfg, const Options& opts) {
  const auto ds = data::load(require(opts, kDatasetFile));
  const auto z = read_embeddings(require(opts, kEmbeddingsFile), ds);
  auto rows = ds.val_indices();
  if (cfg.tsne_subsample != 0 && rows.size() > cfg.tsne_subsample) {
    num::Rng rng(cfg.seed_for("tsne.subsample"));
    std::vector<std::size_t> kept;
    for (std::size_t k : rng.sample_without_replacement(rows.size(), cfg.tsne_subsample)) {
      kept.push_back(rows[k]);
    }
    std::sort(kept.begin(), kept.end());
    rows = std::move(kept);
  }
  const auto y = truth_of(ds, rows);
  const auto result = eval::tsne(gather_rows(z, rows), cfg.tsne_config());
  char buf[120];
  std::snprintf(buf, sizeof buf, "project: %zu points, KL %.5f -> %.5f", rows.size(),
                result.kl_initial, result.kl_final);
  progress(opts, buf);

  std::string csv = "session_id,x,y,ground_truth\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv += ds.samples[rows[i]].session_id + "," + io::format_double(result.coords(i, 0)) + "," +
           io::format_double(result.coords(i, 1)) + "," + std::to_string(y[i]) + "\n";
  }
  write_artifact(opts, kProjectionFile, csv);
  write_artifact(opts, kProjectionSvgFile,
                 eval::scatter_svg(result.coords, y, "t-SNE of validation embeddings"));
}

void cmd_report(const RunConfig&, const Options& opts) {
  const auto metrics_path = require(opts, kMetricsFile);
  const auto scores_path = require(opts, kScoresFile);
  nlohmann::json metrics;
  try {
    metrics = nlohmann::json::parse(io::read_text(metrics_path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metrics.json: ") + e.what(), 1);
  }

  std::string table = "classifier,accuracy,precision,recall,f1,auc,tp,fp,fn,tn\n";
  for (const auto& r : metrics) {
    const auto& a = r.at("aggregate");
    table += r.at("classifier").get<std::string>();
    for (const char* key : {"accuracy", "precision", "recall", "f1", "auc"}) {
      table += "," + io::format_double(a.at(key).get<double>());
    }
    for (const char* key : {"tp", "fp", "fn", "tn"}) {
      table += "," + std::to_string(a.at(key).get<std::size_t>());
    }
    table += "\n";
  }
  write_artifact(opts, kReportFile, table);

  const std::string text = io::read_text(scores_path);
  const auto lines = lines_of(text);
  if (lines.empty()) throw ParseError("empty scores file", 1);
  const auto header = split_csv_line(lines[0]);
  if (header.size() < 3 || header[0] != "session_id" || header[1] != "ground_truth") {
    throw ParseError("scores header must be session_id,ground_truth,<classifier>...", 1);
  }
  std::vector<int> y;
  std::vector<std::vector<double>> columns(header.size() - 2);
  for (std::size_t l = 1; l < lines.size(); ++l) {
    const auto cells = split_csv_line(lines[l]);
    if (cells.size() != header.size()) throw ParseError("wrong number of columns", l + 1);
    y.push_back(static_cast<int>(parse_cell(cells[1], l + 1)));
    for (std::size_t c = 0; c < columns.size(); ++c) {
      columns[c].push_back(parse_cell(cells[c + 2], l + 1));
    }
  }
  std::vector<eval::RocSeries> series;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    series.push_back({header[c + 2], eval::roc_curve(y, columns[c]), eval::roc_auc(y, columns[c])});
  }
  write_artifact(opts, kRocSvgFile,
                 eval::roc_svg(series, "ROC, out-of-fold scores on validation embeddings"));
}

}  // namespace

void run_command(std::string_view command, const RunConfig& cfg, const Options& opts) {
  cfg.validate();
  fs::create_directories(opts.out);
  io::write_file_atomic(opts.out / kConfigFile, cfg.canonical());
  if (command == "generate") {
    cmd_generate(cfg, opts);
  } else if (command == "train") {
    cmd_train(cfg, opts);
  } else if (command == "embed") {
    cmd_embed(cfg, opts);
  } else if (command == "classify") {
    cmd_classify(cfg, opts);
  } else if (command == "project") {
    cmd_project(cfg, opts);
  } else if (command == "report") {
    cmd_report(cfg, opts);
  } else if (command == "pipeline") {
    cmd_generate(cfg, opts);
    cmd_train(cfg, opts);
    cmd_embed(cfg, opts);
    cmd_classify(cfg, opts);
    cmd_project(cfg, opts);
    cmd_report(cfg, opts);
  } else {
    throw ConfigError("unknown command '" + std::string(command) + "'");
  }
  write_manifest(cfg, opts, command);
  announce(opts.out / kManifestFile);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingInputError*>(&e)) return 2;
  if (dynamic_cast<const ConfigError*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  return 1;
}

std::string error_line(const std::exception& e) {
  std::string kind = "internal";
  std::string path;
  if (const auto* err = dynamic_cast<const Error*>(&e)) kind = err->kind();
  if (const auto* missing = dynamic_cast<const MissingInputError*>(&e)) path = missing->path();
  std::string msg;
  for (char c : std::string(e.what())) {
    if (c == '\n' || c == '\r') {
      msg += ' ';
    } else {
      if (c == '"' || c == '\\') msg += '\\';
      msg += c;
    }
  }
  std::string out = "ucf: error kind=" + kind;
  if (!path.empty()) out += " path=" + path;
  return out + " message=\"" + msg + "\"";
}

int main_entry(int argc, char** argv) {
  CLI::App app{"Contrastive PU learning pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  bool quiet = false;

  const std::vector<std::pair<const char*, const char*>> commands{
      {"generate", "write the synthetic dataset CSV"},
      {"train", "run both training stages; write checkpoints and the training log"},
      {"embed", "write the embedding CSV from the Stage-2 checkpoint"},
      {"classify", "5-fold CV of the selected classifiers on validation embeddings"},
      {"project", "t-SNE projection CSV and SVG of validation embeddings"},
      {"report", "comparison table CSV and ROC SVG"},
      {"pipeline", "all of the above in order"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "flat key = value config file");
    sub->add_option("--set", overrides, "override a config key (key=value)");
    sub->add_option("--out", out, "artifact directory");
    sub->add_option("--seed", seed, "shorthand for --set root.seed=N");
    sub->add_flag("--quiet", quiet, "suppress progress lines");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "ucf: error kind=usage message=\"" << e.what() << "\"\n";
    return 3;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (seed) cfg.seed = *seed;
    run_command(app.get_subcommands().front()->get_name(), cfg, Options{out, quiet});
    return 0;
  } catch (const std::exception& e) {
    std::cerr << error_line(e) << "\n";
    return exit_code_for(e);
  }
}

}  // namespace ucf::cli
