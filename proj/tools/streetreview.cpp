// streetreview: command-line driver for the street-perception pipeline.
//
//   synth -> ingest -> features -> aggregate-ratings -> split -> train -> eval
//   -> perm-importance / correlate / infer -> heatmap, plus topics, stats and
//   serve.
//
// Every command writes under --run-dir and records its inputs (with content
// hashes), parameters and seed in <run-dir>/run.json. Failures print one JSON
// line {"error": code, "message": ...} on stderr and exit nonzero.

#include <unistd.h>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "streetreview/streetreview.hpp"

namespace fs = std::filesystem;
using namespace streetreview;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  fs::path run_dir = "run";
};

Globals g;

bool use_color() { return std::getenv("NO_COLOR") == nullptr && ::isatty(2); }

void note(const std::string& msg) {
  if (use_color())
    std::cerr << "\033[32m" << "ok" << "\033[0m " << msg << "\n";
  else
    std::cerr << "ok " << msg << "\n";
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path out_path(const std::string& name) { return g.run_dir / name; }

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw invalid_argument("missing required input: " + what);
  if (!fs::exists(p)) throw io_error(what + " not found: " + p.string());
}

// Records one command invocation in run.json.
class RunRecord {
 public:
  explicit RunRecord(std::string command) : command_(std::move(command)) {}

  void input(const std::string& key, const fs::path& p) {
    inputs_[key] = {{"path", fs::absolute(p).lexically_normal().string()},
                    {"fnv1a64", fs::is_regular_file(p) ? hex64(fnv1a64(read_file(p))) : ""}};
  }
  void param(const std::string& key, json v) { params_[key] = std::move(v); }
  void output(const fs::path& p) { outputs_.push_back(p.filename().string()); }

  void commit() const {
    const auto path = out_path("run.json");
    json doc = json::object();
    if (fs::exists(path)) doc = json::parse(read_file(path));
    doc["commands"][command_] = {{"inputs", inputs_},
                                 {"params", params_},
                                 {"seed", g.seed},
                                 {"jobs", g.jobs},
                                 {"outputs", outputs_}};
    write_file_atomic(path, doc.dump(2) + "\n");
  }

 private:
  std::string command_;
  json inputs_ = json::object();
  json params_ = json::object();
  json outputs_ = json::array();
};

void write_json(RunRecord& rec, const std::string& name, const json& j) {
  const auto p = out_path(name);
  write_file_atomic(p, j.dump(2) + "\n");
  rec.output(p);
}

void write_text(RunRecord& rec, const std::string& name, const std::string& s) {
  const auto p = out_path(name);
  write_file_atomic(p, s);
  rec.output(p);
}

json load_json(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::exception& e) {
    throw parse_error(p.string() + ": " + e.what());
  }
}

template <typename T>
std::vector<T> parse_list(const std::string& text, std::size_t n, const std::string& what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<T>(std::stod(item)));
    } catch (const std::exception&) {
      throw invalid_argument(what + ": not a number: '" + item + "'");
    }
  }
  if (out.size() != n)
    throw invalid_argument(what + ": expected " + std::to_string(n) + " comma-separated values");
  return out;
}

// ---------------------------------------------------------------------------
// Shared loaders

struct TrainingInputs {
  fs::path catalog, features, targets, split;
};

void add_training_inputs(CLI::App* cmd, TrainingInputs& in) {
  cmd->add_option("--catalog", in.catalog, "Catalog written by ingest")->default_str("<run>/catalog.jsonl");
  cmd->add_option("--features", in.features, "Feature store")->default_str("<run>/features.srfs");
  cmd->add_option("--targets", in.targets, "Point targets")->default_str("<run>/targets.jsonl");
  cmd->add_option("--split", in.split, "Split assignment")->default_str("<run>/split.json");
}

void default_inputs(TrainingInputs& in) {
  if (in.catalog.empty()) in.catalog = out_path("catalog.jsonl");
  if (in.features.empty()) in.features = out_path("features.srfs");
  if (in.targets.empty()) in.targets = out_path("targets.jsonl");
  if (in.split.empty()) in.split = out_path("split.json");
}

struct LoadedSets {
  std::map<dataset::Split, std::vector<model::Example>> by_split;
  std::size_t dropped = 0;  // feature sequences with no target
};

LoadedSets load_sets(const TrainingInputs& in, RunRecord& rec) {
  for (auto [p, what] : {std::pair{in.catalog, "catalog"}, {in.features, "features"},
                         {in.targets, "targets"}, {in.split, "split"}}) {
    require_file(p, what);
    rec.input(what, p);
  }
  const auto catalog = dataset::load_manifest(in.catalog);
  const auto seqs = segmentation::decode_feature_store(read_file(in.features), in.features.string());
  const auto targets = ratings::parse_targets(read_file(in.targets), in.targets.string());
  const auto split = dataset::split_from_json(load_json(in.split));
  const auto frame_targets = ratings::propagate_to_frames(targets, catalog);

  LoadedSets out;
  for (const auto& s : seqs) {
    auto it = frame_targets.find(s.frame_id);
    const auto* f = catalog.find_frame(s.frame_id);
    if (it == frame_targets.end() || !f) {
      ++out.dropped;
      continue;
    }
    auto sp = split.by_point.find(f->point_id);
    if (sp == split.by_point.end())
      throw invalid_argument("split has no entry for point " + f->point_id);
    model::Example e{s, {}, model::full_mask()};
    for (std::size_t i = 0; i < model::kOutputDim; ++i) {
      e.target[i] = it->second.values[i];
      if (std::isnan(e.target[i])) e.mask[i] = 0;
    }
    out.by_split[sp->second].push_back(std::move(e));
  }
  return out;
}

std::vector<model::Example> select_set(LoadedSets& sets, const std::string& which) {
  if (which == "all") {
    std::vector<model::Example> all;
    for (auto s : {dataset::Split::train, dataset::Split::val, dataset::Split::test})
      for (auto& e : sets.by_split[s]) all.push_back(e);
    return all;
  }
  return sets.by_split[dataset::split_from_string(which)];
}

// ---------------------------------------------------------------------------
// synth

void setup_synth(CLI::App& app) {
  auto* cmd = app.add_subcommand("synth", "Write the synthetic study fixture");
  static fs::path dir;
  static synthetic::StudyOptions opt;
  cmd->add_option("--dir", dir, "Output directory")->required();
  cmd->add_option("--streets", opt.streets, "Streets (1..6)")->capture_default_str();
  cmd->add_option("--frames-per-point", opt.frames_per_point, "Frames per vantage point")->capture_default_str();
  cmd->add_option("--image-size", opt.image_size, "Square image edge in pixels")->capture_default_str();
  cmd->callback([] {
    opt.seed = g.seed;
    const auto p = synthetic::write_study_fixture(dir, opt);
    std::cout << json{{"manifest", p.manifest.string()},
                      {"ratings", p.ratings.string()},
                      {"roster", p.roster.string()},
                      {"segments", p.segments.string()},
                      {"interviews", p.interviews.string()},
                      {"statements", p.statements.string()},
                      {"street_attributes", p.street_attributes.string()}}
                     .dump()
              << "\n";
    note("fixture written to " + dir.string());
  });
}

// ---------------------------------------------------------------------------
// ingest

void setup_ingest(CLI::App& app) {
  auto* cmd = app.add_subcommand("ingest", "Validate a manifest and write the run catalog");
  static fs::path manifest, attributes;
  static bool allow_errors = false;
  cmd->add_option("--manifest", manifest, "Frame manifest (JSONL)")->required();
  cmd->add_option("--attributes", attributes, "Street attributes (JSON)");
  cmd->add_flag("--allow-errors", allow_errors, "Write the catalog even with validation errors");
  cmd->callback([] {
    RunRecord rec("ingest");
    require_file(manifest, "manifest");
    rec.input("manifest", manifest);
    auto catalog = dataset::load_manifest(manifest);
    if (!attributes.empty()) {
      require_file(attributes, "attributes");
      rec.input("attributes", attributes);
      catalog = dataset::with_street_attributes(catalog, load_json(attributes));
    }
    // Paths in the run catalog are absolute so later commands need not know
    // where the manifest lived.
    const auto base = fs::absolute(manifest).parent_path();
    std::string text;
    for (const auto& f : catalog.frames()) {
      const auto* p = catalog.find_point(f.point_id);
      auto abs = [&](const std::string& s) {
        const fs::path q(s);
        return (q.is_absolute() ? q : base / q).lexically_normal().string();
      };
      json j = {{"frame_id", f.frame_id},
                {"point_id", f.point_id},
                {"street_id", p->street_id},
                {"position", dataset::to_string(p->position)},
                {"angle_index", f.angle_index},
                {"lat", p->lat},
                {"lon", p->lon},
                {"image_path", abs(f.image_path)},
                {"confmap_path", f.confmap_path ? json(abs(*f.confmap_path)) : json(nullptr)}};
      text += j.dump() + "\n";
    }
    const auto report = dataset::validate_catalog(catalog);
    write_json(rec, "validation.json", dataset::to_json(report));
    if (report.errors() && !allow_errors)
      throw invalid_argument("catalog has " + std::to_string(report.errors()) +
                             " validation error(s); see " + out_path("validation.json").string());
    write_text(rec, "catalog.jsonl", text);
    if (!attributes.empty())
      write_json(rec, "street_attributes.json", dataset::street_attributes_json(catalog));
    rec.commit();
    std::cout << json{{"streets", catalog.streets().size()},
                      {"points", catalog.points().size()},
                      {"frames", catalog.frames().size()},
                      {"findings", report.findings.size()},
                      {"errors", report.errors()}}
                     .dump()
              << "\n";
    note("catalog written");
  });
}

// ---------------------------------------------------------------------------
// features

void setup_features(CLI::App& app) {
  auto* cmd = app.add_subcommand("features", "Extract per-pixel feature sequences");
  static fs::path catalog_path;
  static std::size_t sample_size = 1024;
  cmd->add_option("--catalog", catalog_path, "Catalog")->default_str("<run>/catalog.jsonl");
  cmd->add_option("--sample-size", sample_size, "Pixels sampled per image")->capture_default_str();
  cmd->callback([] {
    RunRecord rec("features");
    if (catalog_path.empty()) catalog_path = out_path("catalog.jsonl");
    require_file(catalog_path, "catalog");
    rec.input("catalog", catalog_path);
    rec.param("sample_size", sample_size);
    const auto catalog = dataset::load_manifest(catalog_path);
    const auto base = fs::absolute(catalog_path).parent_path();
    const auto& frames = catalog.frames();
    std::vector<segmentation::FeatureSequence> seqs(frames.size());
    std::vector<char> mocked(frames.size(), 0);
    std::vector<std::string> errors(frames.size());

    auto work = [&](std::size_t t, std::size_t stride) {
      for (std::size_t i = t; i < frames.size(); i += stride) {
        const auto& f = frames[i];
        try {
          auto resolve = [&](const std::string& s) {
            const fs::path q(s);
            return q.is_absolute() ? q : base / q;
          };
          const auto seed = derive_seed(g.seed, f.frame_id);
          const auto img = segmentation::load_image(resolve(f.image_path));
          segmentation::ConfidenceMap cm;
          if (f.confmap_path && fs::exists(resolve(*f.confmap_path))) {
            cm = segmentation::load_confidence_map(resolve(*f.confmap_path));
          } else {
            cm = segmentation::mock_segment(img, seed);
            mocked[i] = 1;
          }
          seqs[i] = segmentation::extract_features(img, cm, sample_size, seed, f.frame_id);
        } catch (const std::exception& e) {
          errors[i] = f.frame_id + ": " + e.what();
        }
      }
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(g.jobs, frames.size()));
    if (jobs == 1) {
      work(0, 1);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(work, t, jobs);
    }
    for (const auto& e : errors)
      if (!e.empty()) throw format_error(e);

    const auto path = out_path("features.srfs");
    write_file_atomic(path, segmentation::encode_feature_store(seqs));
    rec.output(path);
    std::size_t n_mocked = 0;
    json mocked_ids = json::array();
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (mocked[i]) {
        ++n_mocked;
        mocked_ids.push_back(frames[i].frame_id);
      }
    rec.param("mock_segmented", mocked_ids);
    rec.commit();
    std::cout << json{{"frames", seqs.size()}, {"mock_segmented", n_mocked}}.dump() << "\n";
    note("features written");
  });
}

// ---------------------------------------------------------------------------
// aggregate-ratings

void setup_aggregate(CLI::App& app) {
  auto* cmd = app.add_subcommand("aggregate-ratings", "Average ratings into 28-score point targets");
  static fs::path ratings_path, roster_path;
  cmd->add_option("--ratings", ratings_path, "Rating records (JSONL)")->required();
  cmd->add_option("--roster", roster_path, "Participant roster (JSON)")->required();
  cmd->callback([] {
    RunRecord rec("aggregate-ratings");
    require_file(ratings_path, "ratings");
    require_file(roster_path, "roster");
    rec.input("ratings", ratings_path);
    rec.input("roster", roster_path);
    const auto records = ratings::parse_ratings(read_file(ratings_path), ratings_path.string());
    const auto roster = ratings::parse_roster(load_json(roster_path));
    auto scores = ratings::aggregate_all(records, roster);
    const auto log = ratings::impute_missing(scores);
    std::string imputed;
    std::size_t unresolved = 0;
    for (const auto& i : log) {
      unresolved += std::isnan(i.value);
      imputed += json{{"point_id", i.point_id},
                      {"output", ratings::output_label(i.output)},
                      {"value", std::isnan(i.value) ? json(nullptr) : json(i.value)}}
                     .dump() +
                 "\n";
    }
    write_text(rec, "targets.jsonl", ratings::format_targets(scores));
    write_text(rec, "imputations.jsonl", imputed);
    rec.commit();
    std::cout << json{{"points", scores.size()},
                      {"records", records.size()},
                      {"imputed", log.size() - unresolved},
                      {"masked", unresolved}}
                     .dump()
              << "\n";
    note("targets written");
  });
}

// ---------------------------------------------------------------------------
// split

void setup_split(CLI::App& app) {
  auto* cmd = app.add_subcommand("split", "Stratified point-level train/val/test split");
  static fs::path catalog_path;
  static std::string ratios = "0.7,0.15,0.15";
  cmd->add_option("--catalog", catalog_path, "Catalog")->default_str("<run>/catalog.jsonl");
  cmd->add_option("--ratios", ratios, "train,val,test")->capture_default_str();
  cmd->callback([] {
    RunRecord rec("split");
    if (catalog_path.empty()) catalog_path = out_path("catalog.jsonl");
    require_file(catalog_path, "catalog");
    rec.input("catalog", catalog_path);
    const auto r = parse_list<double>(ratios, 3, "--ratios");
    rec.param("ratios", r);
    const auto catalog = dataset::load_manifest(catalog_path);
    const auto a = dataset::stratified_split(catalog, {r[0], r[1], r[2]}, g.seed);
    write_json(rec, "split.json", dataset::to_json(a));
    rec.commit();
    const auto c = a.counts();
    std::cout << json{{"train", c[0]}, {"val", c[1]}, {"test", c[2]}}.dump() << "\n";
    note("split written");
  });
}

// ---------------------------------------------------------------------------
// train

void setup_train(CLI::App& app) {
  auto* cmd = app.add_subcommand("train", "Train the perception model");
  static TrainingInputs in;
  static model::ModelConfig mc;
  static model::TrainConfig tc;
  add_training_inputs(cmd, in);
  cmd->add_option("--d-model", mc.d_model, "Embedding width")->capture_default_str();
  cmd->add_option("--heads", mc.n_heads, "Attention heads")->capture_default_str();
  cmd->add_option("--fc-layers", mc.n_fc_layers, "Fully connected layers")->capture_default_str();
  cmd->add_option("--epochs", tc.max_epochs, "Maximum epochs")->capture_default_str();
  cmd->add_option("--patience", tc.patience, "Early-stopping patience")->capture_default_str();
  cmd->add_option("--lr", tc.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--batch-size", tc.batch_size, "Mini-batch size")->capture_default_str();
  static std::string keep = "best";
  cmd->add_option("--keep", keep, "Checkpoint the best-validation epoch or the last one")
      ->check(CLI::IsMember({"best", "last"}))
      ->capture_default_str();
  cmd->callback([] {
    tc.restore_best = keep == "best";
    RunRecord rec("train");
    default_inputs(in);
    auto sets = load_sets(in, rec);
    const auto& tr = sets.by_split[dataset::Split::train];
    const auto& va = sets.by_split[dataset::Split::val];
    if (tr.empty() || va.empty())
      throw invalid_argument("train: no labeled frames in the train or val split");
    mc.seed = derive_seed(g.seed, "model");
    tc.seed = derive_seed(g.seed, "train");
    tc.jobs = g.jobs;
    rec.param("model", model::to_json(mc));
    rec.param("train", model::to_json(tc));
    const auto result = model::train(tr, va, mc, tc);
    const json extra = {{"train", model::to_json(tc)},
                        {"best_epoch", result.history.best_epoch},
                        {"epochs_run", result.history.epochs.size()}};
    const auto ckpt = out_path("model.ckpt");
    model::save_checkpoint(result.params, ckpt, extra);
    rec.output(ckpt);
    write_text(rec, "history.csv", model::history_csv(result.history));
    const auto& best = result.history.epochs[result.history.best_epoch - 1];
    const json summary = {{"parameters", result.params.size()},
                          {"train_frames", tr.size()},
                          {"val_frames", va.size()},
                          {"epochs_run", result.history.epochs.size()},
                          {"best_epoch", result.history.best_epoch},
                          {"stopped_early", result.history.stopped_early},
                          {"best_val_mse", best.val_mse},
                          {"best_val_r2", best.val_r2 ? json(*best.val_r2) : json(nullptr)}};
    write_json(rec, "train_report.json", summary);
    rec.commit();
    std::cout << summary.dump() << "\n";
    note("checkpoint written");
  });
}

// ---------------------------------------------------------------------------
// eval / perm-importance

fs::path default_checkpoint(const fs::path& p) { return p.empty() ? out_path("model.ckpt") : p; }

void setup_eval(CLI::App& app) {
  auto* cmd = app.add_subcommand("eval", "R^2 of a checkpoint on a split");
  static TrainingInputs in;
  static fs::path checkpoint;
  static std::string which = "test";
  add_training_inputs(cmd, in);
  cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->default_str("<run>/model.ckpt");
  cmd->add_option("--set", which, "train|val|test|all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  cmd->callback([] {
    RunRecord rec("eval_" + which);
    default_inputs(in);
    checkpoint = default_checkpoint(checkpoint);
    require_file(checkpoint, "checkpoint");
    rec.input("checkpoint", checkpoint);
    rec.param("set", which);
    auto sets = load_sets(in, rec);
    const auto set = select_set(sets, which);
    const auto ck = model::load_checkpoint(checkpoint);
    const auto m = model::evaluate_set(ck.params, set, g.jobs);
    std::vector<model::Output> targets;
    std::vector<model::Mask> masks;
    for (const auto& e : set) {
      targets.push_back(e.target);
      masks.push_back(e.mask);
    }
    const auto report = evaluation::r_squared(m.preds, targets, masks);
    json j = evaluation::to_json(report);
    j["set"] = which;
    j["mse"] = m.mse;
    write_json(rec, "eval_" + which + ".json", j);
    write_text(rec, "eval_" + which + ".csv", evaluation::to_csv(report));
    rec.commit();
    std::cout << json{{"set", which},
                      {"samples", report.samples},
                      {"overall_r2", evaluation::optional_json(report.overall)},
                      {"mean_of_outputs_r2", evaluation::optional_json(report.mean_of_outputs)},
                      {"mse", m.mse}}
                     .dump()
              << "\n";
  });
}

void setup_perm(CLI::App& app) {
  auto* cmd = app.add_subcommand("perm-importance", "Permutation feature importance");
  static TrainingInputs in;
  static fs::path checkpoint;
  static std::string which = "test";
  static std::size_t shuffles = 100;
  add_training_inputs(cmd, in);
  cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->default_str("<run>/model.ckpt");
  cmd->add_option("--set", which, "train|val|test|all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}))
      ->capture_default_str();
  cmd->add_option("--shuffles", shuffles, "Shuffles per feature")->capture_default_str();
  cmd->callback([] {
    RunRecord rec("perm-importance");
    default_inputs(in);
    checkpoint = default_checkpoint(checkpoint);
    require_file(checkpoint, "checkpoint");
    rec.input("checkpoint", checkpoint);
    rec.param("set", which);
    rec.param("shuffles", shuffles);
    auto sets = load_sets(in, rec);
    const auto set = select_set(sets, which);
    const auto ck = model::load_checkpoint(checkpoint);
    const auto r = evaluation::permutation_importance(ck.params, set, shuffles, g.seed, g.jobs);
    write_json(rec, "perm_importance.json", evaluation::to_json(r));
    write_text(rec, "perm_importance.csv", evaluation::to_csv(r));
    rec.commit();
    std::cout << evaluation::to_json(r).dump() << "\n";
  });
}

// ---------------------------------------------------------------------------
// correlate

void setup_correlate(CLI::App& app) {
  auto* cmd = app.add_subcommand("correlate", "Pearson correlations between criteria");
  static fs::path targets;
  static std::string group;
  cmd->add_option("--targets", targets, "Point targets")->default_str("<run>/targets.jsonl");
  cmd->add_option("--group", group, "Demographic group (default: collective scores)");
  cmd->callback([] {
    RunRecord rec("correlate");
    if (targets.empty()) targets = out_path("targets.jsonl");
    require_file(targets, "targets");
    rec.input("targets", targets);
    std::optional<ratings::Group> grp;
    if (!group.empty()) grp = ratings::group_from_string(group);
    rec.param("group", group.empty() ? "collective" : group);
    const auto scores = ratings::parse_targets(read_file(targets), targets.string());
    const auto m = evaluation::correlation_matrix(evaluation::criterion_columns(scores, grp));
    const std::string stem = "correlation_" + (group.empty() ? std::string("collective") : group);
    write_json(rec, stem + ".json", evaluation::to_json(m));
    write_text(rec, stem + ".csv", evaluation::to_csv(m));
    rec.commit();
    std::cout << evaluation::to_json(m).dump() << "\n";
  });
}

// ---------------------------------------------------------------------------
// infer

void setup_infer(CLI::App& app) {
  auto* cmd = app.add_subcommand("infer", "Predict 28 scores per frame");
  static fs::path checkpoint, features;
  cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->default_str("<run>/model.ckpt");
  cmd->add_option("--features", features, "Feature store")->default_str("<run>/features.srfs");
  cmd->callback([] {
    RunRecord rec("infer");
    checkpoint = default_checkpoint(checkpoint);
    if (features.empty()) features = out_path("features.srfs");
    require_file(checkpoint, "checkpoint");
    require_file(features, "features");
    rec.input("checkpoint", checkpoint);
    rec.input("features", features);
    const auto ck = model::load_checkpoint(checkpoint);
    const auto seqs = segmentation::decode_feature_store(read_file(features), features.string());
    const auto preds = model::predict_batch(ck.params, seqs, g.jobs);
    std::string out;
    std::size_t clamped = 0;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const auto n = static_cast<std::size_t>(
          std::count(preds[i].clamped.begin(), preds[i].clamped.end(), true));
      clamped += n;
      out += json{{"frame_id", seqs[i].frame_id}, {"scores", preds[i].reported}, {"clamped", n}}.dump() +
             "\n";
    }
    write_text(rec, "predictions.jsonl", out);
    rec.commit();
    std::cout << json{{"frames", seqs.size()}, {"clamped_values", clamped}}.dump() << "\n";
  });
}

std::map<std::string, model::Output> load_predictions(const fs::path& p) {
  std::map<std::string, model::Output> out;
  for_each_json_line(read_file(p), p.string(), [&](std::size_t line, const json& j) {
    const auto& s = j.at("scores");
    if (s.size() != model::kOutputDim)
      throw parse_error(p.string() + ":" + std::to_string(line) + ": expected 28 scores");
    model::Output o;
    for (std::size_t i = 0; i < model::kOutputDim; ++i) o[i] = s[i].get<double>();
    out[j.at("frame_id").get<std::string>()] = o;
  });
  return out;
}

// ---------------------------------------------------------------------------
// heatmap

void setup_heatmap(CLI::App& app) {
  auto* cmd = app.add_subcommand("heatmap", "Aggregate predictions into a GeoJSON layer");
  static fs::path predictions, catalog_path, segments;
  static std::string criterion = "inclusivity", group, blend;
  static double grid = 0.0, radius = geospatial::kDefaultRadiusM;
  cmd->add_option("--predictions", predictions, "Predictions")->default_str("<run>/predictions.jsonl");
  cmd->add_option("--catalog", catalog_path, "Catalog")->default_str("<run>/catalog.jsonl");
  cmd->add_option("--criterion", criterion, "Criterion")->capture_default_str();
  auto* grp = cmd->add_option("--group", group, "Demographic group (default: collective)");
  cmd->add_option("--blend", blend, "Six comma-separated group weights summing to 1")->excludes(grp);
  auto* seg = cmd->add_option("--segments", segments, "Street segment map (JSONL)");
  cmd->add_option("--grid", grid, "Grid cell size in degrees")->excludes(seg);
  cmd->add_option("--radius", radius, "Segment snapping radius in meters")->capture_default_str();
  cmd->callback([] {
    RunRecord rec("heatmap");
    if (predictions.empty()) predictions = out_path("predictions.jsonl");
    if (catalog_path.empty()) catalog_path = out_path("catalog.jsonl");
    require_file(predictions, "predictions");
    require_file(catalog_path, "catalog");
    rec.input("predictions", predictions);
    rec.input("catalog", catalog_path);
    if (segments.empty() && !(grid > 0)) throw invalid_argument("heatmap: give --segments or --grid > 0");

    geospatial::ChannelSelector ch;
    ch.criterion = ratings::criterion_from_string(criterion);
    if (!group.empty()) ch.group = ratings::group_from_string(group);
    if (!blend.empty()) {
      const auto w = parse_list<double>(blend, ratings::kNumGroups, "--blend");
      std::array<double, ratings::kNumGroups> a;
      std::copy(w.begin(), w.end(), a.begin());
      ch.blend = a;
    }
    rec.param("criterion", criterion);
    rec.param("group", ch.group_label());

    const auto catalog = dataset::load_manifest(catalog_path);
    const auto preds = load_predictions(predictions);
    std::vector<geospatial::GeoFrame> frames;
    for (const auto& [id, _] : preds) {
      const auto* f = catalog.find_frame(id);
      if (!f) throw invalid_argument("prediction for unknown frame " + id);
      const auto* p = catalog.find_point(f->point_id);
      frames.push_back({id, {p->lat, p->lon}});
    }
    geospatial::BucketGeometry geometry;
    geospatial::Assignment assignment;
    if (!segments.empty()) {
      require_file(segments, "segments");
      rec.input("segments", segments);
      rec.param("radius_m", radius);
      auto segs = geospatial::parse_segments(read_file(segments), segments.string());
      assignment = geospatial::assign_frames(frames, segs, radius);
      geometry = std::move(segs);
    } else {
      geospatial::GridSpec spec{grid, {}};
      rec.param("grid_deg", grid);
      assignment = geospatial::assign_frames(frames, spec);
      geometry = spec;
    }
    const auto layer = geospatial::aggregate_layer(preds, assignment, ch);
    const auto path = geospatial::write_heatmap(layer, geometry, g.run_dir);
    rec.output(path);
    rec.commit();
    std::cout << json{{"file", path.filename().string()},
                      {"buckets", layer.cells.size()},
                      {"assigned", preds.size() - layer.unassigned},
                      {"unassigned", layer.unassigned}}
                     .dump()
              << "\n";
  });
}

// ---------------------------------------------------------------------------
// topics

void setup_topics(CLI::App& app) {
  auto* cmd = app.add_subcommand("topics", "LDA over interview transcripts");
  static fs::path interviews, statements;
  static thematics::LdaConfig cfg;
  static std::size_t n_top = 10, min_len = 3;
  static double threshold = 0.2;
  cmd->add_option("--interviews", interviews, "Documents (JSONL with doc_id, text)")->required();
  cmd->add_option("--statements", statements, "Coded statements (JSONL with group, theme)");
  cmd->add_option("--topics", cfg.topics, "Number of topics")->capture_default_str();
  cmd->add_option("--iterations", cfg.iterations, "Gibbs sweeps")->capture_default_str();
  cmd->add_option("--burn-in", cfg.burn_in, "Sweeps discarded before averaging")->capture_default_str();
  cmd->add_option("--alpha", cfg.alpha, "Document-topic prior (default 50/K)");
  cmd->add_option("--beta", cfg.beta, "Topic-word prior")->capture_default_str();
  cmd->add_option("--top-words", n_top, "Words listed per topic")->capture_default_str();
  cmd->add_option("--min-token-length", min_len, "Shortest token kept")->capture_default_str();
  cmd->add_option("--cooccurrence-threshold", threshold, "Topic presence threshold on theta")
      ->capture_default_str();
  cmd->callback([] {
    RunRecord rec("topics");
    require_file(interviews, "interviews");
    rec.input("interviews", interviews);
    std::vector<thematics::RawDocument> docs;
    for_each_json_line(read_file(interviews), interviews.string(), [&](std::size_t, const json& j) {
      docs.push_back({j.at("doc_id").get<std::string>(), j.at("text").get<std::string>()});
    });
    const auto tok = thematics::tokenize(docs, thematics::default_stopwords(), min_len);
    cfg.seed = g.seed;
    rec.param("topics", cfg.topics);
    rec.param("iterations", cfg.iterations);
    rec.param("burn_in", cfg.burn_in);
    rec.param("alpha", cfg.resolved_alpha());
    rec.param("beta", cfg.beta);
    const auto m = thematics::fit_lda(tok.corpus, cfg);
    json tj = thematics::to_json(m, tok.corpus, n_top);
    tj["dropped_documents"] = tok.dropped;
    write_json(rec, "topics.json", tj);

    std::vector<std::string> labels;
    const auto words = thematics::top_words(m, tok.corpus, 3);
    for (std::size_t k = 0; k < words.size(); ++k) {
      std::string l = "topic_" + std::to_string(k) + ":";
      for (const auto& w : words[k]) l += " " + w;
      labels.push_back(l);
    }
    write_json(rec, "cooccurrence.json", thematics::to_json(thematics::cooccurrence_graph(m, threshold, labels)));

    json out = {{"documents", tok.corpus.documents.size()},
                {"vocabulary", tok.corpus.vocabulary.size()},
                {"top_words", thematics::top_words(m, tok.corpus, n_top)}};
    if (!statements.empty()) {
      require_file(statements, "statements");
      rec.input("statements", statements);
      std::vector<thematics::CodedStatement> st;
      for_each_json_line(read_file(statements), statements.string(), [&](std::size_t, const json& j) {
        st.push_back({j.at("group").get<std::string>(), j.at("theme").get<std::string>()});
      });
      const auto table = thematics::theme_frequency_table(st);
      write_json(rec, "theme_table.json", thematics::to_json(table));
      out["theme_table"] = thematics::to_json(table);
    }
    rec.commit();
    std::cout << out.dump() << "\n";
  });
}

// ---------------------------------------------------------------------------
// stats

void setup_stats(CLI::App& app) {
  auto* cmd = app.add_subcommand("stats", "Descriptive statistics over ratings and rankings");
  static fs::path ratings_path, roster_path, rankings_path;
  cmd->add_option("--ratings", ratings_path, "Rating records (JSONL)")->required();
  cmd->add_option("--roster", roster_path, "Participant roster (JSON)")->required();
  cmd->add_option("--rankings", rankings_path, "Ranking records (JSONL)");
  cmd->callback([] {
    RunRecord rec("stats");
    require_file(ratings_path, "ratings");
    require_file(roster_path, "roster");
    rec.input("ratings", ratings_path);
    rec.input("roster", roster_path);
    const auto records = ratings::parse_ratings(read_file(ratings_path), ratings_path.string());
    const auto roster = ratings::parse_roster(load_json(roster_path));

    json out = json::object();
    for (auto level : {ratings::Stage::individual, ratings::Stage::collective}) {
      json per = json::object();
      const auto s = ratings::summary_stats(records, level);
      for (auto c : ratings::kCriteria) {
        const auto& cs = s[static_cast<int>(c)];
        per[std::string(ratings::to_string(c))] = {{"n", cs.n},
                                                   {"mean", evaluation::optional_json(cs.mean)},
                                                   {"sd", evaluation::optional_json(cs.sd)}};
      }
      out["summary"][std::string(ratings::to_string(level))] = per;
    }
    json dist = json::object();
    for (const auto& [grp, d] : ratings::group_rating_distribution(records, roster))
      dist[std::string(ratings::to_string(grp))] = evaluation::to_json(d);
    out["inclusivity_by_group"] = dist;

    // Letter grades of each point's collective scores.
    json grades = json::object();
    for (const auto& [point, sv] : ratings::aggregate_all(records, roster)) {
      json row = json::object();
      for (auto c : ratings::kCriteria) {
        const double v = sv.collective(c);
        row[std::string(ratings::to_string(c))] =
            std::isnan(v) ? json(nullptr) : json(std::string(1, evaluation::to_char(evaluation::grade(v))));
      }
      grades[point] = row;
    }
    out["collective_grades"] = grades;

    if (!rankings_path.empty()) {
      require_file(rankings_path, "rankings");
      rec.input("rankings", rankings_path);
      std::vector<ratings::RankingRecord> rk;
      for_each_json_line(read_file(rankings_path), rankings_path.string(),
                         [&](std::size_t, const json& j) { rk.push_back(ratings::ranking_from_json(j)); });
      json tally = json::object();
      for (const auto& [p, t] : ratings::ranking_tally(rk))
        tally[p] = {{"most_votes", t.most_votes}, {"least_votes", t.least_votes}, {"net", t.net()}};
      out["ranking_tally"] = tally;
    }
    write_json(rec, "stats.json", out);
    rec.commit();
    std::cout << out["summary"].dump() << "\n";
  });
}

// ---------------------------------------------------------------------------
// serve

service::Service* g_service = nullptr;

extern "C" void on_signal(int) {
  if (g_service) g_service->stop();
}

void setup_serve(CLI::App& app) {
  auto* cmd = app.add_subcommand("serve", "Run the rating-collection HTTP service");
  static service::ServiceConfig cfg;
  static fs::path catalog_path;
  auto* host = cmd->add_option("--host", cfg.host, "Bind address")->capture_default_str();
  auto* port = cmd->add_option("--port", cfg.port, "Port (0 picks a free one)")->capture_default_str();
  auto* data = cmd->add_option("--data-dir", cfg.data_dir, "Session store directory")->capture_default_str();
  auto* images = cmd->add_option("--image-dir", cfg.image_dir, "Directory for relative image paths");
  cmd->add_option("--catalog", catalog_path, "Catalog")->default_str("<run>/catalog.jsonl");
  cmd->add_flag("--per-participant-order", cfg.per_participant_order, "Shuffle items per participant");
  cmd->callback([=] {
    // Defaults, then environment, then explicit flags.
    service::ServiceConfig c;
    service::apply_env_overrides(c);
    if (host->count()) c.host = cfg.host;
    if (port->count()) c.port = cfg.port;
    if (data->count()) c.data_dir = cfg.data_dir;
    if (images->count()) c.image_dir = cfg.image_dir;
    c.per_participant_order = cfg.per_participant_order;
    if (!catalog_path.empty()) c.catalog_path = catalog_path;
    if (c.catalog_path.empty()) c.catalog_path = out_path("catalog.jsonl");
    require_file(c.catalog_path, "catalog");
    service::Service svc(dataset::load_manifest(c.catalog_path), c);
    g_service = &svc;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    svc.serve([&](int bound) {
      std::cout << json{{"host", c.host}, {"port", bound}}.dump() << std::endl;
    });
    g_service = nullptr;
  });
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Street-level perception scoring pipeline"};
  app.set_config("--config", "", "TOML file with option defaults; explicit flags win");
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--run-dir", g.run_dir, "Directory for outputs and run.json")->capture_default_str();
  app.require_subcommand(1);
  app.fallthrough();

  setup_synth(app);
  setup_ingest(app);
  setup_features(app);
  setup_aggregate(app);
  setup_split(app);
  setup_train(app);
  setup_eval(app);
  setup_perm(app);
  setup_correlate(app);
  setup_infer(app);
  setup_heatmap(app);
  setup_topics(app);
  setup_stats(app);
  setup_serve(app);
  app.parse_complete_callback([] { fs::create_directories(g.run_dir); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage_error", e.what());
    return 2;
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return 1;
  } catch (const json::exception& e) {
    print_error("parse_error", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("error", e.what());
    return 1;
  }
  return 0;
}
