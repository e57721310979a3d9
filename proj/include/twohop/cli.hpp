#pragma once

// Command-line driver. Every subcommand validates its inputs before writing
// anything, then writes its reports plus manifest.json into
// <out-root>/<command>-<hash of the effective options>.
//
// Exit codes: 0 success, 1 invalid input or usage, 2 internal invariant violation.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "twohop/dataset.hpp"
#include "twohop/errors.hpp"
#include "twohop/experiments.hpp"
#include "twohop/model_zoo.hpp"
#include "twohop/report.hpp"

namespace twohop::cli {

namespace fs = std::filesystem;

struct Settings {
  // dataset source: --dataset PATH or --generate-seed N with the world knobs
  std::string dataset;
  std::string generate_seed;
  std::size_t types = 4;
  std::size_t per_type = 25;
  std::size_t entities_per_category = 0;
  std::string name_lengths = "1";
  std::size_t distractors = 3;
  std::size_t n = 0;  // 0: all instances
  // model source
  std::string model;
  std::size_t layers = 4;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff = 256;
  std::size_t max_seq = 64;
  std::string norm = "layernorm";
  // experiment
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string substitution = "entity";
  std::string target = "consistency";
  double eps_rel = 1e-3;
  double single_threshold = 0.8;
  double joint_threshold = 0.64;
  std::string cot_templates;
  // output
  std::string out_root;
  std::string out;
  std::string manifest;
};

inline std::string default_output_root() {
  const char* env = std::getenv("TWOHOP_OUTPUT_ROOT");
  return env && *env ? std::string(env) : std::string("runs");
}

// Options never echoed into the manifest: they choose where outputs go, not what they contain.
inline bool echo_excluded(const std::string& name) {
  return name == "help" || name == "config" || name == "out-root" || name == "manifest";
}

// ---------------------------------------------------------------------------
// Inputs

struct DatasetBundle {
  std::vector<TwoHopInstance> instances;
  Vocabulary vocab;
  std::optional<FactWorld> world;
  std::optional<CandidateTable> candidates;
  CotTemplates cot;
  std::optional<std::uint64_t> world_seed;
  std::vector<std::string> log;
};

inline std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), what + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

inline std::vector<double> parse_weights(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      require(used == item.size(), "");
    } catch (...) {
      throw InvalidInput("--name-lengths: expected comma-separated weights, got '" + s + "'");
    }
  }
  require(!out.empty(), "--name-lengths: empty list");
  return out;
}

inline WorldKnobs knobs_of(const Settings& s, std::uint64_t seed) {
  WorldKnobs k;
  k.types = s.types;
  k.instances_per_type = s.per_type;
  k.entities_per_category = s.entities_per_category;
  k.name_length_weights = parse_weights(s.name_lengths);
  k.distractors_per_type = s.distractors;
  k.seed = seed;
  return k;
}

template <typename J = nlohmann::json>
J read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read " + path.string());
  try {
    return J::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

inline std::vector<std::string> instance_corpus(const std::vector<TwoHopInstance>& instances,
                                                const CandidateTable* candidates, const CotTemplates& cot) {
  std::vector<std::string> corpus{","};
  for (const auto& inst : instances) {
    corpus.push_back(inst.two_hop_prompt);
    corpus.push_back(inst.one_hop_prompt);
    corpus.push_back(inst.e1);
    corpus.push_back(inst.e2);
    corpus.push_back(inst.e3);
    for (const auto& a : inst.answer_aliases) corpus.push_back(a);
  }
  if (candidates)
    for (const auto& [_, templates] : *candidates)
      for (const auto& t : templates) corpus.push_back(render_mention(t, "").text);
  for (const auto& [_, t] : cot.variants) corpus.push_back(t);
  return corpus;
}

inline DatasetBundle load_dataset(const Settings& s) {
  const bool from_path = !s.dataset.empty(), generated = !s.generate_seed.empty();
  require(from_path != generated, "exactly one dataset source is required: --dataset PATH or --generate-seed N");
  DatasetBundle b;
  if (generated) {
    const std::uint64_t seed = parse_u64(s.generate_seed, "--generate-seed");
    auto g = generate_world(knobs_of(s, seed));
    b.vocab = build_vocabulary(world_corpus(g, b.cot));
    b.instances = std::move(g.instances);
    b.world = std::move(g.world);
    b.candidates = std::move(g.candidates);
    b.world_seed = seed;
  } else {
    const fs::path path(s.dataset);
    require(fs::exists(path), "dataset not found: " + path.string());
    fs::path jsonl = path;
    if (fs::is_directory(path)) {
      jsonl = path / "instances.jsonl";
      if (fs::exists(path / "world.json")) b.world = world_from_json(read_json_file(path / "world.json"));
      if (fs::exists(path / "candidates.json"))
        b.candidates = candidate_table_from_json(read_json_file(path / "candidates.json"));
      if (fs::exists(path / "cot_templates.json"))
        b.cot = CotTemplates::from_json(read_json_file<nlohmann::ordered_json>(path / "cot_templates.json"));
    }
    auto loaded = load_twohopfact(jsonl);
    for (const auto& r : loaded.rejects) b.log.push_back("line " + std::to_string(r.line) + " rejected: " + r.reason);
    b.instances = std::move(loaded.instances);
    if (fs::is_directory(path) && fs::exists(path / "vocab.txt")) {
      b.vocab = Vocabulary::load(path / "vocab.txt");
    } else {
      b.vocab = build_vocabulary(instance_corpus(b.instances, b.candidates ? &*b.candidates : nullptr, b.cot));
    }
  }
  if (!s.cot_templates.empty()) b.cot = CotTemplates::from_json(read_json_file<nlohmann::ordered_json>(s.cot_templates));
  require(!b.instances.empty(), "dataset has no valid instances");
  return b;
}

inline std::vector<TwoHopInstance> limited(const std::vector<TwoHopInstance>& all, std::size_t n) {
  if (n == 0 || n >= all.size()) return all;
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n)};
}

struct LoadedModel {
  ModelWeights weights;
  std::optional<ConstructionReport> construction;
  std::optional<std::uint64_t> seed;
};

inline NormKind parse_norm(const std::string& s) {
  if (s == "layernorm") return NormKind::layernorm;
  if (s == "rmsnorm") return NormKind::rmsnorm;
  throw InvalidInput("unknown norm '" + s + "' (expected layernorm or rmsnorm)");
}

inline LoadedModel load_model(const Settings& s, const DatasetBundle& data) {
  require(!s.model.empty(), "--model is required: random:SEED, constructed, or a weight file");
  LoadedModel m;
  if (s.model.rfind("random:", 0) == 0) {
    m.seed = parse_u64(s.model.substr(7), "--model random:SEED");
    ModelConfig c;
    c.layers = s.layers;
    c.hidden = s.hidden;
    c.heads = s.heads;
    c.ff = s.ff;
    c.vocab = data.vocab.size();
    c.max_seq = s.max_seq;
    c.norm = parse_norm(s.norm);
    c.validate();
    m.weights = random_model(c, *m.seed);
  } else if (s.model == "constructed") {
    require(data.world.has_value(),
            "--model constructed needs a fact world: use --generate-seed or a dataset directory with world.json");
    const auto config = constructed_config(*data.world, data.vocab, std::max<std::size_t>(s.layers, 4), s.max_seq,
                                           parse_norm(s.norm));
    auto built = constructed_two_hop_model(*data.world, data.vocab, config, data.instances);
    m.weights = std::move(built.weights);
    m.construction = built.report;
  } else {
    require(fs::is_regular_file(s.model), "model weight file not found: " + s.model);
    m.weights = load_weights(s.model);
    require(m.weights.config.vocab == data.vocab.size(),
            "model vocabulary size " + std::to_string(m.weights.config.vocab) + " differs from dataset vocabulary " +
                std::to_string(data.vocab.size()));
  }
  return m;
}

inline ExperimentOptions experiment_options(const Settings& s) {
  ExperimentOptions o;
  o.seed = s.seed;
  o.threads = std::max<std::size_t>(s.threads, 1);
  o.substitution = parse_substitution_kind(s.substitution);
  o.target = parse_target_kind(s.target);
  require(o.target != TargetKind::appositive_prob, "--target appositive_prob is only used by run-appositive");
  require(s.eps_rel > 0.0 && std::isfinite(s.eps_rel), "--eps-rel must be positive");
  o.derivative.eps_rel = s.eps_rel;
  require(s.single_threshold >= 0.0 && s.single_threshold <= 1.0, "--single-threshold must lie in [0, 1]");
  require(s.joint_threshold >= 0.0 && s.joint_threshold <= 1.0, "--joint-threshold must lie in [0, 1]");
  o.single_threshold = s.single_threshold;
  o.joint_threshold = s.joint_threshold;
  return o;
}

inline Json construction_json(const ConstructionReport& r) {
  return {{"one_hop_accuracy", r.one_hop_accuracy},
          {"two_hop_accuracy", r.two_hop_accuracy},
          {"lens_top1_rate", r.lens_top1_rate},
          {"first_hop_layer", r.first_hop_layer},
          {"instances", r.instances}};
}

// ---------------------------------------------------------------------------
// Option echo and config injection

inline Json effective_options(const CLI::App& sub) {
  Json j = Json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (echo_excluded(name)) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& res = opt->results();
      for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
    } else {
      value = opt->get_default_str();
    }
    j[name] = value;
  }
  return j;
}

inline std::string json_scalar_text(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + json_scalar_text(v[i]);
    return s;
  }
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

inline bool has_flag(const std::vector<std::string>& args, const std::string& name) {
  const std::string flag = "--" + name;
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

// Appends --key=value for every config entry the command line does not set.
inline void inject_options(std::vector<std::string>& args, const nlohmann::json& config) {
  require(config.is_object(), "config: expected a JSON object of option names to values");
  std::vector<std::string> extra;
  for (const auto& [key, value] : config.items()) {
    std::string name = key;
    std::replace(name.begin(), name.end(), '_', '-');
    const std::string text = json_scalar_text(value);
    if (name == "config" || text.empty() || has_flag(args, name)) continue;
    extra.push_back("--" + name + "=" + text);
  }
  args.insert(args.end(), extra.begin(), extra.end());
}

// ---------------------------------------------------------------------------
// Commands

struct Outcome {
  fs::path directory;
  std::string summary;
};

inline Json manifest_json(const std::string& command, const std::string& id, const Json& options,
                          const std::optional<std::uint64_t>& world_seed, const std::optional<std::uint64_t>& model_seed,
                          std::uint64_t experiment_seed) {
  Json seeds = {{"experiment", experiment_seed}};
  seeds["world"] = world_seed ? Json(*world_seed) : Json(nullptr);
  seeds["model"] = model_seed ? Json(*model_seed) : Json(nullptr);
  return {{"version", kVersionString}, {"command", command}, {"run_id", id}, {"config", options}, {"seeds", seeds}};
}

inline void check_output_root(const fs::path& root) {
  require(!fs::exists(root) || fs::is_directory(root), "output root is not a directory: " + root.string());
}

inline Outcome run_experiment(const std::string& command, const Settings& s, const Json& options) {
  const fs::path root = s.out_root.empty() ? fs::path(default_output_root()) : fs::path(s.out_root);
  check_output_root(root);
  const auto data = load_dataset(s);
  const auto instances = limited(data.instances, s.n);
  const std::string id = run_id(command, options);

  ExperimentOptions opt;
  std::optional<LoadedModel> model;
  if (command != "stats") {
    opt = experiment_options(s);
    model = load_model(s, data);
  }
  Json header = {{"version", kVersionString}, {"run_id", id}, {"instances", instances.size()}};
  if (model && model->construction) header["construction"] = construction_json(*model->construction);

  ReportBundle bundle;
  std::string summary;
  if (command == "stats") {
    const auto stats = dataset_stats(instances);
    bundle = stats_report(stats, header);
    summary = to_json(stats).dump(2) + "\n";
  } else if (command == "run-rq1") {
    const auto r = run_rq1(model->weights, data.vocab, instances, data.candidates ? &*data.candidates : nullptr, opt);
    bundle = frequency_report("rq1_" + s.substitution, r, header);
    summary = frequency_csv(r.table);
  } else if (command == "run-rq2") {
    const auto r = run_rq2(model->weights, data.vocab, instances, opt);
    bundle = frequency_report("rq2_" + s.target, r, header);
    summary = frequency_csv(r.table);
  } else if (command == "run-rq12") {
    const auto r = run_rq12(model->weights, data.vocab, instances, data.candidates ? &*data.candidates : nullptr, opt);
    bundle = outcome_report(r, header);
    summary = outcome_csv(r.table);
  } else if (command == "run-appositive") {
    const auto r = run_appositive(model->weights, data.vocab, instances, opt);
    bundle = frequency_report("appositive", r, header);
    summary = frequency_csv(r.table);
  } else if (command == "run-cot") {
    const auto r = run_cot_comparison(model->weights, data.vocab, instances, data.cot, opt);
    bundle = cot_report(r, header);
    summary = summary_csv(r.summaries);
  } else if (command == "run-accuracy") {
    const auto r = run_accuracy_variants(model->weights, data.vocab, instances, opt);
    bundle = accuracy_report(r, header);
    summary = "one-hop correct\n" + frequency_csv(r.correct.table) + "one-hop incorrect\n" + frequency_csv(r.incorrect.table);
  } else {
    throw InvalidInput("unknown command '" + command + "'");
  }
  if (!data.log.empty()) {
    for (auto& f : bundle.files)
      if (f.name == "log.txt") f.contents = log_text(data.log) + f.contents;
  }
  const auto seeds_model = model ? model->seed : std::nullopt;
  bundle.add("manifest.json",
             manifest_json(command, id, options, data.world_seed, seeds_model, s.seed).dump(2) + "\n");
  const fs::path dir = root / id;
  emit_report(bundle, dir);
  return {dir, summary};
}

inline Outcome run_gen_world(const Settings& s, const Json& options) {
  require(!s.out.empty(), "--out is required");
  const fs::path dir(s.out);
  require(!fs::exists(dir) || fs::is_directory(dir), "--out exists and is not a directory: " + dir.string());
  const auto knobs = knobs_of(s, s.seed);
  const auto g = generate_world(knobs);
  const CotTemplates cot;
  const auto vocab = build_vocabulary(world_corpus(g, cot));
  const auto problems = check_instances(g.instances);
  ensure(problems.empty(), "generated world violates its own constraints: " + (problems.empty() ? "" : problems.front()));

  ReportBundle b;
  b.add("instances.jsonl", serialize_twohopfact(g.instances));
  b.add("world.json", to_json(g.world).dump(2) + "\n");
  b.add("candidates.json", to_json(g.candidates).dump(2) + "\n");
  b.add("cot_templates.json", cot.to_json().dump(2) + "\n");
  std::string vocab_text;
  for (std::size_t i = 2; i < vocab.size(); ++i) vocab_text += vocab.token(static_cast<TokenId>(i)) + '\n';
  b.add("vocab.txt", vocab_text);
  b.add("stats.json", to_json(dataset_stats(g.instances)).dump(2) + "\n");
  b.add("manifest.json", manifest_json("gen-world", run_id("gen-world", options), options, s.seed, std::nullopt, s.seed)
                             .dump(2) + "\n");
  emit_report(b, dir);
  return {dir, std::to_string(g.instances.size()) + " instances, " + std::to_string(vocab.size()) + " tokens\n"};
}

inline Outcome run_build_model(const Settings& s, const Json& options) {
  require(!s.out.empty(), "--out is required");
  const fs::path dir(s.out);
  require(!fs::exists(dir) || fs::is_directory(dir), "--out exists and is not a directory: " + dir.string());
  const auto data = load_dataset(s);
  const auto model = load_model(s, data);
  const auto bytes = serialize_weights(model.weights);
  ReportBundle b;
  b.add("weights.bin", std::string(bytes.begin(), bytes.end()));
  const auto& c = model.weights.config;
  Json info = {{"layers", c.layers}, {"hidden", c.hidden}, {"heads", c.heads},     {"ff", c.ff},
               {"vocab", c.vocab},   {"max_seq", c.max_seq}, {"norm", c.norm == NormKind::layernorm ? "layernorm" : "rmsnorm"}};
  Json report = {{"config", info}};
  if (model.construction) report["construction"] = construction_json(*model.construction);
  b.add("model.json", report.dump(2) + "\n");
  b.add("manifest.json",
        manifest_json("build-model", run_id("build-model", options), options, data.world_seed, model.seed, s.seed)
                .dump(2) + "\n");
  emit_report(b, dir);
  return {dir, report.dump(2) + "\n"};
}

// ---------------------------------------------------------------------------
// Parser

inline void add_dataset_options(CLI::App* sub, Settings& s) {
  sub->add_option("--dataset", s.dataset, "Dataset directory (from gen-world) or TwoHopFact .jsonl file");
  sub->add_option("--generate-seed", s.generate_seed, "Generate the world in memory with this seed instead");
  sub->add_option("--types", s.types, "Fact composition types to generate");
  sub->add_option("--per-type", s.per_type, "Instances per type to generate");
  sub->add_option("--entities-per-category", s.entities_per_category, "Entities per category (0: automatic)");
  sub->add_option("--name-lengths", s.name_lengths, "Weights of 1-, 2-, 3-token entity names, comma separated");
  sub->add_option("--distractors", s.distractors, "Distractor relations per type for relation substitution");
  sub->add_option("--n", s.n, "Use only the first N instances (0: all)");
}

inline void add_model_options(CLI::App* sub, Settings& s) {
  sub->add_option("--model", s.model, "random:SEED, constructed, or a weight file")->required();
  sub->add_option("--layers", s.layers, "Layers (random and constructed models)");
  sub->add_option("--hidden", s.hidden, "Hidden width (random model)");
  sub->add_option("--heads", s.heads, "Attention heads (random model)");
  sub->add_option("--ff", s.ff, "MLP width (random model)");
  sub->add_option("--max-seq", s.max_seq, "Maximum sequence length");
  sub->add_option("--norm", s.norm, "layernorm or rmsnorm")->check(CLI::IsMember({"layernorm", "rmsnorm"}));
}

inline void add_experiment_options(CLI::App* sub, Settings& s) {
  sub->add_option("--seed", s.seed, "Experiment seed (counterfactual sampling, matched subsets)");
  sub->add_option("--threads", s.threads, "Worker threads");
  sub->add_option("--substitution", s.substitution, "entity or relation")
      ->check(CLI::IsMember({"entity", "relation"}));
  sub->add_option("--target", s.target, "consistency or answer_logprob")
      ->check(CLI::IsMember({"consistency", "answer_logprob"}));
  sub->add_option("--eps-rel", s.eps_rel, "Relative finite-difference step");
  sub->add_option("--single-threshold", s.single_threshold, "Per-type strong-evidence threshold for RQ1/RQ2");
  sub->add_option("--joint-threshold", s.joint_threshold, "Per-type strong-evidence threshold for SS");
  sub->add_option("--cot-templates", s.cot_templates, "JSON object of chain-of-thought templates");
}

inline void add_output_options(CLI::App* sub, Settings& s) {
  sub->add_option("--out-root", s.out_root, "Output root (default: $TWOHOP_OUTPUT_ROOT or ./runs)");
}

inline const std::vector<std::string>& experiment_commands() {
  static const std::vector<std::string> k{"run-rq1",  "run-rq2", "run-rq12",    "run-appositive",
                                          "run-cot",  "run-accuracy", "stats"};
  return k;
}

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err, int depth = 0);

inline int run_report(const Settings& s, std::ostream& out, std::ostream& err, int depth) {
  require(depth == 0, "report: a manifest cannot point at another report run");
  require(!s.manifest.empty(), "--manifest is required");
  const auto m = read_json_file(s.manifest);
  require(m.is_object() && m.contains("command") && m.contains("config") && m["command"].is_string(),
          "manifest: missing command or config");
  const std::string command = m["command"].get<std::string>();
  require(command != "report", "manifest: cannot re-run a report command");
  if (m.contains("version") && m["version"] != std::string(kVersionString))
    err << "warning: manifest written by " << json_scalar_text(m["version"]) << ", running " << kVersionString << '\n';
  std::vector<std::string> replay{command};
  if (!s.out_root.empty()) replay.push_back("--out-root=" + s.out_root);
  for (const auto& [key, value] : m["config"].items()) {
    const std::string text = json_scalar_text(value);
    if (!text.empty()) replay.push_back("--" + key + "=" + text);
  }
  return run(replay, out, err, depth + 1);
}

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err, int depth) {
  Settings s;
  CLI::App app{"Probes for latent two-hop reasoning in transformer language models", "twohop"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersionString));

  std::string config_path;
  std::map<std::string, CLI::App*> subs;
  auto add = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON file of option values; command-line flags win");
    subs[name] = sub;
    return sub;
  };

  auto* gen = add("gen-world", "Generate a synthetic fact world and its two-hop instances");
  gen->add_option("--types", s.types, "Fact composition types");
  gen->add_option("--per-type", s.per_type, "Instances per type");
  gen->add_option("--entities-per-category", s.entities_per_category, "Entities per category (0: automatic)");
  gen->add_option("--name-lengths", s.name_lengths, "Weights of 1-, 2-, 3-token entity names, comma separated");
  gen->add_option("--distractors", s.distractors, "Distractor relations per type");
  gen->add_option("--seed", s.seed, "World seed");
  gen->add_option("--out", s.out, "Output directory")->required();

  auto* build = add("build-model", "Build or load a model and write it as a weight file");
  add_dataset_options(build, s);
  add_model_options(build, s);
  build->add_option("--out", s.out, "Output directory")->required();

  const std::map<std::string, std::string> help{
      {"run-rq1", "Entity recall under entity or relation substitution, per layer"},
      {"run-rq2", "Effect of increased entity recall on consistency, per layer"},
      {"run-rq12", "Joint first-hop and second-hop outcomes, per layer"},
      {"run-appositive", "Effect of increased entity recall on generating the bridge after a comma"},
      {"run-cot", "Consistency under chain-of-thought style prompt variants"},
      {"run-accuracy", "RQ2 split by one-hop correctness with matched per-type counts"},
      {"stats", "Dataset statistics"}};
  for (const auto& name : experiment_commands()) {
    auto* sub = add(name, help.at(name));
    add_dataset_options(sub, s);
    if (name != "stats") {
      add_model_options(sub, s);
      add_experiment_options(sub, s);
    }
    add_output_options(sub, s);
  }

  auto* rep = add("report", "Re-run the command recorded in a manifest");
  rep->add_option("--manifest", s.manifest, "manifest.json of an earlier run")->required();
  add_output_options(rep, s);

  try {
    // A --config file fills in options the command line leaves unset.
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (!path.empty()) {
        inject_options(args, read_json_file(path));
        break;
      }
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::CallForVersion&) {
      out << kVersionString << '\n';
      return 0;
    } catch (const CLI::ParseError& e) {
      err << "error: " << e.what() << "\n\n";
      const auto parsed = app.get_subcommands();
      err << (parsed.empty() ? app.help() : parsed.front()->help());
      return 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    Outcome outcome;
    if (command == "report") return run_report(s, out, err, depth);
    const Json options = effective_options(*sub);
    if (command == "gen-world") outcome = run_gen_world(s, options);
    else if (command == "build-model") outcome = run_build_model(s, options);
    else outcome = run_experiment(command, s, options);
    out << outcome.summary;
    out << "wrote " << outcome.directory.string() << '\n';
    return 0;
  } catch (const ConstructionError& e) {
    err << "error: " << e.what() << '\n';
    for (const auto& f : e.failing_instances()) err << "  " << f << '\n';
    return 2;
  } catch (const InvariantViolation& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidInput& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
}

inline int entry(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args), out, err);
}

}  // namespace twohop::cli
