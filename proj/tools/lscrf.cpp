// lscrf: batch front end for corpus generation, training, prediction,
// evaluation, energy export and standalone inference.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lscrf/lscrf.hpp"

using namespace lscrf;

namespace {

using Clock = std::chrono::steady_clock;
using PhaseTimes = std::vector<std::pair<std::string, double>>;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// Values come from, in order: the command line, the subcommand's section of
// the config file, the top level of the config file, the built-in default.
class Settings {
 public:
  Settings(CLI::App* app, std::string section) : app_(app), section_(std::move(section)) {}

  template <class T>
  CLI::Option* add(const std::string& name, T& value, const std::string& help) {
    auto* opt = app_->add_option("--" + name, value, help)->capture_default_str();
    entries_.push_back({name, opt, [&value](const nlohmann::json& j) { value = j.get<T>(); },
                        [&value]() { return Json(value); }});
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& value, const std::string& help) {
    auto* opt = app_->add_flag("--" + name, value, help);
    entries_.push_back({name, opt, [&value](const nlohmann::json& j) { value = j.get<bool>(); },
                        [&value]() { return Json(value); }});
    return opt;
  }

  // Options that shape no artifact (paths, parallelism) stay out of the
  // recorded configuration.
  void unrecorded(const std::string& name) { unrecorded_.push_back(name); }

  // Must come from the command line or the config file.
  void required(const std::string& name) { required_.push_back(name); }

  void resolve(const nlohmann::json& config) {
    for (auto& e : entries_) {
      const bool needed = std::find(required_.begin(), required_.end(), e.name) != required_.end();
      if (e.option->count()) continue;
      const nlohmann::json* source = nullptr;
      if (config.contains(section_) && config[section_].is_object() && config[section_].contains(e.name))
        source = &config[section_][e.name];
      else if (config.contains(e.name))
        source = &config[e.name];
      if (!source) {
        if (needed) throw Error(section_ + ": --" + e.name + " is required (flag or config entry)");
        continue;
      }
      try {
        e.assign(*source);
      } catch (const std::exception& ex) {
        throw Error("config value for '" + e.name + "' has the wrong type: " + ex.what());
      }
    }
  }

  Json effective() const {
    Json j = Json::object();
    for (const auto& e : entries_)
      if (std::find(unrecorded_.begin(), unrecorded_.end(), e.name) == unrecorded_.end()) j[e.name] = e.read();
    return j;
  }

 private:
  struct Entry {
    std::string name;
    CLI::Option* option;
    std::function<void(const nlohmann::json&)> assign;
    std::function<Json()> read;
  };
  CLI::App* app_;
  std::string section_;
  std::vector<Entry> entries_;
  std::vector<std::string> unrecorded_;
  std::vector<std::string> required_;
};

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file '" + path + "'");
  try {
    auto j = nlohmann::json::parse(in);
    if (!j.is_object()) throw Error("config file must hold a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("config file '" + path + "': " + e.what());
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("write to '" + path + "' failed");
}

void write_timing_csv(const std::string& path, const PhaseTimes& times) {
  if (path.empty()) return;
  std::ostringstream out;
  out << "phase,seconds\n";
  for (const auto& [phase, s] : times) out << phase << ',' << s << '\n';
  write_text_file(path, out.str());
}

PhaseTimes read_timing_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open timing file '" + path + "'");
  PhaseTimes times;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    times.emplace_back(line.substr(0, comma), std::stod(line.substr(comma + 1)));
  }
  return times;
}

// A trained model of either family.
struct AnyModel {
  std::optional<PairwiseModel> lscrf;
  std::optional<LogLinearCRF> loglinear;

  const Json& provenance() const { return lscrf ? lscrf->provenance : loglinear->provenance; }
  int num_labels() const { return lscrf ? lscrf->num_labels : loglinear->num_labels; }
};

AnyModel load_model(const std::string& path) {
  const auto j = read_json_file(path);
  AnyModel m;
  const auto type = j.value("type", "");
  if (type == "loglinear-crf")
    m.loglinear = loglinear_from_json(j);
  else
    m.lscrf = pairwise_model_from_json(j);
  return m;
}

std::optional<Solver> parse_solver(const std::string& s) {
  if (s == "auto") return std::nullopt;
  return solver_from_string(s);
}

Composition parse_composition(const std::string& s) {
  if (s == "auto") return Composition::automatic;
  if (s == "loopy") return Composition::loopy;
  if (s == "tree") return Composition::tree;
  throw Error("unknown composition '" + s + "' (expected auto, loopy or tree)");
}

Solver default_solver(const Graph& g) { return is_tree(g) ? Solver::tree : Solver::trws; }

EnergyFunction model_energy(const AnyModel& model, const Instance& inst, Composition composition) {
  if (model.loglinear) return loglinear_energy(*model.loglinear, inst);
  if (composition == Composition::automatic)
    composition = is_tree(inst.graph) ? Composition::tree : Composition::loopy;
  return composition == Composition::tree ? predict_energy_tree(*model.lscrf, inst)
                                          : predict_energy_loopy(*model.lscrf, inst);
}

Labeling predict_one(const AnyModel& model, const Instance& inst, std::optional<Solver> solver,
                     Composition composition, const MapOptions& options) {
  if (model.lscrf) {
    const Solver chosen = solver.value_or(default_solver(inst.graph));
    return predict_labeling(*model.lscrf, inst, chosen, composition, options);
  }
  const auto energy = loglinear_energy(*model.loglinear, inst);
  return minimize_energy(energy, solver.value_or(default_solver(inst.graph)), options).labeling;
}

const Instance& find_instance(const Corpus& corpus, const std::string& id) {
  if (corpus.instances.empty()) throw Error("corpus is empty");
  if (id.empty()) return corpus.instances.front();
  for (const auto& inst : corpus.instances)
    if (inst.id == id) return inst;
  throw Error("no instance with id '" + id + "'");
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out, kind = "tree", generator = "logistic";
  std::size_t instances = 100;
  std::uint64_t seed = 0;
  int jobs = 1, labels = 2, nodes = 10, edge_dim = 4, height = 12, width = 12, burn_in = 50;
  double noise = 0.0, sharpness = 1.0, coupling = 0.8, unary_snr = 0.5, field = 0.5;
  bool chain = false, shared_features = false;
};

int run_synth(SynthArgs& a, Settings& settings, const nlohmann::json& config) {
  settings.resolve(config);
  Corpus corpus;
  if (a.kind == "tree") {
    TreeCorpusParams p;
    p.n_instances = a.instances;
    p.m = a.nodes;
    p.r = a.labels;
    p.edge_dim = a.edge_dim;
    p.generator = pair_generator_from_string(a.generator);
    p.noise = a.noise;
    p.sharpness = a.sharpness;
    p.seed = a.seed;
    p.chain = a.chain;
    p.shared_features = a.shared_features;
    p.jobs = a.jobs;
    corpus = synth_tree_corpus(p);
  } else if (a.kind == "grid") {
    GridCorpusParams p;
    p.n_instances = a.instances;
    p.h = a.height;
    p.w = a.width;
    p.r = a.labels;
    p.coupling = a.coupling;
    p.unary_snr = a.unary_snr;
    p.field = a.field;
    p.burn_in = a.burn_in;
    p.seed = a.seed;
    p.jobs = a.jobs;
    corpus = synth_grid_corpus(p);
  } else {
    throw Error("unknown corpus kind '" + a.kind + "' (expected tree or grid)");
  }
  Json provenance;
  provenance["command"] = "synth";
  provenance["config"] = settings.effective();
  provenance["generator"] = corpus.provenance;
  corpus.provenance = std::move(provenance);
  write_corpus(corpus, a.out);
  std::cout << "wrote " << corpus.instances.size() << " instances to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string corpus, out, method = "lscrf-linear", timing;
  std::uint64_t seed = 0;
  int jobs = 1, trees = 500, depth = 6, min_pair_count = 20, max_iter = 2000;
  double lambda = -1.0;  // negative: the method's default
  double learning_rate = 0.1, pair_fraction = 1.0, unary_fraction = 1.0, rare_pair_constant = 1e-3, tol = 1e-6;
  bool unary_only = false, unary_fallback = false, no_balance = false;
};

int run_train(TrainArgs& a, Settings& settings, const nlohmann::json& config) {
  settings.resolve(config);
  const auto total_start = Clock::now();
  PhaseTimes times;
  auto t = Clock::now();
  const Corpus corpus = read_corpus(a.corpus);
  times.emplace_back("load", seconds_since(t));
  if (corpus.instances.empty()) throw Error("corpus '" + a.corpus + "' has no instances");
  for (const auto& inst : corpus.instances)
    if (!inst.labels) throw Error("instance '" + inst.id + "' has no labels; training needs labeled data");

  Json provenance;
  provenance["command"] = "train";
  provenance["config"] = settings.effective();
  provenance["corpus"] = corpus.provenance;

  std::string model_text;
  if (a.method == "lscrf-linear" || a.method == "lscrf-gbt") {
    TrainConfig cfg;
    cfg.kind = a.method == "lscrf-linear" ? RegressorKind::linear : RegressorKind::gbt;
    cfg.sampling.pair_fraction = a.pair_fraction;
    cfg.sampling.unary_fraction = a.unary_fraction;
    cfg.sampling.balance = !a.no_balance;
    cfg.sampling.seed = a.seed;
    cfg.min_pair_count = a.min_pair_count;
    cfg.rare_pair_constant = a.rare_pair_constant;
    cfg.lambda = a.lambda < 0 ? 0.0 : a.lambda;
    cfg.gbt.n_trees = a.trees;
    cfg.gbt.depth = a.depth;
    cfg.gbt.learning_rate = a.learning_rate;
    cfg.gbt.seed = a.seed;
    cfg.pairwise = !a.unary_only;
    cfg.unaries = a.unary_fallback ? UnaryTraining::always : UnaryTraining::automatic;
    cfg.jobs = a.jobs;
    auto model = train_lscrf(corpus.instances, corpus.num_labels(), cfg, &times);
    model.label_names = corpus.label_names;
    model.provenance = std::move(provenance);
    model_text = to_json(model).dump(1) + "\n";
  } else {
    Surrogate surrogate;
    if (a.method == "logistic") surrogate = Surrogate::logistic;
    else if (a.method == "pl") surrogate = Surrogate::pseudolikelihood;
    else if (a.method == "pw") surrogate = Surrogate::piecewise;
    else if (a.method == "tree-cll") surrogate = Surrogate::conditional_likelihood;
    else throw Error("unknown method '" + a.method + "' (expected lscrf-linear, lscrf-gbt, logistic, pl, pw or tree-cll)");
    BaselineOptions options;
    if (a.lambda >= 0) options.lambda = a.lambda;
    options.max_iter = a.max_iter;
    options.tol = a.tol;
    options.jobs = a.jobs;
    t = Clock::now();
    auto fit = train_baseline(corpus.instances, corpus.num_labels(), surrogate, options);
    times.emplace_back("optimize", seconds_since(t));
    fit.model.label_names = corpus.label_names;
    provenance["optimizer"] = {{"iterations", fit.optimization.iterations},
                               {"converged", fit.optimization.converged},
                               {"objective", fit.optimization.value}};
    fit.model.provenance = std::move(provenance);
    model_text = to_json(fit.model).dump(1) + "\n";
  }
  t = Clock::now();
  write_text_file(a.out, model_text);
  times.emplace_back("save", seconds_since(t));
  times.emplace_back("total", seconds_since(total_start));
  std::cout << "trained " << a.method << " on " << corpus.instances.size() << " instances\n";
  for (const auto& [phase, s] : times) std::cout << "  time[" << phase << "] " << s << " s\n";
  write_timing_csv(a.timing, times);
  return 0;
}

struct PredictArgs {
  std::string model, corpus, out, solver = "auto", composition = "auto", timing;
  int jobs = 1, trws_iters = 100, icm_sweeps = 100;
};

int run_predict(PredictArgs& a, Settings& settings, const nlohmann::json& config) {
  settings.resolve(config);
  PhaseTimes times;
  auto t = Clock::now();
  const auto model = load_model(a.model);
  const Corpus corpus = read_corpus(a.corpus);
  times.emplace_back("load", seconds_since(t));
  if (model.num_labels() != corpus.num_labels()) throw Error("model and corpus label counts differ");
  const auto solver = parse_solver(a.solver);
  const auto composition = parse_composition(a.composition);
  MapOptions options;
  options.trws.max_iters = a.trws_iters;
  options.icm_sweeps = a.icm_sweeps;

  LabelingSet out;
  out.ids.resize(corpus.instances.size());
  out.labelings.resize(corpus.instances.size());
  t = Clock::now();
  parallel_for(corpus.instances.size(), a.jobs, [&](std::size_t i) {
    out.ids[i] = corpus.instances[i].id;
    out.labelings[i] = predict_one(model, corpus.instances[i], solver, composition, options);
  });
  times.emplace_back("predict", seconds_since(t));
  out.provenance["command"] = "predict";
  out.provenance["config"] = settings.effective();
  out.provenance["model"] = model.provenance();
  std::ostringstream text;
  write_labelings(out, text);
  write_text_file(a.out, text.str());
  std::cout << "predicted " << out.ids.size() << " labelings in " << times.back().second << " s\n";
  write_timing_csv(a.timing, times);
  return 0;
}

struct EvalArgs {
  std::string labels, corpus, json;
  std::vector<std::string> timing;
};

int run_eval(EvalArgs& a, Settings& settings, const nlohmann::json& config) {
  settings.resolve(config);
  const Corpus corpus = read_corpus(a.corpus);
  std::ifstream in(a.labels);
  if (!in) throw Error("cannot open '" + a.labels + "'");
  const auto predicted = read_labelings(in);
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < predicted.ids.size(); ++i) by_id[predicted.ids[i]] = i;
  std::vector<Labeling> preds, truths;
  for (const auto& inst : corpus.instances) {
    if (!inst.labels) throw Error("instance '" + inst.id + "' has no ground-truth labels");
    const auto it = by_id.find(inst.id);
    if (it == by_id.end()) throw Error("no prediction for instance '" + inst.id + "'");
    preds.push_back(predicted.labelings[it->second]);
    truths.push_back(*inst.labels);
  }
  if (preds.size() != predicted.ids.size()) throw Error("labelings file has predictions for unknown instances");
  auto report = evaluate(preds, truths, corpus.num_labels());
  for (const auto& path : a.timing)
    for (auto& entry : read_timing_csv(path)) report.wall_times.push_back(std::move(entry));
  std::cout << format_report(report, corpus.label_names);
  if (!a.json.empty()) write_text_file(a.json, to_json(report).dump(1) + "\n");
  return 0;
}

struct ExportArgs {
  std::string model, corpus, instance, energy, format = "text", composition = "auto", out;
};

int run_export(ExportArgs& a, Settings& settings, const nlohmann::json& config) {
  settings.resolve(config);
  EnergyFunction energy;
  if (!a.energy.empty()) {
    std::ifstream in(a.energy);
    if (!in) throw Error("cannot open '" + a.energy + "'");
    energy = read_energy_text(in);
  } else {
    if (a.model.empty() || a.corpus.empty()) throw Error("export needs --energy, or --model with --corpus");
    const auto model = load_model(a.model);
    const Corpus corpus = read_corpus(a.corpus);
    energy = model_energy(model, find_instance(corpus, a.instance), parse_composition(a.composition));
  }
  std::ostringstream text;
  if (a.format == "text")
    write_energy_text(energy, text);
  else if (a.format == "uai")
    write_uai(energy, text);
  else
    throw Error("unknown export format '" + a.format + "' (expected text or uai)");
  if (a.out.empty())
    std::cout << text.str();
  else
    write_text_file(a.out, text.str());
  return 0;
}

struct InferArgs {
  std::string energy, solver = "auto", out;
  int trws_iters = 100, icm_sweeps = 100;
};

int run_infer(InferArgs& a, Settings& settings, const nlohmann::json& config) {
  settings.resolve(config);
  std::ifstream in(a.energy);
  if (!in) throw Error("cannot open '" + a.energy + "'");
  const auto energy = read_energy_text(in);
  MapOptions options;
  options.trws.max_iters = a.trws_iters;
  options.icm_sweeps = a.icm_sweeps;
  const Solver solver = parse_solver(a.solver).value_or(default_solver(energy.graph));
  const auto result = minimize_energy(energy, solver, options);
  Json j;
  j["solver"] = to_string(solver);
  j["energy"] = result.energy;
  if (result.lower_bound) j["lower_bound"] = *result.lower_bound;
  j["iterations"] = result.iterations;
  j["labeling"] = result.labeling;
  if (a.out.empty())
    std::cout << j.dump(1) << '\n';
  else
    write_text_file(a.out, j.dump(1) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LS-CRF: regression-trained pairwise CRFs"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; command-line flags take precedence")
      ->check(CLI::ExistingFile);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic corpus");
  Settings synth_settings(synth_cmd, "synth");
  synth_settings.add("out", synth.out, "output corpus path");
  synth_settings.required("out");
  synth_settings.add("kind", synth.kind, "tree or grid");
  synth_settings.add("instances", synth.instances, "number of instances");
  synth_settings.add("seed", synth.seed, "random seed");
  synth_settings.add("jobs", synth.jobs, "worker threads");
  synth_settings.add("labels", synth.labels, "number of labels");
  synth_settings.add("nodes", synth.nodes, "tree: nodes per instance");
  synth_settings.add("edge-dim", synth.edge_dim, "tree: signal edge features including the constant (the parent marginal is appended)");
  synth_settings.add("generator", synth.generator, "tree: linear, logistic or xor");
  synth_settings.add("noise", synth.noise, "tree: mixing weight of the uniform child-label distribution");
  synth_settings.add("sharpness", synth.sharpness, "tree: logistic/xor score scale");
  synth_settings.flag("chain", synth.chain, "tree: path graphs instead of random trees");
  synth_settings.flag("shared-features", synth.shared_features, "tree: one feature vector per instance");
  synth_settings.add("height", synth.height, "grid: rows");
  synth_settings.add("width", synth.width, "grid: columns");
  synth_settings.add("coupling", synth.coupling, "grid: Potts coupling");
  synth_settings.add("unary-snr", synth.unary_snr, "grid: feature signal-to-noise ratio");
  synth_settings.add("field", synth.field, "grid: scale of random label preferences");
  synth_settings.add("burn-in", synth.burn_in, "grid: Gibbs burn-in sweeps");
  synth_settings.unrecorded("out");
  synth_settings.unrecorded("jobs");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model on a labeled corpus");
  Settings train_settings(train_cmd, "train");
  train_settings.add("corpus", train.corpus, "training corpus");
  train_settings.required("corpus");
  train_settings.add("out", train.out, "output model path");
  train_settings.required("out");
  train_settings.add("method", train.method, "lscrf-linear, lscrf-gbt, logistic, pl, pw or tree-cll");
  train_settings.add("seed", train.seed, "random seed (sampling, boosting)");
  train_settings.add("jobs", train.jobs, "worker threads");
  train_settings.add("lambda", train.lambda, "ridge / L2 strength (negative: method default)");
  train_settings.add("trees", train.trees, "gbt: number of trees");
  train_settings.add("depth", train.depth, "gbt: tree depth");
  train_settings.add("learning-rate", train.learning_rate, "gbt: shrinkage");
  train_settings.add("pair-fraction", train.pair_fraction, "fraction of edges used for pair regressors");
  train_settings.add("unary-fraction", train.unary_fraction, "fraction of nodes used for unary regressors");
  train_settings.add("min-pair-count", train.min_pair_count, "pairs seen less often get a constant");
  train_settings.add("rare-pair-constant", train.rare_pair_constant, "constant for rare pairs");
  train_settings.add("max-iter", train.max_iter, "baselines: optimizer iterations");
  train_settings.add("tol", train.tol, "baselines: relative gradient tolerance");
  train_settings.flag("unary-only", train.unary_only, "lscrf: train node regressors only");
  train_settings.flag("unary-fallback", train.unary_fallback, "lscrf: always train node regressors too");
  train_settings.flag("no-balance", train.no_balance, "lscrf: sample without label balancing");
  train_settings.add("timing", train.timing, "write per-phase wall times as CSV");
  for (const char* name : {"corpus", "out", "jobs", "timing"}) train_settings.unrecorded(name);

  PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "MAP-label every instance of a corpus");
  Settings predict_settings(predict_cmd, "predict");
  predict_settings.add("model", predict.model, "model file");
  predict_settings.required("model");
  predict_settings.add("corpus", predict.corpus, "corpus to label");
  predict_settings.required("corpus");
  predict_settings.add("out", predict.out, "output labelings path");
  predict_settings.required("out");
  predict_settings.add("solver", predict.solver, "auto, exact, tree, trws or icm");
  predict_settings.add("composition", predict.composition, "lscrf energy: auto, loopy or tree");
  predict_settings.add("trws-iters", predict.trws_iters, "TRW-S iteration cap");
  predict_settings.add("icm-sweeps", predict.icm_sweeps, "ICM sweep cap");
  predict_settings.add("jobs", predict.jobs, "worker threads");
  predict_settings.add("timing", predict.timing, "write per-phase wall times as CSV");
  for (const char* name : {"model", "corpus", "out", "jobs", "timing"}) predict_settings.unrecorded(name);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "score labelings against a corpus");
  Settings eval_settings(eval_cmd, "eval");
  eval_settings.add("labels", eval.labels, "labelings file");
  eval_settings.required("labels");
  eval_settings.add("corpus", eval.corpus, "corpus with ground truth");
  eval_settings.required("corpus");
  eval_settings.add("json", eval.json, "also write the report as JSON");
  eval_settings.add("timing", eval.timing, "timing CSV files to include in the report");

  ExportArgs exp;
  auto* export_cmd = app.add_subcommand("export", "write an energy in an interchange format");
  Settings export_settings(export_cmd, "export");
  export_settings.add("model", exp.model, "model file");
  export_settings.add("corpus", exp.corpus, "corpus holding the instance");
  export_settings.add("instance", exp.instance, "instance id (default: first)");
  export_settings.add("energy", exp.energy, "energy text file to convert instead of a model");
  export_settings.add("format", exp.format, "text or uai");
  export_settings.add("composition", exp.composition, "lscrf energy: auto, loopy or tree");
  export_settings.add("out", exp.out, "output path (default: stdout)");

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "minimize an energy given in the text format");
  Settings infer_settings(infer_cmd, "infer");
  infer_settings.add("energy", infer.energy, "energy text file");
  infer_settings.required("energy");
  infer_settings.add("solver", infer.solver, "auto, exact, tree, trws or icm");
  infer_settings.add("trws-iters", infer.trws_iters, "TRW-S iteration cap");
  infer_settings.add("icm-sweeps", infer.icm_sweeps, "ICM sweep cap");
  infer_settings.add("out", infer.out, "output JSON path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const auto config = load_config(config_path);
    if (synth_cmd->parsed()) return run_synth(synth, synth_settings, config);
    if (train_cmd->parsed()) return run_train(train, train_settings, config);
    if (predict_cmd->parsed()) return run_predict(predict, predict_settings, config);
    if (eval_cmd->parsed()) return run_eval(eval, eval_settings, config);
    if (export_cmd->parsed()) return run_export(exp, export_settings, config);
    if (infer_cmd->parsed()) return run_infer(infer, infer_settings, config);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
