// Command-line entry point: dataset conversion, training, evaluation, reference
// bounds, sweeps, the HTTP service and a terminal consultation.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dxformer/checkpoint.hpp"
#include "dxformer/corpus.hpp"
#include "dxformer/eval/bounds.hpp"
#include "dxformer/eval/evaluate.hpp"
#include "dxformer/eval/rule_agent.hpp"
#include "dxformer/service.hpp"
#include "dxformer/session.hpp"
#include "dxformer/synthetic.hpp"
#include "dxformer/trainer.hpp"

namespace {

using namespace dxformer;
namespace fs = std::filesystem;

/// A failure with its own category name and exit code.
struct CliFailure : std::runtime_error {
  CliFailure(std::string cat, int exit_code, const std::string& message)
      : std::runtime_error(message), category(std::move(cat)), code(exit_code) {}
  std::string category;
  int code;
};

struct Common {
  bool json_output = false;
  bool quiet = false;
  std::size_t threads = 1;
  std::optional<std::uint64_t> seed;
};

bool g_quiet = false;

/// logfmt line on stderr.
void log_line(std::string_view level, std::string_view msg, const std::vector<std::pair<std::string, std::string>>& kv = {}) {
  if (g_quiet && level == "info") return;
  std::ostringstream ss;
  ss << "level=" << level << " msg=" << std::quoted(std::string(msg));
  for (const auto& [k, v] : kv) {
    const bool plain = !v.empty() && v.find_first_of(" \"=") == std::string::npos;
    ss << ' ' << k << '=';
    if (plain) {
      ss << v;
    } else {
      ss << std::quoted(v);
    }
  }
  std::cerr << ss.str() << '\n';
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss << std::setprecision(6) << v;
  return ss.str();
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_flag("--json", c.json_output, "Print results as JSON on stdout");
  cmd->add_flag("--quiet", c.quiet, "Suppress informational logs");
  cmd->add_option("--threads", c.threads, "Worker threads for training and evaluation")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "Random seed (overrides the config file)");
}

// ---------------------------------------------------------------- run config

struct RunConfig {
  fs::path data;
  fs::path out;
  ModelConfig model;
  TrainConfig train;
  RewardConfig rewards;
  double dev_fraction = 0.1;
  bool sequence_length_set = false;

  json to_json() const {
    return json{{"data", data.string()},        {"out", out.string()},
                {"model", model.to_json()},     {"train", train.to_json()},
                {"rewards", rewards.to_json()}, {"dev_fraction", dev_fraction}};
  }
};

RunConfig load_run_config(const std::optional<fs::path>& path) {
  RunConfig rc;
  if (!path) return rc;
  if (!fs::exists(*path)) throw CliFailure("config-not-found", 2, "config file '" + path->string() + "' does not exist");
  json doc;
  try {
    doc = json::parse(detail::read_file(*path));
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, "config file '" + path->string() + "': " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCategory::config, "config file must hold a JSON object");
  try {
    if (doc.contains("data")) rc.data = doc.at("data").get<std::string>();
    if (doc.contains("out")) rc.out = doc.at("out").get<std::string>();
    if (doc.contains("model")) {
      rc.model.merge_json(doc.at("model"));
      rc.sequence_length_set = doc.at("model").contains("max_sequence_length");
    }
    if (doc.contains("train")) rc.train.merge_json(doc.at("train"));
    if (doc.contains("rewards")) rc.rewards.merge_json(doc.at("rewards"));
    if (doc.contains("dev_fraction")) rc.dev_fraction = doc.at("dev_fraction").get<double>();
  } catch (const json::exception& e) {
    throw Error(ErrorCategory::config, std::string("config file: ") + e.what());
  }
  if (!rc.data.empty() && rc.data.is_relative()) rc.data = path->parent_path() / rc.data;
  return rc;
}

struct TrainFlags {
  std::optional<fs::path> config, data, out, init;
  std::optional<std::size_t> pretrain_epochs, joint_epochs, batch_size, patience, max_turns_train, max_turns;
  std::optional<std::size_t> embed_dim, ff_dim, heads, decoder_layers, encoder_layers;
  std::optional<double> pretrain_lr, rl_lr, epsilon, dev_fraction;
  bool sparse = false, full_return = false, freeze_decoder = false, reward_baseline = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool joint) {
  cmd->add_option("--config", f.config, "JSON run configuration; flags below override it");
  cmd->add_option("--data", f.data, "Dataset manifest, directory or name");
  cmd->add_option("--out", f.out, "Run directory for config, vocabulary, metrics and checkpoint");
  cmd->add_option("--pretrain-epochs", f.pretrain_epochs, "Language-model pretraining epochs");
  cmd->add_option("--pretrain-lr", f.pretrain_lr, "Pretraining learning rate");
  cmd->add_option("--batch-size", f.batch_size, "Records per optimizer step");
  cmd->add_option("--patience", f.patience, "Epochs without dev improvement before stopping");
  cmd->add_option("--dev-fraction", f.dev_fraction,
                  "Share of train held out as dev when the manifest has no dev split");
  cmd->add_option("--embed-dim", f.embed_dim, "Embedding width");
  cmd->add_option("--ff-dim", f.ff_dim, "Feed-forward width");
  cmd->add_option("--heads", f.heads, "Attention heads");
  cmd->add_option("--decoder-layers", f.decoder_layers, "Decoder depth");
  cmd->add_option("--encoder-layers", f.encoder_layers, "Encoder depth");
  cmd->add_flag("--sparse", f.sparse, "One-hot input projection instead of shared embeddings");
  cmd->add_option("--max-turns", f.max_turns, "Turn budget for dev evaluation");
  cmd->add_option("--epsilon", f.epsilon, "Confidence threshold for dev evaluation");
  if (joint) {
    cmd->add_option("--init", f.init, "Start from this checkpoint and skip pretraining");
    cmd->add_option("--joint-epochs", f.joint_epochs, "Joint training epochs");
    cmd->add_option("--rl-lr", f.rl_lr, "Joint training learning rate");
    cmd->add_option("--max-turns-train", f.max_turns_train, "Turn budget of training rollouts");
    cmd->add_flag("--full-return", f.full_return, "Weight every step by the whole-episode return");
    cmd->add_flag("--reward-baseline", f.reward_baseline, "Subtract a running-mean reward baseline");
    cmd->add_flag("--freeze-decoder", f.freeze_decoder, "Train only the encoder in the joint phase");
  }
}

RunConfig resolve_run_config(const TrainFlags& f, const Common& c) {
  RunConfig rc = load_run_config(f.config);
  if (f.data) rc.data = *f.data;
  if (f.out) rc.out = *f.out;
  auto& t = rc.train;
  auto& m = rc.model;
  if (f.pretrain_epochs) t.pretrain_epochs = *f.pretrain_epochs;
  if (f.joint_epochs) t.joint_epochs = *f.joint_epochs;
  if (f.pretrain_lr) t.pretrain_lr = *f.pretrain_lr;
  if (f.rl_lr) t.rl_lr = *f.rl_lr;
  if (f.batch_size) t.batch_size = *f.batch_size;
  if (f.patience) t.patience = *f.patience;
  if (f.max_turns_train) t.max_turns_train = *f.max_turns_train;
  if (f.max_turns) t.max_turns_infer = *f.max_turns;
  if (f.epsilon) t.epsilon = *f.epsilon;
  if (f.full_return) t.full_return = true;
  if (f.reward_baseline) t.reward_baseline = true;
  if (f.freeze_decoder) t.freeze_decoder = true;
  if (c.seed) t.seed = *c.seed;
  t.threads = c.threads;
  if (f.embed_dim) m.embed_dim = *f.embed_dim;
  if (f.ff_dim) m.ff_dim = *f.ff_dim;
  if (f.heads) m.heads = *f.heads;
  if (f.decoder_layers) m.decoder_layers = *f.decoder_layers;
  if (f.encoder_layers) m.encoder_layers = *f.encoder_layers;
  if (f.sparse) m.sparse_inputs = true;
  if (f.dev_fraction) rc.dev_fraction = *f.dev_fraction;
  if (rc.data.empty()) throw Error(ErrorCategory::config, "no dataset given (--data or \"data\" in the config)");
  if (rc.out.empty()) throw Error(ErrorCategory::config, "no run directory given (--out or \"out\" in the config)");
  if (!(rc.dev_fraction >= 0.0 && rc.dev_fraction < 1.0))
    throw Error(ErrorCategory::config, "dev_fraction must be in [0, 1)");
  t.validate();
  rc.rewards.validate();
  return rc;
}

// ------------------------------------------------------------------ datasets

/// Manifest path for a dataset name or path: an existing file or directory is used as
/// is, otherwise the name is looked up under $DXFORMER_DATA_DIR (default "data").
fs::path resolve_manifest(const std::string& name_or_path) {
  fs::path p = name_or_path;
  if (fs::is_directory(p)) return p / "manifest.json";
  if (fs::exists(p)) return p;
  const char* env = std::getenv("DXFORMER_DATA_DIR");
  const fs::path root = env && *env ? env : "data";
  const auto candidate = root / name_or_path / "manifest.json";
  if (!fs::exists(candidate))
    throw Error(ErrorCategory::io, "dataset '" + name_or_path + "' not found (looked for " + candidate.string() + ")");
  return candidate;
}

/// Deterministic dev carve-out when the manifest has no dev split.
void carve_dev(Dataset& ds, double fraction, std::uint64_t seed) {
  if (!ds.dev.empty() || fraction <= 0.0) return;
  const auto n = ds.train.size();
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (k == 0 || k >= n) return;
  std::mt19937_64 rng(mix_seed(seed, 0xde5));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<bool> to_dev(n, false);
  for (std::size_t i = 0; i < k; ++i) to_dev[idx[i]] = true;
  std::vector<StructuredMCR> train, dev;
  for (std::size_t i = 0; i < n; ++i) (to_dev[i] ? dev : train).push_back(std::move(ds.train[i]));
  ds.train = std::move(train);
  ds.dev = std::move(dev);
}

std::size_t derived_sequence_length(const Dataset& ds, const TrainConfig& t) {
  std::size_t n = required_sequence_length(ds.train, std::max(t.max_turns_train, t.max_turns_infer));
  n = std::max(n, required_sequence_length(ds.dev, t.max_turns_infer));
  n = std::max(n, required_sequence_length(ds.test, t.max_turns_infer));
  return std::min(n, ds.vocab.symptom_count());
}

/// Records of `split` resolved against a fixed vocabulary.
std::vector<StructuredMCR> load_split(const fs::path& manifest, const std::string& split, const Vocabulary& vocab,
                                      double dev_fraction, std::uint64_t seed) {
  const auto m = load_manifest(manifest);
  if (split == "dev" && !m.has("dev")) {
    Dataset ds;
    ds.vocab = vocab;
    ds.train = resolve(read_raw_records(m.path_for("train")), vocab);
    carve_dev(ds, dev_fraction, seed);
    if (ds.dev.empty()) throw Error(ErrorCategory::config, "manifest has no dev split to evaluate");
    return ds.dev;
  }
  return resolve(read_raw_records(m.path_for(split)), vocab);
}

// --------------------------------------------------------------- checkpoints

struct Loaded {
  Checkpoint checkpoint;
  Vocabulary vocab;
};

Loaded load_model(const fs::path& checkpoint, const std::optional<fs::path>& vocab_path) {
  const fs::path vp = vocab_path ? *vocab_path : checkpoint.parent_path() / "vocab.json";
  if (!fs::exists(vp)) throw Error(ErrorCategory::io, "vocabulary file '" + vp.string() + "' not found (use --vocab)");
  auto vocab = load_vocabulary(vp);
  auto ck = load_checkpoint(checkpoint, vocab.hash());
  return {std::move(ck), std::move(vocab)};
}

// -------------------------------------------------------------------- convert

struct ConvertFlags {
  fs::path input;
  fs::path out;
  std::string vocab_from = "train";
};

Attribute goal_attribute(const nlohmann::ordered_json& v, const std::string& id) {
  if (v.is_boolean()) return v.get<bool>() ? Attribute::pos : Attribute::neg;
  if (v.is_string()) {
    if (auto a = parse_attribute(v.get<std::string>()); a && *a != Attribute::unk) return *a;
  }
  throw Error(ErrorCategory::parse, "record '" + id + "': symptom value " + v.dump() + " is not true/false/POS/NEG");
}

/// Accepts canonical records or goal-style records
/// {consult_id, disease_tag, goal: {explicit_inform_slots, implicit_inform_slots}}.
std::vector<RawRecord> convert_records(const nlohmann::ordered_json& arr, const std::string& split,
                                       std::size_t& dropped) {
  if (!arr.is_array()) throw Error(ErrorCategory::parse, "split '" + split + "' is not an array");
  std::vector<RawRecord> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto& item = arr[i];
    if (!item.is_object()) throw Error(ErrorCategory::parse, "split '" + split + "': element " + std::to_string(i) + " is not an object");
    if (!item.contains("goal")) {
      auto recs = parse_raw_records(json::array({json::parse(item.dump())}));
      out.push_back(std::move(recs.front()));
      continue;
    }
    RawRecord r;
    if (item.contains("consult_id")) {
      const auto& cid = item.at("consult_id");
      r.id = cid.is_string() ? cid.get<std::string>() : cid.dump();
    } else {
      r.id = split + "-" + std::to_string(i);
    }
    if (!item.contains("disease_tag") || !item.at("disease_tag").is_string())
      throw Error(ErrorCategory::parse, "record '" + r.id + "': missing disease_tag");
    r.disease = item.at("disease_tag").get<std::string>();
    const auto& goal = item.at("goal");
    auto slots = [&](const char* key) {
      std::vector<RawRecord::Pair> pairs;
      if (!goal.contains(key)) return pairs;
      for (const auto& [name, value] : goal.at(key).items()) pairs.emplace_back(name, goal_attribute(value, r.id));
      return pairs;
    };
    r.explicit_symptoms = slots("explicit_inform_slots");
    for (auto& p : slots("implicit_inform_slots")) {
      const bool repeated = std::any_of(r.explicit_symptoms.begin(), r.explicit_symptoms.end(),
                                        [&](const auto& e) { return e.first == p.first; });
      if (repeated) {
        ++dropped;
      } else {
        r.implicit_symptoms.push_back(std::move(p));
      }
    }
    validate(r);
    out.push_back(std::move(r));
  }
  return out;
}

int run_convert(const ConvertFlags& f, const Common& c) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(detail::read_file(f.input));
  } catch (const nlohmann::ordered_json::parse_error& e) {
    throw Error(ErrorCategory::parse, f.input.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCategory::parse, "input must map split names to record arrays");
  std::map<std::string, std::vector<RawRecord>> splits;
  std::size_t dropped = 0;
  for (const auto& [name, arr] : doc.items()) {
    if (name != "train" && name != "dev" && name != "test")
      throw Error(ErrorCategory::parse, "unexpected split '" + name + "' (expected train, dev, test)");
    splits[name] = convert_records(arr, name, dropped);
  }
  if (!splits.count("train")) throw Error(ErrorCategory::parse, "input has no train split");
  std::vector<RawRecord> vocab_source = splits["train"];
  if (f.vocab_from == "all")
    for (const auto& [name, recs] : splits)
      if (name != "train") vocab_source.insert(vocab_source.end(), recs.begin(), recs.end());
  const auto vocab = build_vocabulary(vocab_source);
  for (const auto& [name, recs] : splits) resolve(recs, vocab);  // unknown names fail here

  fs::create_directories(f.out);
  json manifest{{"vocab", "vocab.json"}};
  json counts = json::object();
  for (const auto& [name, recs] : splits) {
    write_raw_records(recs, f.out / (name + ".json"));
    manifest[name] = name + ".json";
    counts[name] = recs.size();
  }
  save_vocabulary(vocab, f.out / "vocab.json");
  detail::write_file(f.out / "manifest.json", manifest.dump(1) + "\n");
  const json summary{{"records", counts},
                     {"symptoms", vocab.symptom_count()},
                     {"diseases", vocab.disease_count()},
                     {"dropped_implicit_duplicates", dropped},
                     {"manifest", (f.out / "manifest.json").string()}};
  if (dropped) log_line("warn", "implicit symptoms repeating an explicit one were dropped", {{"count", std::to_string(dropped)}});
  if (c.json_output) {
    std::cout << summary.dump() << '\n';
  } else {
    std::cout << "wrote " << (f.out / "manifest.json").string() << ": " << vocab.symptom_count() << " symptoms, "
              << vocab.disease_count() << " diseases\n";
  }
  return 0;
}

// ---------------------------------------------------------------------- synth

struct SynthFlags {
  fs::path out;
  SyntheticSpec spec;
  std::size_t test_records = 100;
};

int run_synth(SynthFlags f, const Common& c) {
  if (c.seed) f.spec.seed = *c.seed;
  const auto train = synthetic_records(f.spec, "train");
  auto test_spec = f.spec;
  test_spec.records = f.test_records;
  test_spec.seed = mix_seed(f.spec.seed, 0x7e57);
  const auto test = synthetic_records(test_spec, "test");
  fs::create_directories(f.out);
  write_raw_records(train, f.out / "train.json");
  write_raw_records(test, f.out / "test.json");
  detail::write_file(f.out / "manifest.json", json{{"train", "train.json"}, {"test", "test.json"}}.dump(1) + "\n");
  if (c.json_output) {
    std::cout << json{{"train", train.size()}, {"test", test.size()}, {"manifest", (f.out / "manifest.json").string()}}.dump()
              << '\n';
  } else {
    std::cout << "wrote " << (f.out / "manifest.json").string() << '\n';
  }
  return 0;
}

// ------------------------------------------------------------ pretrain/train

void print_report(const eval::EvalReport& r, const Vocabulary& vocab, const Common& c, json extra = json::object()) {
  if (c.json_output) {
    auto j = r.to_json(&vocab);
    for (const auto& [k, v] : extra.items()) j[k] = v;
    std::cout << j.dump() << '\n';
    return;
  }
  std::cout << std::fixed << std::setprecision(4) << "SX-Rec  " << r.sx_recall << "\nDX-Acc  " << r.dx_accuracy
            << "\nturns   " << r.mean_turns << "\nrecords " << r.records << '\n';
  for (std::size_t d = 0; d < r.per_disease_accuracy.size(); ++d)
    std::cout << "  " << vocab.disease_name(d) << ": " << r.per_disease_accuracy[d] << " (" << r.per_disease_count[d]
              << ")\n";
}

int run_training(const TrainFlags& f, const Common& c, bool joint) {
  auto rc = resolve_run_config(f, c);
  const auto started = std::chrono::steady_clock::now();
  rc.data = resolve_manifest(rc.data.string());
  auto ds = open_dataset(rc.data);
  carve_dev(ds, rc.dev_fraction, rc.train.seed);
  log_line("info", "dataset loaded",
           {{"train", std::to_string(ds.train.size())},
            {"dev", std::to_string(ds.dev.size())},
            {"test", std::to_string(ds.test.size())},
            {"symptoms", std::to_string(ds.vocab.symptom_count())},
            {"diseases", std::to_string(ds.vocab.disease_count())}});

  std::optional<DxFormer> model;
  if (joint && f.init) {
    auto ck = load_checkpoint(*f.init, ds.vocab.hash());
    rc.model = ck.model.config();
    model.emplace(std::move(ck.model));
  } else {
    rc.model.symptoms = ds.vocab.symptom_count();
    rc.model.diseases = ds.vocab.disease_count();
    if (!rc.sequence_length_set) rc.model.max_sequence_length = derived_sequence_length(ds, rc.train);
    model.emplace(rc.model, rc.train.seed);
  }

  fs::create_directories(rc.out);
  detail::write_file(rc.out / "config.json", rc.to_json().dump(2) + "\n");
  save_vocabulary(ds.vocab, rc.out / "vocab.json");
  std::ofstream metrics(rc.out / "metrics.csv");
  if (!metrics) throw Error(ErrorCategory::io, "cannot write " + (rc.out / "metrics.csv").string());
  metrics << metrics_csv_header();
  const auto on_epoch = [&](const EpochMetrics& m) {
    metrics << metrics_csv_row(m) << std::flush;
    log_line("info", "epoch",
             {{"phase", m.phase},
              {"epoch", std::to_string(m.epoch)},
              {"objective", fmt(m.objective)},
              {"ce", fmt(m.ce_loss)},
              {"dev_sx_recall", fmt(m.dev_sx_recall)},
              {"dev_dx_accuracy", fmt(m.dev_dx_accuracy)}});
  };

  if (!(joint && f.init)) {
    const auto r = pretrain(*model, ds.train, ds.dev, rc.train, on_epoch);
    log_line("info", "pretraining done", {{"best_epoch", std::to_string(r.best_epoch)}});
  }
  if (joint) {
    const auto cooc = build_cooccurrence(ds.train, ds.vocab);
    const auto r = train_joint(*model, ds.train, ds.dev, cooc, rc.train, rc.rewards, on_epoch);
    log_line("info", "joint training done", {{"best_epoch", std::to_string(r.best_epoch)}});
  }
  save_checkpoint(*model, ds.vocab.hash(), rc.out / "best.ckpt");
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  log_line("info", "checkpoint written", {{"path", (rc.out / "best.ckpt").string()}, {"seconds", fmt(seconds)}});

  const auto& final_set = ds.test.empty() ? ds.dev : ds.test;
  if (final_set.empty()) return 0;
  const auto report =
      eval::evaluate(*model, final_set, StopPolicy{rc.train.max_turns_infer, rc.train.epsilon}, rc.train.threads);
  const json extra{{"split", ds.test.empty() ? "dev" : "test"}, {"run_dir", rc.out.string()}};
  auto j = report.to_json(&ds.vocab);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  detail::write_file(rc.out / "report.json", j.dump(2) + "\n");
  print_report(report, ds.vocab, c, extra);
  return 0;
}

// ----------------------------------------------------------------- eval/sweep

struct EvalFlags {
  fs::path checkpoint;
  std::optional<fs::path> vocab;
  std::string data;
  std::string split = "test";
  std::size_t max_turns = 10;
  double epsilon = 0.99;
  bool no_threshold = false;
  std::string policy = "model";
  double dev_fraction = 0.1;
  // sweep only
  std::string axis = "max_turns";
  std::vector<double> values;
  std::optional<fs::path> csv_out;
};

void add_eval_flags(CLI::App* cmd, EvalFlags& f) {
  cmd->add_option("--checkpoint", f.checkpoint, "Checkpoint to evaluate")->required();
  cmd->add_option("--vocab", f.vocab, "Vocabulary file (default: vocab.json next to the checkpoint)");
  cmd->add_option("--data", f.data, "Dataset manifest, directory or name")->required();
  cmd->add_option("--split", f.split, "Split to evaluate")->check(CLI::IsMember({"train", "dev", "test"}));
  cmd->add_option("--max-turns", f.max_turns, "Inquiry turn budget")->check(CLI::PositiveNumber);
  cmd->add_option("--epsilon", f.epsilon, "Stop once the top disease probability reaches this value");
  cmd->add_flag("--no-threshold", f.no_threshold, "Disable threshold stopping");
  cmd->add_option("--policy", f.policy, "Inquiry policy")->check(CLI::IsMember({"model", "rule", "random"}));
  cmd->add_option("--dev-fraction", f.dev_fraction, "Dev carve-out used when the manifest has no dev split");
}

struct Evaluation {
  Loaded loaded;
  std::vector<StructuredMCR> records;
  std::unique_ptr<InquiryPolicy> policy;
  CoOccurrence cooc;
  StopPolicy stop;
};

std::unique_ptr<Evaluation> prepare_evaluation(const EvalFlags& f, const Common& c) {
  auto e = std::make_unique<Evaluation>();
  e->loaded = load_model(f.checkpoint, f.vocab);
  const auto manifest = resolve_manifest(f.data);
  const std::uint64_t seed = c.seed.value_or(TrainConfig{}.seed);
  e->records = load_split(manifest, f.split, e->loaded.vocab, f.dev_fraction, seed);
  if (e->records.empty()) throw Error(ErrorCategory::config, "split '" + f.split + "' is empty");
  const auto& model = e->loaded.checkpoint.model;
  if (f.policy == "rule") {
    e->cooc = build_cooccurrence(load_split(manifest, "train", e->loaded.vocab, 0.0, seed), e->loaded.vocab);
    e->policy = std::make_unique<eval::RuleAgentPolicy>(e->cooc);
  } else if (f.policy == "random") {
    e->policy = std::make_unique<RandomPolicy>();
  } else {
    e->policy = std::make_unique<DecoderPolicy>(model, DecodeMode::greedy);
  }
  if (!(f.epsilon > 0.0)) throw Error(ErrorCategory::config, "epsilon must be positive");
  e->stop = StopPolicy{f.max_turns, f.no_threshold ? std::nullopt : std::optional<double>(f.epsilon)};
  const std::size_t need = required_sequence_length(e->records, f.max_turns);
  if (std::min(need, model.config().symptoms) > model.config().max_sequence_length + 1)
    throw Error(ErrorCategory::config, "turn budget too long for this checkpoint's sequence length");
  return e;
}

int run_eval(const EvalFlags& f, const Common& c) {
  auto e = prepare_evaluation(f, c);
  const auto& model = e->loaded.checkpoint.model;
  const EncoderDiagnoser diagnoser(model);
  const auto report = eval::evaluate(*e->policy, diagnoser, e->records, model.config().symptoms,
                                     model.config().diseases, e->stop, c.threads, c.seed.value_or(0));
  print_report(report, e->loaded.vocab, c,
               json{{"split", f.split}, {"policy", f.policy}, {"checkpoint_hash", e->loaded.checkpoint.content_hash}});
  return 0;
}

int run_sweep(const EvalFlags& f, const Common& c) {
  if (f.values.empty()) throw Error(ErrorCategory::config, "sweep: empty grid (--values)");
  auto e = prepare_evaluation(f, c);
  const auto& model = e->loaded.checkpoint.model;
  const EncoderDiagnoser diagnoser(model);
  const auto axis = f.axis == "epsilon" ? eval::SweepAxis::epsilon : eval::SweepAxis::max_turns;
  if (axis == eval::SweepAxis::max_turns) {
    const double top = *std::max_element(f.values.begin(), f.values.end());
    const std::size_t need = required_sequence_length(e->records, static_cast<std::size_t>(top));
    if (std::min(need, model.config().symptoms) > model.config().max_sequence_length + 1)
      throw Error(ErrorCategory::config, "turn budget too long for this checkpoint's sequence length");
  }
  const auto rows = eval::sweep(*e->policy, diagnoser, e->records, model.config().symptoms, model.config().diseases,
                                axis, f.values, e->stop, c.threads);
  const auto csv = eval::sweep_csv(axis, rows);
  if (f.csv_out) detail::write_file(*f.csv_out, csv);
  if (c.json_output) {
    json arr = json::array();
    for (const auto& r : rows) {
      auto j = r.report.to_json(&e->loaded.vocab);
      j[std::string(eval::to_string(axis))] = r.value;
      arr.push_back(std::move(j));
    }
    std::cout << arr.dump() << '\n';
  } else {
    std::cout << csv;
  }
  return 0;
}

// --------------------------------------------------------------------- bounds

struct BoundsFlags {
  std::string dataset;
  std::string mode = "all";
  std::size_t folds = 5;
};

int run_bounds(const BoundsFlags& f, const Common& c) {
  const auto manifest = resolve_manifest(f.dataset);
  const auto ds = open_dataset(manifest);
  if (ds.test.empty()) throw Error(ErrorCategory::config, "bounds need a test split");
  std::vector<eval::FeatureMode> modes;
  if (f.mode == "all") {
    modes = {eval::FeatureMode::lower_bound, eval::FeatureMode::upper_bound, eval::FeatureMode::upper_bound_pos,
             eval::FeatureMode::upper_bound_neg};
  } else if (auto m = eval::parse_feature_mode(f.mode)) {
    modes = {*m};
  } else {
    throw Error(ErrorCategory::config, "unknown bounds mode '" + f.mode + "' (LB, UB, UB_P, UB_N, all)");
  }
  eval::BoundsOptions opt;
  opt.folds = f.folds;
  if (c.seed) opt.seed = *c.seed;
  json entries = json::array();
  for (auto m : modes) {
    const auto e = eval::bounds(ds.train, ds.test, ds.vocab.symptom_count(), ds.vocab.disease_count(), m, opt);
    entries.push_back(e.to_json());
    if (!c.json_output)
      std::cout << std::left << std::setw(5) << eval::to_string(m) << std::fixed << std::setprecision(4) << e.accuracy
                << "  (penalty " << std::setprecision(3) << e.penalty << ", cv " << std::setprecision(4) << e.cv_mean()
                << ")\n";
  }
  if (c.json_output) std::cout << json{{"dataset", f.dataset}, {"entries", entries}}.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------- serve

struct ServeFlags {
  fs::path checkpoint;
  std::optional<fs::path> vocab;
  std::string host = "127.0.0.1";
  int port = 8080;
  double epsilon = 0.99;
  std::size_t max_turns = 10;
  std::size_t session_ttl = 1800;
  std::size_t session_cap = 1024;
  std::string cors_origin;
};

httplib::Server* g_server = nullptr;

extern "C" void on_signal(int) {
  if (g_server) g_server->stop();
}

int run_serve(const ServeFlags& f, const Common&) {
  const auto loaded = load_model(f.checkpoint, f.vocab);
  SessionSettings settings;
  settings.epsilon = f.epsilon;
  settings.max_turns = f.max_turns;
  settings.ttl = std::chrono::seconds(f.session_ttl);
  settings.session_cap = f.session_cap;
  SessionManager sessions(loaded.checkpoint.model, loaded.vocab, settings);
  httplib::Server server;
  install_routes(server, sessions, ServiceInfo{loaded.checkpoint.content_hash, loaded.vocab.hash(), f.cors_origin});
  const int port = f.port == 0 ? server.bind_to_any_port(f.host) : (server.bind_to_port(f.host, f.port) ? f.port : -1);
  if (port < 0) throw Error(ErrorCategory::io, "cannot bind " + f.host + ":" + std::to_string(f.port));
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  log_line("notice", "listening",
           {{"host", f.host}, {"port", std::to_string(port)}, {"checkpoint_hash", loaded.checkpoint.content_hash}});
  server.listen_after_bind();
  g_server = nullptr;
  log_line("info", "stopped");
  return 0;
}

// ------------------------------------------------------------------- interact

struct InteractFlags {
  fs::path checkpoint;
  std::optional<fs::path> vocab;
  double epsilon = 0.99;
  std::size_t max_turns = 10;
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

/// Explicit symptoms as "name:POS, other:NEG" (":POS" may be omitted).
json parse_explicit_line(const std::string& line) {
  json pairs = json::array();
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::string attr = "POS";
    if (const auto colon = item.rfind(':'); colon != std::string::npos) {
      attr = trim(item.substr(colon + 1));
      item = trim(item.substr(0, colon));
    }
    pairs.push_back({item, attr});
  }
  return pairs;
}

std::optional<Attribute> parse_answer(std::string s) {
  s = trim(s);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (s == "y" || s == "yes" || s == "pos") return Attribute::pos;
  if (s == "n" || s == "no" || s == "neg") return Attribute::neg;
  if (s == "u" || s == "?" || s == "unk" || s == "unknown") return Attribute::unk;
  return std::nullopt;
}

int run_interact(const InteractFlags& f, const Common& c) {
  const auto loaded = load_model(f.checkpoint, f.vocab);
  SessionSettings settings;
  settings.epsilon = f.epsilon;
  settings.max_turns = f.max_turns;
  settings.session_cap = 1;
  SessionManager sessions(loaded.checkpoint.model, loaded.vocab, settings);
  std::ostream& prompt = c.json_output ? std::cerr : std::cout;
  prompt << "Explicit symptoms (name:POS|NEG, comma separated): " << std::flush;
  std::string line;
  if (!std::getline(std::cin, line)) throw Error(ErrorCategory::parse, "input ended before explicit symptoms");
  auto session = sessions.create(sessions.parse_explicit(parse_explicit_line(line)));
  while (auto q = session->driver().pending_query()) {
    prompt << "[" << session->driver().state().turn + 1 << "] " << loaded.vocab.symptom_name(*q) << "? (y/n/u) "
           << std::flush;
    std::optional<Attribute> a;
    while (!a) {
      if (!std::getline(std::cin, line)) throw Error(ErrorCategory::parse, "input ended during the consultation");
      a = parse_answer(line);
      if (!a) prompt << "answer y, n or u: " << std::flush;
    }
    sessions.answer(*session, *a);
  }
  const auto snap = sessions.snapshot(*session);
  if (c.json_output) {
    std::cout << snap.dump() << '\n';
  } else {
    const auto& d = snap["diagnosis"];
    const auto probs = d["probs"].get<std::vector<double>>();
    std::cout << "Diagnosis: " << d["disease"].get<std::string>() << " (p=" << std::fixed << std::setprecision(3)
              << *std::max_element(probs.begin(), probs.end()) << ", " << snap["turn"].get<std::size_t>()
              << " turns, stop: " << d["stop_reason"].get<std::string>() << ")\n";
  }
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

int fail(const std::string& category, const std::string& message, int code) {
  std::cerr << "error: " << category << ": " << one_line(message) << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DxFormer: symptom inquiry and diagnosis with a decoupled decoder and encoder"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  Common common;
  ConvertFlags convert_flags;
  auto* convert = app.add_subcommand("convert", "Convert goal-style or canonical JSON into a dataset directory");
  convert->add_option("--input", convert_flags.input, "JSON object mapping split name to records")->required();
  convert->add_option("--out", convert_flags.out, "Output directory")->required();
  convert->add_option("--vocab-from", convert_flags.vocab_from, "Splits that define the vocabulary")
      ->check(CLI::IsMember({"train", "all"}));
  add_common(convert, common);

  SynthFlags synth_flags;
  auto* synth = app.add_subcommand("synth", "Write a synthetic clustered dataset");
  synth->add_option("--out", synth_flags.out, "Output directory")->required();
  synth->add_option("--records", synth_flags.spec.records, "Training records");
  synth->add_option("--test-records", synth_flags.test_records, "Test records");
  synth->add_option("--diseases", synth_flags.spec.diseases, "Number of diseases")->check(CLI::PositiveNumber);
  synth->add_option("--symptoms-per-disease", synth_flags.spec.symptoms_per_disease, "Cluster size")
      ->check(CLI::Range(2, 1000));
  synth->add_option("--shared", synth_flags.spec.shared_symptoms, "Symptoms shared by every disease");
  synth->add_option("--negative-rate", synth_flags.spec.negative_rate, "Probability an implicit finding is NEG")
      ->check(CLI::Range(0.0, 1.0));
  synth->add_flag("--ambiguous-explicit", synth_flags.spec.ambiguous_explicit,
                  "Draw the explicit symptom from the shared pool");
  add_common(synth, common);

  TrainFlags pretrain_flags;
  auto* pre = app.add_subcommand("pretrain", "Language-model pretraining of the decoder (and encoder head)");
  add_train_flags(pre, pretrain_flags, false);
  add_common(pre, common);

  TrainFlags train_flags;
  auto* train = app.add_subcommand("train", "Pretraining followed by joint REINFORCE + cross-entropy training");
  add_train_flags(train, train_flags, true);
  add_common(train, common);

  EvalFlags eval_flags;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  add_eval_flags(ev, eval_flags);
  add_common(ev, common);

  EvalFlags sweep_flags;
  auto* sw = app.add_subcommand("sweep", "Evaluate over a grid of turn budgets or thresholds");
  add_eval_flags(sw, sweep_flags);
  sw->add_option("--axis", sweep_flags.axis, "Swept quantity")->check(CLI::IsMember({"max_turns", "epsilon"}));
  sw->add_option("--values", sweep_flags.values, "Grid values, comma separated")->delimiter(',')->required();
  sw->add_option("--csv", sweep_flags.csv_out, "Also write the CSV table here");
  add_common(sw, common);

  BoundsFlags bounds_flags;
  auto* bd = app.add_subcommand("bounds", "Reference classifier accuracy bounds (LB, UB, UB_P, UB_N)");
  bd->add_option("--dataset", bounds_flags.dataset, "Dataset name under $DXFORMER_DATA_DIR, or a manifest path")
      ->required();
  bd->add_option("--mode", bounds_flags.mode, "LB, UB, UB_P, UB_N or all");
  bd->add_option("--folds", bounds_flags.folds, "Cross-validation folds")->check(CLI::Range(2, 100));
  add_common(bd, common);

  ServeFlags serve_flags;
  auto* sv = app.add_subcommand("serve", "Serve consultation sessions over HTTP");
  sv->add_option("--checkpoint", serve_flags.checkpoint, "Checkpoint to serve")->envname("DXFORMER_CHECKPOINT")->required();
  sv->add_option("--vocab", serve_flags.vocab, "Vocabulary file (default: vocab.json next to the checkpoint)")
      ->envname("DXFORMER_VOCAB");
  sv->add_option("--host", serve_flags.host, "Bind address")->envname("DXFORMER_HOST");
  sv->add_option("--port", serve_flags.port, "Port (0 picks a free one)")->envname("DXFORMER_PORT")->check(CLI::Range(0, 65535));
  sv->add_option("--epsilon", serve_flags.epsilon, "Confidence threshold")->envname("DXFORMER_EPSILON");
  sv->add_option("--max-turns", serve_flags.max_turns, "Turn budget per session")
      ->envname("DXFORMER_MAX_TURNS")
      ->check(CLI::PositiveNumber);
  sv->add_option("--session-ttl", serve_flags.session_ttl, "Idle seconds before a session expires")
      ->envname("DXFORMER_SESSION_TTL");
  sv->add_option("--session-cap", serve_flags.session_cap, "Maximum live sessions")
      ->envname("DXFORMER_SESSION_CAP")
      ->check(CLI::PositiveNumber);
  sv->add_option("--cors-origin", serve_flags.cors_origin, "Allowed browser origin")->envname("DXFORMER_CORS_ORIGIN");
  add_common(sv, common);

  InteractFlags interact_flags;
  auto* ia = app.add_subcommand("interact", "Terminal consultation against a checkpoint");
  ia->add_option("--checkpoint", interact_flags.checkpoint, "Checkpoint to use")->required();
  ia->add_option("--vocab", interact_flags.vocab, "Vocabulary file (default: vocab.json next to the checkpoint)");
  ia->add_option("--epsilon", interact_flags.epsilon, "Confidence threshold");
  ia->add_option("--max-turns", interact_flags.max_turns, "Turn budget")->check(CLI::PositiveNumber);
  add_common(ia, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage-error", e.what(), 2);
  }
  g_quiet = common.quiet;

  try {
    if (convert->parsed()) return run_convert(convert_flags, common);
    if (synth->parsed()) return run_synth(synth_flags, common);
    if (pre->parsed()) return run_training(pretrain_flags, common, false);
    if (train->parsed()) return run_training(train_flags, common, true);
    if (ev->parsed()) return run_eval(eval_flags, common);
    if (sw->parsed()) return run_sweep(sweep_flags, common);
    if (bd->parsed()) return run_bounds(bounds_flags, common);
    if (sv->parsed()) return run_serve(serve_flags, common);
    if (ia->parsed()) return run_interact(interact_flags, common);
  } catch (const CliFailure& e) {
    return fail(e.category, e.what(), e.code);
  } catch (const Error& e) {
    return fail(std::string(category_name(e.category())), e.what(), e.category() == ErrorCategory::config ? 2 : 1);
  } catch (const json::exception& e) {
    return fail("parse-error", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 2;
}
