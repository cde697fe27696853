#include "iclmol/cli.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "iclmol/baselines.hpp"
#include "iclmol/encoder.hpp"
#include "iclmol/icl.hpp"
#include "iclmol/mining.hpp"
#include "iclmol/molgraph.hpp"
#include "iclmol/report.hpp"
#include "iclmol/synthetic.hpp"
#include "iclmol/training.hpp"

namespace iclmol::cli {

namespace fs = std::filesystem;

namespace {

/// Missing or contradictory arguments detected after parsing.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Global {
  std::uint64_t seed = 0;
  std::string config;
  unsigned threads = 1;
  std::string precision = "f32";
};

// ---------------------------------------------------------------------------
// TOML configuration

const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> keys{
      {"encoder", {"n_blocks", "dim", "n_rbf", "local_cutoff", "global_cutoff", "n_elements"}},
      {"pretrain", {"lr", "epochs", "batch_size", "warmup_steps", "ema_decay", "init_bias_from_data"}},
      {"model", {"model_dim", "n_layers", "n_heads", "max_positions", "layer_norm"}},
      {"icl",
       {"lr", "batch_sequences", "epochs", "period", "patience_epochs", "lr_factor", "lr_floor", "label_shift_std"}},
      {"mining", {"min_support", "k", "max_per_pattern", "max_extra_carbons", "max_nodes"}},
      {"synthetic", {"n_patterns", "molecules_per_pattern", "noise", "offset_scale", "holdout_fraction"}},
      {"data",
       {"dataset", "train_dataset", "val_dataset", "patterns", "contexts", "train_contexts", "val_contexts", "encoder",
        "encodings", "model", "out"}},
  };
  return keys;
}

class Config {
 public:
  Config() = default;

  static Config load(const std::string& path) {
    Config c;
    if (path.empty()) return c;
    try {
      c.table_ = toml::parse_file(path);
    } catch (const toml::parse_error& e) {
      const auto& where = e.source().begin;
      throw ParseError(path, where.line, std::string(e.description()));
    }
    c.dir_ = fs::path(path).parent_path();
    for (auto&& [section, node] : c.table_) {
      const std::string name(section.str());
      const auto it = allowed_keys().find(name);
      if (it == allowed_keys().end()) throw DataError(path + ": unknown section [" + name + "]");
      const auto* tbl = node.as_table();
      if (!tbl) throw DataError(path + ": [" + name + "] must be a table");
      for (auto&& [key, value] : *tbl) {
        if (!it->second.count(std::string(key.str())))
          throw DataError(path + ": unknown key '" + std::string(key.str()) + "' in [" + name + "]");
      }
    }
    return c;
  }

  void get(const char* section, const char* key, double& out) const {
    const auto node = table_[section][key];
    if (!node) return;
    const auto v = node.value<double>();
    if (!v) throw DataError(std::string("config: [") + section + "]." + key + " must be a number");
    out = *v;
  }

  void get(const char* section, const char* key, std::size_t& out) const {
    const auto node = table_[section][key];
    if (!node) return;
    const auto v = node.value<std::int64_t>();
    if (!v || *v < 0 || !node.is_integer())
      throw DataError(std::string("config: [") + section + "]." + key + " must be a non-negative integer");
    out = static_cast<std::size_t>(*v);
  }

  void get(const char* section, const char* key, bool& out) const {
    const auto node = table_[section][key];
    if (!node) return;
    const auto v = node.value<bool>();
    if (!v) throw DataError(std::string("config: [") + section + "]." + key + " must be a boolean");
    out = *v;
  }

  /// A [data] path, taken relative to the config file's directory.
  std::string data_path(const char* key) const {
    const auto v = table_["data"][key].value<std::string>();
    if (!v) return {};
    const fs::path p(*v);
    return (p.is_relative() ? dir_ / p : p).string();
  }

 private:
  toml::table table_;
  fs::path dir_;
};

std::string require_path(const std::string& flag_value, const Config& cfg, const char* data_key, const char* flag) {
  if (!flag_value.empty()) return flag_value;
  auto p = cfg.data_path(data_key);
  if (p.empty()) throw UsageError(std::string(flag) + " is required (or set [data]." + data_key + " in --config)");
  return p;
}

std::string optional_path(const std::string& flag_value, const Config& cfg, const char* data_key) {
  return flag_value.empty() ? cfg.data_path(data_key) : flag_value;
}

enc::EncoderConfig encoder_config(const Config& c) {
  enc::EncoderConfig e;
  c.get("encoder", "n_blocks", e.n_blocks);
  c.get("encoder", "dim", e.dim);
  c.get("encoder", "n_rbf", e.n_rbf);
  c.get("encoder", "local_cutoff", e.local_cutoff);
  c.get("encoder", "global_cutoff", e.global_cutoff);
  c.get("encoder", "n_elements", e.n_elements);
  e.validate();
  return e;
}

train::PretrainConfig pretrain_config(const Config& c) {
  train::PretrainConfig p;
  c.get("pretrain", "lr", p.lr);
  c.get("pretrain", "epochs", p.epochs);
  c.get("pretrain", "batch_size", p.batch_size);
  c.get("pretrain", "warmup_steps", p.warmup_steps);
  c.get("pretrain", "ema_decay", p.ema_decay);
  c.get("pretrain", "init_bias_from_data", p.init_bias_from_data);
  return p;
}

icl::IclConfig model_config(const Config& c) {
  icl::IclConfig m;
  c.get("model", "model_dim", m.model_dim);
  c.get("model", "n_layers", m.n_layers);
  c.get("model", "n_heads", m.n_heads);
  c.get("model", "max_positions", m.max_positions);
  c.get("model", "layer_norm", m.layer_norm);
  return m;
}

train::IclTrainConfig icl_train_config(const Config& c) {
  train::IclTrainConfig t;
  c.get("icl", "lr", t.lr);
  c.get("icl", "batch_sequences", t.batch_sequences);
  c.get("icl", "epochs", t.epochs);
  c.get("icl", "period", t.period);
  c.get("icl", "patience_epochs", t.patience);
  c.get("icl", "lr_factor", t.lr_factor);
  c.get("icl", "lr_floor", t.lr_floor);
  c.get("icl", "label_shift_std", t.label_shift_std);
  return t;
}

template <class T>
void override_with(const std::optional<T>& flag, T& target) {
  if (flag) target = *flag;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// ---------------------------------------------------------------------------
// Subcommands

struct SplitArgs {
  std::string dataset, out;
};

int cmd_split(const SplitArgs& a, const Config& cfg, std::ostream& out) {
  const auto molecules = mol::parse_dataset(require_path(a.dataset, cfg, "dataset", "--dataset"));
  std::array<std::vector<mol::Molecule>, 3> parts;
  for (const auto& m : molecules) parts[static_cast<std::size_t>(mol::classify_ood(m))].push_back(m);
  const fs::path dir = require_path(a.out, cfg, "out", "--out");
  fs::create_directories(dir);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string name(mol::to_string(static_cast<mol::OodClass>(i)));
    mol::write_dataset(dir / (name + ".jsonl"), parts[i]);
    out << name << ' ' << parts[i].size() << '\n';
  }
  return kOk;
}

struct MineArgs {
  std::string dataset, out;
  std::optional<std::size_t> min_support, max_nodes;
};

int cmd_mine(const MineArgs& a, const Config& cfg, const Global& g, std::ostream& out) {
  mining::MiningOptions opts;
  cfg.get("mining", "k", opts.min_support);  // a pattern must fill at least one context
  cfg.get("mining", "min_support", opts.min_support);
  cfg.get("mining", "max_nodes", opts.constraints.max_nodes);
  override_with(a.min_support, opts.min_support);
  override_with(a.max_nodes, opts.constraints.max_nodes);
  opts.threads = g.threads;
  const auto molecules = mol::parse_dataset(require_path(a.dataset, cfg, "dataset", "--dataset"));
  const auto patterns = mining::mine_patterns(molecules, opts);
  const fs::path dst = require_path(a.out, cfg, "patterns", "--out");
  ensure_parent(dst);
  mining::write_patterns(dst, patterns);
  out << "patterns " << patterns.size() << '\n';
  return kOk;
}

struct ContextArgs {
  std::string dataset, patterns, out;
  std::optional<std::size_t> k, max_per_pattern, max_extra;
};

int cmd_contexts(const ContextArgs& a, const Config& cfg, const Global& g, std::ostream& out) {
  mining::ContextOptions opts;
  cfg.get("mining", "k", opts.k);
  cfg.get("mining", "max_per_pattern", opts.max_per_pattern);
  cfg.get("mining", "max_extra_carbons", opts.max_extra_carbons);
  override_with(a.k, opts.k);
  override_with(a.max_per_pattern, opts.max_per_pattern);
  override_with(a.max_extra, opts.max_extra_carbons);
  if (opts.k < 2) throw UsageError("--k must be at least 2");
  opts.seed = g.seed;
  const auto molecules = mol::parse_dataset(require_path(a.dataset, cfg, "dataset", "--dataset"));
  const auto patterns = mining::read_patterns(fs::path(require_path(a.patterns, cfg, "patterns", "--patterns")));
  const auto contexts = mining::build_contexts(patterns, molecules, opts);
  const fs::path dst = require_path(a.out, cfg, "contexts", "--out");
  ensure_parent(dst);
  mining::write_contexts(dst, contexts);
  out << "contexts " << contexts.size() << '\n';
  return kOk;
}

struct SyntheticArgs {
  std::string out;
  std::optional<std::size_t> n_patterns, per_pattern;
  std::optional<double> noise, offset_scale, holdout_fraction;
};

int cmd_synthetic(const SyntheticArgs& a, const Config& cfg, const Global& g, std::ostream& out) {
  std::size_t n_patterns = 40, per_pattern = 120;
  mining::SyntheticTaskSpec spec;
  cfg.get("synthetic", "n_patterns", n_patterns);
  cfg.get("synthetic", "molecules_per_pattern", per_pattern);
  cfg.get("synthetic", "noise", spec.noise);
  cfg.get("synthetic", "offset_scale", spec.offset_scale);
  cfg.get("synthetic", "holdout_fraction", spec.holdout_fraction);
  cfg.get("mining", "k", spec.context_k);
  cfg.get("mining", "max_per_pattern", spec.max_contexts_per_pattern);
  cfg.get("mining", "max_extra_carbons", spec.max_extra_carbons);
  override_with(a.n_patterns, n_patterns);
  override_with(a.per_pattern, per_pattern);
  override_with(a.noise, spec.noise);
  override_with(a.offset_scale, spec.offset_scale);
  override_with(a.holdout_fraction, spec.holdout_fraction);
  const auto corpus = mining::gen_synthetic(n_patterns, per_pattern, spec, g.seed);
  const fs::path dir = require_path(a.out, cfg, "out", "--out");
  fs::create_directories(dir);
  mining::write_corpus(dir, corpus);
  out << "molecules " << corpus.molecules.size() << "\npatterns " << corpus.patterns.size() << "\ncontexts "
      << corpus.contexts.size() << "\nholdout_patterns " << corpus.holdout_pattern_ids.size() << '\n';
  return kOk;
}

struct PretrainArgs {
  std::string train, val, out, metrics;
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
};

template <std::floating_point T>
int cmd_pretrain(const PretrainArgs& a, const Config& cfg, const Global& g, std::ostream& out) {
  const auto ecfg = encoder_config(cfg);
  auto tc = pretrain_config(cfg);
  override_with(a.epochs, tc.epochs);
  override_with(a.lr, tc.lr);
  tc.seed = g.seed;
  const auto train_set = mol::parse_dataset(require_path(a.train, cfg, "train_dataset", "--train"));
  const auto val_path = optional_path(a.val, cfg, "val_dataset");
  const auto val_set = val_path.empty() ? std::vector<mol::Molecule>{} : mol::parse_dataset(val_path);
  auto res = train::pretrain_encoder<T>(train_set, val_set, ecfg, tc, enc::init_encoder_params<T>(ecfg, g.seed));
  const fs::path dst = require_path(a.out, cfg, "encoder", "--out");
  ensure_parent(dst);
  enc::save_encoder(dst, res.ema, ecfg);
  if (!a.metrics.empty()) train::write_metrics(fs::path(a.metrics), res.history);
  if (!res.history.empty()) {
    const auto& last = res.history.back();
    out << "epochs " << tc.epochs << "\nfinal_" << last.split << "_mae_mev " << report::format_mev(last.mae_mev) << '\n';
  }
  return kOk;
}

struct EncodeArgs {
  std::string dataset, encoder, out;
};

template <std::floating_point T>
int cmd_encode(const EncodeArgs& a, const Config& cfg, const Global& g, std::ostream& out) {
  enc::EncoderConfig ecfg;
  const auto params = enc::load_encoder<T>(require_path(a.encoder, cfg, "encoder", "--encoder"), ecfg);
  const auto molecules = mol::parse_dataset(require_path(a.dataset, cfg, "dataset", "--dataset"));
  std::vector<std::string> ids;
  ids.reserve(molecules.size());
  for (const auto& m : molecules) ids.push_back(m.id);
  const enc::EncodingCache cache(ids, enc::encode_all<T>(molecules, params, ecfg, g.threads));
  const fs::path dst = require_path(a.out, cfg, "encodings", "--out");
  ensure_parent(dst);
  cache.save(dst);
  out << "encoded " << cache.size() << " dim " << cache.dim() << '\n';
  return kOk;
}

struct TrainIclArgs {
  std::string train_contexts, val_contexts, dataset, encodings, out, metrics;
  std::optional<std::size_t> epochs;
  std::optional<double> lr, label_shift_std;
};

template <std::floating_point T>
int cmd_train_icl(const TrainIclArgs& a, const Config& cfg, const Global& g, std::ostream& out) {
  auto mcfg = model_config(cfg);
  auto tc = icl_train_config(cfg);
  override_with(a.epochs, tc.epochs);
  override_with(a.lr, tc.lr);
  override_with(a.label_shift_std, tc.label_shift_std);
  tc.seed = g.seed;
  const auto train_ctx = mining::read_contexts(fs::path(require_path(a.train_contexts, cfg, "train_contexts", "--train-contexts")));
  const auto val_path = optional_path(a.val_contexts, cfg, "val_contexts");
  const auto val_ctx = val_path.empty() ? std::vector<mining::ContextSequence>{} : mining::read_contexts(fs::path(val_path));
  const auto labels = train::label_table(mol::parse_dataset(require_path(a.dataset, cfg, "dataset", "--dataset")));
  const auto cache = enc::EncodingCache::load(require_path(a.encodings, cfg, "encodings", "--encodings"));
  mcfg.input_dim = cache.dim();
  const auto res = train::train_icl<T>(train_ctx, val_ctx, cache, labels, mcfg, tc);
  const fs::path dst = require_path(a.out, cfg, "model", "--out");
  ensure_parent(dst);
  icl::save_icl(dst, res.params, mcfg, res.stats);
  if (!a.metrics.empty()) train::write_metrics(fs::path(a.metrics), res.history);
  out << "best_epoch " << res.best_epoch << "\nbest_val_mae_mev " << report::format_mev(res.best_val_mae_mev) << '\n';
  return kOk;
}

struct EvalArgs {
  std::vector<std::string> eval_sets;
  std::vector<std::string> readouts;
  std::string dataset, encodings, model, encoder, out, json, predictions;
  std::string train_set = "base";
  std::string scope = "context";
  double ridge = 0.0;
  bool reference = false;
};

/// Resolves "all" and checks that the inputs each readout needs are present.
std::vector<std::string> resolve_readouts(const std::vector<std::string>& requested) {
  const std::vector<std::string> order{report::kSelectionLlm, report::kSelectionRegression, report::kRegression,
                                       report::kEncoderReadout};
  std::set<std::string> want;
  for (const auto& r : requested) {
    if (r == "all") {
      want.insert(order.begin(), order.begin() + 3);
    } else {
      want.insert(r);
    }
  }
  std::vector<std::string> out;
  for (const auto& r : order)
    if (want.count(r)) out.push_back(r);
  return out;
}

template <std::floating_point T>
int cmd_eval(const EvalArgs& a, const Config& cfg, std::ostream& out) {
  const auto readouts = resolve_readouts(a.readouts);
  const auto needs = [&](const char* r) { return std::find(readouts.begin(), readouts.end(), r) != readouts.end(); };

  std::vector<std::pair<std::string, std::string>> sets;
  for (const auto& spec : a.eval_sets) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
      throw UsageError("--eval expects NAME=CONTEXTS, got '" + spec + "'");
    sets.emplace_back(spec.substr(0, eq), spec.substr(eq + 1));
  }
  if (sets.empty()) {
    const auto p = cfg.data_path("contexts");
    if (p.empty()) throw UsageError("--eval NAME=CONTEXTS is required");
    sets.emplace_back("eval", p);
  }

  const auto labels = train::label_table(mol::parse_dataset(require_path(a.dataset, cfg, "dataset", "--dataset")));
  const auto cache = enc::EncodingCache::load(require_path(a.encodings, cfg, "encodings", "--encodings"));

  std::optional<num::ParamStore<T>> model;
  icl::IclConfig mcfg;
  icl::Standardizer stats;
  std::optional<baselines::SelectionMap> selection;
  if (needs(report::kSelectionLlm) || needs(report::kSelectionRegression)) {
    model = icl::load_icl<T>(require_path(a.model, cfg, "model", "--model"), mcfg, stats);
    if (mcfg.input_dim != cache.dim() || stats.dim() != cache.dim())
      throw DimensionError("model expects encodings of dim " + std::to_string(mcfg.input_dim) + ", cache has " +
                           std::to_string(cache.dim()));
    selection = baselines::SelectionMap::from_model(*model, stats);
  }
  std::optional<num::ParamStore<T>> encoder;
  enc::EncoderConfig ecfg;
  if (needs(report::kEncoderReadout)) {
    encoder = enc::load_encoder<T>(require_path(a.encoder, cfg, "encoder", "--encoder"), ecfg);
    if (ecfg.output_dim() != cache.dim())
      throw DimensionError("encoder output dim " + std::to_string(ecfg.output_dim()) + " differs from cache dim " +
                           std::to_string(cache.dim()));
  }
  const bool pooled = a.scope == "pattern";

  report::EvalReport rep;
  std::ofstream pred_out;
  if (!a.predictions.empty()) {
    ensure_parent(a.predictions);
    pred_out.open(a.predictions, std::ios::binary);
    if (!pred_out) throw DataError("cannot write " + a.predictions);
    pred_out << "eval_set,readout,context,pattern_id,molecule_id,prediction_ev\n";
  }

  for (const auto& [name, path] : sets) {
    const auto contexts = mining::read_contexts(fs::path(path));
    std::vector<std::string> last_ids;
    std::vector<double> truth;
    for (const auto& c : contexts) {
      if (c.molecule_ids.size() < 2) throw DataError("context of pattern '" + c.pattern_id + "' has fewer than 2 examples");
      last_ids.push_back(c.molecule_ids.back());
      const auto it = labels.find(last_ids.back());
      if (it == labels.end()) throw DataError("no label for molecule '" + last_ids.back() + "'");
      truth.push_back(it->second);
    }
    for (const auto& readout : readouts) {
      std::vector<double> pred;
      if (!contexts.empty()) {
        if (readout == report::kSelectionLlm) {
          for (const auto& row : train::predict_contexts(*model, mcfg, stats, contexts, cache, labels))
            pred.push_back(row.back());
        } else if (readout == report::kEncoderReadout) {
          pred = train::readout_predictions(cache, last_ids, *encoder, ecfg);
        } else {
          const auto mode = readout == report::kRegression ? baselines::RegressionMode::FullRegression
                                                           : baselines::RegressionMode::SelectionRegression;
          const baselines::SelectionMap* sel = selection ? &*selection : nullptr;
          if (pooled) {
            pred = baselines::ablation_predict_pooled(contexts, mode, cache, labels, sel, a.ridge);
          } else {
            for (const auto& c : contexts) pred.push_back(baselines::ablation_predict(c, mode, cache, labels, sel, a.ridge));
          }
        }
      }
      rep.rows.push_back({a.train_set, name, readout, report::mae_mev(pred, truth), contexts.size()});
      if (pred_out.is_open()) {
        char buf[64];
        for (std::size_t c = 0; c < pred.size(); ++c) {
          std::snprintf(buf, sizeof buf, "%.17g", pred[c]);
          pred_out << name << ',' << readout << ',' << c << ',' << contexts[c].pattern_id << ',' << last_ids[c] << ','
                   << buf << '\n';
        }
      }
    }
  }

  std::vector<std::string> names;
  for (const auto& s : sets) names.push_back(s.first);
  rep.validate(names);
  if (!a.out.empty()) {
    ensure_parent(a.out);
    report::write_csv(fs::path(a.out), rep);
  }
  if (!a.json.empty()) {
    ensure_parent(a.json);
    std::ofstream js(a.json, std::ios::binary);
    if (!js) throw DataError("cannot write " + a.json);
    js << nlohmann::json(rep).dump(2) << '\n';
  }
  report::write_table(out, rep);
  if (a.reference) {
    out << '\n';
    report::write_reference_table(out);
  }
  return kOk;
}

template <template <class> class F, class... Args>
int dispatch(const Global& g, Args&&... args) {
  if (g.precision == "f64") return F<double>::run(std::forward<Args>(args)...);
  return F<float>::run(std::forward<Args>(args)...);
}

template <class T>
struct PretrainCmd {
  template <class... A>
  static int run(A&&... a) { return cmd_pretrain<T>(std::forward<A>(a)...); }
};
template <class T>
struct EncodeCmd {
  template <class... A>
  static int run(A&&... a) { return cmd_encode<T>(std::forward<A>(a)...); }
};
template <class T>
struct TrainIclCmd {
  template <class... A>
  static int run(A&&... a) { return cmd_train_icl<T>(std::forward<A>(a)...); }
};
template <class T>
struct EvalCmd {
  template <class... A>
  static int run(A&&... a) { return cmd_eval<T>(std::forward<A>(a)...); }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"In-context property prediction on molecular graphs", "iclmol"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--config", g.config, "TOML configuration file");
  app.add_option("--threads", g.threads, "Worker threads (1 is fully deterministic)")
      ->check(CLI::Range(1u, 1024u))
      ->capture_default_str();
  app.add_option("--precision", g.precision, "Floating-point precision for training and inference")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();

  SplitArgs split;
  auto* s_split = app.add_subcommand("split-ood", "Partition a dataset into base / ester / oxime files");
  s_split->add_option("--dataset", split.dataset, "Dataset (JSON lines)");
  s_split->add_option("--out", split.out, "Output directory");

  MineArgs mine;
  auto* s_mine = app.add_subcommand("mine", "Mine frequent constrained substructures");
  s_mine->add_option("--dataset", mine.dataset, "Dataset (JSON lines)");
  s_mine->add_option("--out", mine.out, "Pattern file to write");
  s_mine->add_option("--min-support", mine.min_support, "Minimum support (default: context length, 10)");
  s_mine->add_option("--max-nodes", mine.max_nodes, "Largest pattern size in heavy atoms (0 = unbounded)");

  ContextArgs ctx;
  auto* s_ctx = app.add_subcommand("make-contexts", "Sample context sequences for mined patterns");
  s_ctx->add_option("--dataset", ctx.dataset, "Dataset (JSON lines)");
  s_ctx->add_option("--patterns", ctx.patterns, "Pattern file");
  s_ctx->add_option("--out", ctx.out, "Context file to write");
  s_ctx->add_option("--k", ctx.k, "Examples per context (default 10)");
  s_ctx->add_option("--max-per-pattern", ctx.max_per_pattern, "Contexts per pattern (default 15)");
  s_ctx->add_option("--max-extra-carbons", ctx.max_extra, "Carbons allowed beyond the pattern (default 6)");

  SyntheticArgs syn;
  auto* s_syn = app.add_subcommand("gen-synthetic", "Generate a context-structured synthetic corpus");
  s_syn->add_option("--out", syn.out, "Output directory");
  s_syn->add_option("--patterns", syn.n_patterns, "Number of patterns (default 40)");
  s_syn->add_option("--per-pattern", syn.per_pattern, "Molecules per pattern (default 120)");
  s_syn->add_option("--noise", syn.noise, "Label noise in eV");
  s_syn->add_option("--offset-scale", syn.offset_scale, "Pattern offset magnitude in eV");
  s_syn->add_option("--holdout-fraction", syn.holdout_fraction, "Share of held-out patterns");

  PretrainArgs pre;
  auto* s_pre = app.add_subcommand("pretrain-encoder", "Train the structure encoder with its linear readout");
  s_pre->add_option("--train", pre.train, "Training dataset");
  s_pre->add_option("--val", pre.val, "Validation dataset");
  s_pre->add_option("--out", pre.out, "Encoder checkpoint to write");
  s_pre->add_option("--metrics", pre.metrics, "Per-epoch metrics CSV");
  s_pre->add_option("--epochs", pre.epochs, "Override [pretrain].epochs");
  s_pre->add_option("--lr", pre.lr, "Override [pretrain].lr");

  EncodeArgs encode;
  auto* s_enc = app.add_subcommand("encode", "Write per-molecule encodings with a trained encoder");
  s_enc->add_option("--dataset", encode.dataset, "Dataset (JSON lines)");
  s_enc->add_option("--encoder", encode.encoder, "Encoder checkpoint");
  s_enc->add_option("--out", encode.out, "Encoding cache to write");

  TrainIclArgs tr;
  auto* s_tr = app.add_subcommand("train-icl", "Train the in-context sequence model on frozen encodings");
  s_tr->add_option("--train-contexts", tr.train_contexts, "Training contexts");
  s_tr->add_option("--val-contexts", tr.val_contexts, "Validation contexts used for model selection");
  s_tr->add_option("--dataset", tr.dataset, "Dataset providing labels");
  s_tr->add_option("--encodings", tr.encodings, "Encoding cache");
  s_tr->add_option("--out", tr.out, "Model checkpoint to write");
  s_tr->add_option("--metrics", tr.metrics, "Per-epoch metrics CSV");
  s_tr->add_option("--epochs", tr.epochs, "Override [icl].epochs");
  s_tr->add_option("--lr", tr.lr, "Override [icl].lr");
  s_tr->add_option("--label-shift-std", tr.label_shift_std, "Override [icl].label_shift_std");

  const std::vector<std::string> readout_names{"all", report::kSelectionLlm, report::kSelectionRegression,
                                               report::kRegression, report::kEncoderReadout};
  const auto add_eval_options = [&](CLI::App* sub, EvalArgs& e) {
    sub->add_option("--eval", e.eval_sets, "NAME=CONTEXTS, repeatable; rows follow this order");
    sub->add_option("--dataset", e.dataset, "Dataset providing labels");
    sub->add_option("--encodings", e.encodings, "Encoding cache");
    sub->add_option("--model", e.model, "Sequence model checkpoint (selection readouts)");
    sub->add_option("--encoder", e.encoder, "Encoder checkpoint (encoder-readout)");
    sub->add_option("--readout", e.readouts, "Readouts to score")->check(CLI::IsMember(readout_names));
    sub->add_option("--train-set", e.train_set, "Name recorded in the train_set column")->capture_default_str();
    sub->add_option("--regression-scope", e.scope, "Fit regression per context or pooled per pattern")
        ->check(CLI::IsMember({"context", "pattern"}))
        ->capture_default_str();
    sub->add_option("--ridge", e.ridge, "Ridge strength for the regression readouts")->capture_default_str();
    sub->add_option("--out", e.out, "Report CSV to write");
    sub->add_option("--json", e.json, "Report JSON to write");
    sub->add_option("--predictions", e.predictions, "Per-context last-example predictions CSV");
    sub->add_flag("--reference", e.reference, "Also print the full-scale reference table");
  };
  EvalArgs ev;
  auto* s_eval = app.add_subcommand("eval", "Score readouts on the last example of every context");
  add_eval_options(s_eval, ev);
  EvalArgs ab;
  auto* s_ab = app.add_subcommand("ablate", "Score the per-context regression readouts");
  add_eval_options(s_ab, ab);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const auto cfg = Config::load(g.config);
    if (s_split->parsed()) return cmd_split(split, cfg, out);
    if (s_mine->parsed()) return cmd_mine(mine, cfg, g, out);
    if (s_ctx->parsed()) return cmd_contexts(ctx, cfg, g, out);
    if (s_syn->parsed()) return cmd_synthetic(syn, cfg, g, out);
    if (s_pre->parsed()) return dispatch<PretrainCmd>(g, pre, cfg, g, out);
    if (s_enc->parsed()) return dispatch<EncodeCmd>(g, encode, cfg, g, out);
    if (s_tr->parsed()) return dispatch<TrainIclCmd>(g, tr, cfg, g, out);
    if (s_eval->parsed()) {
      if (ev.readouts.empty()) ev.readouts = {"all"};
      return dispatch<EvalCmd>(g, ev, cfg, out);
    }
    if (s_ab->parsed()) {
      if (ab.readouts.empty()) {
        ab.readouts = {report::kRegression};
        if (!ab.model.empty() || !cfg.data_path("model").empty()) ab.readouts.push_back(report::kSelectionRegression);
      }
      return dispatch<EvalCmd>(g, ab, cfg, out);
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsage;
}

}  // namespace iclmol::cli
