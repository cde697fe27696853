#include "iclmol/experiment.hpp"

#include <chrono>
#include <cmath>
#include <map>

namespace iclmol::experiment {

DeskConfig DeskConfig::defaults() {
  DeskConfig c;
  c.encoder.n_blocks = 3;
  c.encoder.dim = 64;
  c.encoder.n_rbf = 16;
  c.pretrain.lr = 1e-3;
  c.pretrain.epochs = 40;
  c.pretrain.batch_size = 32;
  c.pretrain.warmup_steps = 200;
  c.model.model_dim = 64;
  c.model.n_layers = 4;
  c.model.n_heads = 4;
  c.model.max_positions = 20;
  c.model.input_dim = c.encoder.output_dim();
  c.icl_train.lr = 1e-3;
  c.icl_train.batch_sequences = 16;
  c.icl_train.epochs = 100;
  c.icl_train.period = 100;
  c.icl_train.patience = 40;
  c.icl_train.label_shift_std = 1.0;
  return c;
}

namespace {

template <std::floating_point T>
DeskResult run(const DeskConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = mining::gen_synthetic(cfg.n_patterns, cfg.molecules_per_pattern, cfg.spec, cfg.seed);
  const auto labels = train::label_table(corpus.molecules);

  std::map<std::string, mol::OodClass> pattern_class;
  for (std::size_t p = 0; p < corpus.patterns.size(); ++p) pattern_class[corpus.patterns[p].id] = corpus.pattern_class[p];

  std::vector<mol::Molecule> base;
  for (const auto& m : corpus.molecules)
    if (mol::classify_ood(m) == mol::OodClass::Base) base.push_back(m);

  enc::EncoderConfig ecfg = cfg.encoder;
  auto pre_cfg = cfg.pretrain;
  pre_cfg.seed = cfg.seed;
  auto pre = train::pretrain_encoder<T>(base, {}, ecfg, pre_cfg, enc::init_encoder_params<T>(ecfg, cfg.seed));

  std::vector<std::string> ids;
  for (const auto& m : corpus.molecules) ids.push_back(m.id);
  const enc::EncodingCache cache(ids, enc::encode_all<T>(corpus.molecules, pre.ema, ecfg, cfg.threads));

  std::array<std::vector<mining::ContextSequence>, 3> by_split;
  for (const auto& c : corpus.contexts) by_split[static_cast<std::size_t>(pattern_class.at(c.pattern_id))].push_back(c);

  auto model_cfg = cfg.model;
  model_cfg.input_dim = ecfg.output_dim();
  auto itc = cfg.icl_train;
  itc.seed = cfg.seed;
  const auto trained = train::train_icl<T>(by_split[0], by_split[1], cache, labels, model_cfg, itc);
  const auto selection = baselines::SelectionMap::from_model(trained.params, trained.stats);

  DeskResult res;
  res.pretrain_history = pre.history;
  res.icl_history = trained.history;
  res.best_epoch = trained.best_epoch;

  const auto score = [&](const std::string& name, const std::vector<mining::ContextSequence>& cs) {
    SplitScores s;
    s.split = name;
    s.n_contexts = cs.size();
    if (cs.empty()) return s;
    const auto pred = train::predict_contexts(trained.params, model_cfg, trained.stats, cs, cache, labels);
    const std::size_t k = cs.front().molecule_ids.size();
    s.position_mev.assign(k, 0.0);
    std::vector<std::string> last_ids;
    double sel = 0, full = 0;
    for (std::size_t c = 0; c < cs.size(); ++c) {
      for (std::size_t i = 0; i < k; ++i) s.position_mev[i] += std::abs(pred[c][i] - labels.at(cs[c].molecule_ids[i]));
      const auto& last = cs[c].molecule_ids.back();
      last_ids.push_back(last);
      sel += std::abs(baselines::ablation_predict(cs[c], baselines::RegressionMode::SelectionRegression, cache, labels,
                                                  &selection) - labels.at(last));
      full += std::abs(baselines::ablation_predict(cs[c], baselines::RegressionMode::FullRegression, cache, labels,
                                                   nullptr) - labels.at(last));
    }
    const double n = static_cast<double>(cs.size());
    for (auto& v : s.position_mev) v = 1000.0 * v / n;
    s.selection_llm_mev = s.position_mev.back();
    s.selection_regression_mev = 1000.0 * sel / n;
    s.full_regression_mev = 1000.0 * full / n;
    const auto cf = train::readout_predictions(cache, last_ids, pre.ema, ecfg);
    double e = 0;
    for (std::size_t i = 0; i < cf.size(); ++i) e += std::abs(cf[i] - labels.at(last_ids[i]));
    s.context_free_mev = 1000.0 * e / n;
    return s;
  };
  res.splits.push_back(score("base", by_split[0]));
  res.splits.push_back(score("ester", by_split[1]));
  res.splits.push_back(score("oxime", by_split[2]));
  std::vector<mining::ContextSequence> holdout = by_split[1];
  holdout.insert(holdout.end(), by_split[2].begin(), by_split[2].end());
  res.holdout = score("holdout", holdout);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace

DeskResult run_desk(const DeskConfig& cfg) { return cfg.use_f64 ? run<double>(cfg) : run<float>(cfg); }

}  // namespace iclmol::experiment
