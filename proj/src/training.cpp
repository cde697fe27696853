#include "iclmol/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <unordered_set>

namespace iclmol::train {

// ---------------------------------------------------------------------------
// Schedules

long CurriculumState::last_ignored(std::size_t k) const {
  const long q = static_cast<long>(step / period);
  return std::min(-5 + q, static_cast<long>(k) - 2);
}

long CurriculumState::first_full(std::size_t k) const {
  const long q = static_cast<long>(step / period);
  return std::min(q, static_cast<long>(k) - 1);
}

std::vector<double> curriculum_weights(const CurriculumState& s, std::size_t k) {
  if (k < 2) throw DataError("curriculum_weights: k must be ≥ 2");
  if (s.period == 0) throw DataError("curriculum_weights: period must be ≥ 1");
  const long last = s.last_ignored(k), full = s.first_full(k);
  std::vector<double> w(k);
  for (std::size_t i = 0; i < k; ++i) {
    const long idx = static_cast<long>(i);
    if (idx <= last) {
      w[i] = 0.0;
    } else if (idx >= full) {
      w[i] = 1.0;
    } else {
      w[i] = static_cast<double>(idx - last) / static_cast<double>(full - last);
    }
  }
  return w;
}

mining::ContextSequence shuffle_context(const mining::ContextSequence& c, std::mt19937_64& rng) {
  mining::ContextSequence out = c;
  std::shuffle(out.molecule_ids.begin(), out.molecule_ids.end(), rng);
  return out;
}

template <std::floating_point T>
Adam<T>::Adam(const ParamStore<T>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params.values()) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

template <std::floating_point T>
void Adam<T>::step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, double lr) {
  if (grads.size() != params.size()) throw DimensionError("adam: gradient count differs from parameter count");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.value(i);
    const auto& g = grads[i];
    if (g.size() != p.size()) throw DimensionError("adam: gradient for '" + params.name(i) + "' has the wrong size");
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      p[j] -= static_cast<T>(lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_));
    }
  }
}

template <std::floating_point T>
void Ema<T>::update(const ParamStore<T>& params) {
  if (!shadow_.same_layout(params)) throw DimensionError("ema: parameter layout changed");
  const T d = static_cast<T>(decay_), keep = static_cast<T>(1.0 - decay_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& s = shadow_.value(i);
    const auto& p = params.value(i);
    for (std::size_t j = 0; j < p.size(); ++j) s[j] = d * s[j] + keep * p[j];
  }
}

PlateauScheduler::PlateauScheduler(double lr, std::size_t patience, double factor, double floor)
    : lr_(lr), factor_(factor), floor_(floor), patience_(patience) {
  if (!(lr > 0)) throw DataError("scheduler: lr must be > 0");
  if (!(floor < lr)) throw DataError("scheduler: lr floor must be below the initial lr");
}

double PlateauScheduler::observe(double metric) {
  improved_ = metric < best_;
  if (improved_) {
    best_ = metric;
    since_best_ = 0;
  } else if (++since_best_ >= patience_) {
    lr_ = std::max(lr_ * factor_, floor_);
    since_best_ = 0;
  }
  return lr_;
}

// ---------------------------------------------------------------------------
// Metrics

void write_metrics(std::ostream& os, std::span<const EpochMetric> rows) {
  os << "epoch,split,mae_mev,lr\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.3e\n", r.epoch, r.split.c_str(), r.mae_mev, r.lr);
    os << buf;
  }
}

void write_metrics(const std::filesystem::path& path, std::span<const EpochMetric> rows) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write metrics to '" + path.string() + "'");
  write_metrics(os, rows);
}

LabelTable label_table(std::span<const mol::Molecule> molecules) {
  LabelTable t;
  for (const auto& m : molecules) t[m.id] = m.label_u0;
  return t;
}

// ---------------------------------------------------------------------------
// Encoder pretraining

namespace {

template <std::floating_point T>
std::vector<double> readout_on(std::span<const enc::PreparedMolecule> prepared, const ParamStore<T>& params,
                               const enc::EncoderConfig& cfg, std::size_t chunk = 128) {
  std::vector<double> out;
  out.reserve(prepared.size());
  for (std::size_t lo = 0; lo < prepared.size(); lo += chunk) {
    const std::size_t hi = std::min(prepared.size(), lo + chunk);
    std::vector<const enc::PreparedMolecule*> ptrs;
    for (std::size_t i = lo; i < hi; ++i) ptrs.push_back(&prepared[i]);
    const auto batch = enc::make_batch(ptrs, cfg.n_rbf);
    num::Tape<T> tape;
    std::vector<num::Var<T>> bound;
    for (const auto& v : params.values()) bound.push_back(tape.watch(v, false));
    const auto r = enc::encoder_forward(tape, bound, params, cfg, batch).readout.value();
    for (std::size_t i = 0; i < r.size(); ++i) out.push_back(static_cast<double>(r[i]));
  }
  return out;
}

}  // namespace

template <std::floating_point T>
PretrainResult<T> pretrain_encoder(std::span<const mol::Molecule> train, std::span<const mol::Molecule> validation,
                                   const enc::EncoderConfig& cfg, const PretrainConfig& tc, ParamStore<T> init) {
  if (train.empty()) throw DataError("pretrain_encoder: empty training set");
  cfg.validate();
  PretrainResult<T> res{std::move(init), {}, {}};
  if (tc.epochs == 0) {
    res.ema = res.params;
    return res;
  }
  std::vector<enc::PreparedMolecule> prepared, prepared_val;
  for (const auto& m : train) prepared.push_back(enc::prepare(m, cfg));
  for (const auto& m : validation) prepared_val.push_back(enc::prepare(m, cfg));

  if (tc.init_bias_from_data) {
    double mean = 0;
    for (const auto& m : train) mean += m.label_u0;
    mean /= static_cast<double>(train.size());
    for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
      res.params.at("block" + std::to_string(b) + ".readout.b")[0] =
          static_cast<T>(mean / static_cast<double>(cfg.n_blocks));
    }
  }

  Adam<T> opt(res.params);
  Ema<T> ema(res.params, tc.ema_decay);
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::max<std::size_t>(tc.batch_size, 1);
  std::size_t step = 0;
  double lr_now = tc.lr;
  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double abs_sum = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      std::vector<const enc::PreparedMolecule*> ptrs;
      Tensor<T> target({hi - lo, 1});
      for (std::size_t i = lo; i < hi; ++i) {
        ptrs.push_back(&prepared[order[i]]);
        target[i - lo] = static_cast<T>(train[order[i]].label_u0);
      }
      const auto batch = enc::make_batch(ptrs, cfg.n_rbf);
      num::Tape<T> tape;
      const auto bound = res.params.bind(tape);
      const auto out = enc::encoder_forward(tape, bound, res.params, cfg, batch);
      const auto loss = num::mean(num::abs(num::sub(out.readout, tape.constant(std::move(target)))));
      const double lv = static_cast<double>(loss.value().item());
      if (!std::isfinite(lv)) {
        throw NumericError("pretrain_encoder: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + " (batch starting at molecule '" + train[order[lo]].id +
                           "', lr " + std::to_string(lr_now) + ")");
      }
      tape.backward(loss);
      lr_now = tc.lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(std::max<std::size_t>(
                                                                             tc.warmup_steps, 1)));
      opt.step(res.params, res.params.grads(tape, bound), lr_now);
      ema.update(res.params);
      ++step;
      abs_sum += lv * static_cast<double>(hi - lo);
    }
    res.history.push_back({epoch, "train", 1000.0 * abs_sum / static_cast<double>(train.size()), lr_now});
    if (!validation.empty()) {
      const auto pred = readout_on(std::span<const enc::PreparedMolecule>(prepared_val), ema.shadow(), cfg);
      double err = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) err += std::abs(pred[i] - validation[i].label_u0);
      res.history.push_back({epoch, "val", 1000.0 * err / static_cast<double>(pred.size()), lr_now});
    }
  }
  res.ema = ema.shadow();
  return res;
}

template <std::floating_point T>
std::vector<double> readout_predictions(const enc::EncodingCache& cache, std::span<const std::string> ids,
                                        const ParamStore<T>& params, const enc::EncoderConfig& cfg) {
  if (cache.dim() != cfg.output_dim()) throw DimensionError("readout: cache dimension differs from encoder output");
  std::vector<double> out;
  out.reserve(ids.size());
  std::vector<T> row(cache.dim());
  for (const auto& id : ids) {
    const auto r = cache.row(id);
    std::transform(r.begin(), r.end(), row.begin(), [](double x) { return static_cast<T>(x); });
    out.push_back(static_cast<double>(enc::pretrain_readout<T>(row, params, cfg)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// In-context training

namespace {

std::size_t common_k(std::span<const mining::ContextSequence> contexts) {
  if (contexts.empty()) return 0;
  const std::size_t k = contexts.front().molecule_ids.size();
  for (const auto& c : contexts) {
    if (c.molecule_ids.size() != k) {
      throw DataError("contexts of pattern '" + c.pattern_id + "' have length " +
                      std::to_string(c.molecule_ids.size()) + ", expected " + std::to_string(k));
    }
  }
  return k;
}

double label_of(const LabelTable& labels, const std::string& id) {
  const auto it = labels.find(id);
  if (it == labels.end()) throw DataError("no label for molecule '" + id + "'");
  return it->second;
}

}  // namespace

template <std::floating_point T>
icl::SequenceBatch<T> make_sequences(std::span<const mining::ContextSequence> contexts,
                                     const enc::EncodingCache& cache, const LabelTable& labels,
                                     const icl::Standardizer& stats, bool withhold_last) {
  const std::size_t k = common_k(contexts);
  if (k == 0) throw DataError("make_sequences: no contexts");
  if (stats.dim() != cache.dim()) throw DimensionError("make_sequences: standardizer and cache dimensions differ");
  icl::SequenceBatch<T> b;
  b.n_seq = contexts.size();
  b.k = k;
  b.n_tokens = withhold_last ? 2 * k - 1 : 2 * k;
  b.encodings = Tensor<T>({b.n_seq * k, cache.dim()});
  b.labels.assign(b.n_seq * k, T(0));
  std::vector<double> row(cache.dim());
  for (std::size_t s = 0; s < contexts.size(); ++s) {
    for (std::size_t i = 0; i < k; ++i) {
      const auto& id = contexts[s].molecule_ids[i];
      const auto r = cache.row(id);
      std::copy(r.begin(), r.end(), row.begin());
      stats.encode_in_place(row);
      T* dst = b.encodings.ptr() + (s * k + i) * cache.dim();
      std::transform(row.begin(), row.end(), dst, [](double x) { return static_cast<T>(x); });
      // The withheld label is never looked up.
      if (!(withhold_last && i + 1 == k)) b.labels[s * k + i] = static_cast<T>(stats.label(label_of(labels, id)));
    }
  }
  return b;
}

template <std::floating_point T>
std::vector<std::vector<double>> predict_contexts(const ParamStore<T>& params, const icl::IclConfig& cfg,
                                                  const icl::Standardizer& stats,
                                                  std::span<const mining::ContextSequence> contexts,
                                                  const enc::EncodingCache& cache, const LabelTable& labels,
                                                  std::size_t batch) {
  std::vector<std::vector<double>> out;
  out.reserve(contexts.size());
  batch = std::max<std::size_t>(batch, 1);
  for (std::size_t lo = 0; lo < contexts.size(); lo += batch) {
    const auto part = contexts.subspan(lo, std::min(batch, contexts.size() - lo));
    const auto seq = make_sequences<T>(part, cache, labels, stats, true);
    const auto pred = icl::icl_predict(params, cfg, seq);
    for (std::size_t s = 0; s < part.size(); ++s) {
      std::vector<double> row(seq.k);
      for (std::size_t i = 0; i < seq.k; ++i) row[i] = stats.unlabel(static_cast<double>(pred[s * seq.k + i]));
      out.push_back(std::move(row));
    }
  }
  return out;
}

double last_example_mae_mev(std::span<const std::vector<double>> predictions,
                            std::span<const mining::ContextSequence> contexts, const LabelTable& labels) {
  if (predictions.size() != contexts.size()) throw DimensionError("one prediction row per context is required");
  if (contexts.empty()) return 0.0;
  double err = 0;
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    err += std::abs(predictions[c].back() - label_of(labels, contexts[c].molecule_ids.back()));
  }
  return 1000.0 * err / static_cast<double>(contexts.size());
}

template <std::floating_point T>
IclTrainResult<T> train_icl(std::span<const mining::ContextSequence> train,
                            std::span<const mining::ContextSequence> validation, const enc::EncodingCache& cache,
                            const LabelTable& labels, const icl::IclConfig& cfg, const IclTrainConfig& tc) {
  if (train.empty()) throw DataError("train_icl: empty context list");
  cfg.validate();
  const std::size_t k = common_k(train);
  if (!validation.empty() && common_k(validation) != k) throw DataError("train_icl: validation k differs from training k");
  if (k < 2) throw DataError("train_icl: contexts need at least 2 examples");
  if (2 * k > cfg.max_positions) throw DataError("train_icl: 2k exceeds max_positions");
  if (cache.dim() != cfg.input_dim) {
    throw DimensionError("train_icl: encodings have dim " + std::to_string(cache.dim()) + ", model expects " +
                         std::to_string(cfg.input_dim));
  }
  for (auto span : {train, validation})
    for (const auto& c : span)
      for (const auto& id : c.molecule_ids) (void)cache.row(id), (void)label_of(labels, id);

  // Standardization statistics come from training molecules only.
  std::vector<std::string> ids;
  std::unordered_set<std::string> seen;
  for (const auto& c : train)
    for (const auto& id : c.molecule_ids)
      if (seen.insert(id).second) ids.push_back(id);
  Tensor<double> rows({ids.size(), cache.dim()});
  std::vector<double> ys;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto r = cache.row(ids[i]);
    std::copy(r.begin(), r.end(), rows.ptr() + i * cache.dim());
    ys.push_back(label_of(labels, ids[i]));
  }

  IclTrainResult<T> res;
  res.stats = icl::Standardizer::fit(rows, ys);
  ParamStore<T> params = icl::init_icl_params<T>(cfg, tc.seed);
  res.params = params;
  Adam<T> opt(params);
  PlateauScheduler sched(tc.lr, tc.patience, tc.lr_factor, tc.lr_floor);
  std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> shift(0.0, 1.0);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = std::max<std::size_t>(tc.batch_sequences, 1);
  double lr = tc.lr;
  double best = std::numeric_limits<double>::infinity();
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double last_err = 0;
    for (std::size_t lo = 0; lo < order.size(); lo += bs) {
      const std::size_t hi = std::min(order.size(), lo + bs);
      std::vector<mining::ContextSequence> ctx;
      for (std::size_t i = lo; i < hi; ++i) ctx.push_back(shuffle_context(train[order[i]], rng));
      auto seq = make_sequences<T>(ctx, cache, labels, res.stats, false);
      if (tc.label_shift_std > 0) {
        for (std::size_t s = 0; s < seq.n_seq; ++s) {
          const T delta = static_cast<T>(tc.label_shift_std * shift(rng));
          for (std::size_t i = 0; i < k; ++i) seq.labels[s * k + i] += delta;
        }
      }
      const auto wd = curriculum_weights(CurriculumState{step, tc.period, RampShape::Linear}, k);
      const std::vector<T> w(wd.begin(), wd.end());
      num::Tape<T> tape;
      const auto bound = params.bind(tape);
      const auto out = icl::icl_forward(tape, bound, params, cfg, seq);
      const auto loss = icl::masked_loss<T>(out.predictions, seq.labels, w, seq.n_seq);
      const double lv = static_cast<double>(loss.value().item());
      if (!std::isfinite(lv)) {
        throw NumericError("train_icl: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ", lr " + std::to_string(lr));
      }
      const auto& pred = out.predictions.value();
      for (std::size_t s = 0; s < seq.n_seq; ++s) {
        last_err += std::abs(static_cast<double>(pred[s * k + k - 1] - seq.labels[s * k + k - 1])) * res.stats.y_std;
      }
      tape.backward(loss);
      opt.step(params, params.grads(tape, bound), lr);
      ++step;
    }
    const double train_mae = 1000.0 * last_err / static_cast<double>(train.size());
    double val_mae = train_mae;
    if (!validation.empty()) {
      const auto pred = predict_contexts(params, cfg, res.stats, validation, cache, labels);
      val_mae = last_example_mae_mev(pred, validation, labels);
    }
    res.history.push_back({epoch, "train", train_mae, lr});
    res.history.push_back({epoch, validation.empty() ? "train-last" : "val", val_mae, lr});
    if (val_mae < best) {
      best = val_mae;
      res.params = params;
      res.best_epoch = epoch;
    }
    lr = sched.observe(val_mae);
  }
  if (tc.epochs == 0) res.params = params;
  res.best_val_mae_mev = tc.epochs == 0 ? 0.0 : best;
  return res;
}

#define ICLMOL_INSTANTIATE_TRAINING(T)                                                                            \
  template class Adam<T>;                                                                                        \
  template class Ema<T>;                                                                                         \
  template PretrainResult<T> pretrain_encoder<T>(std::span<const mol::Molecule>, std::span<const mol::Molecule>, \
                                                 const enc::EncoderConfig&, const PretrainConfig&, ParamStore<T>); \
  template std::vector<double> readout_predictions<T>(const enc::EncodingCache&, std::span<const std::string>,   \
                                                      const ParamStore<T>&, const enc::EncoderConfig&);          \
  template icl::SequenceBatch<T> make_sequences<T>(std::span<const mining::ContextSequence>,                     \
                                                   const enc::EncodingCache&, const LabelTable&,                 \
                                                   const icl::Standardizer&, bool);                              \
  template std::vector<std::vector<double>> predict_contexts<T>(                                                 \
      const ParamStore<T>&, const icl::IclConfig&, const icl::Standardizer&,                                     \
      std::span<const mining::ContextSequence>, const enc::EncodingCache&, const LabelTable&, std::size_t);      \
  template IclTrainResult<T> train_icl<T>(std::span<const mining::ContextSequence>,                              \
                                          std::span<const mining::ContextSequence>, const enc::EncodingCache&,   \
                                          const LabelTable&, const icl::IclConfig&, const IclTrainConfig&);

ICLMOL_INSTANTIATE_TRAINING(float)
ICLMOL_INSTANTIATE_TRAINING(double)

}  // namespace iclmol::train
