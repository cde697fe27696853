#include "iclmol/icl.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "iclmol/num/checkpoint.hpp"

namespace iclmol::icl {

using nlohmann::json;

void IclConfig::validate() const {
  if (model_dim == 0 || n_heads == 0 || model_dim % n_heads != 0) {
    throw DataError("icl: model_dim must be a positive multiple of n_heads");
  }
  if (max_positions < 2) throw DataError("icl: max_positions must be ≥ 2");
  if (input_dim == 0 || n_layers == 0) throw DataError("icl: input_dim and n_layers must be ≥ 1");
}

void to_json(json& j, const IclConfig& c) {
  j = json{{"model_dim", c.model_dim},         {"n_layers", c.n_layers},   {"n_heads", c.n_heads},
           {"max_positions", c.max_positions}, {"input_dim", c.input_dim}, {"layer_norm", c.layer_norm}};
}

void from_json(const json& j, IclConfig& c) {
  IclConfig d;
  c.model_dim = j.value("model_dim", d.model_dim);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_heads = j.value("n_heads", d.n_heads);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.input_dim = j.value("input_dim", d.input_dim);
  c.layer_norm = j.value("layer_norm", d.layer_norm);
}

Standardizer Standardizer::fit(const Tensor<double>& encodings, std::span<const double> labels) {
  if (encodings.rank() != 2 || encodings.rows() == 0 || encodings.rows() != labels.size()) {
    throw DimensionError("standardizer: need matching, non-empty encodings and labels");
  }
  const std::size_t n = encodings.rows(), d = encodings.cols();
  Standardizer s;
  s.enc_mean.assign(d, 0.0);
  s.enc_std.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) s.enc_mean[c] += encodings.at(i, c);
  for (auto& m : s.enc_mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) s.enc_std[c] += std::pow(encodings.at(i, c) - s.enc_mean[c], 2);
  for (auto& v : s.enc_std) {
    v = std::sqrt(v / static_cast<double>(n));
    if (!(v > 1e-12)) v = 1.0;
  }
  double ym = 0, yv = 0;
  for (double y : labels) ym += y;
  ym /= static_cast<double>(n);
  for (double y : labels) yv += (y - ym) * (y - ym);
  s.y_mean = ym;
  s.y_std = std::sqrt(yv / static_cast<double>(n));
  if (!(s.y_std > 1e-12)) s.y_std = 1.0;
  return s;
}

void Standardizer::encode_in_place(std::span<double> row) const {
  if (row.size() != dim()) throw DimensionError("standardizer: row length differs from fitted dimension");
  for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - enc_mean[c]) / enc_std[c];
}

void to_json(json& j, const Standardizer& s) {
  j = json{{"enc_mean", s.enc_mean}, {"enc_std", s.enc_std}, {"y_mean", s.y_mean}, {"y_std", s.y_std}};
}

void from_json(const json& j, Standardizer& s) {
  s.enc_mean = j.at("enc_mean").get<std::vector<double>>();
  s.enc_std = j.at("enc_std").get<std::vector<double>>();
  s.y_mean = j.at("y_mean").get<double>();
  s.y_std = j.at("y_std").get<double>();
  if (s.enc_mean.size() != s.enc_std.size()) throw DataError("standardizer: mean/std length mismatch");
}

namespace {

std::string layer(std::size_t i, const char* leaf) { return "blocks." + std::to_string(i) + "." + leaf; }

}  // namespace

template <std::floating_point T>
ParamStore<T> init_icl_params(const IclConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t dm = cfg.model_dim;
  const auto sd = [](std::size_t fan_in) { return static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in))); };
  const T residual = static_cast<T>(1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers)));
  const auto ones = [](std::size_t n) { return Tensor<T>({n}, T(1)); };
  ParamStore<T> p;
  p.add("select.w", num::random_normal<T>({cfg.input_dim, dm}, sd(cfg.input_dim), rng));
  p.add("select.b", Tensor<T>::zeros({dm}));
  p.add("label_embed.w", num::random_normal<T>({1, dm}, T(1), rng));
  p.add("label_embed.b", Tensor<T>::zeros({dm}));
  p.add("pos_embed", num::random_normal<T>({cfg.max_positions, dm}, T(0.02), rng));
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    if (cfg.layer_norm) {
      p.add(layer(i, "ln1.g"), ones(dm));
      p.add(layer(i, "ln1.b"), Tensor<T>::zeros({dm}));
    }
    p.add(layer(i, "attn.qkv.w"), num::random_normal<T>({dm, 3 * dm}, sd(dm), rng));
    p.add(layer(i, "attn.qkv.b"), Tensor<T>::zeros({3 * dm}));
    p.add(layer(i, "attn.out.w"), num::random_normal<T>({dm, dm}, sd(dm) * residual, rng));
    p.add(layer(i, "attn.out.b"), Tensor<T>::zeros({dm}));
    if (cfg.layer_norm) {
      p.add(layer(i, "ln2.g"), ones(dm));
      p.add(layer(i, "ln2.b"), Tensor<T>::zeros({dm}));
    }
    p.add(layer(i, "ff.in.w"), num::random_normal<T>({dm, 4 * dm}, sd(dm), rng));
    p.add(layer(i, "ff.in.b"), Tensor<T>::zeros({4 * dm}));
    p.add(layer(i, "ff.out.w"), num::random_normal<T>({4 * dm, dm}, sd(4 * dm) * residual, rng));
    p.add(layer(i, "ff.out.b"), Tensor<T>::zeros({dm}));
  }
  if (cfg.layer_norm) {
    p.add("ln_f.g", ones(dm));
    p.add("ln_f.b", Tensor<T>::zeros({dm}));
  }
  p.add("head.w", num::random_normal<T>({dm, 1}, sd(dm), rng));
  p.add("head.b", Tensor<T>::zeros({1}));
  return p;
}

Index token_order(std::size_t n_seq, std::size_t k, std::size_t n_tokens) {
  Index order;
  order.reserve(n_seq * n_tokens);
  const auto labels_start = static_cast<std::uint32_t>(n_seq * k);
  for (std::size_t s = 0; s < n_seq; ++s) {
    for (std::size_t t = 0; t < n_tokens; ++t) {
      const auto example = static_cast<std::uint32_t>(s * k + t / 2);
      order.push_back(t % 2 == 0 ? example : labels_start + example);
    }
  }
  return order;
}

template <std::floating_point T>
Var<T> select(Var<T> encodings, const std::vector<Var<T>>& bound, const ParamStore<T>& params) {
  return num::add_bias(num::matmul(encodings, bound[params.index("select.w")]), bound[params.index("select.b")]);
}

template <std::floating_point T>
IclOutput<T> icl_forward(Tape<T>& tape, const std::vector<Var<T>>& bound, const ParamStore<T>& params,
                         const IclConfig& cfg, const SequenceBatch<T>& batch) {
  const std::size_t n_seq = batch.n_seq, k = batch.k, len = batch.n_tokens, nk = n_seq * k;
  if (k == 0 || n_seq == 0) throw DataError("icl: empty batch");
  if (len != 2 * k && len + 1 != 2 * k) {
    throw DataError("icl: " + std::to_string(len) + " tokens cannot hold " + std::to_string(k) + " examples");
  }
  if (len > cfg.max_positions) {
    throw DataError("icl: sequence of " + std::to_string(len) + " tokens exceeds max_positions " +
                    std::to_string(cfg.max_positions));
  }
  if (batch.encodings.rank() != 2 || batch.encodings.rows() != nk || batch.encodings.cols() != cfg.input_dim) {
    throw DimensionError("icl: encodings " + num::shape_str(batch.encodings.shape()) + ", expected [" +
                         std::to_string(nk) + "," + std::to_string(cfg.input_dim) + "]");
  }
  if (batch.labels.size() != nk) throw DimensionError("icl: one label per example is required");

  const auto P = [&](const std::string& name) { return bound[params.index(name)]; };
  const auto linear = [&](Var<T> x, const std::string& prefix) {
    return num::add_bias(num::matmul(x, P(prefix + ".w")), P(prefix + ".b"));
  };
  const auto norm = [&](Var<T> x, const std::string& prefix) {
    return cfg.layer_norm ? num::layer_norm_rows(x, P(prefix + ".g"), P(prefix + ".b")) : x;
  };

  const auto structure = select(tape.constant(batch.encodings), bound, params);
  const auto label_tokens = linear(tape.constant(Tensor<T>({nk, 1}, batch.labels)), "label_embed");
  auto x = num::gather_rows(num::concat_rows<T>({structure, label_tokens}), token_order(n_seq, k, len));
  Index positions;
  positions.reserve(n_seq * len);
  for (std::size_t s = 0; s < n_seq; ++s)
    for (std::size_t t = 0; t < len; ++t) positions.push_back(static_cast<std::uint32_t>(t));
  x = num::add(x, num::gather_rows(P("pos_embed"), positions));

  IclOutput<T> out;
  out.tokens = x;
  const std::size_t dm = cfg.model_dim;
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    const auto qkv = linear(norm(x, pre + "ln1"), pre + "attn.qkv");
    const auto att = num::causal_attention(num::slice_cols(qkv, 0, dm), num::slice_cols(qkv, dm, 2 * dm),
                                           num::slice_cols(qkv, 2 * dm, 3 * dm), n_seq, len, cfg.n_heads);
    x = num::add(x, linear(att, pre + "attn.out"));
    const auto hidden = num::gelu(linear(norm(x, pre + "ln2"), pre + "ff.in"));
    x = num::add(x, linear(hidden, pre + "ff.out"));
  }
  out.head_all = linear(norm(x, "ln_f"), "head");
  Index structure_rows;
  structure_rows.reserve(nk);
  for (std::size_t s = 0; s < n_seq; ++s)
    for (std::size_t e = 0; e < k; ++e) structure_rows.push_back(static_cast<std::uint32_t>(s * len + 2 * e));
  out.predictions = num::gather_rows(out.head_all, structure_rows);
  return out;
}

template <std::floating_point T>
Var<T> masked_loss(Var<T> predictions, std::span<const T> labels, std::span<const T> weights_per_position,
                   std::size_t n_seq) {
  Tape<T>& tape = *predictions.tape;
  const std::size_t k = weights_per_position.size(), nk = n_seq * k;
  if (predictions.value().size() != nk || labels.size() != nk) {
    throw DimensionError("masked_loss: " + std::to_string(predictions.value().size()) + " predictions, " +
                         std::to_string(labels.size()) + " labels, " + std::to_string(nk) + " weighted slots");
  }
  T total = 0;
  for (T w : weights_per_position) {
    if (!(w >= 0)) throw DataError("masked_loss: weights must be non-negative");
    total += w;
  }
  if (!(total > 0)) throw DataError("masked_loss: all weights are zero");
  Tensor<T> w({nk, 1});
  for (std::size_t i = 0; i < nk; ++i) w[i] = weights_per_position[i % k];
  const auto target = tape.constant(Tensor<T>({nk, 1}, std::vector<T>(labels.begin(), labels.end())));
  const auto diff = num::sub(num::reshape(predictions, {nk, 1}), target);
  return num::scale(num::sum(num::mul(num::square(diff), tape.constant(std::move(w)))),
                    T(1) / (total * static_cast<T>(n_seq)));
}

template <std::floating_point T>
std::vector<T> icl_predict(const ParamStore<T>& params, const IclConfig& cfg, const SequenceBatch<T>& batch) {
  Tape<T> tape;
  std::vector<Var<T>> bound;
  for (const auto& v : params.values()) bound.push_back(tape.watch(v, false));
  const auto out = icl_forward(tape, bound, params, cfg, batch);
  const auto& p = out.predictions.value();
  return std::vector<T>(p.data().begin(), p.data().end());
}

template <std::floating_point T>
void save_icl(const std::filesystem::path& path, const ParamStore<T>& params, const IclConfig& cfg,
              const Standardizer& stats) {
  num::Checkpoint ck;
  ck.put_all(params);
  ck.save(path);
  std::ofstream os(path.string() + ".json");
  if (!os) throw DataError("cannot write model sidecar for '" + path.string() + "'");
  os << json{{"config", cfg}, {"standardizer", stats}}.dump(2) << '\n';
}

template <std::floating_point T>
ParamStore<T> load_icl(const std::filesystem::path& path, IclConfig& cfg, Standardizer& stats) {
  std::ifstream is(path.string() + ".json");
  if (!is) throw DataError("cannot open model sidecar '" + path.string() + ".json'");
  try {
    const auto j = json::parse(is);
    cfg = j.at("config").get<IclConfig>();
    stats = j.at("standardizer").get<Standardizer>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ".json", 1, e.what());
  }
  if (stats.dim() != cfg.input_dim) throw DataError("model sidecar: standardizer and config disagree on input_dim");
  auto params = init_icl_params<T>(cfg, 0);
  num::Checkpoint::load(path).load_into(params);
  return params;
}

#define ICLMOL_INSTANTIATE_ICL(T)                                                                                 \
  template ParamStore<T> init_icl_params<T>(const IclConfig&, std::uint64_t);                                    \
  template Var<T> select<T>(Var<T>, const std::vector<Var<T>>&, const ParamStore<T>&);                           \
  template IclOutput<T> icl_forward<T>(Tape<T>&, const std::vector<Var<T>>&, const ParamStore<T>&,               \
                                       const IclConfig&, const SequenceBatch<T>&);                               \
  template Var<T> masked_loss<T>(Var<T>, std::span<const T>, std::span<const T>, std::size_t);                  \
  template std::vector<T> icl_predict<T>(const ParamStore<T>&, const IclConfig&, const SequenceBatch<T>&);       \
  template void save_icl<T>(const std::filesystem::path&, const ParamStore<T>&, const IclConfig&,                \
                            const Standardizer&);                                                                \
  template ParamStore<T> load_icl<T>(const std::filesystem::path&, IclConfig&, Standardizer&);

ICLMOL_INSTANTIATE_ICL(float)
ICLMOL_INSTANTIATE_ICL(double)

}  // namespace iclmol::icl
