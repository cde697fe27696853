#include "iclmol/encoder.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <thread>

#include "iclmol/num/checkpoint.hpp"

namespace iclmol::enc {

using nlohmann::json;

void EncoderConfig::validate() const {
  if (n_blocks < 1 || dim < 1 || n_rbf < 1) throw DataError("encoder: n_blocks, dim and n_rbf must be ≥ 1");
  if (!(local_cutoff > 0)) throw DataError("encoder: local_cutoff must be > 0");
  if (!(global_cutoff >= 0)) throw DataError("encoder: global_cutoff must be ≥ 0");
  if (n_elements < 2) throw DataError("encoder: element table too small");
}

void to_json(json& j, const EncoderConfig& c) {
  j = json{{"n_blocks", c.n_blocks},         {"dim", c.dim},
           {"n_rbf", c.n_rbf},               {"local_cutoff", c.local_cutoff},
           {"global_cutoff", c.global_cutoff}, {"n_elements", c.n_elements}};
}

void from_json(const json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.n_blocks = j.value("n_blocks", d.n_blocks);
  c.dim = j.value("dim", d.dim);
  c.n_rbf = j.value("n_rbf", d.n_rbf);
  c.local_cutoff = j.value("local_cutoff", d.local_cutoff);
  c.global_cutoff = j.value("global_cutoff", d.global_cutoff);
  c.n_elements = j.value("n_elements", d.n_elements);
}

std::vector<double> rbf_expand(double dist, std::size_t n_rbf, double cutoff) {
  std::vector<double> out(n_rbf, 0.0);
  if (!(dist < cutoff)) return out;
  const double envelope = 0.5 * (std::cos(std::numbers::pi * dist / cutoff) + 1.0);
  const double gamma = std::pow(static_cast<double>(n_rbf) / cutoff, 2);
  for (std::size_t k = 0; k < n_rbf; ++k) {
    const double mu = n_rbf == 1 ? 0.0 : cutoff * static_cast<double>(k) / static_cast<double>(n_rbf - 1);
    out[k] = envelope * std::exp(-gamma * (dist - mu) * (dist - mu));
  }
  return out;
}

namespace {

double distance(const mol::Atom& a, const mol::Atom& b) {
  const double dx = a.position[0] - b.position[0];
  const double dy = a.position[1] - b.position[1];
  const double dz = a.position[2] - b.position[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

void push_edge(Index& src, Index& dst, std::vector<double>& rbf, std::uint32_t i, std::uint32_t j,
               const std::vector<double>& basis) {
  src.push_back(i);
  dst.push_back(j);
  rbf.insert(rbf.end(), basis.begin(), basis.end());
}

std::string block_name(std::size_t b, const char* leaf) { return "block" + std::to_string(b) + "." + leaf; }

template <class T>
Tensor<T> as_matrix(const std::vector<double>& values, std::size_t cols) {
  std::vector<T> v(values.begin(), values.end());
  return Tensor<T>({values.size() / cols, cols}, std::move(v));
}

}  // namespace

PreparedMolecule prepare(const mol::Molecule& m, const EncoderConfig& cfg) {
  PreparedMolecule p;
  for (const auto& a : m.atoms) {
    if (a.element < 0 || static_cast<std::size_t>(a.element) >= cfg.n_elements) {
      throw ValidationError(m.id, "element " + std::to_string(a.element) + " outside the encoder's table of " +
                                      std::to_string(cfg.n_elements));
    }
    p.elements.push_back(static_cast<std::uint32_t>(a.element));
  }
  for (const auto& b : m.bonds) {
    const auto basis = rbf_expand(distance(m.atoms[b.i], m.atoms[b.j]), cfg.n_rbf, cfg.local_cutoff);
    push_edge(p.local_src, p.local_dst, p.local_rbf, b.i, b.j, basis);
    push_edge(p.local_src, p.local_dst, p.local_rbf, b.j, b.i, basis);
  }
  if (cfg.global_cutoff > 0) {
    const auto n = static_cast<std::uint32_t>(m.atoms.size());
    for (std::uint32_t i = 0; i < n; ++i) {
      for (std::uint32_t j = i + 1; j < n; ++j) {
        const double d = distance(m.atoms[i], m.atoms[j]);
        if (!(d < cfg.global_cutoff)) continue;
        const auto basis = rbf_expand(d, cfg.n_rbf, cfg.global_cutoff);
        push_edge(p.global_src, p.global_dst, p.global_rbf, i, j, basis);
        push_edge(p.global_src, p.global_dst, p.global_rbf, j, i, basis);
      }
    }
  }
  return p;
}

GraphBatch make_batch(std::span<const PreparedMolecule* const> molecules, std::size_t n_rbf) {
  GraphBatch b;
  b.n_molecules = molecules.size();
  b.n_rbf = n_rbf;
  for (std::size_t mi = 0; mi < molecules.size(); ++mi) {
    const auto& p = *molecules[mi];
    const auto offset = static_cast<std::uint32_t>(b.elements.size());
    b.elements.insert(b.elements.end(), p.elements.begin(), p.elements.end());
    b.node_molecule.insert(b.node_molecule.end(), p.elements.size(), static_cast<std::uint32_t>(mi));
    for (auto s : p.local_src) b.local_src.push_back(s + offset);
    for (auto d : p.local_dst) b.local_dst.push_back(d + offset);
    b.local_rbf.insert(b.local_rbf.end(), p.local_rbf.begin(), p.local_rbf.end());
    for (auto s : p.global_src) b.global_src.push_back(s + offset);
    for (auto d : p.global_dst) b.global_dst.push_back(d + offset);
    b.global_rbf.insert(b.global_rbf.end(), p.global_rbf.begin(), p.global_rbf.end());
  }
  return b;
}

template <std::floating_point T>
ParamStore<T> init_encoder_params(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg.dim, k = cfg.n_rbf;
  const auto sd = [](std::size_t fan_in) { return static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in))); };
  ParamStore<T> p;
  p.add("embed", num::random_normal<T>({cfg.n_elements, d}, T(1), rng));
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    p.add(block_name(b, "local.rbf"), num::random_normal<T>({k, d}, sd(k), rng));
    p.add(block_name(b, "local.msg"), num::random_normal<T>({d, d}, sd(d), rng));
    p.add(block_name(b, "global.rbf"), num::random_normal<T>({k, d}, sd(k), rng));
    p.add(block_name(b, "global.msg"), num::random_normal<T>({d, d}, sd(d), rng));
    p.add(block_name(b, "update.w"), num::random_normal<T>({2 * d, d}, sd(2 * d), rng));
    p.add(block_name(b, "update.b"), Tensor<T>::zeros({d}));
    p.add(block_name(b, "readout.w"), num::random_normal<T>({d, 1}, T(0.1) * sd(d), rng));
    p.add(block_name(b, "readout.b"), Tensor<T>::zeros({1}));
  }
  return p;
}

template <std::floating_point T>
EncoderOutput<T> encoder_forward(Tape<T>& tape, const std::vector<Var<T>>& bound, const ParamStore<T>& params,
                                 const EncoderConfig& cfg, const GraphBatch& batch) {
  const std::size_t n = batch.n_nodes(), d = cfg.dim;
  if (n == 0) throw DataError("encoder: empty batch");
  if (batch.n_rbf != cfg.n_rbf) throw DimensionError("encoder: batch rbf size differs from config");
  const auto P = [&](const std::string& name) { return bound[params.index(name)]; };

  const Index element_rows(batch.elements.begin(), batch.elements.end());
  Var<T> h = num::gather_rows(P("embed"), element_rows);

  const bool has_local = !batch.local_src.empty();
  const bool has_global = !batch.global_src.empty();
  Var<T> local_rbf, global_rbf, no_message;
  if (has_local) local_rbf = tape.constant(as_matrix<T>(batch.local_rbf, cfg.n_rbf));
  if (has_global) global_rbf = tape.constant(as_matrix<T>(batch.global_rbf, cfg.n_rbf));
  if (!has_local || !has_global) no_message = tape.constant(Tensor<T>::zeros({n, d}));

  // m_i = Σ_j (h_j W_msg) ⊙ (rbf_ij W_rbf) over directed edges j → i.
  const auto message = [&](std::size_t b, const char* kind, Var<T> rbf, const Index& src, const Index& dst) {
    const std::string pre = std::string(kind) + ".";
    const auto hw = num::matmul(h, P(block_name(b, (pre + "msg").c_str())));
    const auto filt = num::matmul(rbf, P(block_name(b, (pre + "rbf").c_str())));
    return num::scatter_add_rows(num::mul(num::gather_rows(hw, src), filt), dst, n);
  };

  EncoderOutput<T> out;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const auto ml = has_local ? message(b, "local", local_rbf, batch.local_src, batch.local_dst) : no_message;
    const auto mg = has_global ? message(b, "global", global_rbf, batch.global_src, batch.global_dst) : no_message;
    const auto u = num::add_bias(num::matmul(num::concat_cols<T>({ml, mg}), P(block_name(b, "update.w"))),
                                 P(block_name(b, "update.b")));
    h = num::add(h, num::silu(u));
    const auto pooled = num::scatter_add_rows(h, batch.node_molecule, batch.n_molecules);
    out.blocks.push_back(pooled);
    const auto r = num::add_bias(num::matmul(pooled, P(block_name(b, "readout.w"))), P(block_name(b, "readout.b")));
    out.readout = b == 0 ? r : num::add(out.readout, r);
  }
  out.encodings = num::concat_cols(out.blocks);
  return out;
}

namespace {

template <std::floating_point T>
std::vector<Var<T>> bind_frozen(Tape<T>& tape, const ParamStore<T>& params) {
  std::vector<Var<T>> vars;
  for (const auto& v : params.values()) vars.push_back(tape.watch(v, false));
  return vars;
}

}  // namespace

template <std::floating_point T>
std::vector<T> encode(const mol::Molecule& m, const ParamStore<T>& params, const EncoderConfig& cfg) {
  const auto p = prepare(m, cfg);
  const PreparedMolecule* one[] = {&p};
  const auto batch = make_batch(one, cfg.n_rbf);
  Tape<T> tape;
  const auto out = encoder_forward(tape, bind_frozen(tape, params), params, cfg, batch);
  const auto& e = out.encodings.value();
  return std::vector<T>(e.data().begin(), e.data().end());
}

template <std::floating_point T>
T pretrain_readout(std::span<const T> encoding, const ParamStore<T>& params, const EncoderConfig& cfg) {
  if (encoding.size() != cfg.output_dim()) {
    throw DimensionError("pretrain_readout: encoding length " + std::to_string(encoding.size()) + ", expected " +
                         std::to_string(cfg.output_dim()));
  }
  T total = 0;
  for (std::size_t b = 0; b < cfg.n_blocks; ++b) {
    const auto& w = params.at(block_name(b, "readout.w"));
    T s = params.at(block_name(b, "readout.b"))[0];
    for (std::size_t j = 0; j < cfg.dim; ++j) s += w[j] * encoding[b * cfg.dim + j];
    total += s;
  }
  return total;
}

template <std::floating_point T>
Tensor<double> encode_all(std::span<const mol::Molecule> molecules, const ParamStore<T>& params,
                          const EncoderConfig& cfg, unsigned threads, std::size_t chunk) {
  const std::size_t n = molecules.size(), dim = cfg.output_dim();
  Tensor<double> out({n, dim});
  if (n == 0) return out;
  chunk = std::max<std::size_t>(chunk, 1);
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  const auto work = [&](std::size_t first_chunk, std::size_t stride) {
    for (std::size_t c = first_chunk; c < n_chunks; c += stride) {
      const std::size_t lo = c * chunk, hi = std::min(n, lo + chunk);
      std::vector<PreparedMolecule> prepared;
      prepared.reserve(hi - lo);
      for (std::size_t i = lo; i < hi; ++i) prepared.push_back(prepare(molecules[i], cfg));
      std::vector<const PreparedMolecule*> ptrs;
      for (const auto& p : prepared) ptrs.push_back(&p);
      const auto batch = make_batch(ptrs, cfg.n_rbf);
      Tape<T> tape;
      const auto e = encoder_forward(tape, bind_frozen(tape, params), params, cfg, batch).encodings.value();
      for (std::size_t i = lo; i < hi; ++i)
        for (std::size_t j = 0; j < dim; ++j) out.at(i, j) = static_cast<double>(e.at(i - lo, j));
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_chunks)));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(t, threads);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  return out;
}

EncodingCache::EncodingCache(std::vector<std::string> ids, Tensor<double> rows) : ids_(std::move(ids)) {
  if (rows.rank() != 2 || rows.rows() != ids_.size()) {
    throw DimensionError("encoding cache: " + std::to_string(ids_.size()) + " ids for rows " +
                         num::shape_str(rows.shape()));
  }
  dim_ = rows.cols();
  data_ = std::move(rows.storage());
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (!row_.emplace(ids_[i], i).second) throw DataError("encoding cache: duplicate id '" + ids_[i] + "'");
}

std::span<const double> EncodingCache::row(const std::string& id) const {
  const auto it = row_.find(id);
  if (it == row_.end()) throw DataError("encoding cache has no molecule '" + id + "'");
  return std::span<const double>(data_).subspan(it->second * dim_, dim_);
}

std::filesystem::path EncodingCache::index_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".index.json");
}

void EncodingCache::save(const std::filesystem::path& path) const {
  num::Checkpoint ck;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    ck.put(ids_[i], Tensor<double>::vector(std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(i * dim_),
                                                               data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim_))));
  }
  ck.save(path);
  std::ofstream os(index_path(path));
  if (!os) throw DataError("cannot write '" + index_path(path).string() + "'");
  os << json{{"ids", ids_}, {"dim", dim_}}.dump() << '\n';
}

EncodingCache EncodingCache::load(const std::filesystem::path& path) {
  std::ifstream is(index_path(path));
  if (!is) throw DataError("cannot open '" + index_path(path).string() + "'");
  json index;
  try {
    index = json::parse(is);
  } catch (const json::exception& e) {
    throw ParseError(index_path(path).string(), 1, e.what());
  }
  const auto ids = index.at("ids").get<std::vector<std::string>>();
  const auto dim = index.at("dim").get<std::size_t>();
  const auto ck = num::Checkpoint::load(path);
  Tensor<double> rows({ids.size(), dim});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!ck.contains(ids[i])) throw DataError("encoding cache '" + path.string() + "' lacks '" + ids[i] + "'");
    const auto t = ck.get<double>(ids[i]);
    if (t.size() != dim) throw DimensionError("encoding for '" + ids[i] + "' has the wrong length");
    std::copy(t.data().begin(), t.data().end(), rows.ptr() + i * dim);
  }
  return EncodingCache(ids, std::move(rows));
}

template <std::floating_point T>
void save_encoder(const std::filesystem::path& path, const ParamStore<T>& params, const EncoderConfig& cfg) {
  num::Checkpoint ck;
  ck.put_all(params);
  ck.save(path);
  std::ofstream os(path.string() + ".json");
  if (!os) throw DataError("cannot write encoder sidecar for '" + path.string() + "'");
  os << json{{"config", cfg}}.dump(2) << '\n';
}

template <std::floating_point T>
ParamStore<T> load_encoder(const std::filesystem::path& path, EncoderConfig& cfg) {
  std::ifstream is(path.string() + ".json");
  if (!is) throw DataError("cannot open encoder sidecar '" + path.string() + ".json'");
  try {
    cfg = json::parse(is).at("config").get<EncoderConfig>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ".json", 1, e.what());
  }
  auto params = init_encoder_params<T>(cfg, 0);
  num::Checkpoint::load(path).load_into(params);
  return params;
}

#define ICLMOL_INSTANTIATE_ENCODER(T)                                                                              \
  template ParamStore<T> init_encoder_params<T>(const EncoderConfig&, std::uint64_t);                           \
  template EncoderOutput<T> encoder_forward<T>(Tape<T>&, const std::vector<Var<T>>&, const ParamStore<T>&,      \
                                               const EncoderConfig&, const GraphBatch&);                        \
  template std::vector<T> encode<T>(const mol::Molecule&, const ParamStore<T>&, const EncoderConfig&);           \
  template T pretrain_readout<T>(std::span<const T>, const ParamStore<T>&, const EncoderConfig&);                \
  template Tensor<double> encode_all<T>(std::span<const mol::Molecule>, const ParamStore<T>&,                    \
                                        const EncoderConfig&, unsigned, std::size_t);                           \
  template void save_encoder<T>(const std::filesystem::path&, const ParamStore<T>&, const EncoderConfig&);       \
  template ParamStore<T> load_encoder<T>(const std::filesystem::path&, EncoderConfig&);

ICLMOL_INSTANTIATE_ENCODER(float)
ICLMOL_INSTANTIATE_ENCODER(double)

}  // namespace iclmol::enc
