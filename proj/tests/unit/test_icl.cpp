#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "iclmol/icl.hpp"
#include "iclmol/num/ops.hpp"
#include "stack_checks.hpp"

using namespace iclmol;
using icl::IclConfig;
using icl::SequenceBatch;
using T64 = num::Tensor<double>;

namespace {

IclConfig small_config() {
  IclConfig c;
  c.model_dim = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.input_dim = 6;
  c.max_positions = 10;
  return c;
}

SequenceBatch<double> random_batch(const IclConfig& cfg, std::size_t n_seq, std::size_t k, bool withhold,
                                   std::mt19937_64& rng) {
  SequenceBatch<double> b;
  b.n_seq = n_seq;
  b.k = k;
  b.n_tokens = withhold ? 2 * k - 1 : 2 * k;
  b.encodings = num::random_normal<double>({n_seq * k, cfg.input_dim}, 1.0, rng);
  std::normal_distribution<double> nd;
  for (std::size_t i = 0; i < n_seq * k; ++i) b.labels.push_back(nd(rng));
  return b;
}

// Plain-loop transformer used as an independent reference.
using Mat = std::vector<std::vector<double>>;

Mat linear(const Mat& x, const T64& w, const T64& b) {
  const std::size_t in = w.rows(), out = w.cols();
  Mat y(x.size(), std::vector<double>(out));
  for (std::size_t r = 0; r < x.size(); ++r)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += x[r][i] * w[i * out + o];
      y[r][o] = s;
    }
  return y;
}

Mat layer_norm(const Mat& x, const T64& g, const T64& b) {
  Mat y = x;
  for (auto& row : y) {
    double mu = 0, var = 0;
    for (double v : row) mu += v;
    mu /= row.size();
    for (double v : row) var += (v - mu) * (v - mu);
    var /= row.size();
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - mu) / std::sqrt(var + 1e-5) * g[c] + b[c];
  }
  return y;
}

std::vector<double> reference_forward(const num::ParamStore<double>& p, const IclConfig& cfg,
                                      const SequenceBatch<double>& batch) {
  const std::size_t dm = cfg.model_dim, dh = dm / cfg.n_heads;
  std::vector<double> preds;
  for (std::size_t s = 0; s < batch.n_seq; ++s) {
    Mat x;
    for (std::size_t t = 0; t < batch.n_tokens; ++t) {
      const std::size_t e = s * batch.k + t / 2;
      Mat row;
      if (t % 2 == 0) {
        row = {std::vector<double>(batch.encodings.ptr() + e * cfg.input_dim,
                                   batch.encodings.ptr() + (e + 1) * cfg.input_dim)};
        row = linear(row, p.at("select.w"), p.at("select.b"));
      } else {
        row = linear({{batch.labels[e]}}, p.at("label_embed.w"), p.at("label_embed.b"));
      }
      for (std::size_t c = 0; c < dm; ++c) row[0][c] += p.at("pos_embed")[t * dm + c];
      x.push_back(row[0]);
    }
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string pre = "blocks." + std::to_string(l) + ".";
      const auto qkv = linear(layer_norm(x, p.at(pre + "ln1.g"), p.at(pre + "ln1.b")), p.at(pre + "attn.qkv.w"),
                              p.at(pre + "attn.qkv.b"));
      Mat att(x.size(), std::vector<double>(dm, 0.0));
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        for (std::size_t i = 0; i < x.size(); ++i) {
          std::vector<double> score(i + 1);
          double mx = -1e300;
          for (std::size_t j = 0; j <= i; ++j) {
            double d = 0;
            for (std::size_t c = 0; c < dh; ++c) d += qkv[i][h * dh + c] * qkv[j][dm + h * dh + c];
            score[j] = d / std::sqrt(double(dh));
            mx = std::max(mx, score[j]);
          }
          double z = 0;
          for (auto& v : score) z += (v = std::exp(v - mx));
          for (std::size_t j = 0; j <= i; ++j)
            for (std::size_t c = 0; c < dh; ++c) att[i][h * dh + c] += score[j] / z * qkv[j][2 * dm + h * dh + c];
        }
      }
      const auto o = linear(att, p.at(pre + "attn.out.w"), p.at(pre + "attn.out.b"));
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t c = 0; c < dm; ++c) x[i][c] += o[i][c];
      auto hid = linear(layer_norm(x, p.at(pre + "ln2.g"), p.at(pre + "ln2.b")), p.at(pre + "ff.in.w"),
                        p.at(pre + "ff.in.b"));
      for (auto& row : hid)
        for (auto& v : row) v = 0.5 * v * (1 + std::tanh(std::sqrt(2 / M_PI) * (v + 0.044715 * v * v * v)));
      const auto f = linear(hid, p.at(pre + "ff.out.w"), p.at(pre + "ff.out.b"));
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t c = 0; c < dm; ++c) x[i][c] += f[i][c];
    }
    const auto head = linear(layer_norm(x, p.at("ln_f.g"), p.at("ln_f.b")), p.at("head.w"), p.at("head.b"));
    for (std::size_t e = 0; e < batch.k; ++e) preds.push_back(head[2 * e][0]);
  }
  return preds;
}

}  // namespace

TEST_CASE("token order interleaves structures and labels") {
  CHECK(icl::token_order(1, 2, 3) == num::Index{0, 2, 1});
  CHECK(icl::token_order(2, 2, 4) == num::Index{0, 4, 1, 5, 2, 6, 3, 7});
}

TEST_CASE("forward pass matches a hand-unrolled reference") {
  IclConfig cfg = small_config();
  cfg.model_dim = 8;
  cfg.n_heads = 2;
  cfg.input_dim = 3;
  std::mt19937_64 rng(4);
  auto p = icl::init_icl_params<double>(cfg, 6);
  std::normal_distribution<double> nd;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.name(i).ends_with(".b") || p.name(i).ends_with(".g"))
      for (auto& v : p.value(i).data()) v += 0.2 * nd(rng);
  for (bool withhold : {false, true}) {
    const auto batch = random_batch(cfg, 2, 3, withhold, rng);
    const auto got = icl::icl_predict(p, cfg, batch);
    const auto want = reference_forward(p, cfg, batch);
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-10));
  }
}

TEST_CASE("prediction i ignores every token after position 2i") {
  const auto cfg = small_config();
  const auto p = icl::init_icl_params<double>(cfg, 1);
  std::mt19937_64 rng(2);
  const std::size_t k = 4;
  const auto batch = random_batch(cfg, 1, k, false, rng);
  const auto base = icl::icl_predict(p, cfg, batch);
  for (std::size_t i = 0; i < k; ++i) {
    auto poked = batch;
    for (std::size_t e = i; e < k; ++e) {
      poked.labels[e] += 3.0;  // label of example e sits at position 2e+1 > 2i
      if (e > i)
        for (std::size_t c = 0; c < cfg.input_dim; ++c) poked.encodings.at(e, c) -= 2.0;
    }
    const auto after = icl::icl_predict(p, cfg, poked);
    for (std::size_t j = 0; j <= i; ++j) CHECK(after[j] == base[j]);
    if (i + 1 < k) CHECK(after[k - 1] != base[k - 1]);
  }
}

TEST_CASE("withholding the last label leaves every prediction unchanged") {
  const auto cfg = small_config();
  const auto p = icl::init_icl_params<double>(cfg, 3);
  std::mt19937_64 rng(5);
  auto full = random_batch(cfg, 3, 4, false, rng);
  auto cut = full;
  cut.n_tokens = 7;
  CHECK(icl::icl_predict(p, cfg, full) == icl::icl_predict(p, cfg, cut));
}

TEST_CASE("loss gradient at label-position head outputs is exactly zero") {
  const auto cfg = small_config();
  const auto p = icl::init_icl_params<double>(cfg, 8);
  std::mt19937_64 rng(9);
  const auto batch = random_batch(cfg, 2, 4, false, rng);
  num::Tape<double> tape;
  const auto bound = p.bind(tape);
  const auto out = icl::icl_forward(tape, bound, p, cfg, batch);
  const std::vector<double> w{0.5, 1, 1, 1};
  tape.backward(icl::masked_loss<double>(out.predictions, batch.labels, w, 2));
  const auto g = tape.grad(out.head_all);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    if (r % 2 == 1) {
      CHECK(g[r] == 0.0);
    } else {
      CHECK(g[r] != 0.0);
    }
  }
}

TEST_CASE("sequence model gradients pass the finite-difference check") {
  for (std::uint64_t seed = 0; seed < 2; ++seed) CHECK(checks::icl_gradcheck(seed) <= 1e-5);
}

TEST_CASE("masked loss weights and errors") {
  num::Tape<double> tape;
  const auto pred = tape.leaf(T64({4, 1}, {1, 2, 3, 4}), true);
  const std::vector<double> labels{0, 0, 0, 0};
  const std::vector<double> w{0, 1};
  // Sequences [1,2] and [3,4]; only position 1 counts: (4 + 16) / 2.
  CHECK(icl::masked_loss<double>(pred, labels, w, 2).value().item() == doctest::Approx(10.0));
  const std::vector<double> zero{0, 0};
  CHECK_THROWS_AS(icl::masked_loss<double>(pred, labels, zero, 2), DataError);
  const std::vector<double> three{1, 1, 1};
  CHECK_THROWS_AS(icl::masked_loss<double>(pred, labels, three, 2), DimensionError);
}

TEST_CASE("forward rejects inconsistent batches") {
  const auto cfg = small_config();
  const auto p = icl::init_icl_params<double>(cfg, 0);
  std::mt19937_64 rng(1);
  auto b = random_batch(cfg, 1, 3, false, rng);
  b.encodings = num::random_normal<double>({3, cfg.input_dim + 1}, 1.0, rng);
  CHECK_THROWS_AS(icl::icl_predict(p, cfg, b), DimensionError);
  auto long_batch = random_batch(cfg, 1, 6, false, rng);  // 12 tokens > 10 positions
  CHECK_THROWS_AS(icl::icl_predict(p, cfg, long_batch), DataError);
}

TEST_CASE("standardizer fit and round trip") {
  T64 enc({4, 3}, {1, 5, 2, 3, 5, 2, 5, 5, 2, 7, 5, 2});
  enc.at(3, 2) = 2.0;
  const std::vector<double> y{-1, 0, 1, 4};
  const auto s = icl::Standardizer::fit(enc, y);
  CHECK(s.enc_mean[0] == doctest::Approx(4.0));
  CHECK(s.enc_std[0] == doctest::Approx(std::sqrt(5.0)));
  CHECK(s.enc_std[1] == 1.0);  // constant channel keeps unit scale
  CHECK(s.y_mean == doctest::Approx(1.0));
  for (double v : {-3.0, 0.0, 2.5}) CHECK(s.unlabel(s.label(v)) == doctest::Approx(v).epsilon(1e-14));
  std::vector<double> row{4, 5, 2};
  s.encode_in_place(row);
  CHECK(row == std::vector<double>{0, 0, 0});
  std::vector<double> bad{1, 2};
  CHECK_THROWS_AS(s.encode_in_place(bad), DimensionError);
}

TEST_CASE("model checkpoint round trip") {
  auto cfg = small_config();
  cfg.layer_norm = false;
  const auto p = icl::init_icl_params<float>(cfg, 2);
  CHECK(p.find("ln_f.g") == num::ParamStore<float>::npos);
  icl::Standardizer s;
  s.enc_mean.assign(cfg.input_dim, 0.5);
  s.enc_std.assign(cfg.input_dim, 2.0);
  s.y_mean = -3;
  s.y_std = 0.5;
  const auto path = std::filesystem::temp_directory_path() / "iclmol_icl_test.ckpt";
  icl::save_icl(path, p, cfg, s);
  IclConfig back;
  icl::Standardizer sb;
  const auto q = icl::load_icl<float>(path, back, sb);
  CHECK(!back.layer_norm);
  CHECK(back.n_layers == 2);
  CHECK(sb.y_mean == -3);
  CHECK(sb.enc_std == s.enc_std);
  CHECK(q.same_layout(p));
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::ranges::equal(q.value(i).data(), p.value(i).data()));
}
