#pragma once

#include <cstdint>
#include <vector>

#include "iclmol/num/tape.hpp"

// Differentiable ops over Tape values. Matrices are rank 2 and row-major.
// Broadcasting is limited to adding a rank-1 bias to every row.

namespace iclmol::num {

using Index = std::vector<std::uint32_t>;

template <std::floating_point T> Var<T> matmul(Var<T> a, Var<T> b);
/// a·bᵀ without materializing the transpose.
template <std::floating_point T> Var<T> matmul_nt(Var<T> a, Var<T> b);
template <std::floating_point T> Var<T> add(Var<T> a, Var<T> b);
template <std::floating_point T> Var<T> sub(Var<T> a, Var<T> b);
template <std::floating_point T> Var<T> mul(Var<T> a, Var<T> b);
template <std::floating_point T> Var<T> scale(Var<T> a, T c);
template <std::floating_point T> Var<T> add_bias(Var<T> a, Var<T> bias);

template <std::floating_point T> Var<T> exp(Var<T> a);
template <std::floating_point T> Var<T> tanh(Var<T> a);
template <std::floating_point T> Var<T> silu(Var<T> a);
/// tanh approximation, as in GPT-2.
template <std::floating_point T> Var<T> gelu(Var<T> a);
template <std::floating_point T> Var<T> square(Var<T> a);
template <std::floating_point T> Var<T> abs(Var<T> a);

template <std::floating_point T> Var<T> softmax_rows(Var<T> a);
template <std::floating_point T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));

template <std::floating_point T> Var<T> sum(Var<T> a);
template <std::floating_point T> Var<T> mean(Var<T> a);
/// Column sums of a matrix: [m,n] -> [n].
template <std::floating_point T> Var<T> sum_rows(Var<T> a);

template <std::floating_point T> Var<T> gather_rows(Var<T> a, const Index& rows);
/// out[idx[r]] += a[r]; out has n_out rows.
template <std::floating_point T>
Var<T> scatter_add_rows(Var<T> a, const Index& idx, std::size_t n_out);
template <std::floating_point T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <std::floating_point T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <std::floating_point T> Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);
template <std::floating_point T> Var<T> reshape(Var<T> a, Shape shape);
template <std::floating_point T> Var<T> transpose(Var<T> a);

/// Multi-head causal self-attention over n_seq packed sequences of seq_len
/// rows each. q, k, v: [n_seq*seq_len, model_dim]. Row i of a sequence only
/// reads rows j <= i of the same sequence.
template <std::floating_point T>
Var<T> causal_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t n_seq, std::size_t seq_len,
                        std::size_t n_heads);

}  // namespace iclmol::num
