#pragma once

#include <cstddef>
#include <span>

#include "ple/numeric/tensor.hpp"

// Plain forward kernels shared by the taped ops and the KV-cached decoder.
// Every row is computed with the same loop order regardless of how many rows
// are processed at once, so incremental decoding reproduces full-recompute
// values exactly.
namespace ple::kernels {

inline constexpr double kRmsEps = 1e-6;

double sigmoid(double x);
double silu(double x);
// d/dx silu(x)
double silu_grad(double x);

// out[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n);

// Transposes an [rows x cols] matrix into [cols x rows].
Tensor transpose(const Tensor& w);

// y[rows x out] = x[rows x in] * w^T where w is [out x in] and wt is its transpose.
void linear_rows(std::span<const double> x, const Tensor& wt, std::span<double> y,
                 std::size_t rows);

// Returns 1/sqrt(mean(x^2) + eps) and writes gain * x * that factor into y.
double rms_norm_row(std::span<const double> x, std::span<const double> gain,
                    std::span<double> y);

// Rotates consecutive pairs of each head in place for the given position.
void rope_row(std::span<double> row, std::size_t n_heads, std::size_t position, double base,
              bool inverse = false);

// Causal attention for one query row against keys/values 0..count-1 of one
// head. `probs` receives the softmax weights (length count).
void attend_row(std::span<const double> q_head, const double* keys, const double* values,
                std::size_t count, std::size_t stride, std::size_t head_dim,
                std::span<double> probs, std::span<double> out_head);

// Numerically stable log-sum-exp of a row.
double log_sum_exp(std::span<const double> row);

}  // namespace ple::kernels
