#include "ple/numeric/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace ple::kernels {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[i * k + p];
      const double* __restrict br = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += s * br[j];
    }
  }
}

Tensor transpose(const Tensor& w) {
  const std::size_t r = w.rows();
  const std::size_t c = w.cols();
  Tensor t({c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = w[i * c + j];
  }
  return t;
}

void linear_rows(std::span<const double> x, const Tensor& wt, std::span<double> y,
                 std::size_t rows) {
  // wt is [in x out]
  matmul(x, wt.data(), y, rows, wt.rows(), wt.cols());
}

double rms_norm_row(std::span<const double> x, std::span<const double> gain,
                    std::span<double> y) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + kRmsEps);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gain[i] * (x[i] * inv);
  return inv;
}

void rope_row(std::span<double> row, std::size_t n_heads, std::size_t position, double base,
              bool inverse) {
  const std::size_t head_dim = row.size() / n_heads;
  const double pos = static_cast<double>(position);
  for (std::size_t h = 0; h < n_heads; ++h) {
    double* v = row.data() + h * head_dim;
    for (std::size_t i = 0; i + 1 < head_dim; i += 2) {
      const double freq = std::pow(base, -static_cast<double>(i) / static_cast<double>(head_dim));
      const double angle = pos * freq;
      const double c = std::cos(angle);
      const double s = inverse ? -std::sin(angle) : std::sin(angle);
      const double x0 = v[i];
      const double x1 = v[i + 1];
      v[i] = x0 * c - x1 * s;
      v[i + 1] = x0 * s + x1 * c;
    }
  }
}

void attend_row(std::span<const double> q_head, const double* keys, const double* values,
                std::size_t count, std::size_t stride, std::size_t head_dim,
                std::span<double> probs, std::span<double> out_head) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  double max_score = -INFINITY;
  for (std::size_t s = 0; s < count; ++s) {
    const double* k = keys + s * stride;
    double dot = 0.0;
    for (std::size_t d = 0; d < head_dim; ++d) dot += q_head[d] * k[d];
    probs[s] = dot * scale;
    max_score = std::max(max_score, probs[s]);
  }
  double denom = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    probs[s] = std::exp(probs[s] - max_score);
    denom += probs[s];
  }
  std::fill(out_head.begin(), out_head.end(), 0.0);
  for (std::size_t s = 0; s < count; ++s) {
    probs[s] /= denom;
    const double* v = values + s * stride;
    for (std::size_t d = 0; d < head_dim; ++d) out_head[d] += probs[s] * v[d];
  }
}

double log_sum_exp(std::span<const double> row) {
  const double m = *std::max_element(row.begin(), row.end());
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace ple::kernels
