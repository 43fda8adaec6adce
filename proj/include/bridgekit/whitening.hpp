#pragma once

#include <vector>

#include "bridgekit/common.hpp"

namespace bridgekit {

// PCA whitening transform: center, project onto the top principal axes and
// scale by inverse singular values. Axes whose singular value falls below the
// 1e-6 floor are padded as zero columns and counted in `deficient_axes`.
struct Whitening {
  int in_dim = 0, out_dim = 0;
  std::vector<double> mean;  // in_dim
  std::vector<double> proj;  // in_dim x out_dim, column j = scaled axis j
  int deficient_axes = 0;

  std::vector<double> apply(const double* x) const {
    std::vector<double> out(out_dim, 0.0);
    for (int i = 0; i < in_dim; ++i) {
      double c = x[i] - mean[i];
      if (c == 0.0) continue;
      const double* row = proj.data() + static_cast<size_t>(i) * out_dim;
      for (int j = 0; j < out_dim; ++j) out[j] += c * row[j];
    }
    return out;
  }

  std::vector<double> apply(const std::vector<double>& x) const {
    if (static_cast<int>(x.size()) != in_dim) throw std::invalid_argument("whitening: dimension mismatch");
    return apply(x.data());
  }
};

inline void l2_normalize(std::vector<double>& v) {
  double n = 0;
  for (double x : v) n += x * x;
  if (n == 0.0) return;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

namespace detail {

// Cyclic Jacobi eigensolver for a symmetric matrix (row-major n x n).
// Eigenvectors come back as columns of `vecs`.
inline void jacobi_eigh(std::vector<double> a, int n, std::vector<double>& eigvals,
                        std::vector<double>& vecs) {
  vecs.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vecs[static_cast<size_t>(i) * n + i] = 1.0;
  auto at = [&](std::vector<double>& m, int i, int j) -> double& {
    return m[static_cast<size_t>(i) * n + j];
  };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += at(a, i, j) * at(a, i, j);
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        double apq = at(a, p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < n; ++k) {
          double akp = at(a, k, p), akq = at(a, k, q);
          at(a, k, p) = c * akp - s * akq;
          at(a, k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          double apk = at(a, p, k), aqk = at(a, q, k);
          at(a, p, k) = c * apk - s * aqk;
          at(a, q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          double vkp = at(vecs, k, p), vkq = at(vecs, k, q);
          at(vecs, k, p) = c * vkp - s * vkq;
          at(vecs, k, q) = s * vkp + c * vkq;
        }
      }
  }
  eigvals.resize(n);
  for (int i = 0; i < n; ++i) eigvals[i] = a[static_cast<size_t>(i) * n + i];
}

}  // namespace detail

// Fits the transform on `n_rows` corpus rows of width in_dim (row-major).
// Covariance uses the 1/n convention, so the whitened corpus covariance is
// the identity on retained axes.
inline Whitening fit_whitening(const std::vector<double>& rows, int n_rows, int in_dim, int out_dim) {
  if (n_rows < out_dim) throw std::invalid_argument("fit_whitening: need at least out_dim rows");
  if (in_dim < out_dim) throw std::invalid_argument("fit_whitening: out_dim exceeds input width");
  if (rows.size() != static_cast<size_t>(n_rows) * in_dim)
    throw std::invalid_argument("fit_whitening: corpus size mismatch");

  Whitening w;
  w.in_dim = in_dim;
  w.out_dim = out_dim;
  w.mean.assign(in_dim, 0.0);
  for (int r = 0; r < n_rows; ++r)
    for (int i = 0; i < in_dim; ++i) w.mean[i] += rows[static_cast<size_t>(r) * in_dim + i];
  for (double& m : w.mean) m /= n_rows;

  std::vector<double> cov(static_cast<size_t>(in_dim) * in_dim, 0.0);
  std::vector<double> centered(in_dim);
  for (int r = 0; r < n_rows; ++r) {
    for (int i = 0; i < in_dim; ++i) centered[i] = rows[static_cast<size_t>(r) * in_dim + i] - w.mean[i];
    for (int i = 0; i < in_dim; ++i) {
      if (centered[i] == 0.0) continue;
      for (int j = i; j < in_dim; ++j) cov[static_cast<size_t>(i) * in_dim + j] += centered[i] * centered[j];
    }
  }
  for (int i = 0; i < in_dim; ++i)
    for (int j = i; j < in_dim; ++j) {
      double v = cov[static_cast<size_t>(i) * in_dim + j] / n_rows;
      cov[static_cast<size_t>(i) * in_dim + j] = v;
      cov[static_cast<size_t>(j) * in_dim + i] = v;
    }

  std::vector<double> eigvals, vecs;
  detail::jacobi_eigh(std::move(cov), in_dim, eigvals, vecs);

  std::vector<int> order(in_dim);
  for (int i = 0; i < in_dim; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) { return eigvals[a] > eigvals[b]; });

  w.proj.assign(static_cast<size_t>(in_dim) * out_dim, 0.0);
  for (int j = 0; j < out_dim; ++j) {
    int axis = order[j];
    double sigma = eigvals[axis] > 0 ? std::sqrt(eigvals[axis]) : 0.0;
    if (sigma < 1e-6) {
      ++w.deficient_axes;
      continue;
    }
    double scale = 1.0 / sigma;
    for (int i = 0; i < in_dim; ++i)
      w.proj[static_cast<size_t>(i) * out_dim + j] = vecs[static_cast<size_t>(i) * in_dim + axis] * scale;
  }
  return w;
}

}  // namespace bridgekit
