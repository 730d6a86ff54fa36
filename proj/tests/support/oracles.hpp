#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

// Scalar-loop reference implementations, written without the library's ops.
namespace meunet::oracle {

// x: [n][cin][d][h][w] flat, w: [cout][cin][3][3][3], zero padding 1.
inline std::vector<double> conv3d(const std::vector<double>& x, const std::vector<double>& wt,
                                  const std::vector<double>& b, int n, int cin, int cout, int d, int h, int w) {
  std::vector<double> y(static_cast<std::size_t>(n) * cout * d * h * w, 0.0);
  for (int bi = 0; bi < n; ++bi)
    for (int co = 0; co < cout; ++co)
      for (int z = 0; z < d; ++z)
        for (int yy = 0; yy < h; ++yy)
          for (int xx = 0; xx < w; ++xx) {
            double acc = b[co];
            for (int ci = 0; ci < cin; ++ci)
              for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                  for (int kx = 0; kx < 3; ++kx) {
                    const int iz = z + kz - 1, iy = yy + ky - 1, ix = xx + kx - 1;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= d || iy >= h || ix >= w) continue;
                    acc += wt[(((co * cin + ci) * 3 + kz) * 3 + ky) * 3 + kx] *
                           x[(((static_cast<std::size_t>(bi) * cin + ci) * d + iz) * h + iy) * w + ix];
                  }
            y[(((static_cast<std::size_t>(bi) * cout + co) * d + z) * h + yy) * w + xx] = acc;
          }
  return y;
}

inline double class_weight(const std::vector<std::uint64_t>& counts, std::size_t i) {
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  double z = 0;
  for (auto c : counts) z += std::exp(total / static_cast<double>(c));
  return std::exp(total / static_cast<double>(counts[i])) / z;
}

// probs/target: [n][k][v] flat.
inline double soft_dice(const std::vector<double>& p, const std::vector<double>& t, int n, int k, int v, double eps) {
  double loss = 0;
  for (int c = 0; c < k; ++c) {
    double inter = 0, sl = 0, sp = 0;
    for (int b = 0; b < n; ++b)
      for (int i = 0; i < v; ++i) {
        const std::size_t j = (static_cast<std::size_t>(b) * k + c) * v + i;
        inter += p[j] * t[j];
        sl += t[j];
        sp += p[j];
      }
    loss += 1.0 - 2.0 * inter / (sl + sp + eps);
  }
  return loss / k;
}

inline double weighted_ce(const std::vector<double>& p, const std::vector<std::uint8_t>& y,
                          const std::vector<double>& w, int n, int k, int v) {
  double s = 0;
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < v; ++i) {
      const int c = y[static_cast<std::size_t>(b) * v + i];
      s += w[c] * -std::log(std::max(p[(static_cast<std::size_t>(b) * k + c) * v + i], 1e-12));
    }
  return s / (static_cast<double>(n) * v);
}

inline std::vector<double> softmax(const std::vector<double>& logits, int n, int k, int v) {
  std::vector<double> p(logits.size());
  for (int b = 0; b < n; ++b)
    for (int i = 0; i < v; ++i) {
      double mx = -1e300;
      for (int c = 0; c < k; ++c) mx = std::max(mx, logits[(static_cast<std::size_t>(b) * k + c) * v + i]);
      double z = 0;
      for (int c = 0; c < k; ++c) z += std::exp(logits[(static_cast<std::size_t>(b) * k + c) * v + i] - mx);
      for (int c = 0; c < k; ++c) {
        const std::size_t j = (static_cast<std::size_t>(b) * k + c) * v + i;
        p[j] = std::exp(logits[j] - mx) / z;
      }
    }
  return p;
}

}  // namespace meunet::oracle
