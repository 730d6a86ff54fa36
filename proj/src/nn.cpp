#include "meunet/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace meunet {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct Grid5 {
  std::size_t n, c, d, h, w;
  std::size_t plane() const { return h * w; }
  std::size_t vol() const { return d * h * w; }
};

Grid5 grid5(const char* op, const Tensor& t) {
  if (t.dim() != 5) throw ShapeError(std::string(op) + ": expected [N,C,D,H,W], got " + shape_str(t.shape()));
  const auto& s = t.shape();
  return {s[0], s[1], s[2], s[3], s[4]};
}

// Column buffer rows are (ci, kz, ky, kx); columns are voxels of z-slices
// [z0, z0+nz) in scan order.
void im2col(const double* x, const Grid5& g, std::size_t cin, std::size_t z0, std::size_t nz, double* cols) {
  const std::size_t hw = g.plane(), cnt = nz * hw, W = g.w;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const double* xc = x + ci * g.vol();
    for (int kz = 0; kz < 3; ++kz)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          double* row = cols + ((ci * 3 + kz) * 3 + ky) * 3 * cnt + kx * cnt;
          for (std::size_t z = 0; z < nz; ++z) {
            double* dz = row + z * hw;
            const long zz = static_cast<long>(z0 + z) + kz - 1;
            if (zz < 0 || zz >= static_cast<long>(g.d)) {
              std::fill_n(dz, hw, 0.0);
              continue;
            }
            for (std::size_t y = 0; y < g.h; ++y) {
              double* dy = dz + y * W;
              const long yy = static_cast<long>(y) + ky - 1;
              if (yy < 0 || yy >= static_cast<long>(g.h)) {
                std::fill_n(dy, W, 0.0);
                continue;
              }
              const double* src = xc + zz * hw + yy * W;
              if (kx == 0) {
                dy[0] = 0.0;
                std::copy_n(src, W - 1, dy + 1);
              } else if (kx == 1) {
                std::copy_n(src, W, dy);
              } else {
                std::copy_n(src + 1, W - 1, dy);
                dy[W - 1] = 0.0;
              }
            }
          }
        }
  }
}

void col2im_add(const double* cols, const Grid5& g, std::size_t cin, std::size_t z0, std::size_t nz, double* gx) {
  const std::size_t hw = g.plane(), cnt = nz * hw, W = g.w;
  for (std::size_t ci = 0; ci < cin; ++ci) {
    double* xc = gx + ci * g.vol();
    for (int kz = 0; kz < 3; ++kz)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const double* row = cols + ((ci * 3 + kz) * 3 + ky) * 3 * cnt + kx * cnt;
          for (std::size_t z = 0; z < nz; ++z) {
            const long zz = static_cast<long>(z0 + z) + kz - 1;
            if (zz < 0 || zz >= static_cast<long>(g.d)) continue;
            const double* dz = row + z * hw;
            for (std::size_t y = 0; y < g.h; ++y) {
              const long yy = static_cast<long>(y) + ky - 1;
              if (yy < 0 || yy >= static_cast<long>(g.h)) continue;
              const double* src = dz + y * W;
              double* dst = xc + zz * hw + yy * W;
              if (kx == 0) {
                for (std::size_t x = 1; x < W; ++x) dst[x - 1] += src[x];
              } else if (kx == 1) {
                for (std::size_t x = 0; x < W; ++x) dst[x] += src[x];
              } else {
                for (std::size_t x = 0; x + 1 < W; ++x) dst[x + 1] += src[x];
              }
            }
          }
        }
  }
}

std::size_t slices_per_chunk(std::size_t rows, const Grid5& g) {
  constexpr std::size_t budget = std::size_t{1} << 16;  // doubles in the column buffer
  const std::size_t per_slice = rows * g.plane();
  return std::clamp<std::size_t>(budget / std::max<std::size_t>(per_slice, 1), 1, g.d);
}

}  // namespace

LabelTensor::LabelTensor(Shape s, std::vector<std::uint8_t> v) : shape(std::move(s)), values(std::move(v)) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("labels: shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " elements, got " + std::to_string(values.size()));
  }
}

BatchNormState BatchNormState::make(std::size_t channels) {
  BatchNormState s;
  s.scale = Tensor::full({channels}, 1.0, true);
  s.shift = Tensor::zeros({channels}, true);
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  return s;
}

Tensor conv3d(const Tensor& input, const Conv3dParams& params) {
  const Grid5 g = grid5("conv3d", input);
  const auto& ws = params.weight.shape();
  if (ws.size() != 5 || ws[2] != 3 || ws[3] != 3 || ws[4] != 3) {
    throw ShapeError("conv3d: weight must be [out,in,3,3,3], got " + shape_str(ws));
  }
  if (ws[1] != g.c) {
    throw ShapeError("conv3d: input has " + std::to_string(g.c) + " channels but weight expects " +
                     std::to_string(ws[1]) + " (input " + shape_str(input.shape()) + ", weight " + shape_str(ws) + ")");
  }
  const std::size_t cout = ws[0];
  if (params.bias.shape() != Shape{cout}) {
    throw ShapeError("conv3d: bias must be [" + std::to_string(cout) + "], got " + shape_str(params.bias.shape()));
  }
  const std::size_t rows = g.c * 27;
  const std::size_t nz = slices_per_chunk(rows, g);
  const std::size_t vol = g.vol();

  std::vector<double> out(g.n * cout * vol);
  // fully overwritten by im2col, so left uninitialized
  const std::unique_ptr<double[]> cols(new double[rows * nz * g.plane()]);
  const ConstMap wm(params.weight.values().data(), cout, rows);
  const auto bias = params.bias.values();
  const auto xv = input.values();
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t z0 = 0; z0 < g.d; z0 += nz) {
      const std::size_t cz = std::min(nz, g.d - z0);
      const std::size_t cnt = cz * g.plane();
      im2col(xv.data() + n * g.c * vol, g, g.c, z0, cz, cols.get());
      const ConstMap cm(cols.get(), rows, cnt);
      StridedMap om(out.data() + n * cout * vol + z0 * g.plane(), cout, cnt, Eigen::OuterStride<>(vol));
      om.noalias() = wm * cm;
      for (std::size_t co = 0; co < cout; ++co) om.row(co).array() += bias[co];
    }
  }

  Shape shape{g.n, cout, g.d, g.h, g.w};
  return make_op_result(
      "conv3d", shape, std::move(out), {input, params.weight, params.bias},
      [input, weight = params.weight, g, cout, rows, nz](std::span<const double> go, std::span<double* const> gi) {
        const std::size_t vol = g.vol();
        if (gi[2]) {
          for (std::size_t n = 0; n < g.n; ++n)
            for (std::size_t co = 0; co < cout; ++co) {
              const double* p = go.data() + (n * cout + co) * vol;
              double s = 0.0;
              for (std::size_t i = 0; i < vol; ++i) s += p[i];
              gi[2][co] += s;
            }
        }
        if (!gi[0] && !gi[1]) return;
        const std::unique_ptr<double[]> cols(gi[1] ? new double[rows * nz * g.plane()] : nullptr);
        const std::unique_ptr<double[]> dcols(gi[0] ? new double[rows * nz * g.plane()] : nullptr);
        const ConstMap wm(weight.values().data(), cout, rows);
        const auto xv = input.values();
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t z0 = 0; z0 < g.d; z0 += nz) {
            const std::size_t cz = std::min(nz, g.d - z0);
            const std::size_t cnt = cz * g.plane();
            const ConstStridedMap gm(go.data() + n * cout * vol + z0 * g.plane(), cout, cnt,
                                     Eigen::OuterStride<>(vol));
            if (gi[1]) {
              im2col(xv.data() + n * g.c * vol, g, g.c, z0, cz, cols.get());
              const ConstMap cm(cols.get(), rows, cnt);
              MutMap gw(gi[1], cout, rows);
              gw.noalias() += gm * cm.transpose();
            }
            if (gi[0]) {
              MutMap dm(dcols.get(), rows, cnt);
              dm.noalias() = wm.transpose() * gm;
              col2im_add(dcols.get(), g, g.c, z0, cz, gi[0] + n * g.c * vol);
            }
          }
        }
      });
}

Tensor maxpool3d(const Tensor& input) {
  const Grid5 g = grid5("maxpool3d", input);
  if (g.d % 2 || g.h % 2 || g.w % 2) {
    throw ShapeError("maxpool3d: spatial extents must be even, got " + shape_str(input.shape()));
  }
  const Grid5 o{g.n, g.c, g.d / 2, g.h / 2, g.w / 2};
  const auto xv = input.values();
  // Index of the first maximum of each 2x2x2 block in scan order.
  auto argmax = [g, o](std::span<const double> xv, std::size_t nc, std::size_t z, std::size_t y, std::size_t x) {
    const double* base = xv.data() + nc * g.vol();
    std::size_t best = (2 * z) * g.plane() + (2 * y) * g.w + 2 * x;
    for (std::size_t dz = 0; dz < 2; ++dz)
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const std::size_t i = (2 * z + dz) * g.plane() + (2 * y + dy) * g.w + 2 * x + dx;
          if (base[i] > base[best]) best = i;
        }
    (void)o;
    return best;
  };
  std::vector<double> out(o.n * o.c * o.vol());
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc)
    for (std::size_t z = 0; z < o.d; ++z)
      for (std::size_t y = 0; y < o.h; ++y)
        for (std::size_t x = 0; x < o.w; ++x)
          out[nc * o.vol() + (z * o.h + y) * o.w + x] = xv[nc * g.vol() + argmax(xv, nc, z, y, x)];
  return make_op_result("maxpool3d", {o.n, o.c, o.d, o.h, o.w}, std::move(out), {input},
                        [input, g, o, argmax](std::span<const double> go, std::span<double* const> gi) {
                          if (!gi[0]) return;
                          const auto xv = input.values();
                          for (std::size_t nc = 0; nc < g.n * g.c; ++nc)
                            for (std::size_t z = 0; z < o.d; ++z)
                              for (std::size_t y = 0; y < o.h; ++y)
                                for (std::size_t x = 0; x < o.w; ++x)
                                  gi[0][nc * g.vol() + argmax(xv, nc, z, y, x)] +=
                                      go[nc * o.vol() + (z * o.h + y) * o.w + x];
                        });
}

Tensor upsample_nearest3d(const Tensor& input) {
  const Grid5 g = grid5("upsample_nearest3d", input);
  const Grid5 o{g.n, g.c, g.d * 2, g.h * 2, g.w * 2};
  const auto xv = input.values();
  std::vector<double> out(o.n * o.c * o.vol());
  for (std::size_t nc = 0; nc < g.n * g.c; ++nc)
    for (std::size_t z = 0; z < o.d; ++z)
      for (std::size_t y = 0; y < o.h; ++y) {
        const double* src = xv.data() + nc * g.vol() + (z / 2) * g.plane() + (y / 2) * g.w;
        double* dst = out.data() + nc * o.vol() + (z * o.h + y) * o.w;
        for (std::size_t x = 0; x < o.w; ++x) dst[x] = src[x / 2];
      }
  return make_op_result("upsample_nearest3d", {o.n, o.c, o.d, o.h, o.w}, std::move(out), {input},
                        [g, o](std::span<const double> go, std::span<double* const> gi) {
                          if (!gi[0]) return;
                          for (std::size_t nc = 0; nc < g.n * g.c; ++nc)
                            for (std::size_t z = 0; z < o.d; ++z)
                              for (std::size_t y = 0; y < o.h; ++y) {
                                double* dst = gi[0] + nc * g.vol() + (z / 2) * g.plane() + (y / 2) * g.w;
                                const double* src = go.data() + nc * o.vol() + (z * o.h + y) * o.w;
                                for (std::size_t x = 0; x < o.w; ++x) dst[x / 2] += src[x];
                              }
                        });
}

Tensor batchnorm3d(const Tensor& input, BatchNormState& state, Mode mode) {
  const Grid5 g = grid5("batchnorm3d", input);
  if (state.scale.shape() != Shape{g.c} || state.running_mean.size() != g.c) {
    throw ShapeError("batchnorm3d: state has " + std::to_string(state.running_mean.size()) +
                     " channels, input " + shape_str(input.shape()));
  }
  if (mode == Mode::eval && !state.initialized) {
    throw std::logic_error("batchnorm3d: eval mode before running statistics were initialized");
  }
  const std::size_t vol = g.vol();
  const double count = static_cast<double>(g.n * vol);
  const auto xv = input.values();
  const auto gamma = state.scale.values();
  const auto beta = state.shift.values();

  std::vector<double> mu(g.c), invstd(g.c);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < g.c; ++c) {
      double s = 0.0;
      for (std::size_t n = 0; n < g.n; ++n) {
        const double* p = xv.data() + (n * g.c + c) * vol;
        for (std::size_t i = 0; i < vol; ++i) s += p[i];
      }
      const double m = s / count;
      double ss = 0.0;
      for (std::size_t n = 0; n < g.n; ++n) {
        const double* p = xv.data() + (n * g.c + c) * vol;
        for (std::size_t i = 0; i < vol; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / count;
      mu[c] = m;
      invstd[c] = 1.0 / std::sqrt(var + state.epsilon);
      const double unbiased = count > 1.0 ? ss / (count - 1.0) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
    state.initialized = true;
  } else {
    for (std::size_t c = 0; c < g.c; ++c) {
      mu[c] = state.running_mean[c];
      invstd[c] = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
    }
  }

  std::vector<double> out(xv.size());
  for (std::size_t n = 0; n < g.n; ++n)
    for (std::size_t c = 0; c < g.c; ++c) {
      const std::size_t off = (n * g.c + c) * vol;
      for (std::size_t i = 0; i < vol; ++i) out[off + i] = (xv[off + i] - mu[c]) * invstd[c] * gamma[c] + beta[c];
    }

  const bool batch_stats = mode == Mode::train;
  return make_op_result(
      "batchnorm3d", input.shape(), std::move(out), {input, state.scale, state.shift},
      [input, scale = state.scale, g, mu, invstd, batch_stats, count](std::span<const double> go,
                                                                      std::span<double* const> gi) {
        const std::size_t vol = g.vol();
        const auto xv = input.values();
        const auto gamma = scale.values();
        for (std::size_t c = 0; c < g.c; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t n = 0; n < g.n; ++n) {
            const std::size_t off = (n * g.c + c) * vol;
            for (std::size_t i = 0; i < vol; ++i) {
              const double xhat = (xv[off + i] - mu[c]) * invstd[c];
              sum_g += go[off + i];
              sum_gx += go[off + i] * xhat;
            }
          }
          if (gi[1]) gi[1][c] += sum_gx;
          if (gi[2]) gi[2][c] += sum_g;
          if (!gi[0]) continue;
          const double k = gamma[c] * invstd[c];
          for (std::size_t n = 0; n < g.n; ++n) {
            const std::size_t off = (n * g.c + c) * vol;
            for (std::size_t i = 0; i < vol; ++i) {
              if (batch_stats) {
                const double xhat = (xv[off + i] - mu[c]) * invstd[c];
                gi[0][off + i] += k * (go[off + i] - sum_g / count - xhat * sum_gx / count);
              } else {
                gi[0][off + i] += k * go[off + i];
              }
            }
          }
        }
      });
}

Tensor relu(const Tensor& input) {
  const auto xv = input.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return make_op_result("relu", input.shape(), std::move(out), {input},
                        [input](std::span<const double> go, std::span<double* const> gi) {
                          if (!gi[0]) return;
                          const auto xv = input.values();
                          for (std::size_t i = 0; i < go.size(); ++i)
                            if (xv[i] > 0.0) gi[0][i] += go[i];
                        });
}

namespace {

void softmax_into(std::span<const double> x, std::size_t n, std::size_t k, std::size_t inner, double* y) {
  for (std::size_t b = 0; b < n; ++b) {
    const double* xb = x.data() + b * k * inner;
    double* yb = y + b * k * inner;
    for (std::size_t v = 0; v < inner; ++v) {
      double mx = xb[v];
      for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, xb[c * inner + v]);
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        const double e = std::exp(xb[c * inner + v] - mx);
        yb[c * inner + v] = e;
        s += e;
      }
      for (std::size_t c = 0; c < k; ++c) yb[c * inner + v] /= s;
    }
  }
}

}  // namespace

Tensor softmax_channels(const Tensor& logits) {
  if (logits.dim() < 2) throw ShapeError("softmax_channels: need rank >= 2, got " + shape_str(logits.shape()));
  const std::size_t n = logits.size(0), k = logits.size(1);
  if (k < 2) throw ShapeError("softmax_channels: need at least 2 classes, got " + shape_str(logits.shape()));
  const std::size_t inner = logits.numel() / (n * k);
  std::vector<double> out(logits.numel());
  softmax_into(logits.values(), n, k, inner, out.data());
  return make_op_result("softmax_channels", logits.shape(), std::move(out), {logits},
                        [logits, n, k, inner](std::span<const double> go, std::span<double* const> gi) {
                          if (!gi[0]) return;
                          std::vector<double> y(logits.numel());
                          softmax_into(logits.values(), n, k, inner, y.data());
                          for (std::size_t b = 0; b < n; ++b)
                            for (std::size_t v = 0; v < inner; ++v) {
                              const std::size_t base = b * k * inner + v;
                              double dot = 0.0;
                              for (std::size_t c = 0; c < k; ++c) dot += go[base + c * inner] * y[base + c * inner];
                              for (std::size_t c = 0; c < k; ++c) {
                                const std::size_t i = base + c * inner;
                                gi[0][i] += y[i] * (go[i] - dot);
                              }
                            }
                        });
}

Tensor one_hot(const LabelTensor& labels, std::size_t classes) {
  if (labels.shape.empty()) throw ShapeError("one_hot: labels need rank >= 1");
  Shape shape = labels.shape;
  const std::size_t lead = shape.size() == 1 ? labels.numel() : shape[0];
  const std::size_t inner = labels.numel() / lead;
  if (shape.size() == 1)
    shape.push_back(classes);
  else
    shape.insert(shape.begin() + 1, classes);
  std::vector<double> out(labels.numel() * classes, 0.0);
  for (std::size_t b = 0; b < lead; ++b)
    for (std::size_t v = 0; v < inner; ++v) {
      const auto y = labels.values[b * inner + v];
      if (y >= classes) {
        throw std::out_of_range("one_hot: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
      }
      out[(b * classes + y) * inner + v] = 1.0;
    }
  return make_op_result("one_hot", std::move(shape), std::move(out), {}, nullptr);
}

LabelTensor downsample_labels_nearest(const LabelTensor& labels, std::size_t factor, std::size_t spatial_axes) {
  if (factor == 0) throw std::invalid_argument("downsample_labels_nearest: factor must be >= 1");
  const std::size_t rank = labels.shape.size();
  spatial_axes = std::min(spatial_axes, rank);
  Shape out_shape = labels.shape;
  for (std::size_t d = rank - spatial_axes; d < rank; ++d) out_shape[d] = (labels.shape[d] + factor - 1) / factor;

  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * labels.shape[d];
  std::vector<std::uint8_t> out(shape_numel(out_shape));
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      const std::size_t f = d >= rank - spatial_axes ? factor : 1;
      src += idx[d] * f * in_strides[d];
    }
    out[flat] = labels.values[src];
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out_shape[d]) break;
      idx[d] = 0;
    }
  }
  return LabelTensor(std::move(out_shape), std::move(out));
}

LabelTensor argmax_channels(const Tensor& probs) {
  if (probs.dim() < 2) throw ShapeError("argmax_channels: need rank >= 2, got " + shape_str(probs.shape()));
  const std::size_t n = probs.size(0), k = probs.size(1);
  const std::size_t inner = probs.numel() / (n * k);
  Shape shape = probs.shape();
  shape.erase(shape.begin() + 1);
  std::vector<std::uint8_t> out(n * inner);
  const auto pv = probs.values();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t v = 0; v < inner; ++v) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (pv[(b * k + c) * inner + v] > pv[(b * k + best) * inner + v]) best = c;
      out[b * inner + v] = static_cast<std::uint8_t>(best);
    }
  return LabelTensor(std::move(shape), std::move(out));
}

}  // namespace meunet
