#include "meunet/ops.hpp"

#include <cmath>
#include <string>

namespace meunet {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Calls f(flat_index_in_a, flat_index_in_b) for every element of `inner`
// placed at `offset` inside the larger shape `outer`.
template <class F>
void for_each_embedded(const Shape& inner, const Shape& outer, const std::vector<std::size_t>& offset,
                       F&& f) {
  const auto out_st = strides_of(outer);
  const std::size_t n = shape_numel(inner);
  const std::size_t rank = inner.size();
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < rank; ++d) o += (idx[d] + offset[d]) * out_st[d];
    f(flat, o);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < inner[d]) break;
      idx[d] = 0;
    }
  }
}

template <class Fwd, class Bwd>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Bwd dydx) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  std::vector<double> saved = out;
  return make_op_result(op, a.shape(), std::move(out), {a},
                        [a, saved = std::move(saved), dydx](std::span<const double> g, std::span<double* const> gi) {
                          if (!gi[0]) return;
                          const auto av = a.values();
                          for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * dydx(av[i], saved[i]);
                        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return make_op_result("add", a.shape(), std::move(out), {a, b},
                        [](std::span<const double> g, std::span<double* const> gi) {
                          for (int k = 0; k < 2; ++k) {
                            if (!gi[k]) continue;
                            for (std::size_t i = 0; i < g.size(); ++i) gi[k][i] += g[i];
                          }
                        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return make_op_result("sub", a.shape(), std::move(out), {a, b},
                        [](std::span<const double> g, std::span<double* const> gi) {
                          if (gi[0])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                          if (gi[1])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] -= g[i];
                        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return make_op_result("mul", a.shape(), std::move(out), {a, b},
                        [a, b](std::span<const double> g, std::span<double* const> gi) {
                          const auto av = a.values(), bv = b.values();
                          if (gi[0])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * bv[i];
                          if (gi[1])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += g[i] * av[i];
                        });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
  return make_op_result("div", a.shape(), std::move(out), {a, b},
                        [a, b](std::span<const double> g, std::span<double* const> gi) {
                          const auto av = a.values(), bv = b.values();
                          if (gi[0])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] / bv[i];
                          if (gi[1])
                            for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] -= g[i] * av[i] / (bv[i] * bv[i]);
                        });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary("mul_scalar", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor clamp_min(const Tensor& a, double floor) {
  return unary(
      "clamp_min", a, [floor](double x) { return x < floor ? floor : x; },
      [floor](double x, double) { return x < floor ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  require_same_shape("maximum", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] >= bv[i] ? av[i] : bv[i];
  return make_op_result("maximum", a.shape(), std::move(out), {a, b},
                        [a, b](std::span<const double> g, std::span<double* const> gi) {
                          const auto av = a.values(), bv = b.values();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const int k = av[i] >= bv[i] ? 0 : 1;
                            if (gi[k]) gi[k][i] += g[i];
                          }
                        });
}

Tensor greater(const Tensor& a, const Tensor& b) {
  require_same_shape("greater", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > bv[i] ? 1.0 : 0.0;
  return make_op_result("greater", a.shape(), std::move(out), {}, nullptr);
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const std::size_t n = a.numel();
  return make_op_result("sum", Shape{}, {s}, {a}, [n](std::span<const double> g, std::span<double* const> gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[0];
  });
}

Tensor mean(const Tensor& a) {
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_channels(const Tensor& a) {
  if (a.dim() < 2) throw ShapeError("sum_channels: need rank >= 2, got " + shape_str(a.shape()));
  const std::size_t n = a.size(0), c = a.size(1);
  const std::size_t inner = a.numel() / (n * c);
  const auto av = a.values();
  std::vector<double> out(c, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < c; ++k) {
      const double* p = av.data() + (b * c + k) * inner;
      double s = 0.0;
      for (std::size_t i = 0; i < inner; ++i) s += p[i];
      out[k] += s;
    }
  return make_op_result("sum_channels", Shape{c}, std::move(out), {a},
                        [n, c, inner](std::span<const double> g, std::span<double* const> gi) {
                          if (!gi[0]) return;
                          for (std::size_t b = 0; b < n; ++b)
                            for (std::size_t k = 0; k < c; ++k) {
                              double* p = gi[0] + (b * c + k) * inner;
                              for (std::size_t i = 0; i < inner; ++i) p[i] += g[k];
                            }
                        });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_op_result("reshape", std::move(shape), std::move(out), {a},
                        [](std::span<const double> g, std::span<double* const> gi) {
                          if (!gi[0]) return;
                          for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                        });
}

Tensor slice(const Tensor& a, const std::vector<std::size_t>& starts, const Shape& sizes) {
  const auto& s = a.shape();
  if (starts.size() != s.size() || sizes.size() != s.size()) {
    throw ShapeError("slice: rank mismatch for " + shape_str(s));
  }
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (sizes[d] == 0 || starts[d] + sizes[d] > s[d]) {
      throw ShapeError("slice: window start " + std::to_string(starts[d]) + " size " +
                       std::to_string(sizes[d]) + " exceeds axis " + std::to_string(d) + " of " +
                       shape_str(s));
    }
  }
  const auto av = a.values();
  std::vector<double> out(shape_numel(sizes));
  for_each_embedded(sizes, s, starts, [&](std::size_t i, std::size_t o) { out[i] = av[o]; });
  return make_op_result("slice", sizes, std::move(out), {a},
                        [sizes, s, starts](std::span<const double> g, std::span<double* const> gi) {
                          if (!gi[0]) return;
                          for_each_embedded(sizes, s, starts, [&](std::size_t i, std::size_t o) { gi[0][o] += g[i]; });
                        });
}

Tensor pad_zeros(const Tensor& a, const std::vector<std::size_t>& before, const std::vector<std::size_t>& after) {
  const auto& s = a.shape();
  if (before.size() != s.size() || after.size() != s.size()) {
    throw ShapeError("pad_zeros: rank mismatch for " + shape_str(s));
  }
  Shape padded(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) padded[d] = before[d] + s[d] + after[d];
  const auto av = a.values();
  std::vector<double> out(shape_numel(padded), 0.0);
  for_each_embedded(s, padded, before, [&](std::size_t i, std::size_t o) { out[o] = av[i]; });
  return make_op_result("pad_zeros", padded, std::move(out), {a},
                        [s, padded, before](std::span<const double> g, std::span<double* const> gi) {
                          if (!gi[0]) return;
                          for_each_embedded(s, padded, before, [&](std::size_t i, std::size_t o) { gi[0][i] += g[o]; });
                        });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& ps = p.shape();
    bool ok = ps.size() == first.size();
    for (std::size_t d = 0; ok && d < ps.size(); ++d) ok = d == axis || ps[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(ps) +
                       " on axis " + std::to_string(axis));
    }
    out_shape[axis] += ps[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const std::size_t row = out_shape[axis] * inner;

  std::vector<double> out(shape_numel(out_shape));
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * widths[k], widths[k], out.data() + o * row + col);
    }
    col += widths[k];
  }
  return make_op_result("concat", out_shape, std::move(out), parts,
                        [outer, row, widths](std::span<const double> g, std::span<double* const> gi) {
                          std::size_t col = 0;
                          for (std::size_t k = 0; k < widths.size(); ++k) {
                            if (gi[k]) {
                              for (std::size_t o = 0; o < outer; ++o) {
                                const double* src = g.data() + o * row + col;
                                double* dst = gi[k] + o * widths[k];
                                for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
                              }
                            }
                            col += widths[k];
                          }
                        });
}

}  // namespace meunet
