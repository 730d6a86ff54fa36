#pragma once

#include <vector>

#include "meunet/tensor.hpp"

// Elementwise arithmetic, reductions and layout ops. Binary elementwise ops
// require identical shapes; there is no implicit broadcasting.
namespace meunet {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);
// Elementwise maximum; on ties the gradient goes to `a`.
Tensor maximum(const Tensor& a, const Tensor& b);
// 0/1 mask of a > b. Never tracks gradients.
Tensor greater(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// [N, C, ...] -> [C], summing over every axis except 1.
Tensor sum_channels(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, const std::vector<std::size_t>& starts, const Shape& sizes);
Tensor pad_zeros(const Tensor& a, const std::vector<std::size_t>& before,
                 const std::vector<std::size_t>& after);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace meunet
