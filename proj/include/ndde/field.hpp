#pragma once

#include <span>

namespace ndde {

// Vector field with a delayed argument: dh/dt = f(h, y, t; w) where
// y = h(t - tau). Delay-free fields simply ignore y.
class VectorField {
 public:
  virtual ~VectorField() = default;

  virtual int dim() const = 0;
  virtual long param_count() const = 0;

  // out = f(h, y, t; w)
  virtual void eval(std::span<const double> h, std::span<const double> y,
                    double t, std::span<const double> w,
                    std::span<double> out) const = 0;

  // Reverse-mode products for a covector v:
  //   h_grad (overwritten) = v^T df/dh
  //   y_grad (overwritten) = v^T df/dy
  //   w_grad (accumulated) += v^T df/dw
  // Any output span may be empty to skip it.
  virtual void vjp(std::span<const double> h, std::span<const double> y,
                   double t, std::span<const double> w,
                   std::span<const double> v, std::span<double> h_grad,
                   std::span<double> y_grad,
                   std::span<double> w_grad) const = 0;
};

}  // namespace ndde
