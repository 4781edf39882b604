#include "vlcp/crope.hpp"

#include <cmath>

#include "vlcp/ops.hpp"

namespace vlcp::crope {

std::string to_string(RotaryMode mode) {
  switch (mode) {
    case RotaryMode::crope:
      return "crope";
    case RotaryMode::rope2d_only:
      return "rope2d_only";
    case RotaryMode::learned_only:
      return "learned_only";
  }
  return "?";
}

RotaryMode rotary_mode_from_string(const std::string& s) {
  if (s == "crope") return RotaryMode::crope;
  if (s == "rope2d_only") return RotaryMode::rope2d_only;
  if (s == "learned_only") return RotaryMode::learned_only;
  throw ParameterError("unknown rotary mode '" + s + "'");
}

void RotaryConfig::validate() const {
  if (head_dim <= 0 || head_dim % 4 != 0)
    throw ParameterError("rotary head_dim must be a positive multiple of 4, got " +
                         std::to_string(head_dim));
  if (!(base > 0.0)) throw ParameterError("rotary base must be positive");
}

std::vector<double> rotation_angles(int x, int y, int head_dim, double base) {
  RotaryConfig{head_dim, base, RotaryMode::crope}.validate();
  if (x < 0 || y < 0) throw ContractError("patch coordinates must be non-negative");
  const int quarter = head_dim / 4;
  std::vector<double> angles(static_cast<std::size_t>(head_dim / 2));
  for (int j = 0; j < quarter; ++j) {
    const double theta = std::pow(base, -4.0 * j / head_dim);
    angles[j] = x * theta;
    angles[quarter + j] = y * theta;
  }
  return angles;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> rotation_tables(const std::vector<GridCoord>& coords,
                                                int head_dim, int heads, double base) {
  const std::size_t half = static_cast<std::size_t>(head_dim / 2);
  const std::size_t width = half * heads;
  Tensor<T> cs({coords.size(), width}), sn({coords.size(), width});
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const auto a = rotation_angles(coords[n].col, coords[n].row, head_dim, base);
    for (int h = 0; h < heads; ++h)
      for (std::size_t j = 0; j < half; ++j) {
        cs[n * width + h * half + j] = static_cast<T>(std::cos(a[j]));
        sn[n * width + h * half + j] = static_cast<T>(std::sin(a[j]));
      }
  }
  return {std::move(cs), std::move(sn)};
}

template <typename T>
ad::Var<T> rope2d_rotate(const ad::Var<T>& v, const std::vector<GridCoord>& coords,
                         int head_dim, double base, int heads) {
  if (coords.size() != v.rows())
    throw ContractError("rope2d_rotate: " + std::to_string(coords.size()) +
                        " coordinates for " + std::to_string(v.rows()) + " rows");
  if (v.cols() != static_cast<std::size_t>(head_dim) * heads)
    throw DimensionError("rope2d_rotate: width " + std::to_string(v.cols()) +
                         " is not heads * head_dim");
  auto [cs, sn] = rotation_tables<T>(coords, head_dim, heads, base);
  return ad::rotate_pairs(v, cs, sn);
}

namespace {

struct Tap {
  int lo, hi;
  double t;
};

Tap tap(int i, int dst, int src) {
  const double pos = dst == 1 ? 0.0 : static_cast<double>(i) * (src - 1) / (dst - 1);
  const int lo = std::min(static_cast<int>(std::floor(pos)), src - 1);
  return {lo, std::min(lo + 1, src - 1), pos - lo};
}

}  // namespace

template <typename T>
ad::Var<T> interpolate_pos(const ad::Var<T>& table, int grid, int rows, int cols) {
  if (rows < 1 || cols < 1) throw ParameterError("interpolate_pos: target must be positive");
  if (grid < 1 || table.rows() != static_cast<std::size_t>(grid) * grid)
    throw DimensionError("interpolate_pos: table " + shape_str(table.shape()) +
                         " is not a " + std::to_string(grid) + "x" + std::to_string(grid) +
                         " grid");
  const std::size_t d = table.cols();
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  // Four taps per output row: source row index and weight.
  struct Weights {
    std::size_t src[4];
    T w[4];
  };
  std::vector<Weights> taps(n);
  for (int r = 0; r < rows; ++r) {
    const Tap ty = tap(r, rows, grid);
    for (int c = 0; c < cols; ++c) {
      const Tap tx = tap(c, cols, grid);
      auto& w = taps[static_cast<std::size_t>(r) * cols + c];
      w.src[0] = static_cast<std::size_t>(ty.lo) * grid + tx.lo;
      w.src[1] = static_cast<std::size_t>(ty.lo) * grid + tx.hi;
      w.src[2] = static_cast<std::size_t>(ty.hi) * grid + tx.lo;
      w.src[3] = static_cast<std::size_t>(ty.hi) * grid + tx.hi;
      w.w[0] = static_cast<T>((1.0 - ty.t) * (1.0 - tx.t));
      w.w[1] = static_cast<T>((1.0 - ty.t) * tx.t);
      w.w[2] = static_cast<T>(ty.t * (1.0 - tx.t));
      w.w[3] = static_cast<T>(ty.t * tx.t);
    }
  }
  Tensor<T> out({n, d});
  const T* src = table.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& w = taps[i];
    T* dst = out.data() + i * d;
    for (std::size_t j = 0; j < d; ++j)
      dst[j] = w.w[0] * src[w.src[0] * d + j] + w.w[1] * src[w.src[1] * d + j] +
               w.w[2] * src[w.src[2] * d + j] + w.w[3] * src[w.src[3] * d + j];
  }
  return ad::make_op<T>("interpolate_pos", std::move(out), {table},
                        [taps = std::move(taps), d](ad::Node<T>& self) {
                          auto& in = *self.inputs[0];
                          if (!in.requires_grad) return;
                          auto& g = in.grad_buffer();
                          for (std::size_t i = 0; i < taps.size(); ++i)
                            for (int k = 0; k < 4; ++k) {
                              const T w = taps[i].w[k];
                              if (w == T(0)) continue;
                              T* dst = g.data() + taps[i].src[k] * d;
                              const T* gi = self.grad.data() + i * d;
                              for (std::size_t j = 0; j < d; ++j) dst[j] += w * gi[j];
                            }
                        });
}

template std::pair<Tensor<float>, Tensor<float>> rotation_tables<float>(
    const std::vector<GridCoord>&, int, int, double);
template std::pair<Tensor<double>, Tensor<double>> rotation_tables<double>(
    const std::vector<GridCoord>&, int, int, double);
template ad::Var<float> rope2d_rotate<float>(const ad::Var<float>&, const std::vector<GridCoord>&,
                                             int, double, int);
template ad::Var<double> rope2d_rotate<double>(const ad::Var<double>&,
                                               const std::vector<GridCoord>&, int, double, int);
template ad::Var<float> interpolate_pos<float>(const ad::Var<float>&, int, int, int);
template ad::Var<double> interpolate_pos<double>(const ad::Var<double>&, int, int, int);

}  // namespace vlcp::crope
