#pragma once

// Position handling for the vision encoder: a learned absolute table that is
// bilinearly resampled to each grid, composed with a 2D rotary rotation of
// queries and keys driven by integer patch coordinates.

#include <string>
#include <vector>

#include "vlcp/autodiff.hpp"
#include "vlcp/patcher.hpp"

namespace vlcp::crope {

enum class RotaryMode {
  crope,         // interpolated table + rotation
  rope2d_only,   // rotation only; table contribution dropped
  learned_only,  // interpolated table only; rotation bypassed
};

std::string to_string(RotaryMode mode);
RotaryMode rotary_mode_from_string(const std::string& s);

struct RotaryConfig {
  int head_dim = 16;
  double base = 10000.0;
  RotaryMode mode = RotaryMode::crope;

  // head_dim must be a positive multiple of 4; base positive.
  void validate() const;
  bool operator==(const RotaryConfig&) const = default;
};

// head_dim / 2 angles for the coordinate (x, y) = (col, row): pair j < head_dim/4
// gets x * theta_j, pair head_dim/4 + j gets y * theta_j, with
// theta_j = base^(-4j / head_dim).
std::vector<double> rotation_angles(int x, int y, int head_dim, double base);

// Cos/sin tables [N x heads*head_dim/2] for rotating every head of an
// [N x heads*head_dim] matrix.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> rotation_tables(const std::vector<GridCoord>& coords,
                                                int head_dim, int heads, double base);

// Rotates consecutive channel pairs of each row by its coordinate's angles.
// v is [N x heads*head_dim]; coords has N entries.
template <typename T>
ad::Var<T> rope2d_rotate(const ad::Var<T>& v, const std::vector<GridCoord>& coords,
                         int head_dim, double base, int heads = 1);

// Treats `table` ([G*G x D]) as a G x G x D grid and resamples it to
// rows x cols with align-corners bilinear weights, flattened row-major.
// Differentiable in the table.
template <typename T>
ad::Var<T> interpolate_pos(const ad::Var<T>& table, int grid, int rows, int cols);

}  // namespace vlcp::crope
