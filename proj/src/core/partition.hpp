#pragma once

#include "tensor.hpp"

namespace symdepth {

struct PartitionSpec {
  enum class Kind { Window, Grid };
  Kind kind = Kind::Window;
  int64_t h = 1;
  int64_t w = 1;

  static PartitionSpec window(int64_t h, int64_t w) { return {Kind::Window, h, w}; }
  static PartitionSpec grid(int64_t h, int64_t w) { return {Kind::Grid, h, w}; }
};

// Gathers contiguous h x w blocks:
//   [B,H,W,C] -> [B*(H*W)/(h*w), h, w, C]
// element (b,i,j,c) lands in window b*(H/h)*(W/w) + (i/h)*(W/w) + (j/w)
// at in-window position (i%h, j%w).
Tensor window_partition(const Tensor& x, const PartitionSpec& spec);

// exact inverse of window_partition for the given original dims
Tensor window_reverse(const Tensor& x, const PartitionSpec& spec, const Shape& orig);

// Gathers strided samples: element (b,i,j,c) lands in window
// b*(H/h)*(W/w) + (i%(H/h))*(W/w) + (j%(W/w)) at position (i/(H/h), j/(W/w)).
Tensor grid_partition(const Tensor& x, const PartitionSpec& spec);

Tensor grid_reverse(const Tensor& x, const PartitionSpec& spec, const Shape& orig);

}  // namespace symdepth
