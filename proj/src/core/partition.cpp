#include "partition.hpp"

namespace symdepth {

namespace {

void check_divisible(const char* op, const char* dim_name, int64_t dim, int64_t by) {
  if (by < 1) throw ValueError(std::string(op) + ": partition size must be >= 1");
  if (dim % by != 0)
    throw ShapeError(std::string(op) + ": " + dim_name + "=" + std::to_string(dim) +
                     " not divisible by partition size " + std::to_string(by));
}

void check_kind(const char* op, const PartitionSpec& spec, PartitionSpec::Kind want) {
  if (spec.kind != want)
    throw ValueError(std::string(op) + ": spec kind mismatch (window vs grid)");
}

void check_input(const char* op, const Tensor& x) {
  if (x.rank() != 4)
    throw ShapeError(std::string(op) + ": expected [B,H,W,C], got " + shape_str(x.shape()));
}

void check_count(const char* op, const Tensor& x, const Shape& orig) {
  if (orig.size() != 4)
    throw ShapeError(std::string(op) + ": orig dims must be [B,H,W,C]");
  if (x.size() != numel(orig))
    throw ShapeError(std::string(op) + ": element count " + std::to_string(x.size()) +
                     " inconsistent with original shape " + shape_str(orig));
}

}  // namespace

Tensor window_partition(const Tensor& x, const PartitionSpec& spec) {
  check_input("window_partition", x);
  check_kind("window_partition", spec, PartitionSpec::Kind::Window);
  const int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  check_divisible("window_partition", "H", h, spec.h);
  check_divisible("window_partition", "W", w, spec.w);
  Tensor y = reshape(x, {b, h / spec.h, spec.h, w / spec.w, spec.w, c});
  y = transpose(y, {0, 1, 3, 2, 4, 5});
  return reshape(y, {b * (h * w) / (spec.h * spec.w), spec.h, spec.w, c});
}

Tensor window_reverse(const Tensor& x, const PartitionSpec& spec, const Shape& orig) {
  check_kind("window_reverse", spec, PartitionSpec::Kind::Window);
  check_count("window_reverse", x, orig);
  const int64_t b = orig[0], h = orig[1], w = orig[2], c = orig[3];
  check_divisible("window_reverse", "H", h, spec.h);
  check_divisible("window_reverse", "W", w, spec.w);
  Tensor y = reshape(x, {b, h / spec.h, w / spec.w, spec.h, spec.w, c});
  y = transpose(y, {0, 1, 3, 2, 4, 5});
  return reshape(y, {b, h, w, c});
}

Tensor grid_partition(const Tensor& x, const PartitionSpec& spec) {
  check_input("grid_partition", x);
  check_kind("grid_partition", spec, PartitionSpec::Kind::Grid);
  const int64_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  check_divisible("grid_partition", "H", h, spec.h);
  check_divisible("grid_partition", "W", w, spec.w);
  const int64_t cells = (h * w) / (spec.h * spec.w);
  Tensor y = reshape(x, {b, spec.h, h / spec.h, spec.w, w / spec.w, c});
  y = transpose(y, {0, 1, 3, 2, 4, 5});          // [B, h, w, H/h, W/w, C]
  y = reshape(y, {b, spec.h * spec.w, cells, c});
  y = transpose(y, {0, 2, 1, 3});                // [B, cells, h*w, C]
  return reshape(y, {b * cells, spec.h, spec.w, c});
}

Tensor grid_reverse(const Tensor& x, const PartitionSpec& spec, const Shape& orig) {
  check_kind("grid_reverse", spec, PartitionSpec::Kind::Grid);
  check_count("grid_reverse", x, orig);
  const int64_t b = orig[0], h = orig[1], w = orig[2], c = orig[3];
  check_divisible("grid_reverse", "H", h, spec.h);
  check_divisible("grid_reverse", "W", w, spec.w);
  const int64_t cells = (h * w) / (spec.h * spec.w);
  Tensor y = reshape(x, {b, cells, spec.h * spec.w, c});
  y = transpose(y, {0, 2, 1, 3});
  y = reshape(y, {b, spec.h, spec.w, h / spec.h, w / spec.w, c});
  y = transpose(y, {0, 1, 3, 2, 4, 5});          // [B, h, H/h, w, W/w, C]
  return reshape(y, {b, h, w, c});
}

}  // namespace symdepth
