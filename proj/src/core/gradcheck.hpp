#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace symdepth {

struct GradCheckReport {
  std::string op_name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool passed = false;
  double tolerance = 0.0;
  std::string note;  // failure detail (worst element, non-finite forward, ...)
};

using OpUnderTest = std::function<Tensor(const std::vector<Tensor>&)>;

// Central-difference check of tape gradients for a scalar projection of
// f(inputs). Every element of every input is perturbed by +/- step; an element
// passes when its relative error is within `tolerance` or its absolute error
// is within `abs_floor`. FD evaluations run tape-free and in parallel.
GradCheckReport grad_check(const std::string& op_name, const OpUnderTest& f,
                           const std::vector<Tensor>& inputs, double tolerance = 1e-3,
                           double step = 1e-4, double abs_floor = 1e-6);

std::string format_report(const GradCheckReport& r);

}  // namespace symdepth
