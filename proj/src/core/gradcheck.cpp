#include "gradcheck.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <thread>

#include "rng.hpp"

namespace symdepth {

namespace {

// fixed projection weights so the scalar objective exercises every output
// element with a distinct, nonzero coefficient
Tensor projection_weights(const Shape& shape) {
  Rng rng(0x9c0ffee5u);
  std::vector<double> w(static_cast<std::size_t>(numel(shape)));
  for (auto& v : w) v = rng.uniform(0.5, 1.5);
  return Tensor(shape, std::move(w));
}

double objective(const OpUnderTest& f, const std::vector<Tensor>& inputs,
                 const Tensor& weights) {
  Tensor out = f(inputs);
  return sum(mul(out, weights)).value();
}

template <typename Fn>
void parallel_for(int64_t n, Fn&& fn) {
  const unsigned hw = std::thread::hardware_concurrency();
  const unsigned workers = std::min<unsigned>(hw == 0 ? 1 : hw, 8);
  if (workers <= 1 || n < 16) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned t = 0; t < workers; ++t)
    pool.emplace_back([&]() {
      for (;;) {
        const int64_t i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace

GradCheckReport grad_check(const std::string& op_name, const OpUnderTest& f,
                           const std::vector<Tensor>& inputs, double tolerance,
                           double step, double abs_floor) {
  GradCheckReport report;
  report.op_name = op_name;
  report.tolerance = tolerance;

  // tracked copies for the taped pass
  std::vector<Tensor> tracked;
  tracked.reserve(inputs.size());
  for (const auto& in : inputs) tracked.push_back(in.clone().set_requires_grad(true));

  Tensor weights;
  std::vector<std::vector<double>> tape_grads(inputs.size());
  try {
    Tape tape;
    Tensor out = f(tracked);
    weights = projection_weights(out.shape());
    Tensor loss = sum(mul(out, weights));
    tape.backward(loss);
    for (std::size_t i = 0; i < tracked.size(); ++i)
      tape_grads[i] = tracked[i].has_grad()
                          ? tracked[i].grad()
                          : std::vector<double>(static_cast<std::size_t>(tracked[i].size()), 0.0);
  } catch (const std::exception& e) {
    report.passed = false;
    report.note = std::string("forward/backward failed: ") + e.what();
    report.max_rel_err = std::numeric_limits<double>::infinity();
    report.max_abs_err = std::numeric_limits<double>::infinity();
    return report;
  }

  // flatten (input, element) pairs for the FD sweep
  struct Slot {
    std::size_t input;
    int64_t elem;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (int64_t e = 0; e < inputs[i].size(); ++e) slots.push_back({i, e});

  std::vector<double> fd(slots.size());
  std::vector<std::string> errors(slots.size());
  parallel_for(static_cast<int64_t>(slots.size()), [&](int64_t s) {
    const Slot slot = slots[static_cast<std::size_t>(s)];
    auto eval_at = [&](double delta) {
      std::vector<Tensor> probe;
      probe.reserve(inputs.size());
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (i == slot.input) {
          Tensor t = inputs[i].clone();
          t.mutable_data()[static_cast<std::size_t>(slot.elem)] += delta;
          probe.push_back(std::move(t));
        } else {
          probe.push_back(inputs[i]);
        }
      }
      return objective(f, probe, weights);
    };
    try {
      const double plus = eval_at(step);
      const double minus = eval_at(-step);
      fd[static_cast<std::size_t>(s)] = (plus - minus) / (2.0 * step);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(s)] = e.what();
    }
  });

  report.passed = true;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (!errors[s].empty()) {
      report.passed = false;
      report.note = "FD evaluation failed: " + errors[s];
      report.max_rel_err = std::numeric_limits<double>::infinity();
      report.max_abs_err = std::numeric_limits<double>::infinity();
      return report;
    }
    const Slot slot = slots[s];
    const double a = tape_grads[slot.input][static_cast<std::size_t>(slot.elem)];
    const double b = fd[s];
    const double abs_err = std::abs(a - b);
    const double denom = std::max(std::abs(a), std::abs(b));
    // elements that pass on the absolute floor do not count against rel error
    const double rel_err = (abs_err <= abs_floor || denom == 0.0) ? 0.0 : abs_err / denom;
    if (abs_err > report.max_abs_err) report.max_abs_err = abs_err;
    if (rel_err > report.max_rel_err) {
      report.max_rel_err = rel_err;
      if (rel_err > tolerance) {
        char buf[160];
        std::snprintf(buf, sizeof(buf),
                      "worst element: input %zu elem %lld tape=%.9g fd=%.9g",
                      slot.input, static_cast<long long>(slot.elem), a, b);
        report.note = buf;
      }
    }
  }
  report.passed = report.max_rel_err <= tolerance;
  return report;
}

std::string format_report(const GradCheckReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "op=%-24s max_rel=%-12.3e max_abs=%-12.3e tol=%.0e %s",
                r.op_name.c_str(), r.max_rel_err, r.max_abs_err, r.tolerance,
                r.passed ? "PASS" : "FAIL");
  std::string line(buf);
  if (!r.passed && !r.note.empty()) line += " (" + r.note + ")";
  return line;
}

}  // namespace symdepth
