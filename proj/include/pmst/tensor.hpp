#ifndef PMST_TENSOR_HPP
#define PMST_TENSOR_HPP

#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmst {

// Error type used across the library; the C API translates these to codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define PMST_CHECK(cond, msg)                  \
  do {                                         \
    if (!(cond)) throw ::pmst::Error(msg);     \
  } while (0)

// Dense row-major tensor of 64-bit floats. Rank 1 and 2 cover almost
// everything; conv kernels are rank 3 (out, in, k).
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel()), 0.0);
  }
  Tensor(int64_t rows, int64_t cols) : Tensor(std::vector<int64_t>{rows, cols}) {}

  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  int64_t rows() const { return shape.size() >= 1 ? shape[0] : 0; }
  int64_t cols() const { return shape.size() >= 2 ? shape[1] : 1; }

  double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

// A named, persistent model parameter. `grad` is allocated lazily on the
// first backward pass that reaches it; frozen parameters never get one.
struct Parameter {
  Tensor value;
  Tensor grad;
  bool requires_grad = true;
  bool has_grad = false;

  void accumulate(const std::vector<double>& g) {
    if (!has_grad) {
      grad = Tensor(value.shape);
      has_grad = true;
    }
    for (size_t i = 0; i < g.size(); ++i) grad.data[i] += g[i];
  }
  void zero_grad() {
    has_grad = false;
    grad = Tensor();
  }
};

}  // namespace pmst

#endif
