#include "gtree/ad/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "gtree/errors.hpp"

namespace gtree::ad {

namespace {
std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > 2) throw ShapeError("tensors have rank at most 2");
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  if (shape_.size() > 2) throw ShapeError("tensors have rank at most 2");
  if (data_.size() != element_count(shape_)) throw ShapeError("data length does not match shape");
}

Tensor Tensor::row(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const { return shape_.size() == 2 ? shape_[0] : 1; }

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() needs a single-element tensor");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void accumulate(GradSet& dst, const GradSet& src, double weight) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      it = dst.emplace(name, Tensor(g.shape(), 0.0)).first;
    } else if (it->second.size() != g.size()) {
      throw ShapeError("gradient shape mismatch for " + name);
    }
    auto& d = it->second;
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += weight * g[i];
  }
}

}  // namespace gtree::ad
