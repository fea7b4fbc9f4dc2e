#ifndef MSDNN_TENSOR_HPP
#define MSDNN_TENSOR_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msdnn/errors.hpp"

namespace msdnn {

#ifdef MSDNN_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t shape_elems(const Shape& s); // throws ShapeError on dim < 1

/// Dense n-dimensional array, row-major. Feature maps use (N,C,H,W).
/// Operations return new tensors; no broadcasting, mismatched shapes throw.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, real fill = 0);
    Tensor(Shape shape, std::vector<real> data);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    real* data() { return data_.data(); }
    const real* data() const { return data_.data(); }
    std::vector<real>& raw() { return data_; }
    const std::vector<real>& raw() const { return data_; }

    real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Rank-checked multi-index access; flat index = ((n*C + c)*H + h)*W + w.
    real& operator()(int i);
    real& operator()(int i, int j);
    real& operator()(int i, int j, int k);
    real& operator()(int n, int c, int h, int w);
    real operator()(int i) const { return const_cast<Tensor&>(*this)(i); }
    real operator()(int i, int j) const { return const_cast<Tensor&>(*this)(i, j); }
    real operator()(int i, int j, int k) const { return const_cast<Tensor&>(*this)(i, j, k); }
    real operator()(int n, int c, int h, int w) const { return const_cast<Tensor&>(*this)(n, c, h, w); }

    /// Same data, new shape; element count must match.
    Tensor reshape(Shape new_shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    void fill(real v);

private:
    Shape shape_;
    std::vector<real> data_;
};

// Elementwise ops; binary ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor map_unary(const Tensor& t, const std::function<real(real)>& f);
Tensor scale(const Tensor& t, real s);
void add_inplace(Tensor& dst, const Tensor& src); // dst += src

// Reductions over the whole tensor (non-empty required).
real reduce_sum(const Tensor& t);
real reduce_mean(const Tensor& t);
real reduce_max(const Tensor& t);

bool all_finite(const Tensor& t);

} // namespace msdnn

#endif
