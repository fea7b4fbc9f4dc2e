#include "msdnn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace msdnn {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::int64_t shape_elems(const Shape& s) {
    if (s.empty()) throw ShapeError("empty shape");
    std::int64_t n = 1;
    for (int d : s) {
        if (d < 1) throw ShapeError("non-positive dimension in " + shape_str(s));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Shape shape, real fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_elems(shape_)), fill) {}

Tensor::Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_elems(shape_) != static_cast<std::int64_t>(data_.size()))
        throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

real& Tensor::operator()(int i) {
    if (rank() != 1) throw ShapeError("rank-1 access on tensor of shape " + shape_str(shape_));
    return data_[static_cast<std::size_t>(i)];
}

real& Tensor::operator()(int i, int j) {
    if (rank() != 2) throw ShapeError("rank-2 access on tensor of shape " + shape_str(shape_));
    return data_[static_cast<std::size_t>(i) * shape_[1] + j];
}

real& Tensor::operator()(int i, int j, int k) {
    if (rank() != 3) throw ShapeError("rank-3 access on tensor of shape " + shape_str(shape_));
    return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
}

real& Tensor::operator()(int n, int c, int h, int w) {
    if (rank() != 4) throw ShapeError("rank-4 access on tensor of shape " + shape_str(shape_));
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_elems(new_shape) != size())
        throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) + ": element count mismatch");
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
}

void Tensor::fill(real v) { std::fill(data_.begin(), data_.end(), v); }

namespace {
void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

Tensor map_unary(const Tensor& t, const std::function<real(real)>& f) {
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) out[i] = f(t[i]);
    return out;
}

Tensor scale(const Tensor& t, real s) {
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.size(); ++i) out[i] = t[i] * s;
    return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
    require_same_shape(dst, src, "add_inplace");
    for (std::int64_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

real reduce_sum(const Tensor& t) {
    if (t.empty()) throw ShapeError("reduce on empty tensor");
    real s = 0;
    for (std::int64_t i = 0; i < t.size(); ++i) s += t[i];
    return s;
}

real reduce_mean(const Tensor& t) { return reduce_sum(t) / static_cast<real>(t.size()); }

real reduce_max(const Tensor& t) {
    if (t.empty()) throw ShapeError("reduce on empty tensor");
    real m = t[0];
    for (std::int64_t i = 1; i < t.size(); ++i) m = std::max(m, t[i]);
    return m;
}

bool all_finite(const Tensor& t) {
    for (std::int64_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(static_cast<double>(t[i]))) return false;
    return true;
}

} // namespace msdnn
