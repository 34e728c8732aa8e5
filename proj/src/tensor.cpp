#include "aerodiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "aerodiff/error.hpp"
#include "aerodiff/random.hpp"

namespace aerodiff {

std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    require(values_.size() == shape_size(shape_), ErrorKind::Data,
            "value count " + std::to_string(values_.size()) + " does not match shape " + shape_string(shape_));
}

Tensor Tensor::randn(Shape shape, RandomStream& rng) {
    Tensor t(std::move(shape));
    rng.fill_normal(t.values());
    return t;
}

double& Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return values_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
    require(shape_size(shape) == size(), ErrorKind::Data,
            "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return Tensor(std::move(shape), values_);
}

Tensor Tensor::slice_batch(std::size_t begin, std::size_t count) const {
    require(rank() >= 1 && begin + count <= shape_[0], ErrorKind::Index, "batch slice out of range");
    Shape s = shape_;
    s[0] = count;
    const std::size_t stride = size() / shape_[0];
    std::vector<double> v(values_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                          values_.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
    return Tensor(std::move(s), std::move(v));
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) noexcept { std::fill(values_.begin(), values_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
    require_same_shape(*this, other, "+=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
    require_same_shape(*this, other, "-=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) noexcept {
    for (double& v : values_) v *= s;
    return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }
Tensor operator*(double s, Tensor a) { return a *= s; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        fail(ErrorKind::Data, std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                  shape_string(b.shape()));
}

Tensor stack(std::span<const Tensor> items) {
    require(!items.empty(), ErrorKind::Data, "stack of zero tensors");
    Shape s{items.size()};
    s.insert(s.end(), items.front().shape().begin(), items.front().shape().end());
    std::vector<double> v;
    v.reserve(shape_size(s));
    for (const Tensor& t : items) {
        require_same_shape(t, items.front(), "stack");
        v.insert(v.end(), t.storage().begin(), t.storage().end());
    }
    return Tensor(std::move(s), std::move(v));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
            ErrorKind::Data, "concat_channels: incompatible " + shape_string(a.shape()) + " and " +
                                 shape_string(b.shape()));
    const std::size_t n = a.dim(0), plane = a.dim(2) * a.dim(3);
    const std::size_t ca = a.dim(1), cb = b.dim(1);
    Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(a.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
        std::copy_n(b.data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
    }
    return out;
}

double max_abs(const Tensor& t) noexcept {
    double m = 0.0;
    for (double v : t.values()) m = std::max(m, std::abs(v));
    return m;
}

}  // namespace aerodiff
