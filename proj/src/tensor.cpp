#include "diffscope/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace diffscope {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ConfigError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
        throw ConfigError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                          shape_str(shape_));
    }
}

template <typename T>
T Tensor<T>::item() const {
    if (data_.size() != 1) throw UsageError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

template <typename T>
void Tensor<T>::fill(T v) {
    std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (shape_numel(shape) != static_cast<std::int64_t>(data_.size())) {
        throw ConfigError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

template <typename T>
bool Tensor<T>::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
Tensor<T> Tensor<T>::batch_slice(std::int64_t b) const {
    if (shape_.empty() || b < 0 || b >= shape_[0]) throw UsageError("batch index out of range");
    Shape s = shape_;
    s[0] = 1;
    const auto per = static_cast<std::size_t>(shape_numel(s));
    std::vector<T> out(data_.begin() + static_cast<std::ptrdiff_t>(per * b),
                       data_.begin() + static_cast<std::ptrdiff_t>(per * (b + 1)));
    return Tensor(std::move(s), std::move(out));
}

template <typename T>
Tensor<T> stack_batch(std::span<const Tensor<T>> items) {
    if (items.empty()) throw UsageError("stack_batch on empty list");
    Shape s = items[0].shape();
    if (s.empty() || s[0] != 1) throw UsageError("stack_batch expects leading dimension 1");
    std::vector<T> data;
    data.reserve(items[0].numel() * items.size());
    for (const auto& it : items) {
        if (it.shape() != items[0].shape()) throw UsageError("stack_batch shape mismatch");
        data.insert(data.end(), it.data().begin(), it.data().end());
    }
    s[0] = static_cast<std::int64_t>(items.size());
    return Tensor<T>(std::move(s), std::move(data));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw UsageError("max_abs_diff shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

template <typename T>
double inner_product(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.numel() != b.numel()) throw UsageError("inner_product size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> stack_batch(std::span<const Tensor<float>>);
template Tensor<double> stack_batch(std::span<const Tensor<double>>);
template double max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);
template double inner_product(const Tensor<float>&, const Tensor<float>&);
template double inner_product(const Tensor<double>&, const Tensor<double>&);

}  // namespace diffscope
