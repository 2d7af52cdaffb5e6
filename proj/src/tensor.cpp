#include "lrnoise/tensor.hpp"

#include "lrnoise/errors.hpp"

namespace lrnoise {

int64_t shape_size(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0)
            throw DimError("tensor extents must be positive, got " + lrnoise::shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_size(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_size(shape_) != static_cast<int64_t>(data_.size()))
        throw DimError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + lrnoise::shape_str(shape_));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw DimError("item(): tensor has " + std::to_string(size()) + " elements");
    return data_[0];
}

std::string Tensor::shape_str() const { return lrnoise::shape_str(shape_); }

}  // namespace lrnoise
