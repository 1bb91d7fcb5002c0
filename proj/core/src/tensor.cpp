#include "pdreg/tensor.hpp"

namespace pdreg::ad {

std::size_t shape_numel(const std::vector<int>& shape)
{
    std::size_t n = 1;
    for (int e : shape) {
        if (e <= 0)
            throw DataError("tensor extents must be positive, got " + shape_str(shape));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape)
{
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d))
{
    if (shape_numel(shape) != data.size())
        throw DataError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(std::vector<int> shape)
{
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<int> shape, double value)
{
    const std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value)
{
    return Tensor({1}, {value});
}

double Tensor::value() const
{
    if (numel() != 1)
        throw DataError("value() called on non-scalar tensor " + shape_str(shape));
    return data[0];
}

bool same_shape(const Tensor& a, const Tensor& b)
{
    return a.shape == b.shape;
}

} // namespace pdreg::ad
