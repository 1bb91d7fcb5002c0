#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "pdreg/errors.hpp"

namespace pdreg::ad {

/// Dense row-major tensor of doubles. A 3D volume with c channels maps to
/// shape (c, nz, ny, nx), which shares its flat layout with pdreg::Volume.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor scalar(double value);

    std::size_t numel() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    double value() const; // scalar tensors only
};

std::size_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);
bool same_shape(const Tensor& a, const Tensor& b);

} // namespace pdreg::ad
