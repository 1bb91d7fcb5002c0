#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "pdreg/tensor.hpp"

namespace pdreg::ad {

/// Named learnable tensors with persistent identity across training steps.
/// Names are unique, shapes fixed after insertion, order preserved.
class ParameterSet {
public:
    void add(const std::string& name, Tensor t);
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::size_t count() const { return order_.size(); }

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> tensors_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    struct Moments {
        Tensor m, v;
    };
    std::unordered_map<std::string, Moments> moments;
    std::int64_t step = 0;
};

/// One bias-corrected Adam update for every parameter present in `grads`.
/// Parameters without a gradient entry are left untouched; fresh moments
/// start at zero. Deterministic given inputs.
void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state,
               const AdamConfig& cfg);

// PRM1 checkpoint, little-endian: magic "PRM1", u32 count, then per entry
// u16 name length, name bytes, u8 rank, u32 extents, f64 payload.
void write_params(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet read_params(const std::filesystem::path& path);

} // namespace pdreg::ad
