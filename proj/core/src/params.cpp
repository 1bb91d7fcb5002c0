#include "pdreg/params.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

namespace pdreg::ad {

void ParameterSet::add(const std::string& name, Tensor t)
{
    if (contains(name))
        throw DataError("duplicate parameter name: " + name);
    order_.push_back(name);
    tensors_.emplace(name, std::move(t));
}

Tensor& ParameterSet::at(const std::string& name)
{
    auto it = tensors_.find(name);
    if (it == tensors_.end())
        throw DataError("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParameterSet::at(const std::string& name) const
{
    auto it = tensors_.find(name);
    if (it == tensors_.end())
        throw DataError("unknown parameter: " + name);
    return it->second;
}

void adam_step(ParameterSet& params, const ParameterSet& grads, AdamState& state,
               const AdamConfig& cfg)
{
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (const auto& name : grads.names()) {
        Tensor& p = params.at(name);
        const Tensor& g = grads.at(name);
        if (!same_shape(p, g))
            throw DataError("adam_step: gradient shape " + shape_str(g.shape) +
                            " does not match parameter " + name + " " + shape_str(p.shape));
        auto& mom = state.moments[name];
        if (mom.m.numel() == 0) {
            mom.m = Tensor::zeros(p.shape);
            mom.v = Tensor::zeros(p.shape);
        }
        for (std::size_t i = 0; i < p.numel(); ++i) {
            mom.m.data[i] = cfg.beta1 * mom.m.data[i] + (1.0 - cfg.beta1) * g.data[i];
            mom.v.data[i] = cfg.beta2 * mom.v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
            const double mhat = mom.m.data[i] / bc1;
            const double vhat = mom.v.data[i] / bc2;
            p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v)
{
    const std::array<unsigned char, 4> b{
        static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what)
{
    std::array<unsigned char, 4> b;
    if (!is.read(reinterpret_cast<char*>(b.data()), 4))
        throw DataError("truncated checkpoint while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void write_params(const ParameterSet& params, const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw DataError("cannot open " + path.string() + " for writing");
    os.write("PRM1", 4);
    put_u32(os, static_cast<std::uint32_t>(params.count()));
    for (const auto& name : params.names()) {
        const Tensor& t = params.at(name);
        if (name.size() > 0xffff)
            throw DataError("parameter name too long: " + name);
        const unsigned char nl[2] = {static_cast<unsigned char>(name.size() & 0xff),
                                     static_cast<unsigned char>((name.size() >> 8) & 0xff)};
        os.write(reinterpret_cast<const char*>(nl), 2);
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const unsigned char rank = static_cast<unsigned char>(t.rank());
        os.write(reinterpret_cast<const char*>(&rank), 1);
        for (int e : t.shape)
            put_u32(os, static_cast<std::uint32_t>(e));
        for (double v : t.data) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            put_u32(os, static_cast<std::uint32_t>(bits & 0xffffffffu));
            put_u32(os, static_cast<std::uint32_t>(bits >> 32));
        }
    }
    if (!os)
        throw DataError("write failed for " + path.string());
}

ParameterSet read_params(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError("cannot open " + path.string() + " for reading");
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "PRM1", 4) != 0)
        throw DataError("bad magic in checkpoint " + path.string());
    const std::uint32_t count = get_u32(is, "count");
    ParameterSet out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::array<unsigned char, 2> nl;
        if (!is.read(reinterpret_cast<char*>(nl.data()), 2))
            throw DataError("truncated checkpoint " + path.string());
        const std::size_t nameLen = nl[0] | (nl[1] << 8);
        std::string name(nameLen, '\0');
        if (!is.read(name.data(), static_cast<std::streamsize>(nameLen)))
            throw DataError("truncated checkpoint " + path.string());
        unsigned char rank;
        if (!is.read(reinterpret_cast<char*>(&rank), 1))
            throw DataError("truncated checkpoint " + path.string());
        std::vector<int> shape(rank);
        for (int r = 0; r < rank; ++r)
            shape[r] = static_cast<int>(get_u32(is, "extent"));
        const std::size_t n = shape_numel(shape);
        std::vector<double> data(n);
        for (std::size_t j = 0; j < n; ++j) {
            const std::uint64_t lo = get_u32(is, "payload");
            const std::uint64_t hi = get_u32(is, "payload");
            const std::uint64_t bits = lo | (hi << 32);
            std::memcpy(&data[j], &bits, 8);
        }
        out.add(name, Tensor(std::move(shape), std::move(data)));
    }
    if (is.peek() != std::ifstream::traits_type::eof())
        throw DataError("trailing bytes in checkpoint " + path.string());
    return out;
}

} // namespace pdreg::ad
