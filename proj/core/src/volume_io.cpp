#include "pdreg/volume_io.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace pdreg {

namespace {

void put_u32(std::ostream& os, std::uint32_t v)
{
    const std::array<unsigned char, 4> b{
        static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& is, const char* what)
{
    std::array<unsigned char, 4> b;
    if (!is.read(reinterpret_cast<char*>(b.data()), 4))
        throw DataError(std::string("truncated header while reading ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v)
{
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

void put_u16(std::ostream& os, std::uint16_t v)
{
    const std::array<unsigned char, 2> b{static_cast<unsigned char>(v & 0xff),
                                         static_cast<unsigned char>((v >> 8) & 0xff)};
    os.write(reinterpret_cast<const char*>(b.data()), 2);
}

struct Header {
    std::array<int, 3> dims;
    int channels;
};

void write_header(std::ostream& os, const char magic[4], const std::array<int, 3>& dims,
                  int channels)
{
    os.write(magic, 4);
    put_u32(os, 1u);
    put_u32(os, static_cast<std::uint32_t>(dims[0]));
    put_u32(os, static_cast<std::uint32_t>(dims[1]));
    put_u32(os, static_cast<std::uint32_t>(dims[2]));
    put_u32(os, static_cast<std::uint32_t>(channels));
}

Header read_header(std::istream& is, const char* magic, const std::filesystem::path& path)
{
    char m[4];
    if (!is.read(m, 4))
        throw DataError("truncated header in " + path.string());
    if (std::memcmp(m, magic, 4) != 0)
        throw DataError("bad magic in " + path.string() + ": expected " + magic);
    const std::uint32_t version = get_u32(is, "version");
    if (version != 1)
        throw DataError("unsupported format version " + std::to_string(version) + " in " +
                        path.string());
    Header h;
    h.dims = {static_cast<int>(get_u32(is, "nx")), static_cast<int>(get_u32(is, "ny")),
              static_cast<int>(get_u32(is, "nz"))};
    h.channels = static_cast<int>(get_u32(is, "channels"));
    if (h.dims[0] <= 0 || h.dims[1] <= 0 || h.dims[2] <= 0 || h.channels <= 0)
        throw DataError("non-positive extent in header of " + path.string());
    return h;
}

std::ofstream open_out(const std::filesystem::path& path)
{
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw DataError("cannot open " + path.string() + " for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError("cannot open " + path.string() + " for reading");
    return is;
}

} // namespace

void write_vol3(const Volume& vol, const std::filesystem::path& path)
{
    auto os = open_out(path);
    write_header(os, "VOL3", vol.dims, vol.channels);
    for (double v : vol.data)
        put_f32(os, static_cast<float>(v));
    if (!os)
        throw DataError("write failed for " + path.string());
}

Volume read_vol3(const std::filesystem::path& path)
{
    auto is = open_in(path);
    const Header h = read_header(is, "VOL3", path);
    const std::size_t count =
        static_cast<std::size_t>(h.dims[0]) * h.dims[1] * h.dims[2] * h.channels;
    std::vector<double> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::array<unsigned char, 4> b;
        if (!is.read(reinterpret_cast<char*>(b.data()), 4))
            throw DataError("payload shorter than header promises in " + path.string() +
                            " (expected " + std::to_string(count) + " f32 values)");
        std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                             (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) |
                             (static_cast<std::uint32_t>(b[3]) << 24);
        float f;
        std::memcpy(&f, &bits, 4);
        values[i] = f;
    }
    if (is.peek() != std::ifstream::traits_type::eof())
        throw DataError("payload longer than header promises in " + path.string());
    return Volume(h.dims, h.channels, std::move(values));
}

void write_lab3(const LabelVolume& vol, const std::filesystem::path& path)
{
    auto os = open_out(path);
    write_header(os, "LAB3", vol.dims, 1);
    for (std::uint16_t v : vol.data)
        put_u16(os, v);
    if (!os)
        throw DataError("write failed for " + path.string());
}

LabelVolume read_lab3(const std::filesystem::path& path)
{
    auto is = open_in(path);
    const Header h = read_header(is, "LAB3", path);
    if (h.channels != 1)
        throw DataError("label volume must have 1 channel in " + path.string());
    const std::size_t count = static_cast<std::size_t>(h.dims[0]) * h.dims[1] * h.dims[2];
    std::vector<std::uint16_t> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::array<unsigned char, 2> b;
        if (!is.read(reinterpret_cast<char*>(b.data()), 2))
            throw DataError("payload shorter than header promises in " + path.string() +
                            " (expected " + std::to_string(count) + " u16 values)");
        values[i] = static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    if (is.peek() != std::ifstream::traits_type::eof())
        throw DataError("payload longer than header promises in " + path.string());
    return LabelVolume(h.dims, std::move(values));
}

} // namespace pdreg
