#include "cehr/weights_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace cehr {

namespace {

constexpr std::array<char, 5> kMagic{'C', 'E', 'H', 'R', 'W'};

template <typename T>
void put_le(std::ostream& out, T value) {
    std::array<unsigned char, sizeof(T)> bytes{};
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!in) throw std::runtime_error("weights: truncated file");
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(bytes[i]) << (8 * i);
    return value;
}

}  // namespace

void write_weights(std::ostream& out, const ParameterSet& params) {
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kWeightFormatVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params.items()) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) throw std::invalid_argument("weights: name too long");
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (auto e : t.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
        for (double v : t.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    if (!out) throw std::runtime_error("weights: write failed");
}

void save_weights(const std::string& path, const ParameterSet& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("weights: cannot open " + path + " for writing");
    write_weights(out, params);
}

ParameterSet read_weights(std::istream& in) {
    std::array<char, 5> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw std::runtime_error("weights: bad magic");
    const auto version = get_le<std::uint32_t>(in);
    if (version != kWeightFormatVersion) throw std::runtime_error("weights: unsupported version " + std::to_string(version));
    const auto count = get_le<std::uint32_t>(in);
    ParameterSet params;
    for (std::uint32_t r = 0; r < count; ++r) {
        const auto name_len = get_le<std::uint16_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = get_le<std::uint8_t>(in);
        Shape shape(rank);
        for (auto& e : shape) e = get_le<std::uint32_t>(in);
        std::vector<double> values(shape_numel(shape));
        for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(in)));
        params.add(name, Tensor::from_data(std::move(shape), std::move(values), true));
    }
    return params;
}

ParameterSet load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("weights: cannot open " + path);
    return read_weights(in);
}

void assign_weights(ParameterSet& dst, const ParameterSet& src) {
    for (auto& [name, t] : dst.items()) {
        if (!src.contains(name)) throw std::runtime_error("weights: missing tensor " + name);
        const Tensor& s = src.get(name);
        if (s.shape() != t.shape()) {
            throw std::runtime_error("weights: shape mismatch for " + name + ": " + shape_str(s.shape()) + " vs " +
                                     shape_str(t.shape()));
        }
        Tensor handle = t;
        std::copy(s.values().begin(), s.values().end(), handle.mutable_values().begin());
    }
}

}  // namespace cehr
