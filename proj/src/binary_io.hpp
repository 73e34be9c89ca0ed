#pragma once

// Little-endian helpers for the TIMG / TFLD dump formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>

#include "tetsculpt/common.hpp"

namespace tetsculpt::detail {

template <typename U>
void put_le(std::ostream& os, U value) {
    static_assert(std::is_unsigned_v<U>);
    std::array<char, sizeof(U)> bytes{};
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
    os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
    static_assert(std::is_unsigned_v<U>);
    std::array<unsigned char, sizeof(U)> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (!is) throw IoError("unexpected end of binary stream");
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
    return value;
}

inline void put_f32(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
inline double get_f32(std::istream& is) { return std::bit_cast<float>(get_le<std::uint32_t>(is)); }
inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

inline void put_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), 4); }
inline void expect_magic(std::istream& is, std::string_view magic) {
    char buf[4] = {};
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic.data(), 4) != 0)
        throw IoError("bad magic, expected " + std::string(magic));
}

}  // namespace tetsculpt::detail
