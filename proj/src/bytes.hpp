#pragma once

// Little-endian byte packing shared by the sample and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "aerodiff/error.hpp"

namespace aerodiff::detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(std::span<const std::uint8_t> b) { bytes.insert(bytes.end(), b.begin(), b.end()); }
    void text(const std::string& s) {
        u64(s.size());
        bytes.insert(bytes.end(), s.begin(), s.end());
    }

    std::vector<std::uint8_t> bytes;

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

// Every read names the field so truncation errors say what was missing.
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string origin, ErrorKind kind)
        : bytes_(bytes), origin_(std::move(origin)), kind_(kind) {}

    std::uint32_t u32(const char* field) { return static_cast<std::uint32_t>(get(4, field)); }
    std::uint64_t u64(const char* field) { return get(8, field); }
    float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
    double f64(const char* field) { return std::bit_cast<double>(u64(field)); }
    std::span<const std::uint8_t> raw(std::size_t n, const char* field) {
        need(n, field);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    std::string text(const char* field, std::size_t max_len = 1u << 24) {
        const std::uint64_t n = u64(field);
        if (n > max_len) fail(kind_, origin_ + ": field '" + field + "' has implausible length " + std::to_string(n));
        const auto b = raw(static_cast<std::size_t>(n), field);
        return std::string(b.begin(), b.end());
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    [[noreturn]] void error(const std::string& msg) const { fail(kind_, origin_ + ": " + msg); }

private:
    void need(std::size_t n, const char* field) const {
        if (bytes_.size() - pos_ < n)
            fail(kind_, origin_ + ": truncated while reading field '" + field + "' at byte " + std::to_string(pos_));
    }
    std::uint64_t get(int n, const char* field) {
        need(static_cast<std::size_t>(n), field);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::string origin_;
    ErrorKind kind_;
};

}  // namespace aerodiff::detail
