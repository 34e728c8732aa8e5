#include "aerodiff/random.hpp"

#include <cmath>
#include <numbers>

namespace aerodiff {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

RandomStream::RandomStream(std::uint64_t seed) : key_(mix64(seed + kGamma)) {}

RandomStream RandomStream::split(std::uint64_t id) const {
    RandomStream child(0);
    child.key_ = mix64(key_ ^ mix64(id * kGamma + 0x632BE59BD9B4E019ull));
    return child;
}

std::uint64_t RandomStream::next_u64() {
    ++counter_;
    return mix64(key_ + counter_ * kGamma);
}

double RandomStream::uniform() {
    // 53 random bits, shifted half a step away from zero.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::int64_t RandomStream::uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(next_u64());
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % span;
    std::uint64_t draw = next_u64();
    while (draw >= limit) draw = next_u64();
    return lo + static_cast<std::int64_t>(draw % span);
}

double RandomStream::normal() {
    if (spare_) {
        const double v = *spare_;
        spare_.reset();
        return v;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
}

void RandomStream::fill_normal(std::span<double> out) {
    for (double& v : out) v = normal();
}

}  // namespace aerodiff
