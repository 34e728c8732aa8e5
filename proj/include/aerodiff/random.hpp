#pragma once

#include <cstdint>
#include <optional>
#include <span>

namespace aerodiff {

// Counter-based random stream. Every draw is a pure function of (key, counter),
// so a stream can be re-created from its seed and position, and child streams
// derived with split() are independent of the parent's consumption.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed = 0);

    // Child stream keyed by (this key, id). Does not advance this stream.
    RandomStream split(std::uint64_t id) const;

    std::uint64_t next_u64();
    // Uniform in the open interval (0, 1).
    double uniform();
    // Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    double normal();
    void fill_normal(std::span<double> out);

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t position() const noexcept { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    std::optional<double> spare_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace aerodiff
