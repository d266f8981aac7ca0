#pragma once

#include <array>
#include <cstdint>

namespace nelastic {

/// Philox4x32-10 block function (counter-based; no internal state).
[[nodiscard]] std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                                      std::array<std::uint32_t, 2> key) noexcept;

/// A reproducible random stream addressed by (seed, stream id, block index).
///
/// Streams never share counters: `substream(i)` derives a child id by hashing,
/// so replica i of a run draws the same numbers regardless of how replicas are
/// scheduled across workers.
class Stream {
public:
    Stream() = default;
    explicit Stream(std::uint64_t seed, std::uint64_t stream_id = 0) noexcept
        : seed_(seed), id_(stream_id) {}

    [[nodiscard]] Stream substream(std::uint64_t index) const noexcept;

    std::uint64_t next_u64() noexcept;

    /// Uniform on the open interval (0, 1); never returns 0 or 1.
    double uniform_open() noexcept {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
    [[nodiscard]] std::uint64_t id() const noexcept { return id_; }
    [[nodiscard]] std::uint64_t draws() const noexcept { return block_ * 2 - buffered_; }

    bool operator==(const Stream&) const = default;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t id_ = 0;
    std::uint64_t block_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int buffered_ = 0;
};

/// SplitMix64 finalizer, used for id derivation and config hashing.
[[nodiscard]] std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace nelastic
