#pragma once

#include <array>
#include <cstdint>

namespace ivor {

// Philox4x32-10 counter-based generator. A (seed, stream) pair fully
// determines the output sequence, so per-replicate substreams are cheap
// and independent of how many draws earlier replicates consumed.
class Philox {
public:
    explicit Philox(std::uint64_t seed, std::uint64_t stream = 0)
        : key_{static_cast<std::uint32_t>(seed),
               static_cast<std::uint32_t>(seed >> 32)},
          ctr_{0, 0, static_cast<std::uint32_t>(stream),
               static_cast<std::uint32_t>(stream >> 32)} {}

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    // Uniform on (0,1) with 53 random bits; never returns 0 or 1.
    double uniform();

    // Box-Muller pair, one value cached.
    double normal();

    double exponential();            // rate 1
    double student_t2();             // t with 2 df
    double gamma_int_shape(int k);   // Gamma(k,1) for small integer k; k=0 -> 0
    int multinomial3(double p0, double p1);  // draws 0/1/2
    bool bernoulli(double p);

private:
    static std::array<std::uint32_t, 4> philox_block(
        std::array<std::uint32_t, 2> key, std::array<std::uint32_t, 4> ctr);

    void refill();

    std::array<std::uint32_t, 2> key_;
    std::array<std::uint32_t, 4> ctr_;
    std::array<std::uint32_t, 4> buf_{};
    int buf_pos_ = 4;  // empty
    double cached_normal_ = 0.0;
    bool have_cached_normal_ = false;
};

}  // namespace ivor
