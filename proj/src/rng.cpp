#include "ivor/rng.hpp"

#include <cmath>

namespace ivor {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> Philox::philox_block(std::array<std::uint32_t, 2> key,
                                                  std::array<std::uint32_t, 4> ctr) {
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        std::array<std::uint32_t, 4> next = {hi1 ^ ctr[1] ^ key[0], lo1,
                                             hi0 ^ ctr[3] ^ key[1], lo0};
        ctr = next;
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

void Philox::refill() {
    buf_ = philox_block(key_, ctr_);
    buf_pos_ = 0;
    if (++ctr_[0] == 0) ++ctr_[1];  // 64-bit counter within the substream
}

std::uint32_t Philox::next_u32() {
    if (buf_pos_ >= 4) refill();
    return buf_[buf_pos_++];
}

std::uint64_t Philox::next_u64() {
    std::uint64_t lo = next_u32();
    std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
}

double Philox::uniform() {
    // 53-bit mantissa, offset by half an ulp to stay inside (0,1).
    std::uint64_t bits = next_u64() >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double Philox::normal() {
    if (have_cached_normal_) {
        have_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    have_cached_normal_ = true;
    return r * std::cos(a);
}

double Philox::exponential() { return -std::log(uniform()); }

double Philox::student_t2() {
    // t_2 = N / sqrt(chi2_2 / 2), chi2_2 = 2*Exp(1)
    double n = normal();
    double chi2 = 2.0 * exponential();
    return n / std::sqrt(chi2 / 2.0);
}

double Philox::gamma_int_shape(int k) {
    // Integer shapes only (the generators here need 0..3); shape 0 is the
    // degenerate weak limit at 0.
    double s = 0.0;
    for (int i = 0; i < k; ++i) s += exponential();
    return s;
}

int Philox::multinomial3(double p0, double p1) {
    double u = uniform();
    if (u < p0) return 0;
    if (u < p0 + p1) return 1;
    return 2;
}

bool Philox::bernoulli(double p) { return uniform() < p; }

}  // namespace ivor
