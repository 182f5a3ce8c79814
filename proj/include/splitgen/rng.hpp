#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string_view>
#include <vector>

#include "splitgen/common.hpp"
#include "splitgen/tensor.hpp"

namespace splitgen {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// xoshiro256++ stream with an explicit, serialisable state. One master seed
// fans out to named streams so that enabling/disabling one consumer does not
// perturb the draws seen by the others.
class RngStream {
public:
    RngStream() : RngStream(0) {}

    explicit RngStream(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    static RngStream named(std::uint64_t master_seed, std::string_view name) {
        return RngStream(master_seed ^ fnv1a64(name));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0,n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        SG_CHECK(n > 0, "RngStream::below: n must be positive");
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    int below_int(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

    // Standard normal via Box-Muller; the second draw of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Fisher-Yates shuffle.
    template <typename It>
    void shuffle(It begin, It end) {
        const auto n = static_cast<std::uint64_t>(end - begin);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = below(i);
            std::swap(begin[i - 1], begin[j]);
        }
    }

    std::vector<int> permutation(int n) {
        std::vector<int> p(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
        shuffle(p.begin(), p.end());
        return p;
    }

    template <typename T>
    Tensor<T> normal_tensor(Shape shape, double stddev = 1.0) {
        Tensor<T> t(std::move(shape));
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(normal() * stddev);
        return t;
    }

    template <typename T>
    Tensor<T> uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
        Tensor<T> t(std::move(shape));
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(uniform(lo, hi));
        return t;
    }

    // Gumbel(0,1) noise, clamped away from the uniform endpoints.
    template <typename T>
    Tensor<T> gumbel_tensor(Shape shape) {
        Tensor<T> t(std::move(shape));
        for (std::int64_t i = 0; i < t.size(); ++i) {
            double u = uniform();
            u = std::min(std::max(u, 1e-12), 1.0 - 1e-12);
            t[i] = static_cast<T>(-std::log(-std::log(u)));
        }
        return t;
    }

    // Logistic(0,1) noise, used by the relaxed Bernoulli.
    template <typename T>
    Tensor<T> logistic_tensor(Shape shape) {
        Tensor<T> t(std::move(shape));
        for (std::int64_t i = 0; i < t.size(); ++i) {
            double u = uniform();
            u = std::min(std::max(u, 1e-12), 1.0 - 1e-12);
            t[i] = static_cast<T>(std::log(u) - std::log1p(-u));
        }
        return t;
    }

    void save(std::ostream& os) const {
        for (std::uint64_t w : s_) write_u64(os, w);
        write_u64(os, has_spare_ ? 1 : 0);
        std::uint64_t bits;
        static_assert(sizeof(bits) == sizeof(spare_));
        std::memcpy(&bits, &spare_, sizeof(bits));
        write_u64(os, bits);
    }

    void load(std::istream& is) {
        for (auto& w : s_) w = read_u64(is);
        has_spare_ = read_u64(is) != 0;
        std::uint64_t bits = read_u64(is);
        std::memcpy(&spare_, &bits, sizeof(bits));
    }

    bool operator==(const RngStream& o) const {
        return s_[0] == o.s_[0] && s_[1] == o.s_[1] && s_[2] == o.s_[2] && s_[3] == o.s_[3] &&
               has_spare_ == o.has_spare_ && (!has_spare_ || spare_ == o.spare_);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static void write_u64(std::ostream& os, std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        os.write(reinterpret_cast<const char*>(b), 8);
    }

    static std::uint64_t read_u64(std::istream& is) {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        SG_CHECK(is.good(), "RngStream::load: truncated stream");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }

    std::uint64_t s_[4] = {};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace splitgen
