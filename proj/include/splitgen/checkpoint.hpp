#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "splitgen/common.hpp"
#include "splitgen/config.hpp"
#include "splitgen/nn.hpp"
#include "splitgen/rng.hpp"
#include "splitgen/tensor.hpp"

namespace splitgen {

inline constexpr char kCkptMagic[4] = {'S', 'G', 'C', 'K'};
inline constexpr std::uint32_t kCkptVersion = 1;

// Everything needed to resume a run bit-exactly: the canonical config text
// (digest-guarded), the step counter, every parameter with its Adam moments,
// and the consumable RNG streams. Values are f32 little-endian.
struct Checkpoint {
    RunConfig config;
    std::string config_text;
    std::uint64_t step = 0;
    std::int64_t adam_t = 0;
    RngStream order, scramble, latent;

    struct ParamBlob {
        std::string name;
        Shape shape;
        std::vector<float> value, adam_m, adam_v;
    };
    std::vector<ParamBlob> params;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    SG_CHECK(is.good(), "checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    SG_CHECK(is.good(), "checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_str(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    SG_CHECK(n < (1ull << 24), "checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    SG_CHECK(is.good(), "checkpoint: truncated file");
    return s;
}

inline void write_f32s(std::ostream& os, const float* p, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, p + i, 4);
        write_u32(os, bits);
    }
}

inline void read_f32s(std::istream& is, float* p, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) {
        const std::uint32_t bits = read_u32(is);
        std::memcpy(p + i, &bits, 4);
    }
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const RunConfig& cfg,
                            const ParamStore<float>& ps, std::int64_t adam_t,
                            const RngStream& order, const RngStream& scramble,
                            const RngStream& latent, std::uint64_t step) {
    using namespace detail;
    std::ofstream os(path, std::ios::binary);
    SG_CHECK(os.good(), "cannot write checkpoint ", path);
    const std::string text = canonical_config_text(cfg);
    os.write(kCkptMagic, 4);
    write_u32(os, kCkptVersion);
    write_u64(os, fnv1a64(text));
    write_str(os, text);
    write_u64(os, step);
    write_u64(os, static_cast<std::uint64_t>(adam_t));
    order.save(os);
    scramble.save(os);
    latent.save(os);
    write_u64(os, ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Parameter<float>& p = ps.at(i);
        write_str(os, p.name);
        write_u32(os, static_cast<std::uint32_t>(p.value.ndim()));
        for (int d = 0; d < p.value.ndim(); ++d)
            write_u64(os, static_cast<std::uint64_t>(p.value.shape()[d]));
        write_f32s(os, p.value.data(), p.value.size());
        write_f32s(os, p.adam_m.data(), p.adam_m.size());
        write_f32s(os, p.adam_v.data(), p.adam_v.size());
    }
    SG_CHECK(os.good(), "write failed for checkpoint ", path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    using namespace detail;
    std::ifstream is(path, std::ios::binary);
    SG_CHECK(is.good(), "cannot open checkpoint ", path);
    char magic[4];
    is.read(magic, 4);
    SG_CHECK(is.good() && std::memcmp(magic, kCkptMagic, 4) == 0,
             "checkpoint ", path, ": bad magic, not a checkpoint file");
    const std::uint32_t version = read_u32(is);
    SG_CHECK(version == kCkptVersion, "checkpoint ", path, ": version ", version,
             " does not match expected ", kCkptVersion);
    const std::uint64_t digest = read_u64(is);
    Checkpoint ck;
    ck.config_text = read_str(is);
    SG_CHECK(fnv1a64(ck.config_text) == digest, "checkpoint ", path,
             ": config digest mismatch, file is corrupted");
    ck.config = parse_config_text(ck.config_text);
    ck.step = read_u64(is);
    ck.adam_t = static_cast<std::int64_t>(read_u64(is));
    ck.order.load(is);
    ck.scramble.load(is);
    ck.latent.load(is);
    const std::uint64_t n_params = read_u64(is);
    SG_CHECK(n_params < (1ull << 20), "checkpoint ", path, ": implausible parameter count");
    ck.params.resize(n_params);
    for (auto& pb : ck.params) {
        pb.name = read_str(is);
        const std::uint32_t ndim = read_u32(is);
        SG_CHECK(ndim <= 8, "checkpoint ", path, ": implausible rank for ", pb.name);
        Shape shape(ndim);
        std::int64_t n = 1;
        for (auto& d : shape) {
            const std::uint64_t dv = read_u64(is);
            SG_CHECK(dv < (1u << 28), "checkpoint ", path, ": implausible dim");
            d = static_cast<int>(dv);
            n *= d;
        }
        pb.shape = std::move(shape);
        pb.value.resize(static_cast<std::size_t>(n));
        pb.adam_m.resize(static_cast<std::size_t>(n));
        pb.adam_v.resize(static_cast<std::size_t>(n));
        read_f32s(is, pb.value.data(), n);
        read_f32s(is, pb.adam_m.data(), n);
        read_f32s(is, pb.adam_v.data(), n);
    }
    return ck;
}

// Copies saved tensors into a freshly constructed model's store. The store
// must contain exactly the checkpointed parameters (matched by name+shape),
// which pins the config embedded in the checkpoint to the model built here.
inline void restore_params(ParamStore<float>& ps, const Checkpoint& ck) {
    SG_CHECK(ps.size() == ck.params.size(), "restore: store has ", ps.size(),
             " parameters, checkpoint has ", ck.params.size());
    for (const auto& pb : ck.params) {
        SG_CHECK(ps.has(pb.name), "restore: model has no parameter '", pb.name, "'");
        Parameter<float>& p = ps.get(pb.name);
        SG_CHECK(p.value.shape() == pb.shape, "restore: shape mismatch for '", pb.name, "'");
        std::copy(pb.value.begin(), pb.value.end(), p.value.data());
        std::copy(pb.adam_m.begin(), pb.adam_m.end(), p.adam_m.data());
        std::copy(pb.adam_v.begin(), pb.adam_v.end(), p.adam_v.data());
    }
}

} // namespace splitgen
