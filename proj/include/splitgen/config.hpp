#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "splitgen/common.hpp"
#include "splitgen/models/gmvae.hpp"
#include "splitgen/models/spair.hpp"
#include "splitgen/models/vae.hpp"
#include "splitgen/rng.hpp"

namespace splitgen {

// One training run, fully specified. Parsed from a small ini-style text with
// a handful of top-level keys plus one section per model family; unknown keys
// are a hard error so config typos can't silently fall back to defaults.
struct RunConfig {
    std::string kind = "split-vae"; // vae | split-vae | gmvae | split-gmvae | spair | split-spair
    std::string dataset;            // dataset directory, resolved against the data root
    std::string out;                // run output directory (not part of the digest)
    std::int64_t steps = -1;        // -1: fill the per-family default budget
    int batch = 64;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 1000;
    double lr = 1e-4;

    VaeConfig vae;
    GmvaeConfig gmvae;
    SpairConfig spair;

    // "vae", "gmvae" or "spair"
    std::string family() const {
        if (kind == "vae" || kind == "split-vae") return "vae";
        if (kind == "gmvae" || kind == "split-gmvae") return "gmvae";
        if (kind == "spair" || kind == "split-spair") return "spair";
        fail("unknown run kind '", kind, "'");
    }

    bool is_split() const { return kind.rfind("split-", 0) == 0; }

    void finalize() {
        if (steps < 0) steps = family() == "spair" ? 50000 : 30000;
    }

    void validate() const {
        family(); // throws on a bad kind
        // out is not checked here: canonical text (and thus checkpoints)
        // deliberately omits it, so a parsed config may leave it empty
        SG_CHECK(!dataset.empty(), "config: dataset is required");
        SG_CHECK(steps >= 0, "config: steps must be nonnegative");
        SG_CHECK(batch > 0, "config: batch must be positive");
        SG_CHECK(checkpoint_every > 0, "config: checkpoint_every must be positive");
        SG_CHECK(lr > 0.0, "config: lr must be positive");
        const std::string fam = family();
        if (fam == "vae") {
            vae.validate();
        } else if (fam == "gmvae") {
            gmvae.validate();
            if (is_split())
                SG_CHECK(gmvae.z_l_dim > 0, "config: split-gmvae needs gmvae.z_l_dim > 0");
            else
                SG_CHECK(gmvae.z_l_dim == 0, "config: gmvae baseline needs gmvae.z_l_dim = 0");
        } else {
            spair.validate();
            if (is_split())
                SG_CHECK(spair.z_l_dim > 0, "config: split-spair needs spair.z_l_dim > 0");
            else
                SG_CHECK(spair.z_l_dim == 0, "config: spair baseline needs spair.z_l_dim = 0");
        }
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::int64_t parse_i64(const std::string& v, const std::string& key) {
    std::size_t pos = 0;
    std::int64_t r = 0;
    try {
        r = std::stoll(v, &pos);
    } catch (const std::exception&) {
        fail("config: key '", key, "' wants an integer, got '", v, "'");
    }
    SG_CHECK(pos == v.size(), "config: key '", key, "' wants an integer, got '", v, "'");
    return r;
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
    std::size_t pos = 0;
    std::uint64_t r = 0;
    try {
        r = std::stoull(v, &pos);
    } catch (const std::exception&) {
        fail("config: key '", key, "' wants an unsigned integer, got '", v, "'");
    }
    SG_CHECK(pos == v.size() && v[0] != '-', "config: key '", key,
             "' wants an unsigned integer, got '", v, "'");
    return r;
}

inline int parse_int(const std::string& v, const std::string& key) {
    const std::int64_t r = parse_i64(v, key);
    SG_CHECK(r >= INT32_MIN && r <= INT32_MAX, "config: key '", key, "' out of int range");
    return static_cast<int>(r);
}

inline double parse_f64(const std::string& v, const std::string& key) {
    std::size_t pos = 0;
    double r = 0;
    try {
        r = std::stod(v, &pos);
    } catch (const std::exception&) {
        fail("config: key '", key, "' wants a number, got '", v, "'");
    }
    SG_CHECK(pos == v.size(), "config: key '", key, "' wants a number, got '", v, "'");
    return r;
}

inline std::string fmt_f64(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

// Parses the ini-style run config. '#' starts a comment, sections are
// [vae] / [gmvae] / [spair] / [optim], everything else is `key = value`.
// Unknown sections or keys, duplicate keys and malformed values all throw.
inline RunConfig parse_config_text(const std::string& text) {
    using detail::parse_f64;
    using detail::parse_i64;
    using detail::parse_int;
    using detail::parse_u64;
    using detail::trim;

    RunConfig cfg;
    bool steps_set = false;
    std::string section; // "" = top level
    std::set<std::string> seen_keys, seen_sections;

    std::istringstream is(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        std::string line = raw;
        if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            SG_CHECK(line.back() == ']', "config line ", lineno, ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            SG_CHECK(section == "vae" || section == "gmvae" || section == "spair" ||
                         section == "optim",
                     "config line ", lineno, ": unknown section [", section, "]");
            SG_CHECK(seen_sections.insert(section).second, "config line ", lineno,
                     ": duplicate section [", section, "]");
            continue;
        }

        const auto eq = line.find('=');
        SG_CHECK(eq != std::string::npos, "config line ", lineno, ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        SG_CHECK(!key.empty(), "config line ", lineno, ": empty key");
        SG_CHECK(!val.empty(), "config line ", lineno, ": empty value for '", key, "'");
        const std::string qual = section.empty() ? key : section + "." + key;
        SG_CHECK(seen_keys.insert(qual).second, "config line ", lineno, ": duplicate key '",
                 qual, "'");

        if (section.empty()) {
            if (key == "kind") cfg.kind = val;
            else if (key == "dataset") cfg.dataset = val;
            else if (key == "out") cfg.out = val;
            else if (key == "steps") { cfg.steps = parse_i64(val, qual); steps_set = true; }
            else if (key == "batch") cfg.batch = parse_int(val, qual);
            else if (key == "seed") cfg.seed = parse_u64(val, qual);
            else if (key == "checkpoint_every") cfg.checkpoint_every = parse_i64(val, qual);
            else fail("config line ", lineno, ": unknown key '", key, "'");
        } else if (section == "optim") {
            if (key == "lr") cfg.lr = parse_f64(val, qual);
            else fail("config line ", lineno, ": unknown key '", qual, "'");
        } else if (section == "vae") {
            auto& c = cfg.vae;
            if (key == "image_size") c.image_size = parse_int(val, qual);
            else if (key == "channels") c.channels = parse_int(val, qual);
            else if (key == "width") c.width = parse_int(val, qual);
            else if (key == "z_g_dim") c.z_g_dim = parse_int(val, qual);
            else if (key == "z_l_dim") c.z_l_dim = parse_int(val, qual);
            else if (key == "beta") c.beta = parse_f64(val, qual);
            else if (key == "sigma") c.sigma = parse_f64(val, qual);
            else if (key == "patch_size") c.patch_size = parse_int(val, qual);
            else fail("config line ", lineno, ": unknown key '", qual, "'");
        } else if (section == "gmvae") {
            auto& c = cfg.gmvae;
            if (key == "image_size") c.image_size = parse_int(val, qual);
            else if (key == "channels") c.channels = parse_int(val, qual);
            else if (key == "width") c.width = parse_int(val, qual);
            else if (key == "z_g_dim") c.z_g_dim = parse_int(val, qual);
            else if (key == "z_l_dim") c.z_l_dim = parse_int(val, qual);
            else if (key == "emb_dim") c.emb_dim = parse_int(val, qual);
            else if (key == "k") c.k = parse_int(val, qual);
            else if (key == "alpha") c.alpha = parse_f64(val, qual);
            else if (key == "beta") c.beta = parse_f64(val, qual);
            else if (key == "tau") c.tau = parse_f64(val, qual);
            else if (key == "sigma") c.sigma = parse_f64(val, qual);
            else if (key == "patch_size") c.patch_size = parse_int(val, qual);
            else fail("config line ", lineno, ": unknown key '", qual, "'");
        } else { // spair
            auto& c = cfg.spair;
            if (key == "image_size") c.image_size = parse_int(val, qual);
            else if (key == "channels") c.channels = parse_int(val, qual);
            else if (key == "width") c.width = parse_int(val, qual);
            else if (key == "cell_size") c.cell_size = parse_int(val, qual);
            else if (key == "glimpse_size") c.glimpse_size = parse_int(val, qual);
            else if (key == "z_what_dim") c.z_what_dim = parse_int(val, qual);
            else if (key == "z_bg_dim") c.z_bg_dim = parse_int(val, qual);
            else if (key == "z_l_dim") c.z_l_dim = parse_int(val, qual);
            else if (key == "s_min") c.s_min = parse_f64(val, qual);
            else if (key == "s_max") c.s_max = parse_f64(val, qual);
            else if (key == "pres_temp") c.pres_temp = parse_f64(val, qual);
            else if (key == "beta") c.beta = parse_f64(val, qual);
            else if (key == "sigma") c.sigma = parse_f64(val, qual);
            else if (key == "patch_size") c.patch_size = parse_int(val, qual);
            else fail("config line ", lineno, ": unknown key '", qual, "'");
        }
    }

    // a family section only makes sense for the matching kind
    const std::string fam = cfg.family();
    for (const auto& s : seen_sections)
        SG_CHECK(s == "optim" || s == fam, "config: section [", s, "] does not apply to kind '",
                 cfg.kind, "'");
    if (!steps_set) cfg.finalize();
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    SG_CHECK(is.good(), "cannot open config file ", path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

// Deterministic full serialization: every applicable key in a fixed order.
// `out` is where the run writes, not what it computes, so it is excluded and
// a checkpoint can be resumed into a fresh directory.
inline std::string canonical_config_text(const RunConfig& cfg) {
    using detail::fmt_f64;
    cfg.validate();
    std::ostringstream os;
    os << "kind = " << cfg.kind << "\n";
    os << "dataset = " << cfg.dataset << "\n";
    os << "steps = " << cfg.steps << "\n";
    os << "batch = " << cfg.batch << "\n";
    os << "seed = " << cfg.seed << "\n";
    os << "checkpoint_every = " << cfg.checkpoint_every << "\n";
    os << "\n[optim]\n";
    os << "lr = " << fmt_f64(cfg.lr) << "\n";
    const std::string fam = cfg.family();
    if (fam == "vae") {
        const auto& c = cfg.vae;
        os << "\n[vae]\n";
        os << "image_size = " << c.image_size << "\n";
        os << "channels = " << c.channels << "\n";
        os << "width = " << c.width << "\n";
        os << "z_g_dim = " << c.z_g_dim << "\n";
        os << "z_l_dim = " << c.z_l_dim << "\n";
        os << "beta = " << fmt_f64(c.beta) << "\n";
        os << "sigma = " << fmt_f64(c.sigma) << "\n";
        os << "patch_size = " << c.patch_size << "\n";
    } else if (fam == "gmvae") {
        const auto& c = cfg.gmvae;
        os << "\n[gmvae]\n";
        os << "image_size = " << c.image_size << "\n";
        os << "channels = " << c.channels << "\n";
        os << "width = " << c.width << "\n";
        os << "z_g_dim = " << c.z_g_dim << "\n";
        os << "z_l_dim = " << c.z_l_dim << "\n";
        os << "emb_dim = " << c.emb_dim << "\n";
        os << "k = " << c.k << "\n";
        os << "alpha = " << fmt_f64(c.alpha) << "\n";
        os << "beta = " << fmt_f64(c.beta) << "\n";
        os << "tau = " << fmt_f64(c.tau) << "\n";
        os << "sigma = " << fmt_f64(c.sigma) << "\n";
        os << "patch_size = " << c.patch_size << "\n";
    } else {
        const auto& c = cfg.spair;
        os << "\n[spair]\n";
        os << "image_size = " << c.image_size << "\n";
        os << "channels = " << c.channels << "\n";
        os << "width = " << c.width << "\n";
        os << "cell_size = " << c.cell_size << "\n";
        os << "glimpse_size = " << c.glimpse_size << "\n";
        os << "z_what_dim = " << c.z_what_dim << "\n";
        os << "z_bg_dim = " << c.z_bg_dim << "\n";
        os << "z_l_dim = " << c.z_l_dim << "\n";
        os << "s_min = " << fmt_f64(c.s_min) << "\n";
        os << "s_max = " << fmt_f64(c.s_max) << "\n";
        os << "pres_temp = " << fmt_f64(c.pres_temp) << "\n";
        os << "beta = " << fmt_f64(c.beta) << "\n";
        os << "sigma = " << fmt_f64(c.sigma) << "\n";
        os << "patch_size = " << c.patch_size << "\n";
    }
    return os.str();
}

inline std::uint64_t config_digest(const RunConfig& cfg) {
    return fnv1a64(canonical_config_text(cfg));
}

inline std::string digest_hex(std::uint64_t d) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(d));
    return buf;
}

} // namespace splitgen
