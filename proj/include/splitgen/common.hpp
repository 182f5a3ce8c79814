#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace splitgen {

class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void format_parts(std::ostringstream&) {}

template <typename Arg, typename... Rest>
void format_parts(std::ostringstream& oss, Arg&& arg, Rest&&... rest) {
    oss << std::forward<Arg>(arg);
    format_parts(oss, std::forward<Rest>(rest)...);
}

} // namespace detail

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
    std::ostringstream oss;
    detail::format_parts(oss, std::forward<Args>(args)...);
    throw error(oss.str());
}

#define SG_CHECK(cond, ...)                  \
    do {                                     \
        if (!(cond)) ::splitgen::fail(__VA_ARGS__); \
    } while (0)

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

} // namespace splitgen
