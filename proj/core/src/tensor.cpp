#include "stpconv/tensor.hpp"

namespace stpconv {

std::int64_t Shape4::volume() const {
    const std::int64_t axes[4] = {nx, ny, nt, nc};
    std::int64_t v = 1;
    for (std::int64_t a : axes) {
        if (a < 1) throw ShapeError("shape " + str() + ": every axis must be >= 1");
        if (__builtin_mul_overflow(v, a, &v)) {
            throw ShapeError("shape " + str() + ": element count overflows");
        }
    }
    return v;
}

std::string Shape4::str() const {
    return "(" + std::to_string(nx) + "," + std::to_string(ny) + "," + std::to_string(nt) + "," +
           std::to_string(nc) + ")";
}

}  // namespace stpconv
