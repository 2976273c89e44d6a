#pragma once

#include <iostream>
#include <string_view>

namespace agepro {

// Warnings go to stderr; the library keeps no logger state of its own.
inline void log_warning(std::string_view message) {
    std::clog << "agepro: warning: " << message << '\n';
}

}  // namespace agepro
