// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace flowsr {

[[noreturn]] inline void throw_invalid(const std::string& msg) {
    throw std::invalid_argument(msg);
}

[[noreturn]] inline void throw_runtime(const std::string& msg) {
    throw std::runtime_error(msg);
}

// Precondition check. Violations are caller errors, reported as invalid_argument.
#define FLOWSR_REQUIRE(cond, msg)              \
    do {                                       \
        if (!(cond))                           \
            ::flowsr::throw_invalid(msg);      \
    } while (0)

}  // namespace flowsr
