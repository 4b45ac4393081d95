// Copyright (C) 2026 flowsr contributors
// SPDX-License-Identifier: Apache-2.0
//
// Numeric oracles for every gradient path: central finite differences on
// micro networks, the algebraic blend identity, zero-gradient sentinels,
// scheduler reconstruction, trajectory-accumulation brute force, and
// serial/OpenMP kernel parity. Shared by the gradcheck CLI command and the
// acceptance suite.

#pragma once

#include <string>
#include <vector>

namespace flowsr {

struct OracleResult {
    std::string name;
    double max_rel_err = 0;
    double tolerance = 0;
    bool pass = false;
    std::string note;
};

// Runs all oracles (or the named subset). float32 mode runs the numeric
// checks in single precision with h = 1e-2 and tolerance 1e-2 instead of
// h = 1e-4 / 1e-4.
std::vector<OracleResult> run_gradcheck(const std::vector<std::string>& only,
                                        bool float32_mode);

std::vector<std::string> gradcheck_oracle_names();

}  // namespace flowsr
