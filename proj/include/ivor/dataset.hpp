#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ivor/linalg.hpp"

namespace ivor {

// Per-subject records: binary outcome y, real exposure x, instrument z
// (possibly categorical coded 0,1,2,...), optional named covariates.
// Immutable after construction; validation happens in make().
struct Dataset {
    std::size_t n = 0;
    Vec y, x, z;
    std::vector<Vec> covariates;
    std::vector<std::string> covariate_names;

    static Dataset make(Vec y, Vec x, Vec z, std::vector<Vec> covariates = {},
                        std::vector<std::string> covariate_names = {});

    const Vec& column(const std::string& name) const;
    bool has_column(const std::string& name) const;

    // Distinct instrument values in increasing order.
    std::vector<double> z_levels() const;
};

// Cell counts n[x][z][y] for dichotomous exposure, instrument, outcome.
struct CountTable2x2x2 {
    std::array<std::array<std::array<std::uint64_t, 2>, 2>, 2> n{};

    std::uint64_t& at(int x, int z, int y) { return n[x][z][y]; }
    std::uint64_t at(int x, int z, int y) const { return n[x][z][y]; }

    std::uint64_t total() const;
    std::uint64_t margin_xz(int x, int z) const { return at(x, z, 0) + at(x, z, 1); }
    std::uint64_t margin_z(int z) const { return margin_xz(0, z) + margin_xz(1, z); }

    // total > 0 and every (x,z) margin > 0
    bool estimable() const;
};

Dataset expand_table(const CountTable2x2x2& table);
CountTable2x2x2 tabulate(const Dataset& data);

// Cox-2 / GI-bleeding health-register counts shipped as the `brookhart`
// fixture.
CountTable2x2x2 brookhart_fixture();

}  // namespace ivor
