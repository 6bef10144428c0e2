#include "ivor/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "ivor/errors.hpp"

namespace ivor {

Dataset Dataset::make(Vec y, Vec x, Vec z, std::vector<Vec> covariates,
                      std::vector<std::string> covariate_names) {
    Dataset d;
    d.n = y.size();
    if (d.n == 0) fail(ErrorCode::EmptyAfterFiltering, "dataset has no rows");
    if (x.size() != d.n || z.size() != d.n)
        fail(ErrorCode::InvalidArgument, "dataset columns differ in length");
    if (covariates.size() != covariate_names.size())
        fail(ErrorCode::InvalidArgument, "covariate names do not match columns");
    for (const auto& c : covariates)
        if (c.size() != d.n)
            fail(ErrorCode::InvalidArgument, "covariate column length mismatch");
    for (double v : y)
        if (v != 0.0 && v != 1.0)
            fail(ErrorCode::NonBinaryOutcome, "outcome values must be 0 or 1");
    auto finite = [](const Vec& v) {
        for (double t : v)
            if (!std::isfinite(t)) return false;
        return true;
    };
    if (!finite(x) || !finite(z))
        fail(ErrorCode::InvalidArgument, "non-finite exposure or instrument value");
    for (const auto& c : covariates)
        if (!finite(c)) fail(ErrorCode::InvalidArgument, "non-finite covariate value");
    d.y = std::move(y);
    d.x = std::move(x);
    d.z = std::move(z);
    d.covariates = std::move(covariates);
    d.covariate_names = std::move(covariate_names);
    return d;
}

const Vec& Dataset::column(const std::string& name) const {
    if (name == "y") return y;
    if (name == "x") return x;
    if (name == "z") return z;
    for (std::size_t i = 0; i < covariate_names.size(); ++i)
        if (covariate_names[i] == name) return covariates[i];
    fail(ErrorCode::MissingColumn, "no column named '" + name + "'");
}

bool Dataset::has_column(const std::string& name) const {
    if (name == "y" || name == "x" || name == "z") return true;
    return std::find(covariate_names.begin(), covariate_names.end(), name) !=
           covariate_names.end();
}

std::vector<double> Dataset::z_levels() const {
    std::vector<double> levels(z);
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    return levels;
}

std::uint64_t CountTable2x2x2::total() const {
    std::uint64_t t = 0;
    for (int x = 0; x < 2; ++x)
        for (int z = 0; z < 2; ++z)
            for (int y = 0; y < 2; ++y) t += at(x, z, y);
    return t;
}

bool CountTable2x2x2::estimable() const {
    if (total() == 0) return false;
    for (int x = 0; x < 2; ++x)
        for (int z = 0; z < 2; ++z)
            if (margin_xz(x, z) == 0) return false;
    return true;
}

Dataset expand_table(const CountTable2x2x2& table) {
    std::size_t total = static_cast<std::size_t>(table.total());
    if (total == 0) fail(ErrorCode::DegenerateTable, "table has no observations");
    Vec y, x, z;
    y.reserve(total);
    x.reserve(total);
    z.reserve(total);
    for (int xi = 0; xi < 2; ++xi)
        for (int zi = 0; zi < 2; ++zi)
            for (int yi = 0; yi < 2; ++yi)
                for (std::uint64_t k = 0; k < table.at(xi, zi, yi); ++k) {
                    x.push_back(xi);
                    z.push_back(zi);
                    y.push_back(yi);
                }
    return Dataset::make(std::move(y), std::move(x), std::move(z));
}

CountTable2x2x2 tabulate(const Dataset& data) {
    CountTable2x2x2 t;
    for (std::size_t i = 0; i < data.n; ++i) {
        double xv = data.x[i], zv = data.z[i];
        if ((xv != 0.0 && xv != 1.0) || (zv != 0.0 && zv != 1.0))
            fail(ErrorCode::InvalidArgument,
                 "tabulate requires dichotomous 0/1 exposure and instrument");
        ++t.at(static_cast<int>(xv), static_cast<int>(zv),
               static_cast<int>(data.y[i]));
    }
    return t;
}

CountTable2x2x2 brookhart_fixture() {
    CountTable2x2x2 t;
    t.at(0, 0, 0) = 5640;
    t.at(0, 0, 1) = 39;
    t.at(0, 1, 0) = 5722;
    t.at(0, 1, 1) = 34;
    t.at(1, 0, 0) = 6740;
    t.at(1, 0, 1) = 60;
    t.at(1, 1, 0) = 19493;
    t.at(1, 1, 1) = 114;
    return t;
}

}  // namespace ivor
