#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ivor/dataset.hpp"
#include "ivor/linalg.hpp"

namespace ivor {

enum class Link { Identity, Logit, Probit };

const char* link_name(Link link);

struct Term {
    enum class Kind { Intercept, Main, Interaction };
    Kind kind = Kind::Intercept;
    std::string a, b;  // column names; b only for interactions

    bool operator==(const Term&) const = default;
};

// Symbolic regression design: response, ordered terms, link. The tiny
// formula grammar covers exactly the model space used here: implicit
// intercept, `+`-separated main effects, `:` interactions, e.g.
//   y ~ x + z + x:z
struct ModelSpec {
    std::string response = "y";
    std::vector<Term> terms;
    Link link = Link::Logit;
    // Expand a categorical instrument with >2 levels into dummy
    // regressors for its main effect (one column per non-baseline level).
    bool z_dummies = false;

    bool has_intercept() const;
    bool has_main_effect(const std::string& name) const;
};

ModelSpec parse_formula(const std::string& formula, Link link,
                        bool z_dummies = false);
std::string format_formula(const ModelSpec& spec);

// Intercept-only m(C;psi) descriptor: a single scalar causal coefficient.
ModelSpec m_spec_scalar();

// Materialized design: column-major per-term regressors resolved against
// a dataset.
struct Design {
    std::size_t n = 0;
    std::vector<Vec> cols;
    std::vector<std::string> names;

    std::size_t p() const { return cols.size(); }
    Vec linear_predictor(std::span<const double> beta) const;
};

Design build_design(const Dataset& data, const ModelSpec& spec);

// Identifier tying a fit to the (dataset shape, spec) pair it came from.
std::uint64_t design_hash(const Dataset& data, const ModelSpec& spec);

// FNV-1a over bytes; shared by design_hash and CLI input provenance.
std::uint64_t fnv1a(const void* bytes, std::size_t len,
                    std::uint64_t seed = 1469598103934665603ull);

}  // namespace ivor
