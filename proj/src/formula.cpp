#include "ivor/formula.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>

#include "ivor/errors.hpp"
#include "ivor/kernels.hpp"

namespace ivor {

const char* link_name(Link link) {
    switch (link) {
        case Link::Identity: return "identity";
        case Link::Logit: return "logit";
        case Link::Probit: return "probit";
    }
    return "?";
}

bool ModelSpec::has_intercept() const {
    return std::any_of(terms.begin(), terms.end(), [](const Term& t) {
        return t.kind == Term::Kind::Intercept;
    });
}

bool ModelSpec::has_main_effect(const std::string& name) const {
    return std::any_of(terms.begin(), terms.end(), [&](const Term& t) {
        return t.kind == Term::Kind::Main && t.a == name;
    });
}

namespace {

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.'))
            return false;
    return !std::isdigit(static_cast<unsigned char>(s[0]));
}

}  // namespace

ModelSpec parse_formula(const std::string& formula, Link link, bool z_dummies) {
    ModelSpec spec;
    spec.link = link;
    spec.z_dummies = z_dummies;

    std::string rhs = formula;
    std::size_t tilde = formula.find('~');
    if (tilde != std::string::npos) {
        std::string lhs = trim(formula.substr(0, tilde));
        if (!lhs.empty()) {
            if (!valid_name(lhs))
                fail(ErrorCode::InvalidArgument, "bad response name in formula: " + lhs);
            spec.response = lhs;
        }
        rhs = formula.substr(tilde + 1);
    }

    spec.terms.push_back({Term::Kind::Intercept, "", ""});
    for (const std::string& raw : split(rhs, '+')) {
        std::string tok = trim(raw);
        if (tok.empty())
            fail(ErrorCode::InvalidArgument, "empty term in formula: " + formula);
        if (tok == "1") continue;  // intercept is implicit
        std::size_t colon = tok.find(':');
        Term term;
        if (colon == std::string::npos) {
            if (!valid_name(tok))
                fail(ErrorCode::InvalidArgument, "bad term in formula: " + tok);
            term = {Term::Kind::Main, tok, ""};
        } else {
            std::string a = trim(tok.substr(0, colon));
            std::string b = trim(tok.substr(colon + 1));
            if (!valid_name(a) || !valid_name(b) ||
                b.find(':') != std::string::npos)
                fail(ErrorCode::InvalidArgument, "bad interaction term: " + tok);
            if (a > b) std::swap(a, b);
            term = {Term::Kind::Interaction, a, b};
        }
        if (std::find(spec.terms.begin(), spec.terms.end(), term) != spec.terms.end())
            fail(ErrorCode::InvalidArgument, "duplicate term in formula: " + tok);
        spec.terms.push_back(term);
    }
    return spec;
}

ModelSpec m_spec_scalar() {
    ModelSpec spec;
    spec.response = "";
    spec.terms = {{Term::Kind::Intercept, "", ""}};
    spec.link = Link::Identity;
    return spec;
}

std::string format_formula(const ModelSpec& spec) {
    std::string out = spec.response + " ~ 1";
    for (const Term& t : spec.terms) {
        if (t.kind == Term::Kind::Main)
            out += " + " + t.a;
        else if (t.kind == Term::Kind::Interaction)
            out += " + " + t.a + ":" + t.b;
    }
    return out;
}

Vec Design::linear_predictor(std::span<const double> beta) const {
    Vec eta(n, 0.0);
    for (std::size_t j = 0; j < cols.size(); ++j)
        kernels::axpy(beta[j], cols[j], eta);
    return eta;
}

namespace {

void append_main(const Dataset& data, const ModelSpec& spec,
                 const std::string& name, Design& design) {
    const Vec& col = data.column(name);
    if (name == "z" && spec.z_dummies) {
        auto levels = data.z_levels();
        if (levels.size() > 2) {
            // one dummy per non-baseline level
            for (std::size_t li = 1; li < levels.size(); ++li) {
                Vec dummy(data.n, 0.0);
                for (std::size_t i = 0; i < data.n; ++i)
                    dummy[i] = (col[i] == levels[li]) ? 1.0 : 0.0;
                char buf[32];
                std::snprintf(buf, sizeof(buf), "z=%g", levels[li]);
                design.cols.push_back(std::move(dummy));
                design.names.emplace_back(buf);
            }
            return;
        }
    }
    design.cols.push_back(col);
    design.names.push_back(name);
}

}  // namespace

Design build_design(const Dataset& data, const ModelSpec& spec) {
    Design design;
    design.n = data.n;
    for (const Term& t : spec.terms) {
        switch (t.kind) {
            case Term::Kind::Intercept:
                design.cols.emplace_back(data.n, 1.0);
                design.names.emplace_back("(intercept)");
                break;
            case Term::Kind::Main:
                append_main(data, spec, t.a, design);
                break;
            case Term::Kind::Interaction: {
                const Vec& a = data.column(t.a);
                const Vec& b = data.column(t.b);
                Vec prod(data.n);
                for (std::size_t i = 0; i < data.n; ++i) prod[i] = a[i] * b[i];
                design.cols.push_back(std::move(prod));
                design.names.push_back(t.a + ":" + t.b);
                break;
            }
        }
    }
    return design;
}

std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t design_hash(const Dataset& data, const ModelSpec& spec) {
    std::uint64_t h = fnv1a(&data.n, sizeof(data.n));
    h = fnv1a(spec.response.data(), spec.response.size(), h);
    int link = static_cast<int>(spec.link);
    h = fnv1a(&link, sizeof(link), h);
    int dz = spec.z_dummies ? 1 : 0;
    h = fnv1a(&dz, sizeof(dz), h);
    for (const Term& t : spec.terms) {
        int kind = static_cast<int>(t.kind);
        h = fnv1a(&kind, sizeof(kind), h);
        h = fnv1a(t.a.data(), t.a.size(), h);
        h = fnv1a(t.b.data(), t.b.size(), h);
    }
    return h;
}

}  // namespace ivor
