#pragma once

// Random subscriptions and headers over a tiny attribute domain. Bounds sit on
// integers 0..4 and header values on the half grid, so inclusive/exclusive
// edges and equal bounds come up constantly.

#include "scbr/model.hpp"

#include <algorithm>
#include <random>
#include <string>
#include <vector>

namespace scbr::testing {

inline const std::vector<std::string> kNumericAttrs{"a", "b", "c"};
inline const std::vector<std::string> kTextAttrs{"t", "u"};
inline const std::vector<std::string> kTextValues{"A", "B", "C"};

inline int uniform_int(std::mt19937_64 &rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline bool coin(std::mt19937_64 &rng, double p = 0.5) {
    return std::bernoulli_distribution(p)(rng);
}

inline Constraint random_numeric_constraint(std::mt19937_64 &rng, const std::string &attr) {
    while (true) {
        const int kind = uniform_int(rng, 0, 4);
        const double x = uniform_int(rng, 0, 4);
        const double y = uniform_int(rng, 0, 4);
        try {
            switch (kind) {
            case 0: return Constraint::equals(attr, x);
            case 1: return coin(rng) ? Constraint::greater(attr, x) : Constraint::greater_equal(attr, x);
            case 2: return coin(rng) ? Constraint::less(attr, x) : Constraint::less_equal(attr, x);
            default:
                return Constraint::between(attr, std::min(x, y), coin(rng), std::max(x, y), coin(rng));
            }
        } catch (const EmptyConstraint &) {
            // (x,x) style empty interval, draw again
        }
    }
}

inline Constraint random_constraint(std::mt19937_64 &rng, const std::string &attr) {
    if (std::find(kTextAttrs.begin(), kTextAttrs.end(), attr) != kTextAttrs.end()) {
        return Constraint::equals(attr, kTextValues[uniform_int(rng, 0, 1)]);
    }
    return random_numeric_constraint(rng, attr);
}

inline std::vector<std::string> all_attrs() {
    auto out = kNumericAttrs;
    out.insert(out.end(), kTextAttrs.begin(), kTextAttrs.end());
    return out;
}

/// Canonical subscription with 0..max_constraints constraints on distinct attributes.
inline Subscription random_subscription(std::mt19937_64 &rng, int max_constraints = 3,
                                        int min_constraints = 0) {
    auto attrs = all_attrs();
    std::shuffle(attrs.begin(), attrs.end(), rng);
    const int n = uniform_int(rng, min_constraints, max_constraints);
    Subscription s;
    for (int i = 0; i < n; ++i) s.constraints.push_back(random_constraint(rng, attrs[i]));
    return canonicalize(std::move(s));
}

/// A subscription covered by `s`: each constraint tightened by intersection,
/// possibly with extra constraints.
inline Subscription random_narrowing(std::mt19937_64 &rng, const Subscription &s) {
    while (true) {
        Subscription out = s;
        for (auto &c : out.constraints) {
            if (!coin(rng, 0.6)) continue;
            auto extra = random_constraint(rng, c.attribute());
            if (auto both = intersect(c, extra)) c = *both;
        }
        for (const auto &a : all_attrs()) {
            if (coin(rng, 0.25)) out.constraints.push_back(random_constraint(rng, a));
        }
        try {
            return canonicalize(std::move(out));
        } catch (const EmptyConstraint &) {
        }
    }
}

inline AttributeValue random_value_for(std::mt19937_64 &rng, const std::string &attr) {
    const bool text_attr = std::find(kTextAttrs.begin(), kTextAttrs.end(), attr) != kTextAttrs.end();
    // occasional type mismatch
    if (coin(rng, 0.05)) {
        return text_attr ? AttributeValue::number(1.0) : AttributeValue::text("A");
    }
    if (text_attr) return AttributeValue::text(kTextValues[uniform_int(rng, 0, 2)]);
    return AttributeValue::number(uniform_int(rng, -1, 9) / 2.0);
}

inline PublicationHeader random_header(std::mt19937_64 &rng, double presence = 0.85) {
    PublicationHeader h;
    for (const auto &a : all_attrs()) {
        if (coin(rng, presence)) h.add(a, random_value_for(rng, a));
    }
    return h;
}

/// Every header over `attrs` built from a finite value set that separates all
/// bounds used by the generators (including absent and mistyped values).
inline std::vector<PublicationHeader> exhaustive_headers(const std::vector<std::string> &attrs) {
    std::vector<PublicationHeader> out{PublicationHeader{}};
    for (const auto &a : attrs) {
        const bool text_attr = std::find(kTextAttrs.begin(), kTextAttrs.end(), a) != kTextAttrs.end();
        std::vector<std::optional<AttributeValue>> options{std::nullopt};
        if (text_attr) {
            for (const auto &v : kTextValues) options.push_back(AttributeValue::text(v));
            options.push_back(AttributeValue::number(0.0));
        } else {
            for (int k = -1; k <= 9; ++k) options.push_back(AttributeValue::number(k / 2.0));
            options.push_back(AttributeValue::text("A"));
        }
        std::vector<PublicationHeader> next;
        next.reserve(out.size() * options.size());
        for (const auto &h : out) {
            for (const auto &o : options) {
                auto copy = h;
                if (o) copy.add(a, *o);
                next.push_back(std::move(copy));
            }
        }
        out = std::move(next);
    }
    return out;
}

inline std::vector<std::string> attrs_of(const Subscription &a, const Subscription &b) {
    std::vector<std::string> out;
    for (const auto *s : {&a, &b}) {
        for (const auto &c : s->constraints) out.push_back(c.attribute());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Semantic covering decided by enumeration: no header matches `narrow` but not `wide`.
inline bool covers_by_enumeration(const Subscription &wide, const Subscription &narrow) {
    for (const auto &h : exhaustive_headers(attrs_of(wide, narrow))) {
        if (matches(h, narrow) && !matches(h, wide)) return false;
    }
    return true;
}

} // namespace scbr::testing
