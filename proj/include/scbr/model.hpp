#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace scbr {

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when the constraints on one attribute cannot be satisfied together.
class EmptyConstraint : public ModelError {
public:
    using ModelError::ModelError;
};

/// Raised by the canonical text parsers.
class ParseError : public ModelError {
public:
    using ModelError::ModelError;
};

inline constexpr std::size_t kMaxTextBytes      = 256;
inline constexpr std::size_t kMaxHeaderAttrs    = 64;
inline constexpr std::size_t kMaxAttributeChars = 128;

/// A header value: a finite double or a non-empty UTF-8 string of at most 256 bytes.
class AttributeValue {
public:
    static AttributeValue number(double v);
    static AttributeValue text(std::string v);

    bool is_number() const noexcept { return std::holds_alternative<double>(value_); }
    bool is_text() const noexcept { return std::holds_alternative<std::string>(value_); }

    double as_number() const { return std::get<double>(value_); }
    const std::string &as_text() const { return std::get<std::string>(value_); }

    friend bool operator==(const AttributeValue &, const AttributeValue &) = default;

private:
    explicit AttributeValue(std::variant<double, std::string> v) : value_(std::move(v)) {}
    std::variant<double, std::string> value_;
};

struct Bound {
    double value;
    bool inclusive;

    friend bool operator==(const Bound &, const Bound &) = default;
};

/// Numeric interval; a missing bound is unbounded on that side.
struct NumericRange {
    std::optional<Bound> lo;
    std::optional<Bound> hi;

    bool contains(double x) const noexcept;
    bool empty() const noexcept;
    bool is_point() const noexcept;

    friend bool operator==(const NumericRange &, const NumericRange &) = default;
};

struct TextEquals {
    std::string value;

    friend bool operator==(const TextEquals &, const TextEquals &) = default;
};

class Constraint {
public:
    using Test = std::variant<NumericRange, TextEquals>;

    Constraint(std::string attribute, Test test);

    static Constraint equals(std::string attribute, double v);
    static Constraint equals(std::string attribute, std::string v);
    static Constraint greater(std::string attribute, double v);
    static Constraint greater_equal(std::string attribute, double v);
    static Constraint less(std::string attribute, double v);
    static Constraint less_equal(std::string attribute, double v);
    static Constraint between(std::string attribute, double lo, bool lo_inclusive, double hi,
                              bool hi_inclusive);

    const std::string &attribute() const noexcept { return attribute_; }
    const Test &test() const noexcept { return test_; }

    bool is_text() const noexcept { return std::holds_alternative<TextEquals>(test_); }
    const NumericRange *range() const noexcept { return std::get_if<NumericRange>(&test_); }
    const TextEquals *text() const noexcept { return std::get_if<TextEquals>(&test_); }

    /// True for text equality and for numeric point intervals.
    bool is_equality() const noexcept;

    friend bool operator==(const Constraint &, const Constraint &) = default;

private:
    std::string attribute_;
    Test test_;
};

struct Subscription {
    std::vector<Constraint> constraints;
    std::string client_id;
    std::string sub_id;
};

/// Attribute map of a publication, kept sorted by attribute name.
class PublicationHeader {
public:
    using Entry = std::pair<std::string, AttributeValue>;

    PublicationHeader() = default;

    /// Adds an attribute; throws ModelError on a duplicate or invalid name.
    PublicationHeader &add(std::string attribute, AttributeValue value);
    PublicationHeader &add(std::string attribute, double value);
    PublicationHeader &add(std::string attribute, std::string value);

    const AttributeValue *find(std::string_view attribute) const noexcept;

    const std::vector<Entry> &entries() const noexcept { return attrs_; }
    std::size_t size() const noexcept { return attrs_.size(); }
    bool empty() const noexcept { return attrs_.empty(); }

    friend bool operator==(const PublicationHeader &, const PublicationHeader &) = default;

private:
    std::vector<Entry> attrs_;
};

struct Publication {
    PublicationHeader header;
    std::string payload;
    std::string pub_id;
};

bool valid_attribute_name(std::string_view name) noexcept;

bool eval_constraint(const Constraint &c, const AttributeValue &v) noexcept;

/// Conjunctive match. Attributes the subscription does not mention are ignored.
bool matches(const PublicationHeader &h, const Subscription &s) noexcept;

/// True iff every value satisfying `narrow` satisfies `wide`. Throws ModelError
/// when the attributes differ.
bool covers_constraint(const Constraint &wide, const Constraint &narrow);

/// True iff every header matching `narrow` also matches `wide`. Both canonical.
bool covers(const Subscription &wide, const Subscription &narrow) noexcept;

/// False only when no header can match both subscriptions. Both canonical.
bool may_overlap(const Subscription &a, const Subscription &b) noexcept;

/// Intersection of two constraints on the same attribute; nullopt when empty.
std::optional<Constraint> intersect(const Constraint &a, const Constraint &b);

/// Merges constraints per attribute and sorts them by name. Throws EmptyConstraint.
Subscription canonicalize(Subscription s);

bool is_canonical(const Subscription &s) noexcept;

std::string format_number(double v);
std::string format_text(std::string_view v);

std::string serialize(const Constraint &c);
std::string serialize(const Subscription &s);
std::string serialize(const PublicationHeader &h);

/// Parses subscription text (canonical or not). Routing ids are left empty.
Subscription parse_subscription(std::string_view text);

/// Parses header text and requires it to be in canonical form byte for byte.
PublicationHeader parse_header(std::string_view text);

/// Checks the per-header invariants (1..64 attributes).
void validate_header(const PublicationHeader &h);

} // namespace scbr
