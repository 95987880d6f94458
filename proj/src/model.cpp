#include "scbr/model.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fmt/format.h>

namespace scbr {

namespace {

bool valid_utf8(std::string_view s) noexcept {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        // overlong forms, surrogates, out of range
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
            cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            return false;
        }
        i += len;
    }
    return true;
}

void check_text(std::string_view v) {
    if (v.empty()) throw ModelError("text value must be non-empty");
    if (v.size() > kMaxTextBytes) throw ModelError("text value exceeds 256 bytes");
    if (!valid_utf8(v)) throw ModelError("text value is not valid UTF-8");
}

void check_attribute(std::string_view name) {
    if (!valid_attribute_name(name)) {
        throw ModelError(fmt::format("invalid attribute name '{}'", name));
    }
}

double normalize_zero(double v) noexcept { return v == 0.0 ? 0.0 : v; }

void check_range(const NumericRange &r) {
    for (const auto *b : {&r.lo, &r.hi}) {
        if (*b && !std::isfinite((*b)->value)) throw ModelError("numeric bound must be finite");
    }
    if (r.empty()) throw EmptyConstraint("empty numeric interval");
}

// lower bound `a` is at least as permissive as `b`
bool lower_covers(const std::optional<Bound> &a, const std::optional<Bound> &b) noexcept {
    if (!a) return true;
    if (!b) return false;
    if (b->value > a->value) return true;
    return b->value == a->value && (a->inclusive || !b->inclusive);
}

bool upper_covers(const std::optional<Bound> &a, const std::optional<Bound> &b) noexcept {
    if (!a) return true;
    if (!b) return false;
    if (b->value < a->value) return true;
    return b->value == a->value && (a->inclusive || !b->inclusive);
}

std::optional<Bound> tighter_lower(const std::optional<Bound> &a, const std::optional<Bound> &b) {
    if (!a) return b;
    if (!b) return a;
    if (a->value != b->value) return a->value > b->value ? a : b;
    return Bound{a->value, a->inclusive && b->inclusive};
}

std::optional<Bound> tighter_upper(const std::optional<Bound> &a, const std::optional<Bound> &b) {
    if (!a) return b;
    if (!b) return a;
    if (a->value != b->value) return a->value < b->value ? a : b;
    return Bound{a->value, a->inclusive && b->inclusive};
}

const Constraint *find_constraint(const std::vector<Constraint> &cs, std::string_view attr) noexcept {
    auto it = std::lower_bound(cs.begin(), cs.end(), attr,
                               [](const Constraint &c, std::string_view a) { return c.attribute() < a; });
    if (it == cs.end() || it->attribute() != attr) return nullptr;
    return &*it;
}

class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    bool done() const noexcept { return pos_ == text_.size(); }

    [[noreturn]] void fail(std::string_view what) const {
        throw ParseError(fmt::format("{} at offset {}", what, pos_));
    }

    bool consume(char c) noexcept {
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c) {
        if (!consume(c)) fail(fmt::format("expected '{}'", c));
    }

    char peek() const noexcept { return pos_ < text_.size() ? text_[pos_] : '\0'; }

    std::string name() {
        const auto start = pos_;
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' ||
                            (pos_ > start && ((c >= '0' && c <= '9') || c == '.' || c == '-'));
            if (!ok) break;
            ++pos_;
        }
        std::string out(text_.substr(start, pos_ - start));
        if (!valid_attribute_name(out)) fail("invalid attribute name");
        return out;
    }

    double number() {
        double v = 0;
        const char *first = text_.data() + pos_;
        const char *last = text_.data() + text_.size();
        // from_chars accepts "inf"/"nan"; only digits, sign and dot may start a number here
        const char c = peek();
        if (!((c >= '0' && c <= '9') || c == '-' || c == '.')) fail("expected number");
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc{} || !std::isfinite(v)) fail("invalid number");
        pos_ += static_cast<std::size_t>(ptr - first);
        return v;
    }

    std::string quoted() {
        expect('"');
        std::string out;
        while (true) {
            if (pos_ >= text_.size()) fail("unterminated text value");
            const char c = text_[pos_++];
            if (c == '"') break;
            if (c == '\\') {
                if (pos_ >= text_.size()) fail("dangling escape");
                const char e = text_[pos_++];
                if (e != '"' && e != '\\') fail("invalid escape");
                out.push_back(e);
            } else {
                out.push_back(c);
            }
        }
        try {
            check_text(out);
        } catch (const ModelError &e) {
            fail(e.what());
        }
        return out;
    }

    std::optional<Bound> interval_bound(bool inclusive) {
        if (consume('*')) {
            if (inclusive) fail("unbounded side must be open");
            return std::nullopt;
        }
        return Bound{number(), inclusive};
    }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
};

Constraint parse_term(Parser &p) {
    auto attr = p.name();
    if (p.consume('=')) {
        const char c = p.peek();
        if (c == '"') return Constraint::equals(std::move(attr), p.quoted());
        if (c == '[' || c == '(') {
            p.consume(c);
            auto lo = p.interval_bound(c == '[');
            p.expect(',');
            // inclusivity of the upper side is only known at the closing bracket
            std::optional<double> hi_value;
            if (!p.consume('*')) hi_value = p.number();
            bool hi_incl = false;
            if (p.consume(']')) {
                hi_incl = true;
                if (!hi_value) p.fail("unbounded side must be open");
            } else {
                p.expect(')');
            }
            NumericRange r{lo, std::nullopt};
            if (hi_value) r.hi = Bound{*hi_value, hi_incl};
            return Constraint(std::move(attr), r);
        }
        return Constraint::equals(std::move(attr), p.number());
    }
    if (p.consume('<')) {
        if (p.consume('=')) return Constraint::less_equal(std::move(attr), p.number());
        return Constraint::less(std::move(attr), p.number());
    }
    if (p.consume('>')) {
        if (p.consume('=')) return Constraint::greater_equal(std::move(attr), p.number());
        return Constraint::greater(std::move(attr), p.number());
    }
    p.fail("expected operator");
}

} // namespace

AttributeValue AttributeValue::number(double v) {
    if (!std::isfinite(v)) throw ModelError("numeric value must be finite");
    return AttributeValue(normalize_zero(v));
}

AttributeValue AttributeValue::text(std::string v) {
    check_text(v);
    return AttributeValue(std::move(v));
}

bool NumericRange::contains(double x) const noexcept {
    if (lo && (x < lo->value || (x == lo->value && !lo->inclusive))) return false;
    if (hi && (x > hi->value || (x == hi->value && !hi->inclusive))) return false;
    return true;
}

bool NumericRange::empty() const noexcept {
    if (!lo || !hi) return false;
    if (lo->value > hi->value) return true;
    return lo->value == hi->value && !(lo->inclusive && hi->inclusive);
}

bool NumericRange::is_point() const noexcept {
    return lo && hi && lo->value == hi->value && lo->inclusive && hi->inclusive;
}

Constraint::Constraint(std::string attribute, Test test)
    : attribute_(std::move(attribute)), test_(std::move(test)) {
    check_attribute(attribute_);
    if (auto *r = std::get_if<NumericRange>(&test_)) {
        check_range(*r);
        if (r->lo) r->lo->value = normalize_zero(r->lo->value);
        if (r->hi) r->hi->value = normalize_zero(r->hi->value);
    } else {
        check_text(std::get<TextEquals>(test_).value);
    }
}

Constraint Constraint::equals(std::string attribute, double v) {
    return {std::move(attribute), NumericRange{Bound{v, true}, Bound{v, true}}};
}

Constraint Constraint::equals(std::string attribute, std::string v) {
    return {std::move(attribute), TextEquals{std::move(v)}};
}

Constraint Constraint::greater(std::string attribute, double v) {
    return {std::move(attribute), NumericRange{Bound{v, false}, std::nullopt}};
}

Constraint Constraint::greater_equal(std::string attribute, double v) {
    return {std::move(attribute), NumericRange{Bound{v, true}, std::nullopt}};
}

Constraint Constraint::less(std::string attribute, double v) {
    return {std::move(attribute), NumericRange{std::nullopt, Bound{v, false}}};
}

Constraint Constraint::less_equal(std::string attribute, double v) {
    return {std::move(attribute), NumericRange{std::nullopt, Bound{v, true}}};
}

Constraint Constraint::between(std::string attribute, double lo, bool lo_inclusive, double hi,
                               bool hi_inclusive) {
    return {std::move(attribute), NumericRange{Bound{lo, lo_inclusive}, Bound{hi, hi_inclusive}}};
}

bool Constraint::is_equality() const noexcept {
    if (is_text()) return true;
    return range()->is_point();
}

PublicationHeader &PublicationHeader::add(std::string attribute, AttributeValue value) {
    check_attribute(attribute);
    auto it = std::lower_bound(attrs_.begin(), attrs_.end(), attribute,
                               [](const Entry &e, const std::string &a) { return e.first < a; });
    if (it != attrs_.end() && it->first == attribute) {
        throw ModelError(fmt::format("duplicate attribute '{}'", attribute));
    }
    attrs_.emplace(it, std::move(attribute), std::move(value));
    return *this;
}

PublicationHeader &PublicationHeader::add(std::string attribute, double value) {
    return add(std::move(attribute), AttributeValue::number(value));
}

PublicationHeader &PublicationHeader::add(std::string attribute, std::string value) {
    return add(std::move(attribute), AttributeValue::text(std::move(value)));
}

const AttributeValue *PublicationHeader::find(std::string_view attribute) const noexcept {
    auto it = std::lower_bound(attrs_.begin(), attrs_.end(), attribute,
                               [](const Entry &e, std::string_view a) { return e.first < a; });
    if (it == attrs_.end() || it->first != attribute) return nullptr;
    return &it->second;
}

bool valid_attribute_name(std::string_view name) noexcept {
    if (name.empty() || name.size() > kMaxAttributeChars) return false;
    const auto first = name.front();
    if (!((first >= 'a' && first <= 'z') || (first >= 'A' && first <= 'Z') || first == '_')) {
        return false;
    }
    return std::all_of(name.begin(), name.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
               c == '_' || c == '.' || c == '-';
    });
}

bool eval_constraint(const Constraint &c, const AttributeValue &v) noexcept {
    if (const auto *r = c.range()) {
        return v.is_number() && r->contains(v.as_number());
    }
    return v.is_text() && v.as_text() == c.text()->value;
}

bool matches(const PublicationHeader &h, const Subscription &s) noexcept {
    for (const auto &c : s.constraints) {
        const auto *v = h.find(c.attribute());
        if (v == nullptr || !eval_constraint(c, *v)) return false;
    }
    return true;
}

bool covers_constraint(const Constraint &wide, const Constraint &narrow) {
    if (wide.attribute() != narrow.attribute()) {
        throw ModelError(fmt::format("covers_constraint on different attributes '{}' and '{}'",
                                     wide.attribute(), narrow.attribute()));
    }
    const auto *wr = wide.range();
    const auto *nr = narrow.range();
    if (wr && nr) return lower_covers(wr->lo, nr->lo) && upper_covers(wr->hi, nr->hi);
    if (!wr && !nr) return wide.text()->value == narrow.text()->value;
    return false;
}

bool covers(const Subscription &wide, const Subscription &narrow) noexcept {
    if (wide.constraints.size() > narrow.constraints.size()) return false;
    for (const auto &c : wide.constraints) {
        const auto *c2 = find_constraint(narrow.constraints, c.attribute());
        if (c2 == nullptr || !covers_constraint(c, *c2)) return false;
    }
    return true;
}

bool may_overlap(const Subscription &a, const Subscription &b) noexcept {
    for (const auto &c : a.constraints) {
        const auto *c2 = find_constraint(b.constraints, c.attribute());
        if (c2 == nullptr) continue;
        const auto *r1 = c.range();
        const auto *r2 = c2->range();
        if (r1 && r2) {
            NumericRange r{tighter_lower(r1->lo, r2->lo), tighter_upper(r1->hi, r2->hi)};
            if (r.empty()) return false;
        } else if (!r1 && !r2) {
            if (c.text()->value != c2->text()->value) return false;
        } else {
            return false;
        }
    }
    return true;
}

std::optional<Constraint> intersect(const Constraint &a, const Constraint &b) {
    if (a.attribute() != b.attribute()) {
        throw ModelError("intersect on different attributes");
    }
    const auto *r1 = a.range();
    const auto *r2 = b.range();
    if (r1 && r2) {
        NumericRange r{tighter_lower(r1->lo, r2->lo), tighter_upper(r1->hi, r2->hi)};
        if (r.empty()) return std::nullopt;
        return Constraint(a.attribute(), r);
    }
    if (!r1 && !r2 && a.text()->value == b.text()->value) return a;
    return std::nullopt;
}

Subscription canonicalize(Subscription s) {
    std::stable_sort(s.constraints.begin(), s.constraints.end(),
                     [](const Constraint &x, const Constraint &y) { return x.attribute() < y.attribute(); });
    std::vector<Constraint> merged;
    merged.reserve(s.constraints.size());
    for (auto &c : s.constraints) {
        if (!merged.empty() && merged.back().attribute() == c.attribute()) {
            auto both = intersect(merged.back(), c);
            if (!both) {
                throw EmptyConstraint(fmt::format("constraints on '{}' cannot all hold", c.attribute()));
            }
            merged.back() = std::move(*both);
        } else {
            merged.push_back(std::move(c));
        }
    }
    s.constraints = std::move(merged);
    return s;
}

bool is_canonical(const Subscription &s) noexcept {
    for (std::size_t i = 1; i < s.constraints.size(); ++i) {
        if (!(s.constraints[i - 1].attribute() < s.constraints[i].attribute())) return false;
    }
    return true;
}

std::string format_number(double v) {
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), normalize_zero(v));
    return {buf.data(), ptr};
}

std::string format_text(std::string_view v) {
    std::string out;
    out.reserve(v.size() + 2);
    out.push_back('"');
    for (char c : v) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string serialize(const Constraint &c) {
    if (const auto *t = c.text()) return c.attribute() + "=" + format_text(t->value);
    const auto &r = *c.range();
    if (r.is_point()) return c.attribute() + "=" + format_number(r.lo->value);
    if (r.lo && !r.hi) {
        return c.attribute() + (r.lo->inclusive ? ">=" : ">") + format_number(r.lo->value);
    }
    if (!r.lo && r.hi) {
        return c.attribute() + (r.hi->inclusive ? "<=" : "<") + format_number(r.hi->value);
    }
    std::string out = c.attribute() + "=";
    out += r.lo ? (r.lo->inclusive ? "[" : "(") + format_number(r.lo->value) : std::string("(*");
    out += ",";
    out += r.hi ? format_number(r.hi->value) + (r.hi->inclusive ? "]" : ")") : std::string("*)");
    return out;
}

std::string serialize(const Subscription &s) {
    std::string out;
    for (std::size_t i = 0; i < s.constraints.size(); ++i) {
        if (i) out.push_back('&');
        out += serialize(s.constraints[i]);
    }
    return out;
}

std::string serialize(const PublicationHeader &h) {
    std::string out;
    for (std::size_t i = 0; i < h.entries().size(); ++i) {
        const auto &[name, value] = h.entries()[i];
        if (i) out.push_back('&');
        out += name;
        out.push_back('=');
        out += value.is_number() ? format_number(value.as_number()) : format_text(value.as_text());
    }
    return out;
}

Subscription parse_subscription(std::string_view text) {
    Subscription s;
    if (text.empty()) return s;
    Parser p(text);
    try {
        do {
            s.constraints.push_back(parse_term(p));
        } while (p.consume('&'));
    } catch (const ParseError &) {
        throw;
    } catch (const ModelError &e) {
        // EmptyConstraint from a single malformed term is a format problem here
        throw ParseError(e.what());
    }
    if (!p.done()) p.fail("trailing characters");
    return s;
}

PublicationHeader parse_header(std::string_view text) {
    PublicationHeader h;
    Parser p(text);
    try {
        do {
            auto attr = p.name();
            p.expect('=');
            if (p.peek() == '"') {
                h.add(std::move(attr), AttributeValue::text(p.quoted()));
            } else {
                h.add(std::move(attr), AttributeValue::number(p.number()));
            }
        } while (p.consume('&'));
    } catch (const ParseError &) {
        throw;
    } catch (const ModelError &e) {
        throw ParseError(e.what());
    }
    if (!p.done()) p.fail("trailing characters");
    if (h.size() > kMaxHeaderAttrs) throw ParseError("header has more than 64 attributes");
    if (serialize(h) != text) throw ParseError("header text is not canonical");
    return h;
}

void validate_header(const PublicationHeader &h) {
    if (h.empty() || h.size() > kMaxHeaderAttrs) {
        throw ModelError(fmt::format("header must carry 1..64 attributes, has {}", h.size()));
    }
}

} // namespace scbr
