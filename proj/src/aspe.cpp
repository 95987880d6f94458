#include "scbr/aspe.hpp"

#include "scbr/crypto.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace scbr::aspe {

namespace {

// distinguishes the code vector of a text attribute from a numeric one
constexpr std::uint64_t kTextTagMask = 0x9e3779b97f4a7c15ull;
constexpr double kTextCodeScale = static_cast<double>(1u << kTextCodeBits);

double unit(Rng &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(Rng &rng, double lo, double hi) { return lo + (hi - lo) * unit(rng); }

std::uint32_t be32(const std::string &d, std::size_t at) {
    return (std::uint32_t(std::uint8_t(d[at])) << 24) | (std::uint32_t(std::uint8_t(d[at + 1])) << 16) |
           (std::uint32_t(std::uint8_t(d[at + 2])) << 8) | std::uint32_t(std::uint8_t(d[at + 3]));
}

std::uint64_t text_tag(std::string_view attr) noexcept { return attribute_tag(attr) ^ kTextTagMask; }

EncodedConstraint encode(const AspeKey &k, std::uint64_t tag, Direction dir, bool inclusive, double t, Rng &rng) {
    EncodedConstraint c;
    c.attr = tag;
    c.dir = dir;
    c.inclusive = inclusive;
    if (dir != Direction::Present) c.v = k.m_inverse() * threshold_vector(t, dir, uniform(rng, 0.5, 2.0));
    return c;
}

} // namespace

std::size_t Bloom::popcount() const noexcept {
    std::size_t n = 0;
    for (auto w : words) n += static_cast<std::size_t>(std::popcount(w));
    return n;
}

Bloom bloom_token(std::string_view attr, std::string_view canonical_value) {
    std::string msg;
    msg.reserve(attr.size() + 1 + canonical_value.size());
    msg.append(attr);
    msg.push_back('\0');
    msg.append(canonical_value);
    const auto digest = crypto::sha256(msg);
    Bloom b;
    for (int i = 0; i < kBloomHashes; ++i) {
        const auto bit = be32(digest, 4 * static_cast<std::size_t>(i)) % kBloomBits;
        b.words[bit / 64] |= std::uint64_t{1} << (bit % 64);
    }
    return b;
}

Bloom bloom_token(std::string_view attr, const AttributeValue &v) {
    return v.is_text() ? bloom_token(attr, v.as_text()) : bloom_token(attr, format_number(v.as_number()));
}

std::uint64_t attribute_tag(std::string_view attr) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : attr) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

AspeKey AspeKey::generate(std::uint64_t seed) {
    Rng rng(seed);
    AspeKey k;
    for (;;) {
        for (int i = 0; i < kDim; ++i) {
            for (int j = 0; j < kDim; ++j) k.m_(i, j) = uniform(rng, -1.0, 1.0);
        }
        if (k.condition() > kMaxCondition) continue;
        k.m_inv_ = k.m_.inverse();
        if ((k.m_ * k.m_inv_ - Matrix::Identity()).cwiseAbs().rowwise().sum().maxCoeff() <= 1e-9) break;
    }
    for (int i = 0; i < 2; ++i) {
        const auto w = rng();
        for (int b = 0; b < 8; ++b) k.code_salt_.push_back(static_cast<char>(w >> (8 * b)));
    }
    return k;
}

AspeKey AspeKey::identity() {
    AspeKey k;
    k.code_salt_ = "identity";
    return k;
}

double AspeKey::condition() const {
    Eigen::JacobiSVD<Matrix> svd(m_);
    const auto &sv = svd.singularValues();
    return sv(kDim - 1) == 0.0 ? INFINITY : sv(0) / sv(kDim - 1);
}

void AspeKey::set_scale(const std::string &attr, double s) {
    int exp = 0;
    if (!(s > 0) || !std::isfinite(s) || std::frexp(s, &exp) != 0.5) {
        throw std::invalid_argument(fmt::format("scale for '{}' must be a positive power of two", attr));
    }
    scales_[attr] = s;
}

void AspeKey::fit_scale(const std::string &attr, double max_abs) {
    double s = 1.0;
    while (s < max_abs) s *= 2.0;
    set_scale(attr, s);
}

double AspeKey::scale(const std::string &attr) const {
    auto it = scales_.find(attr);
    return it == scales_.end() ? 1.0 : it->second;
}

std::uint32_t AspeKey::text_code(std::string_view attr, std::string_view value) const {
    std::string msg = code_salt_;
    msg.append(attr);
    msg.push_back('\0');
    msg.append(value);
    return be32(crypto::sha256(msg), 0) >> (32 - kTextCodeBits);
}

const Vector *EncodedPublication::find(std::uint64_t tag) const noexcept {
    for (const auto &[t, v] : vectors) {
        if (t == tag) return &v;
    }
    return nullptr;
}

Vector publication_vector(double x, Rng &rng) {
    return Vector(x, 1.0, uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
}

Vector threshold_vector(double t, Direction dir, double r) {
    Vector v(r, -r * t, 0.0, 0.0);
    return dir == Direction::Lt ? Vector(-v) : v;
}

EncodedPublication encrypt_pub(const AspeKey &k, const PublicationHeader &h, Rng &rng) {
    EncodedPublication ep;
    ep.vectors.reserve(h.size());
    for (const auto &[attr, value] : h.entries()) {
        ep.bloom.add(bloom_token(attr, value));
        if (value.is_number()) {
            const double x = value.as_number() / k.scale(attr);
            ep.vectors.emplace_back(attribute_tag(attr), k.m().transpose() * publication_vector(x, rng));
        } else {
            const double x = k.text_code(attr, value.as_text()) / kTextCodeScale;
            ep.vectors.emplace_back(text_tag(attr), k.m().transpose() * publication_vector(x, rng));
        }
    }
    std::sort(ep.vectors.begin(), ep.vectors.end(), [](const auto &a, const auto &b) { return a.first < b.first; });
    return ep;
}

EncodedSubscription encrypt_sub(const AspeKey &k, const Subscription &s, Rng &rng) {
    EncodedSubscription es;
    for (const auto &c : s.constraints) {
        const auto &attr = c.attribute();
        if (const auto *t = c.text()) {
            const double code = k.text_code(attr, t->value) / kTextCodeScale;
            es.constraints.push_back(encode(k, text_tag(attr), Direction::Gt, true, code, rng));
            es.constraints.push_back(encode(k, text_tag(attr), Direction::Lt, true, code, rng));
            es.tokens.push_back(bloom_token(attr, t->value));
            continue;
        }
        const auto &r = *c.range();
        const double scale = k.scale(attr);
        const auto tag = attribute_tag(attr);
        if (r.lo) es.constraints.push_back(encode(k, tag, Direction::Gt, r.lo->inclusive, r.lo->value / scale, rng));
        if (r.hi) es.constraints.push_back(encode(k, tag, Direction::Lt, r.hi->inclusive, r.hi->value / scale, rng));
        if (!r.lo && !r.hi) es.constraints.push_back(encode(k, tag, Direction::Present, false, 0.0, rng));
        if (r.is_point()) es.tokens.push_back(bloom_token(attr, format_number(r.lo->value)));
    }
    for (const auto &t : es.tokens) es.token_union.add(t);
    return es;
}

bool prefilter(const EncodedPublication &ep, const std::vector<Bloom> &tokens) noexcept {
    return std::all_of(tokens.begin(), tokens.end(), [&](const Bloom &t) { return ep.bloom.contains(t); });
}

bool eval(const EncodedConstraint &c, const Vector &u) noexcept {
    if (c.dir == Direction::Present) return true;
    const double p = u.dot(c.v);
    return c.inclusive ? p >= -epsilon(p) : p > epsilon(p);
}

bool match(const EncodedPublication &ep, const EncodedSubscription &es) noexcept {
    // the union holds exactly the bits of all tokens
    if (!ep.bloom.contains(es.token_union)) return false;
    for (const auto &c : es.constraints) {
        const auto *u = ep.find(c.attr);
        if (!u || !eval(c, *u)) return false;
    }
    return true;
}

void AspeMatcher::add(EncodedSubscription es, ClientRef who) {
    subs_.push_back(std::move(es));
    owners_.push_back(std::move(who));
}

bool AspeMatcher::remove(std::string_view sub_id) {
    for (std::size_t i = 0; i < owners_.size(); ++i) {
        if (owners_[i].sub_id != sub_id) continue;
        std::swap(subs_[i], subs_.back());
        std::swap(owners_[i], owners_.back());
        subs_.pop_back();
        owners_.pop_back();
        return true;
    }
    return false;
}

std::vector<ClientRef> AspeMatcher::match(const EncodedPublication &ep) const {
    std::vector<ClientRef> out;
    for (std::size_t i = 0; i < subs_.size(); ++i) {
        if (aspe::match(ep, subs_[i])) out.push_back(owners_[i]);
    }
    return out;
}

std::size_t AspeMatcher::footprint_bytes() const noexcept {
    std::size_t total = 0;
    for (std::size_t i = 0; i < subs_.size(); ++i) {
        total += sizeof(EncodedSubscription) + subs_[i].constraints.size() * sizeof(EncodedConstraint) +
                 subs_[i].tokens.size() * sizeof(Bloom);
        total += kClientBytes + owners_[i].client_id.size() + owners_[i].sub_id.size();
    }
    return total;
}

} // namespace scbr::aspe
