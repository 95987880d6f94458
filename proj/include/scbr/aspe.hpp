#pragma once

#include "scbr/containment_index.hpp"
#include "scbr/model.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace scbr::aspe {

/// Vector dimension: value, constant, two padding coordinates.
inline constexpr int kDim = 4;
inline constexpr double kMaxCondition = 1e4;
inline constexpr int kBloomBits = 256;
inline constexpr int kBloomHashes = 4;
/// Text values are compared through a keyed code in [0, 2^kTextCodeBits).
inline constexpr int kTextCodeBits = 26;

using Matrix = Eigen::Matrix<double, kDim, kDim>;
using Vector = Eigen::Matrix<double, kDim, 1>;
using Rng = std::mt19937_64;

/// 256-bit Bloom filter, also used for single tokens (a token is the set of
/// its k bit positions).
struct Bloom {
    std::array<std::uint64_t, kBloomBits / 64> words{};

    void add(const Bloom &other) noexcept {
        for (std::size_t i = 0; i < words.size(); ++i) words[i] |= other.words[i];
    }
    bool contains(const Bloom &other) const noexcept {
        for (std::size_t i = 0; i < words.size(); ++i) {
            if ((words[i] & other.words[i]) != other.words[i]) return false;
        }
        return true;
    }
    std::size_t popcount() const noexcept;

    friend bool operator==(const Bloom &, const Bloom &) = default;
};

/// k positions from SHA-256(attr || 0x00 || canonical value).
Bloom bloom_token(std::string_view attr, std::string_view canonical_value);

/// Token for a header value: text as-is, numbers in canonical number format.
Bloom bloom_token(std::string_view attr, const AttributeValue &v);

/// Attribute names are carried as a 64-bit FNV-1a digest.
std::uint64_t attribute_tag(std::string_view attr) noexcept;

class AspeKey {
public:
    /// Uniform entries in [-1, 1), redrawn until the condition number is at
    /// most kMaxCondition. Deterministic in the seed.
    static AspeKey generate(std::uint64_t seed);

    /// M = I. Test hook: ciphertext vectors equal the plaintext vectors.
    static AspeKey identity();

    const Matrix &m() const noexcept { return m_; }
    const Matrix &m_inverse() const noexcept { return m_inv_; }
    double condition() const;

    /// Values of `attr` are divided by `s` (a power of two, so exactly) before
    /// encoding. Pick s near the largest magnitude the attribute takes; this
    /// keeps the value and constant coordinates comparable in size.
    void set_scale(const std::string &attr, double s);
    /// Sets the scale to the smallest power of two >= max_abs (and >= 1).
    void fit_scale(const std::string &attr, double max_abs);
    double scale(const std::string &attr) const;

    /// Keyed code for a text value, as an integer below 2^kTextCodeBits.
    std::uint32_t text_code(std::string_view attr, std::string_view value) const;

private:
    AspeKey() = default;

    Matrix m_ = Matrix::Identity();
    Matrix m_inv_ = Matrix::Identity();
    std::string code_salt_;
    std::unordered_map<std::string, double> scales_;
};

enum class Direction : std::uint8_t {
    Gt,      // x > t (or >= when inclusive)
    Lt,      // x < t (or <=)
    Present, // any value; only the attribute vector must exist
};

struct EncodedConstraint {
    std::uint64_t attr = 0;
    Direction dir = Direction::Present;
    bool inclusive = false;
    Vector v = Vector::Zero();
};

struct EncodedSubscription {
    std::vector<EncodedConstraint> constraints;
    /// One token per equality constraint, and their union.
    std::vector<Bloom> tokens;
    Bloom token_union;
};

struct EncodedPublication {
    /// Sorted by tag. Text attributes carry their code as the value.
    std::vector<std::pair<std::uint64_t, Vector>> vectors;
    Bloom bloom;

    const Vector *find(std::uint64_t tag) const noexcept;
};

/// Plain vector for a publication value: (x, 1, rho1, rho2).
Vector publication_vector(double x, Rng &rng);
/// Plain vector for a threshold: r * (1, -t, 0, 0) for Gt, negated for Lt.
Vector threshold_vector(double t, Direction dir, double r);

EncodedPublication encrypt_pub(const AspeKey &k, const PublicationHeader &h, Rng &rng);

/// Requires a canonical subscription.
EncodedSubscription encrypt_sub(const AspeKey &k, const Subscription &s, Rng &rng);

/// False only when some equality token is missing from the publication's
/// filter, which rules the subscription out.
bool prefilter(const EncodedPublication &ep, const std::vector<Bloom> &tokens) noexcept;

/// Tolerance for the sign test on a scalar product p.
inline double epsilon(double p) noexcept { return 1e-9 * (1.0 + (p < 0 ? -p : p)); }

bool eval(const EncodedConstraint &c, const Vector &u) noexcept;

bool match(const EncodedPublication &ep, const EncodedSubscription &es) noexcept;

/// Linear scan over encrypted subscriptions, as the baseline is measured.
class AspeMatcher {
public:
    void add(EncodedSubscription es, ClientRef who);
    bool remove(std::string_view sub_id);
    /// Matching owners in no particular order.
    std::vector<ClientRef> match(const EncodedPublication &ep) const;

    std::size_t size() const noexcept { return subs_.size(); }
    /// Accounted like the containment index: payload bytes plus owner strings.
    std::size_t footprint_bytes() const noexcept;

private:
    std::vector<EncodedSubscription> subs_;
    std::vector<ClientRef> owners_;
};

} // namespace scbr::aspe
