#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

// OpenSSL handle, kept out of the public headers
struct evp_pkey_st;

namespace scbr::crypto {

/// Byte strings are carried in std::string throughout.
using Bytes = std::string;

class CryptoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Envelope bytes do not have the expected shape (wrong IV length, truncated blob).
class MalformedEnvelope : public CryptoError {
public:
    using CryptoError::CryptoError;
};

/// Asymmetric decryption or its integrity check failed.
class AuthError : public CryptoError {
public:
    using CryptoError::CryptoError;
};

inline constexpr std::size_t kSymKeyBytes = 16;
inline constexpr std::size_t kIvBytes = 16;
inline constexpr int kRsaBits = 2048;
/// Largest plaintext sealed directly with RSA-OAEP(SHA-256) under a 2048-bit key.
inline constexpr std::size_t kOaepCapacity = 256 - 2 * 32 - 2;

/// AES-128 key shared by the publisher and the router enclave.
class SymKey {
public:
    static SymKey generate();
    static SymKey from_bytes(std::string_view raw);

    std::string_view bytes() const noexcept {
        return {reinterpret_cast<const char *>(key_.data()), key_.size()};
    }

    friend bool operator==(const SymKey &, const SymKey &) = default;

private:
    SymKey() = default;
    std::array<std::uint8_t, kSymKeyBytes> key_{};
};

class PublicKey {
public:
    static PublicKey from_pem(std::string_view pem);
    std::string to_pem() const;

    evp_pkey_st *get() const noexcept { return key_.get(); }

private:
    friend class PrivateKey;
    explicit PublicKey(std::shared_ptr<evp_pkey_st> k) : key_(std::move(k)) {}
    std::shared_ptr<evp_pkey_st> key_;
};

class PrivateKey {
public:
    static PrivateKey from_pem(std::string_view pem);
    std::string to_pem() const;
    PublicKey public_key() const;

    evp_pkey_st *get() const noexcept { return key_.get(); }

private:
    friend struct KeyPair;
    explicit PrivateKey(std::shared_ptr<evp_pkey_st> k) : key_(std::move(k)) {}
    std::shared_ptr<evp_pkey_st> key_;
};

struct KeyPair {
    PublicKey public_key;
    PrivateKey private_key;

    static KeyPair generate(int bits = kRsaBits);
};

enum class Scheme : std::uint8_t { Sym = 1, Asym = 2 };

struct CipherEnvelope {
    Scheme scheme = Scheme::Sym;
    Bytes iv; // Sym only
    Bytes ct;
    std::optional<Bytes> sig;

    /// Wire bytes: IV followed by ciphertext for Sym, the sealed blob for Asym.
    Bytes to_bytes() const;
    static CipherEnvelope from_bytes(Scheme scheme, std::string_view raw);

    friend bool operator==(const CipherEnvelope &, const CipherEnvelope &) = default;
};

Bytes random_bytes(std::size_t n);
Bytes sha256(std::string_view data);

/// AES-128-CTR with a fresh random IV.
CipherEnvelope sym_seal(const SymKey &k, std::string_view plaintext);
Bytes sym_open(const SymKey &k, const CipherEnvelope &env);

/// RSA-OAEP(SHA-256) for short plaintexts; longer ones get a one-shot AES key
/// and a body digest sealed under RSA, with the body under that key.
CipherEnvelope asym_seal(const PublicKey &pk, std::string_view plaintext);
Bytes asym_open(const PrivateKey &sk, const CipherEnvelope &env);

/// RSASSA-PKCS1-v1_5 over SHA-256.
Bytes sign(const PrivateKey &sk, std::string_view msg);
bool verify(const PublicKey &pk, std::string_view msg, std::string_view sig);

/// Unambiguous concatenation (4-byte big-endian length before each field), used
/// as the signed message for multi-field records.
Bytes length_prefixed(std::initializer_list<std::string_view> fields);

std::string base64_encode(std::string_view data);
/// Standard alphabet, padding required. Throws std::invalid_argument.
Bytes base64_decode(std::string_view text);

std::string hex_encode(std::string_view data);
/// Throws std::invalid_argument on odd length or non-hex characters.
Bytes hex_decode(std::string_view text);

} // namespace scbr::crypto
