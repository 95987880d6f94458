#include "scbr/crypto.hpp"

#include <algorithm>
#include <cstring>
#include <fmt/format.h>
#include <openssl/bio.h>
#include <openssl/crypto.h>
#include <openssl/err.h>
#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/rand.h>
#include <openssl/rsa.h>

namespace scbr::crypto {

namespace {

constexpr std::uint8_t kAsymDirect = 0x01;
constexpr std::uint8_t kAsymHybrid = 0x02;
constexpr std::size_t kRsaBlockBytes = 256;
constexpr std::size_t kDigestBytes = 32;

[[noreturn]] void openssl_fail(std::string_view what) {
    const auto code = ERR_get_error();
    char buf[256] = {0};
    if (code) ERR_error_string_n(code, buf, sizeof(buf));
    ERR_clear_error();
    throw CryptoError(fmt::format("{}: {}", what, code ? buf : "unknown error"));
}

struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX *c) const noexcept { EVP_CIPHER_CTX_free(c); }
};
struct PkeyCtxDeleter {
    void operator()(EVP_PKEY_CTX *c) const noexcept { EVP_PKEY_CTX_free(c); }
};
struct MdCtxDeleter {
    void operator()(EVP_MD_CTX *c) const noexcept { EVP_MD_CTX_free(c); }
};
struct BioDeleter {
    void operator()(BIO *b) const noexcept { BIO_free(b); }
};

std::shared_ptr<EVP_PKEY> wrap(EVP_PKEY *k) { return {k, EVP_PKEY_free}; }

const unsigned char *u8(std::string_view s) { return reinterpret_cast<const unsigned char *>(s.data()); }
unsigned char *u8(Bytes &s) { return reinterpret_cast<unsigned char *>(s.data()); }

const EVP_CIPHER *aes_128_ctr() {
    static const EVP_CIPHER *cipher = [] {
        auto *c = EVP_CIPHER_fetch(nullptr, "AES-128-CTR", nullptr);
        if (!c) openssl_fail("fetch AES-128-CTR");
        return c;
    }();
    return cipher;
}

// One context per thread; the key schedule is redone only when the key changes.
struct CtrState {
    std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter> ctx;
    Bytes key;

    ~CtrState() { OPENSSL_cleanse(key.data(), key.size()); }
};

Bytes aes_ctr(std::string_view key, std::string_view iv, std::string_view in) {
    thread_local CtrState st;
    if (!st.ctx) {
        st.ctx.reset(EVP_CIPHER_CTX_new());
        if (!st.ctx) openssl_fail("EVP_CIPHER_CTX_new");
    }
    const bool rekey = st.key != key;
    if (EVP_EncryptInit_ex2(st.ctx.get(), rekey ? aes_128_ctr() : nullptr, rekey ? u8(key) : nullptr, u8(iv),
                            nullptr) != 1) {
        st.key.clear();
        openssl_fail("AES-CTR init");
    }
    if (rekey) {
        OPENSSL_cleanse(st.key.data(), st.key.size());
        st.key.assign(key);
    }
    Bytes out(in.size(), '\0');
    int len = 0;
    if (!in.empty() &&
        EVP_EncryptUpdate(st.ctx.get(), u8(out), &len, u8(in), static_cast<int>(in.size())) != 1) {
        openssl_fail("AES-CTR update");
    }
    int tail = 0;
    if (EVP_EncryptFinal_ex(st.ctx.get(), u8(out) + len, &tail) != 1) openssl_fail("AES-CTR final");
    return out;
}

std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter> oaep_ctx(EVP_PKEY *key, bool encrypt) {
    std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter> ctx(EVP_PKEY_CTX_new(key, nullptr));
    if (!ctx) openssl_fail("EVP_PKEY_CTX_new");
    const int init = encrypt ? EVP_PKEY_encrypt_init(ctx.get()) : EVP_PKEY_decrypt_init(ctx.get());
    if (init != 1 || EVP_PKEY_CTX_set_rsa_padding(ctx.get(), RSA_PKCS1_OAEP_PADDING) != 1 ||
        EVP_PKEY_CTX_set_rsa_oaep_md(ctx.get(), EVP_sha256()) != 1 ||
        EVP_PKEY_CTX_set_rsa_mgf1_md(ctx.get(), EVP_sha256()) != 1) {
        openssl_fail("RSA-OAEP setup");
    }
    return ctx;
}

Bytes oaep_encrypt(EVP_PKEY *key, std::string_view pt) {
    auto ctx = oaep_ctx(key, true);
    std::size_t len = 0;
    if (EVP_PKEY_encrypt(ctx.get(), nullptr, &len, u8(pt), pt.size()) != 1) openssl_fail("RSA-OAEP size");
    Bytes out(len, '\0');
    if (EVP_PKEY_encrypt(ctx.get(), u8(out), &len, u8(pt), pt.size()) != 1) openssl_fail("RSA-OAEP encrypt");
    out.resize(len);
    return out;
}

Bytes oaep_decrypt(EVP_PKEY *key, std::string_view ct) {
    auto ctx = oaep_ctx(key, false);
    std::size_t len = 0;
    if (EVP_PKEY_decrypt(ctx.get(), nullptr, &len, u8(ct), ct.size()) != 1) {
        ERR_clear_error();
        throw AuthError("RSA-OAEP decryption failed");
    }
    Bytes out(len, '\0');
    if (EVP_PKEY_decrypt(ctx.get(), u8(out), &len, u8(ct), ct.size()) != 1) {
        ERR_clear_error();
        throw AuthError("RSA-OAEP decryption failed");
    }
    out.resize(len);
    return out;
}

bool in_alphabet(char c) noexcept {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+' ||
           c == '/';
}

} // namespace

SymKey SymKey::generate() {
    SymKey k;
    if (RAND_bytes(k.key_.data(), static_cast<int>(k.key_.size())) != 1) openssl_fail("RAND_bytes");
    return k;
}

SymKey SymKey::from_bytes(std::string_view raw) {
    if (raw.size() != kSymKeyBytes) {
        throw CryptoError(fmt::format("symmetric key must be {} bytes, got {}", kSymKeyBytes, raw.size()));
    }
    SymKey k;
    std::memcpy(k.key_.data(), raw.data(), raw.size());
    return k;
}

PublicKey PublicKey::from_pem(std::string_view pem) {
    std::unique_ptr<BIO, BioDeleter> bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
    EVP_PKEY *k = PEM_read_bio_PUBKEY(bio.get(), nullptr, nullptr, nullptr);
    if (!k) openssl_fail("reading public key PEM");
    return PublicKey(wrap(k));
}

std::string PublicKey::to_pem() const {
    std::unique_ptr<BIO, BioDeleter> bio(BIO_new(BIO_s_mem()));
    if (PEM_write_bio_PUBKEY(bio.get(), key_.get()) != 1) openssl_fail("writing public key PEM");
    char *data = nullptr;
    const long len = BIO_get_mem_data(bio.get(), &data);
    return {data, static_cast<std::size_t>(len)};
}

PrivateKey PrivateKey::from_pem(std::string_view pem) {
    std::unique_ptr<BIO, BioDeleter> bio(BIO_new_mem_buf(pem.data(), static_cast<int>(pem.size())));
    EVP_PKEY *k = PEM_read_bio_PrivateKey(bio.get(), nullptr, nullptr, nullptr);
    if (!k) openssl_fail("reading private key PEM");
    return PrivateKey(wrap(k));
}

std::string PrivateKey::to_pem() const {
    std::unique_ptr<BIO, BioDeleter> bio(BIO_new(BIO_s_mem()));
    if (PEM_write_bio_PrivateKey(bio.get(), key_.get(), nullptr, nullptr, 0, nullptr, nullptr) != 1) {
        openssl_fail("writing private key PEM");
    }
    char *data = nullptr;
    const long len = BIO_get_mem_data(bio.get(), &data);
    return {data, static_cast<std::size_t>(len)};
}

PublicKey PrivateKey::public_key() const {
    // round trip through DER to get a key object holding only the public half
    unsigned char *der = nullptr;
    const int len = i2d_PUBKEY(key_.get(), &der);
    if (len <= 0) openssl_fail("extracting public key");
    const unsigned char *p = der;
    EVP_PKEY *pub = d2i_PUBKEY(nullptr, &p, len);
    OPENSSL_free(der);
    if (!pub) openssl_fail("extracting public key");
    return PublicKey(wrap(pub));
}

KeyPair KeyPair::generate(int bits) {
    EVP_PKEY *k = EVP_PKEY_Q_keygen(nullptr, nullptr, "RSA", static_cast<size_t>(bits));
    if (!k) openssl_fail("RSA key generation");
    PrivateKey priv(wrap(k));
    auto pub = priv.public_key();
    return KeyPair{std::move(pub), std::move(priv)};
}

Bytes CipherEnvelope::to_bytes() const {
    if (scheme == Scheme::Sym) return iv + ct;
    return ct;
}

CipherEnvelope CipherEnvelope::from_bytes(Scheme scheme, std::string_view raw) {
    CipherEnvelope env;
    env.scheme = scheme;
    if (scheme == Scheme::Sym) {
        if (raw.size() < kIvBytes) throw MalformedEnvelope("symmetric envelope shorter than its IV");
        env.iv = Bytes(raw.substr(0, kIvBytes));
        env.ct = Bytes(raw.substr(kIvBytes));
    } else {
        env.ct = Bytes(raw);
    }
    return env;
}

Bytes random_bytes(std::size_t n) {
    Bytes out(n, '\0');
    if (n && RAND_bytes(u8(out), static_cast<int>(n)) != 1) openssl_fail("RAND_bytes");
    return out;
}

Bytes sha256(std::string_view data) {
    Bytes out(kDigestBytes, '\0');
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), u8(out), &len, EVP_sha256(), nullptr) != 1) {
        openssl_fail("SHA-256");
    }
    return out;
}

CipherEnvelope sym_seal(const SymKey &k, std::string_view plaintext) {
    CipherEnvelope env;
    env.scheme = Scheme::Sym;
    env.iv = random_bytes(kIvBytes);
    env.ct = aes_ctr(k.bytes(), env.iv, plaintext);
    return env;
}

Bytes sym_open(const SymKey &k, const CipherEnvelope &env) {
    if (env.scheme != Scheme::Sym) throw MalformedEnvelope("not a symmetric envelope");
    if (env.iv.size() != kIvBytes) {
        throw MalformedEnvelope(fmt::format("IV must be {} bytes, got {}", kIvBytes, env.iv.size()));
    }
    // CTR decryption is the same keystream XOR
    return aes_ctr(k.bytes(), env.iv, env.ct);
}

CipherEnvelope asym_seal(const PublicKey &pk, std::string_view plaintext) {
    CipherEnvelope env;
    env.scheme = Scheme::Asym;
    if (plaintext.size() <= kOaepCapacity) {
        env.ct.push_back(static_cast<char>(kAsymDirect));
        env.ct += oaep_encrypt(pk.get(), plaintext);
        return env;
    }
    const auto body_key = random_bytes(kSymKeyBytes);
    const auto iv = random_bytes(kIvBytes);
    env.ct.push_back(static_cast<char>(kAsymHybrid));
    env.ct += oaep_encrypt(pk.get(), body_key + sha256(plaintext));
    env.ct += iv;
    env.ct += aes_ctr(body_key, iv, plaintext);
    return env;
}

Bytes asym_open(const PrivateKey &sk, const CipherEnvelope &env) {
    if (env.scheme != Scheme::Asym) throw MalformedEnvelope("not an asymmetric envelope");
    const std::string_view raw = env.ct;
    if (raw.size() < 1 + kRsaBlockBytes) throw AuthError("asymmetric envelope truncated");
    const auto mode = static_cast<std::uint8_t>(raw[0]);
    const auto block = raw.substr(1, kRsaBlockBytes);
    if (mode == kAsymDirect) {
        if (raw.size() != 1 + kRsaBlockBytes) throw AuthError("asymmetric envelope has trailing bytes");
        return oaep_decrypt(sk.get(), block);
    }
    if (mode != kAsymHybrid || raw.size() < 1 + kRsaBlockBytes + kIvBytes) {
        throw AuthError("asymmetric envelope has an unknown layout");
    }
    const auto inner = oaep_decrypt(sk.get(), block);
    if (inner.size() != kSymKeyBytes + kDigestBytes) throw AuthError("hybrid key block has wrong size");
    const auto iv = raw.substr(1 + kRsaBlockBytes, kIvBytes);
    const auto body = raw.substr(1 + kRsaBlockBytes + kIvBytes);
    auto plaintext = aes_ctr(std::string_view(inner).substr(0, kSymKeyBytes), iv, body);
    if (sha256(plaintext) != std::string_view(inner).substr(kSymKeyBytes)) {
        throw AuthError("hybrid body digest mismatch");
    }
    return plaintext;
}

Bytes sign(const PrivateKey &sk, std::string_view msg) {
    std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestSignInit(ctx.get(), nullptr, EVP_sha256(), nullptr, sk.get()) != 1) {
        openssl_fail("sign init");
    }
    std::size_t len = 0;
    if (EVP_DigestSign(ctx.get(), nullptr, &len, u8(msg), msg.size()) != 1) openssl_fail("sign size");
    Bytes sig(len, '\0');
    if (EVP_DigestSign(ctx.get(), u8(sig), &len, u8(msg), msg.size()) != 1) openssl_fail("sign");
    sig.resize(len);
    return sig;
}

bool verify(const PublicKey &pk, std::string_view msg, std::string_view sig) {
    std::unique_ptr<EVP_MD_CTX, MdCtxDeleter> ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, EVP_sha256(), nullptr, pk.get()) != 1) {
        openssl_fail("verify init");
    }
    const int rc = EVP_DigestVerify(ctx.get(), u8(sig), sig.size(), u8(msg), msg.size());
    ERR_clear_error();
    return rc == 1;
}

Bytes length_prefixed(std::initializer_list<std::string_view> fields) {
    Bytes out;
    for (auto f : fields) {
        const auto n = static_cast<std::uint32_t>(f.size());
        for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((n >> shift) & 0xFF));
        out += f;
    }
    return out;
}

std::string base64_encode(std::string_view data) {
    std::string out(4 * ((data.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()), u8(data),
                                  static_cast<int>(data.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

Bytes base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
    for (std::size_t i = 0; i + pad < text.size(); ++i) {
        if (!in_alphabet(text[i])) throw std::invalid_argument("invalid base64 character");
    }
    if (text.empty()) return {};
    Bytes out(3 * text.size() / 4, '\0');
    const int n = EVP_DecodeBlock(u8(out), u8(text), static_cast<int>(text.size()));
    if (n < 0) throw std::invalid_argument("invalid base64");
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

std::string hex_encode(std::string_view data) {
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (unsigned char c : data) {
        out.push_back(kDigits[c >> 4]);
        out.push_back(kDigits[c & 0xF]);
    }
    return out;
}

Bytes hex_decode(std::string_view text) {
    if (text.size() % 2 != 0) throw std::invalid_argument("hex string has odd length");
    auto nibble = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::invalid_argument("invalid hex character");
    };
    Bytes out;
    out.reserve(text.size() / 2);
    for (std::size_t i = 0; i < text.size(); i += 2) {
        out.push_back(static_cast<char>(nibble(text[i]) * 16 + nibble(text[i + 1])));
    }
    return out;
}

} // namespace scbr::crypto
