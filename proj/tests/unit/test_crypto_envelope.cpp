#include <doctest.h>

#include "scbr/crypto.hpp"
#include "scbr/model.hpp"
#include "scbr/wire.hpp"

#include <random>

using namespace scbr;
using namespace scbr::crypto;

namespace {

const KeyPair &publisher_keys() {
    static const KeyPair k = KeyPair::generate();
    return k;
}

const KeyPair &other_keys() {
    static const KeyPair k = KeyPair::generate();
    return k;
}

Bytes flip_bit(Bytes b, std::size_t bit) {
    b[bit / 8] = static_cast<char>(b[bit / 8] ^ (1 << (bit % 8)));
    return b;
}

const std::string kSubText = "price<50&symbol=\"HAL\"";

} // namespace

TEST_CASE("symmetric sealing") {
    const auto k = SymKey::generate();
    const auto env = sym_seal(k, kSubText);
    CHECK(env.iv.size() == kIvBytes);
    CHECK(env.ct.size() == kSubText.size());
    CHECK(sym_open(k, env) == kSubText);

    const auto again = sym_seal(k, kSubText);
    CHECK(again.iv != env.iv);
    CHECK(again.ct != env.ct);

    auto bad = env;
    bad.iv.pop_back();
    CHECK_THROWS_AS(sym_open(k, bad), MalformedEnvelope);
    CHECK_THROWS_AS(CipherEnvelope::from_bytes(Scheme::Sym, "short"), MalformedEnvelope);
    CHECK(CipherEnvelope::from_bytes(Scheme::Sym, env.to_bytes()) == env);
    CHECK(sym_open(k, sym_seal(k, "")).empty());
}

TEST_CASE("opening under the wrong key yields text the subscription parser rejects") {
    const auto k = SymKey::generate();
    int rejected = 0;
    for (int i = 0; i < 200; ++i) {
        const auto garbage = sym_open(SymKey::generate(), sym_seal(k, kSubText));
        CHECK(garbage != kSubText);
        try {
            parse_subscription(garbage);
        } catch (const ParseError &) {
            ++rejected;
        }
    }
    CHECK(rejected == 200);
}

TEST_CASE("asymmetric sealing, direct and hybrid") {
    const auto &kp = publisher_keys();
    const std::string small(100, 's');
    const auto env = asym_seal(kp.public_key, small);
    CHECK(env.ct.size() == 1 + 256);
    CHECK(asym_open(kp.private_key, env) == small);

    const std::string large(1024, 'L');
    const auto henv = asym_seal(kp.public_key, large);
    CHECK(henv.ct.size() > 1024);
    CHECK(asym_open(kp.private_key, henv) == large);

    // capacity boundary
    for (std::size_t n : {kOaepCapacity - 1, kOaepCapacity, kOaepCapacity + 1}) {
        const std::string pt(n, 'b');
        CHECK(asym_open(kp.private_key, asym_seal(kp.public_key, pt)) == pt);
    }
    CHECK_THROWS_AS(asym_open(other_keys().private_key, env), AuthError);
}

TEST_CASE("asymmetric envelopes reject a single flipped bit") {
    const auto &kp = publisher_keys();
    const auto env = asym_seal(kp.public_key, std::string(100, 'x'));
    std::mt19937_64 rng(3);
    for (int i = 0; i < 20; ++i) {
        // skip the layout byte; flip inside the RSA block
        const auto bit = 8 + rng() % (env.ct.size() * 8 - 8);
        auto bad = env;
        bad.ct = flip_bit(env.ct, bit);
        CHECK_THROWS_AS(asym_open(kp.private_key, bad), AuthError);
    }
    const auto henv = asym_seal(kp.public_key, std::string(2000, 'y'));
    for (std::size_t bit : {std::size_t{8 * 10}, henv.ct.size() * 8 - 1, (1 + 256 + 16 + 5) * 8 + std::size_t{3}}) {
        auto bad = henv;
        bad.ct = flip_bit(henv.ct, bit);
        CHECK_THROWS_AS(asym_open(kp.private_key, bad), AuthError);
    }
    CipherEnvelope truncated{Scheme::Asym, {}, "x", {}};
    CHECK_THROWS_AS(asym_open(kp.private_key, truncated), AuthError);
}

TEST_CASE("property: seal/open are inverses up to 1 MB") {
    const auto k = SymKey::generate();
    const auto &kp = publisher_keys();
    std::mt19937_64 rng(9);
    for (std::size_t n : {0u, 1u, 15u, 16u, 17u, 190u, 191u, 4096u, 65537u, 1u << 20}) {
        Bytes pt(n, '\0');
        for (auto &c : pt) c = static_cast<char>(rng());
        CHECK(sym_open(k, sym_seal(k, pt)) == pt);
        CHECK(asym_open(kp.private_key, asym_seal(kp.public_key, pt)) == pt);
    }
}

TEST_CASE("signatures") {
    const auto &kp = publisher_keys();
    const Bytes msg = "register me";
    const auto sig = sign(kp.private_key, msg);
    CHECK(sig.size() == 256);
    CHECK(verify(kp.public_key, msg, sig));
    CHECK_FALSE(verify(kp.public_key, flip_bit(msg, 3), sig));
    CHECK_FALSE(verify(other_keys().public_key, msg, sig));
    CHECK_FALSE(verify(kp.public_key, msg, flip_bit(sig, 100)));
    CHECK_FALSE(verify(kp.public_key, msg, ""));
}

TEST_CASE("signature covers the registration fields in order") {
    const auto &kp = publisher_keys();
    const auto sig = sign(kp.private_key, wire::subreg_signed_bytes("s1", "alice", "127.0.0.1:9000", "CT"));
    CHECK(verify(kp.public_key, wire::subreg_signed_bytes("s1", "alice", "127.0.0.1:9000", "CT"), sig));
    CHECK_FALSE(verify(kp.public_key, wire::subreg_signed_bytes("s2", "alice", "127.0.0.1:9000", "CT"), sig));
    CHECK_FALSE(verify(kp.public_key, wire::subreg_signed_bytes("s1", "mallory", "127.0.0.1:9000", "CT"), sig));
    CHECK_FALSE(verify(kp.public_key, wire::subreg_signed_bytes("s1", "alice", "10.0.0.1:9000", "CT"), sig));
    CHECK_FALSE(verify(kp.public_key, wire::subreg_signed_bytes("s1", "alice", "127.0.0.1:9000", "CX"), sig));
    // moving bytes across a field boundary changes the message
    CHECK_FALSE(verify(kp.public_key, wire::subreg_signed_bytes("s1a", "lice", "127.0.0.1:9000", "CT"), sig));
    CHECK_FALSE(verify(kp.public_key, wire::subreg_signed_bytes("alice", "s1", "127.0.0.1:9000", "CT"), sig));
    CHECK(wire::unsub_signed_bytes("s1") != wire::subreg_signed_bytes("s1", "", "", ""));
}

TEST_CASE("keys survive PEM round trips") {
    const auto &kp = publisher_keys();
    const auto pub = PublicKey::from_pem(kp.public_key.to_pem());
    const auto priv = PrivateKey::from_pem(kp.private_key.to_pem());
    CHECK(verify(pub, "m", sign(priv, "m")));
    CHECK(asym_open(priv, asym_seal(pub, "hello")) == "hello");
    CHECK_THROWS_AS(PublicKey::from_pem("not a key"), CryptoError);
    CHECK_THROWS_AS(SymKey::from_bytes("short"), CryptoError);
    const auto k = SymKey::generate();
    CHECK(SymKey::from_bytes(hex_decode(hex_encode(k.bytes()))) == k);
}

TEST_CASE("base64") {
    CHECK(base64_encode("") == "");
    CHECK(base64_encode("f") == "Zg==");
    CHECK(base64_encode("fo") == "Zm8=");
    CHECK(base64_encode("foobar") == "Zm9vYmFy");
    CHECK(base64_decode("Zm9vYmFy") == "foobar");
    CHECK(base64_decode("Zg==") == "f");
    CHECK(base64_decode("Zm8=") == "fo");
    CHECK(base64_decode("") == "");
    for (const char *bad : {"Zm9vYmF", "Zm9v YmFy", "Zm=vYmFy", "Zm9v\nYmFy", "Zg=", "====", "Zm9-YmFy"}) {
        CAPTURE(bad);
        CHECK_THROWS_AS(base64_decode(bad), std::invalid_argument);
    }
    std::mt19937_64 rng(1);
    for (int n = 0; n < 200; ++n) {
        Bytes b(static_cast<std::size_t>(n), '\0');
        for (auto &c : b) c = static_cast<char>(rng());
        REQUIRE(base64_decode(base64_encode(b)) == b);
    }
}

TEST_CASE("wire records round trip") {
    using namespace scbr::wire;
    const Bytes bin("\x00\x01\xff\n\"", 5);
    const std::vector<Record> records{
        SubReq{"alice", "127.0.0.1:7001", bin},
        SubReg{"s-1", "alice", "127.0.0.1:7001", bin, "SIG"},
        Unsub{"s-1", "SIG"},
        Pub{"p-1", bin, ""},
        Deliver{"p-1", bin},
        Ack{"s-1", ""},
        Err{"p-1", "format"},
    };
    for (const auto &r : records) {
        const auto line = encode_frame(r);
        CAPTURE(line);
        CHECK(line.find('\n') == std::string::npos);
        CHECK(decode_frame(line) == r);
        CHECK(decode_frame(line + "\n") == r);
        CHECK(decode_frame(line + "\r\n") == r);
    }
}

TEST_CASE("wire decoding errors name the field") {
    using namespace scbr::wire;
    auto field_of = [](std::string_view line) -> std::string {
        try {
            decode_frame(line);
        } catch (const FrameError &e) {
            return e.field();
        }
        return "<none>";
    };
    CHECK(field_of(R"({"t":"PUB","pub":"p","hdr":"Zm9vYmF","payload":""})") == "hdr");
    CHECK(field_of(R"({"t":"PUB","pub":"p","payload":""})") == "hdr");
    CHECK(field_of(R"({"t":"NOPE"})") == "t");
    CHECK(field_of(R"({"pub":"p"})") == "t");
    CHECK(field_of(R"({"t":"UNSUB","sub":5,"sig":""})") == "sub");
    CHECK(field_of(R"({"t":"UNSUB","sub":"","sig":""})") == "sub");
    CHECK(field_of("not json") == "line");
    CHECK(field_of("[1,2]") == "line");
    CHECK(field_of("") == "line");

    // keys are looked up by name, so order is irrelevant
    const auto a = decode_frame(R"({"t":"DELIVER","pub":"p9","payload":"Zm9v"})");
    const auto b = decode_frame(R"({"payload":"Zm9v","pub":"p9","t":"DELIVER"})");
    CHECK(a == b);
    CHECK(std::get<Deliver>(a).payload == "foo");
}
