#pragma once

#include "scbr/crypto.hpp"

#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

namespace scbr::wire {

using crypto::Bytes;

/// Decoding failure; field() names the offending JSON key ("t" for the type tag,
/// "line" when the text is not a JSON object at all).
class FrameError : public std::runtime_error {
public:
    FrameError(std::string field, const std::string &what)
        : std::runtime_error(what), field_(std::move(field)) {}

    const std::string &field() const noexcept { return field_; }

private:
    std::string field_;
};

/// client -> publisher: ct is the asymmetric envelope of the subscription text.
struct SubReq {
    std::string client;
    std::string reply;
    Bytes ct;
    friend bool operator==(const SubReq &, const SubReq &) = default;
};

/// publisher -> router: ct is the symmetric envelope (IV-prefixed) of the
/// canonical subscription; sig covers sub, client, reply and ct.
struct SubReg {
    std::string sub;
    std::string client;
    std::string reply;
    Bytes ct;
    Bytes sig;
    friend bool operator==(const SubReg &, const SubReg &) = default;
};

struct Unsub {
    std::string sub;
    Bytes sig;
    friend bool operator==(const Unsub &, const Unsub &) = default;
};

/// hdr is the symmetric envelope of the canonical header; payload is opaque.
struct Pub {
    std::string pub;
    Bytes hdr;
    Bytes payload;
    friend bool operator==(const Pub &, const Pub &) = default;
};

struct Deliver {
    std::string pub;
    Bytes payload;
    friend bool operator==(const Deliver &, const Deliver &) = default;
};

struct Ack {
    std::string ref;
    std::string msg;
    friend bool operator==(const Ack &, const Ack &) = default;
};

struct Err {
    std::string ref;
    std::string msg;
    friend bool operator==(const Err &, const Err &) = default;
};

using Record = std::variant<SubReq, SubReg, Unsub, Pub, Deliver, Ack, Err>;

/// One JSON object on one line, without the trailing newline.
std::string encode_frame(const Record &r);

/// Accepts a line with or without its "\n" / "\r\n" terminator.
Record decode_frame(std::string_view line);

std::string_view type_tag(const Record &r) noexcept;

/// Messages covered by the publisher's signature.
Bytes subreg_signed_bytes(std::string_view sub, std::string_view client, std::string_view reply,
                          std::string_view ct);
Bytes unsub_signed_bytes(std::string_view sub);

/// Publisher-side builders: seal under the router key and sign.
SubReg make_subreg(const crypto::SymKey &sk, const crypto::PrivateKey &signer, std::string sub,
                   std::string client, std::string reply, std::string_view subscription_text);
Unsub make_unsub(const crypto::PrivateKey &signer, std::string sub);
Pub make_pub(const crypto::SymKey &sk, std::string pub, std::string_view header_text, Bytes payload);

} // namespace scbr::wire
