#include "scbr/wire.hpp"

#include <fmt/format.h>
#include <json.hpp>

namespace scbr::wire {

namespace {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string text_field(const Json &j, const char *key) {
    auto it = j.find(key);
    if (it == j.end()) throw FrameError(key, fmt::format("missing field '{}'", key));
    if (!it->is_string()) throw FrameError(key, fmt::format("field '{}' must be a string", key));
    return it->get<std::string>();
}

std::string id_field(const Json &j, const char *key) {
    auto v = text_field(j, key);
    if (v.empty()) throw FrameError(key, fmt::format("field '{}' must be non-empty", key));
    return v;
}

Bytes b64_field(const Json &j, const char *key) {
    const auto v = text_field(j, key);
    try {
        return crypto::base64_decode(v);
    } catch (const std::invalid_argument &e) {
        throw FrameError(key, fmt::format("field '{}': {}", key, e.what()));
    }
}

} // namespace

std::string_view type_tag(const Record &r) noexcept {
    return std::visit(Overloaded{
                          [](const SubReq &) { return std::string_view("SUBREQ"); },
                          [](const SubReg &) { return std::string_view("SUBREG"); },
                          [](const Unsub &) { return std::string_view("UNSUB"); },
                          [](const Pub &) { return std::string_view("PUB"); },
                          [](const Deliver &) { return std::string_view("DELIVER"); },
                          [](const Ack &) { return std::string_view("ACK"); },
                          [](const Err &) { return std::string_view("ERR"); },
                      },
                      r);
}

std::string encode_frame(const Record &r) {
    using crypto::base64_encode;
    OrderedJson j;
    j["t"] = std::string(type_tag(r));
    std::visit(Overloaded{
                   [&](const SubReq &m) {
                       j["client"] = m.client;
                       j["reply"] = m.reply;
                       j["ct"] = base64_encode(m.ct);
                   },
                   [&](const SubReg &m) {
                       j["sub"] = m.sub;
                       j["client"] = m.client;
                       j["reply"] = m.reply;
                       j["ct"] = base64_encode(m.ct);
                       j["sig"] = base64_encode(m.sig);
                   },
                   [&](const Unsub &m) {
                       j["sub"] = m.sub;
                       j["sig"] = base64_encode(m.sig);
                   },
                   [&](const Pub &m) {
                       j["pub"] = m.pub;
                       j["hdr"] = base64_encode(m.hdr);
                       j["payload"] = base64_encode(m.payload);
                   },
                   [&](const Deliver &m) {
                       j["pub"] = m.pub;
                       j["payload"] = base64_encode(m.payload);
                   },
                   [&](const Ack &m) {
                       j["ref"] = m.ref;
                       j["msg"] = m.msg;
                   },
                   [&](const Err &m) {
                       j["ref"] = m.ref;
                       j["msg"] = m.msg;
                   },
               },
               r);
    return j.dump(-1, ' ', false, OrderedJson::error_handler_t::replace);
}

Record decode_frame(std::string_view line) {
    if (!line.empty() && line.back() == '\n') line.remove_suffix(1);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw FrameError("line", "frame is not a JSON object");

    const auto tag = text_field(j, "t");
    if (tag == "SUBREQ") return SubReq{id_field(j, "client"), id_field(j, "reply"), b64_field(j, "ct")};
    if (tag == "SUBREG") {
        return SubReg{id_field(j, "sub"), id_field(j, "client"), id_field(j, "reply"), b64_field(j, "ct"),
                      b64_field(j, "sig")};
    }
    if (tag == "UNSUB") return Unsub{id_field(j, "sub"), b64_field(j, "sig")};
    if (tag == "PUB") return Pub{id_field(j, "pub"), b64_field(j, "hdr"), b64_field(j, "payload")};
    if (tag == "DELIVER") return Deliver{id_field(j, "pub"), b64_field(j, "payload")};
    if (tag == "ACK") return Ack{text_field(j, "ref"), text_field(j, "msg")};
    if (tag == "ERR") return Err{text_field(j, "ref"), text_field(j, "msg")};
    throw FrameError("t", fmt::format("unknown record type '{}'", tag));
}

Bytes subreg_signed_bytes(std::string_view sub, std::string_view client, std::string_view reply,
                          std::string_view ct) {
    return crypto::length_prefixed({sub, client, reply, ct});
}

Bytes unsub_signed_bytes(std::string_view sub) { return crypto::length_prefixed({"UNSUB", sub}); }

SubReg make_subreg(const crypto::SymKey &sk, const crypto::PrivateKey &signer, std::string sub,
                   std::string client, std::string reply, std::string_view subscription_text) {
    SubReg r{std::move(sub), std::move(client), std::move(reply), crypto::sym_seal(sk, subscription_text).to_bytes(), {}};
    r.sig = crypto::sign(signer, subreg_signed_bytes(r.sub, r.client, r.reply, r.ct));
    return r;
}

Unsub make_unsub(const crypto::PrivateKey &signer, std::string sub) {
    Unsub r{std::move(sub), {}};
    r.sig = crypto::sign(signer, unsub_signed_bytes(r.sub));
    return r;
}

Pub make_pub(const crypto::SymKey &sk, std::string pub, std::string_view header_text, Bytes payload) {
    return Pub{std::move(pub), crypto::sym_seal(sk, header_text).to_bytes(), std::move(payload)};
}

} // namespace scbr::wire
