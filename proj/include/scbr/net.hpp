#pragma once

#include "scbr/crypto.hpp"
#include "scbr/enclave_router.hpp"
#include "scbr/model.hpp"
#include "scbr/wire.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace scbr::net {

using Duration = std::chrono::milliseconds;
inline constexpr Duration kDefaultTimeout{5000};
/// Longest accepted frame, terminator excluded.
inline constexpr std::size_t kMaxLine = 16u << 20;

class NetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The peer did not answer within the deadline, or could not be reached.
class TimeoutError : public NetError {
public:
    using NetError::NetError;
};

/// The peer answered with an ERR record; reason() is its msg.
class Rejected : public NetError {
public:
    explicit Rejected(std::string reason);
    const std::string &reason() const noexcept { return reason_; }

private:
    std::string reason_;
};

struct Endpoint {
    std::string host = "127.0.0.1";
    std::uint16_t port = 0;

    /// "host:port"; throws std::invalid_argument.
    static Endpoint parse(std::string_view text);
    std::string str() const;

    friend bool operator==(const Endpoint &, const Endpoint &) = default;
};

/// Sees every frame line a process sends or receives on the wire.
using Tap = std::function<void(std::string_view line)>;

/// Outbound connection carrying newline-terminated frames, with a deadline
/// on every call.
class LineChannel {
public:
    static LineChannel connect(const Endpoint &to, Duration timeout = kDefaultTimeout);

    LineChannel(LineChannel &&) noexcept;
    LineChannel &operator=(LineChannel &&) noexcept;
    ~LineChannel();

    /// Appends the terminator. Throws TimeoutError or NetError.
    void send(std::string_view line, Duration timeout = kDefaultTimeout);
    /// Next line without its terminator.
    std::string receive(Duration timeout = kDefaultTimeout);
    std::string request(std::string_view line, Duration timeout = kDefaultTimeout);

    void close() noexcept;
    bool is_open() const noexcept;

private:
    struct Impl;
    explicit LineChannel(std::unique_ptr<Impl> impl);
    std::unique_ptr<Impl> impl_;
};

/// Accepts connections and calls `on_line` for every line received, on a
/// thread per connection. A returned string is written back as a line.
class LineServer {
public:
    using Handler = std::function<std::optional<std::string>(std::string_view line)>;

    LineServer(Endpoint listen, Handler on_line);
    ~LineServer();
    LineServer(const LineServer &) = delete;
    LineServer &operator=(const LineServer &) = delete;

    void start();
    void stop();
    /// Bound address; the port is filled in after start() when 0 was requested.
    Endpoint endpoint() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct BrokerCounters {
    std::uint64_t frames = 0;
    std::uint64_t errors = 0;
    std::uint64_t delivered = 0;
    std::uint64_t dropped = 0;
};

/// Hosts the router. Accepts SUBREG, UNSUB and PUB frames; answers every
/// frame with ACK or ERR and pushes DELIVER frames to matched reply
/// addresses (at most once, no retries).
class Broker {
public:
    explicit Broker(const ProvisioningBlob &blob, Endpoint listen = {},
                    Duration delivery_timeout = Duration{2000});
    ~Broker();

    void start();
    void stop();
    Endpoint endpoint() const;

    /// Processes one frame line and returns the reply line. Never throws on
    /// bad input.
    std::string handle_line(std::string_view line);

    void set_tap(Tap tap);
    BrokerCounters counters() const;
    const EnclaveRouter &router() const noexcept { return router_; }

private:
    void deliver(const std::vector<Route> &routes, const wire::Deliver &frame);
    void tap(std::string_view line) const;

    EnclaveRouter router_;
    // the serialized command channel for register/invalidate
    std::mutex mutations_;
    Duration delivery_timeout_;

    std::mutex links_mu_;
    std::map<std::string, std::shared_ptr<std::pair<std::mutex, std::optional<LineChannel>>>> links_;

    mutable std::mutex tap_mu_;
    Tap tap_;

    std::atomic<std::uint64_t> frames_{0}, errors_{0}, delivered_{0}, dropped_{0};
    std::unique_ptr<LineServer> server_;
};

/// Static allow list plus a revoked set; the two never overlap.
class AdmissionPolicy {
public:
    void allow(const std::string &client);
    void revoke(const std::string &client);
    bool admitted(const std::string &client) const;
    bool revoked(const std::string &client) const;

private:
    mutable std::mutex mu_;
    std::set<std::string> allowed_;
    std::set<std::string> revoked_;
};

struct PublisherKeys {
    crypto::SymKey sk;
    /// Clients seal subscriptions to box.public_key.
    crypto::KeyPair box;
    /// The router verifies SUBREG/UNSUB signatures with signer.public_key.
    crypto::KeyPair signer;

    static PublisherKeys generate();
    ProvisioningBlob provisioning(std::uint64_t version) const;
};

/// Admits subscriptions: opens the client's SUBREQ, checks the policy,
/// re-seals under the router key, signs, and forwards to the broker.
class Publisher {
public:
    Publisher(PublisherKeys keys, Endpoint broker, Endpoint listen = {});
    ~Publisher();

    void start();
    void stop();
    Endpoint endpoint() const;

    AdmissionPolicy &policy() noexcept { return policy_; }

    /// The SUBREG for an admissible request (with a fresh sub id), else ERR
    /// with "denied", "format" or "empty".
    wire::Record admit(const wire::SubReq &req);

    /// Processes one client line: SUBREQ is admitted and forwarded, UNSUB for
    /// an id this publisher issued is signed and forwarded. Returns the reply
    /// line; broker failures come back as ERR("unavailable").
    std::string handle_line(std::string_view line);

    /// Signs and forwards an UNSUB; returns the broker's reply.
    wire::Record invalidate(const std::string &sub_id);
    /// Revokes the client and invalidates everything it holds.
    void revoke_client(const std::string &client);

private:
    wire::Record forward(const wire::Record &frame);

    PublisherKeys keys_;
    Endpoint broker_;
    AdmissionPolicy policy_;

    std::mutex broker_mu_;
    std::optional<LineChannel> broker_link_;

    std::mutex issued_mu_;
    std::map<std::string, std::string> issued_; // sub id -> client

    std::unique_ptr<LineServer> server_;
};

/// Subscriber side: listens on its reply address for DELIVER frames and
/// talks to the publisher to subscribe and unsubscribe.
class Subscriber {
public:
    using Handler = std::function<void(const wire::Deliver &)>;

    Subscriber(std::string client_id, crypto::PublicKey publisher_box, Handler on_deliver, Endpoint listen = {});
    ~Subscriber();

    std::string reply_addr() const;
    const std::string &client_id() const noexcept { return client_id_; }

    /// Returns the sub id. Throws TimeoutError (including when the publisher
    /// reports the broker unavailable) or Rejected.
    std::string subscribe(std::string_view subscription_text, const Endpoint &publisher,
                          Duration timeout = kDefaultTimeout);
    void unsubscribe(const std::string &sub_id, const Endpoint &publisher, Duration timeout = kDefaultTimeout);

    void close();

private:
    wire::Record call(const wire::Record &frame, const Endpoint &publisher, Duration timeout);

    std::string client_id_;
    crypto::PublicKey publisher_box_;
    Handler on_deliver_;
    std::unique_ptr<LineServer> listener_;
};

/// Seals headers under the router key and sends PUB frames.
class Producer {
public:
    Producer(crypto::SymKey sk, Endpoint broker);

    /// Returns the publication id after the broker's ACK. Throws
    /// TimeoutError or Rejected.
    std::string publish(const PublicationHeader &header, crypto::Bytes payload, Duration timeout = kDefaultTimeout);

private:
    crypto::SymKey sk_;
    Endpoint broker_;
    std::mutex mu_;
    std::optional<LineChannel> link_;
    std::uint64_t next_ = 0;
    std::string prefix_;
};

} // namespace scbr::net
